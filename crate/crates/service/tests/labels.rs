use proptest::prelude::*;
use wavecomm_service::{Action, LabelState, LabelStore};

fn action() -> impl Strategy<Value = Action> {
    let label = prop_oneof![Just("a"), Just("b"), Just("c")].prop_map(str::to_string);
    prop_oneof![
        (0usize..3, label.clone()).prop_map(|(cluster_id, label)| Action::LabelCluster { cluster_id, label }),
        (0usize..6, label).prop_map(|(i, label)| Action::LabelImage {
            image_id: format!("im{i}"),
            label
        }),
    ]
}

/// Naive oracle: the last write per image wins, overrides beat clusters.
fn oracle(actions: &[Action], image: usize) -> Option<String> {
    let cluster = image % 3;
    let id = format!("im{image}");
    let last_override = actions.iter().rev().find_map(|a| match a {
        Action::LabelImage { image_id, label } if *image_id == id => Some(label.clone()),
        _ => None,
    });
    last_override.or_else(|| {
        actions.iter().rev().find_map(|a| match a {
            Action::LabelCluster { cluster_id, label } if *cluster_id == cluster => Some(label.clone()),
            _ => None,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_is_a_fold_over_the_audit_log(actions in proptest::collection::vec(action(), 0..20)) {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("labels.json");
        let mut store = LabelStore::open(&path).unwrap();
        for a in &actions {
            store.record("tester", a.clone()).unwrap();
        }
        let state = store.state().clone();
        prop_assert_eq!(state.revision, actions.len() as u64);
        prop_assert_eq!(&LabelState::replay(&state.audit), &state);
        let reopened = LabelStore::open(&path).unwrap();
        prop_assert_eq!(reopened.state(), &state);
        for image in 0..6 {
            let got = state.effective_label(&format!("im{image}"), Some(image % 3)).map(str::to_string);
            prop_assert_eq!(got, oracle(&actions, image));
        }
    }
}
