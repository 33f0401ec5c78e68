use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_wavecomm");

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic3")
}

fn wavecomm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wavecomm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn detect(out: &Path, extra: &[&str]) {
    let data = bundled();
    let mut args = vec![
        "detect",
        data.to_str().unwrap(),
        "--size",
        "64x64",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn bundled_dataset_has_three_communities() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    detect(&run, &[]);
    let c = json(&run.join("communities.json"));
    assert_eq!(c["n_c"], 3);
    assert_eq!(c["method"], "eigengap");
    let sizes: Vec<u64> = c["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["size"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, [15, 15, 15]);
    for k in c["clusters"].as_array().unwrap() {
        let members = k["members"].as_array().unwrap();
        let prefix = &members[0].as_str().unwrap()[..2];
        assert!(members.iter().all(|m| m.as_str().unwrap().starts_with(prefix)));
    }
    for f in [
        "manifest.csv",
        "config.json",
        "coeffs.wcm",
        "feature_scores.csv",
        "distance.wcm",
        "affinity.wcm",
        "graph.json",
        "summary.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
}

#[test]
fn forced_single_community() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    detect(&run, &["--n-c", "1"]);
    let c = json(&run.join("communities.json"));
    assert_eq!(c["n_c"], 1);
    assert_eq!(c["method"], "override");
    assert_eq!(c["clusters"][0]["size"], 45);

    ok(&["report", "--run", run.to_str().unwrap()]);
    let blocks = json(&run.join("report/blocks.json"));
    assert_eq!(blocks["n_blocks"], 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    detect(&a, &[]);
    detect(&b, &[]);
    for f in ["communities.json", "affinity.wcm", "distance.wcm", "feature_scores.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn staged_run_matches_detect() {
    let tmp = tempfile::tempdir().unwrap();
    let (whole, staged) = (tmp.path().join("whole"), tmp.path().join("staged"));
    detect(&whole, &[]);
    let data = bundled();
    let s = staged.to_str().unwrap();
    ok(&["decompose", data.to_str().unwrap(), "--size", "64x64", "--out", s]);
    ok(&["graph", "--run", s]);
    ok(&["cluster", "--run", s]);
    for f in ["communities.json", "affinity.wcm", "distance.wcm", "coeffs.wcm"] {
        assert_eq!(
            std::fs::read(whole.join(f)).unwrap(),
            std::fs::read(staged.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn report_shows_one_block_per_community() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    detect(&run, &[]);
    ok(&["report", "--run", run.to_str().unwrap()]);
    let blocks = json(&run.join("report/blocks.json"));
    assert_eq!(blocks["n_blocks"], 3);
    assert_eq!(blocks["boundaries"], serde_json::json!([15, 30]));
    for f in [
        "similarity_raw.png",
        "similarity_reordered.png",
        "eigenvalues.csv",
        "report.html",
    ] {
        assert!(run.join("report").join(f).is_file(), "{f}");
    }
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = wavecomm(&[
        "detect",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("hint:"), "{err}");

    let out = wavecomm(&["report", "--run", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("affinity.wcm"));

    let out = wavecomm(&[
        "detect",
        bundled().to_str().unwrap(),
        "--keep-top",
        "0",
        "--out",
        "unused",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = wavecomm(&["detect", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_flags_the_blended_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&[
        "synth",
        "--two-class",
        "--per-template",
        "12",
        "--size",
        "32x32",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]);
    ok(&[
        "detect",
        data.join("manifest.csv").to_str().unwrap(),
        "--size",
        "32x32",
        "--out",
        run.to_str().unwrap(),
    ]);
    ok(&["spectrum", "--run", run.to_str().unwrap()]);
    let s = json(&run.join("spectrum.json"));
    assert_eq!(s["positive_class"], "pos");
    assert_eq!(s["borderline"]["neg"][0], "neg_blend");
    assert_eq!(s["borderline"]["pos"][0], "pos_blend");
    assert!(run.join("spectrum.csv").is_file());
}

#[test]
fn spectrum_label_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    detect(&run, &[]);
    let r = run.to_str().unwrap();

    let mut labels = String::from("id,label\nnot_an_image,t0\n");
    for k in 0..3 {
        for i in 0..15 {
            labels.push_str(&format!("t{k}_{i:02},{}\n", if k == 0 { "a" } else { "b" }));
        }
    }
    let path = tmp.path().join("labels.csv");
    std::fs::write(&path, labels).unwrap();
    let out = ok(&["spectrum", "--run", r, "--labels", path.to_str().unwrap()]);
    assert!(out.contains("not in the run"), "{out}");

    let mut same = String::from("id,label\n");
    for k in 0..3 {
        for i in 0..15 {
            same.push_str(&format!("t{k}_{i:02},x\n"));
        }
    }
    std::fs::write(&path, same).unwrap();
    let out = wavecomm(&["spectrum", "--run", r, "--labels", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
