//! Reviewer label state.
//!
//! The whole state, including its append-only audit log, lives in
//! `labels.json` next to the run artifacts and is rewritten atomically on
//! every change. Effective labels are a pure function of the state, and the
//! state itself can be rebuilt from the audit log with [`LabelState::replay`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavecomm::artifacts::{read_json, write_json, CommunitiesFile};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    LabelCluster { cluster_id: usize, label: String },
    LabelImage { image_id: String, label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub actor: String,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelState {
    /// Number of applied actions; equals `audit.len()`.
    pub revision: u64,
    pub cluster_labels: BTreeMap<usize, String>,
    pub image_overrides: BTreeMap<String, String>,
    pub audit: Vec<AuditEntry>,
}

impl LabelState {
    fn apply(&mut self, entry: AuditEntry) {
        match &entry.action {
            Action::LabelCluster { cluster_id, label } => {
                self.cluster_labels.insert(*cluster_id, label.clone());
            }
            Action::LabelImage { image_id, label } => {
                self.image_overrides.insert(image_id.clone(), label.clone());
            }
        }
        self.audit.push(entry);
        self.revision += 1;
    }

    pub fn replay(audit: &[AuditEntry]) -> Self {
        let mut state = Self::default();
        for e in audit {
            state.apply(e.clone());
        }
        state
    }

    /// Override if present, else the cluster's label.
    pub fn effective_label(&self, image_id: &str, cluster: Option<usize>) -> Option<&str> {
        self.image_overrides
            .get(image_id)
            .or_else(|| cluster.and_then(|c| self.cluster_labels.get(&c)))
            .map(String::as_str)
    }

    /// Effective label for every image, in `communities.images` order.
    pub fn effective_labels<'a>(&'a self, communities: &'a CommunitiesFile) -> Vec<(&'a str, Option<&'a str>)> {
        let mut cluster_of = BTreeMap::new();
        for c in &communities.clusters {
            for m in &c.members {
                cluster_of.insert(m.as_str(), c.id);
            }
        }
        communities
            .images
            .iter()
            .map(|id| {
                (
                    id.as_str(),
                    self.effective_label(id, cluster_of.get(id.as_str()).copied()),
                )
            })
            .collect()
    }

    pub fn label_counts(&self, communities: &CommunitiesFile) -> (BTreeMap<String, usize>, usize) {
        let mut counts = BTreeMap::new();
        let mut unlabeled = 0;
        for (_, label) in self.effective_labels(communities) {
            match label {
                Some(l) => *counts.entry(l.to_string()).or_insert(0) += 1,
                None => unlabeled += 1,
            }
        }
        (counts, unlabeled)
    }
}

#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    state: LabelState,
}

impl LabelStore {
    /// Loads `path` if it exists, otherwise starts empty.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        let state = if path.is_file() {
            let state: LabelState = read_json(path)?;
            if state.revision != state.audit.len() as u64 {
                return Err(ServiceError::Internal(format!(
                    "{} is inconsistent: revision {} with {} audit entries",
                    path.display(),
                    state.revision,
                    state.audit.len()
                )));
            }
            state
        } else {
            LabelState::default()
        };
        Ok(Self {
            path: path.to_path_buf(),
            state,
        })
    }

    pub fn state(&self) -> &LabelState {
        &self.state
    }

    /// Applies and persists one action. The in-memory state only changes
    /// once the file has been written.
    pub fn record(&mut self, actor: &str, action: Action) -> Result<&LabelState, ServiceError> {
        let mut next = self.state.clone();
        next.apply(AuditEntry {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            actor: actor.to_string(),
            action,
        });
        write_json(&self.path, &next)?;
        self.state = next;
        Ok(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(action: Action) -> AuditEntry {
        AuditEntry {
            timestamp: "2026-01-01T00:00:00.000Z".into(),
            actor: "t".into(),
            action,
        }
    }

    #[test]
    fn override_wins_over_cluster_label() {
        let s = LabelState::replay(&[
            entry(Action::LabelCluster {
                cluster_id: 0,
                label: "a".into(),
            }),
            entry(Action::LabelImage {
                image_id: "x".into(),
                label: "b".into(),
            }),
        ]);
        assert_eq!(s.revision, 2);
        assert_eq!(s.effective_label("x", Some(0)), Some("b"));
        assert_eq!(s.effective_label("y", Some(0)), Some("a"));
        assert_eq!(s.effective_label("y", Some(1)), None);
    }

    #[test]
    fn store_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.json");
        let mut store = LabelStore::open(&p).unwrap();
        store
            .record(
                "r",
                Action::LabelCluster {
                    cluster_id: 2,
                    label: "lung".into(),
                },
            )
            .unwrap();
        let again = LabelStore::open(&p).unwrap();
        assert_eq!(again.state(), store.state());
        assert_eq!(LabelState::replay(&again.state().audit), *again.state());
    }
}
