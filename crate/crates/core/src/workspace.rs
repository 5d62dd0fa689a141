//! File-backed orchestration state shared by successive CLI invocations.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnc::CncState;
use crate::cuc::{Cuc, CucError, CucLedger};
use crate::model::DomainId;
use crate::topology::{Topology, TopologyDoc, TopologyError};
use crate::uni::{CncRegistry, UniError};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed state file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Uni(#[from] UniError),
    #[error(transparent)]
    Cuc(#[from] CucError),
}

/// Everything needed to resume orchestration: the topology, each domain
/// controller's committed state and the orchestrator's ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub topology: TopologyDoc,
    pub cnc_states: BTreeMap<DomainId, CncState>,
    pub ledger: CucLedger,
}

impl WorkspaceState {
    /// A fresh workspace with empty controllers for every domain.
    pub fn new(topology: &Topology) -> Self {
        WorkspaceState {
            topology: topology.to_document(),
            cnc_states: topology
                .domains
                .keys()
                .map(|d| (d.clone(), CncState::new(d.clone())))
                .collect(),
            ledger: CucLedger::default(),
        }
    }

    /// Snapshot of a running orchestrator with in-process controllers.
    pub fn capture(cuc: &Cuc) -> Self {
        WorkspaceState {
            topology: cuc.topology().to_document(),
            cnc_states: cuc.registry().snapshots(),
            ledger: cuc.ledger(),
        }
    }

    /// Rebuild the orchestrator with in-process controllers holding the saved states.
    pub fn into_cuc(self) -> Result<Cuc, WorkspaceError> {
        let topology = Arc::new(Topology::from_document(self.topology)?);
        let registry = CncRegistry::in_process(&topology, self.cnc_states)?;
        Ok(Cuc::resume(topology, registry, self.ledger)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("workspace state serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, WorkspaceError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkspaceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| WorkspaceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Write atomically: a sibling temporary file is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WorkspaceError> {
        let path = path.as_ref();
        let io = |source| WorkspaceError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{cross_pop_topology, nsd, placement, traffic, vl, GBPS};

    #[test]
    fn round_trip_is_byte_identical() {
        let topology = cross_pop_topology(GBPS, 500, 1000).build();
        let mut cuc = WorkspaceState::new(&topology).into_cuc().unwrap();
        let t = traffic(250_000, 500, 1, 200_000);
        cuc.instantiate(
            &nsd("wide", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t, t)]),
            &placement(&[("plc", "H1"), ("io", "H2")]),
        )
        .unwrap();
        let saved = WorkspaceState::capture(&cuc).to_json();
        let loaded = WorkspaceState::from_json(&saved).unwrap();
        assert_eq!(loaded.to_json(), saved);
        let resumed = loaded.into_cuc().unwrap();
        assert_eq!(WorkspaceState::capture(&resumed).to_json(), saved);
    }

    #[test]
    fn save_and_load_file() {
        let topology = cross_pop_topology(GBPS, 500, 1000).build();
        let state = WorkspaceState::new(&topology);
        let dir = std::env::temp_dir().join(format!("tsnfv-ws-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        state.save(&path).unwrap();
        assert_eq!(WorkspaceState::load(&path).unwrap(), state);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            WorkspaceState::load("/nonexistent/state.json"),
            Err(WorkspaceError::Io { .. })
        ));
    }
}
