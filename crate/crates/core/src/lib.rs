//! Orchestration of time-sensitive streams for NFV network services.
//!
//! The orchestrator ([`cuc`]) derives streams from service descriptors and
//! negotiates them over the [`uni`] with one controller ([`cnc`]) per TSN
//! domain, which plans transmission windows and gate control lists. The
//! [`verifier`] replays the result in a discrete-event simulation.

pub mod cnc;
pub mod cuc;
pub mod descriptors;
pub mod model;
pub mod testkit;
pub mod topology;
pub mod uni;
pub mod verifier;
pub mod workspace;
