//! Independent checking of synthesized schedules.
//!
//! [`check_gcl_wellformed`] looks at gate control lists in isolation;
//! [`simulate`] replays every admitted stream through the topology under the
//! deployed lists with adversarial best-effort load; [`verify_ns`] combines
//! both into a pass/fail verdict for one network-service instance.

mod sim;
mod wellformed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sim::{BG_QUEUE_CAP, MAX_SIM_HORIZON_NS};
pub use wellformed::{check_gcl_wellformed, GclViolation};

use crate::cnc::CncState;
use crate::cuc::{InstanceStatus, NsInstance};
use crate::model::{DomainId, GateControlList, PortRef, StreamId, StreamRequirement, StreamSchedule};
use crate::topology::{Hop, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hyperperiods during which talkers release frames.
    pub duration_cycles: u32,
    /// Fraction of each port's free gate time offered as 1522-byte best-effort frames.
    pub bg_load: f64,
    /// Seed for background inter-arrival jitter.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration_cycles: 3,
            bg_load: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.duration_cycles == 0 {
            return Err(SimConfigError::Invalid("duration_cycles must be at least 1".into()));
        }
        if !self.bg_load.is_finite() || !(0.0..=1.0).contains(&self.bg_load) {
            return Err(SimConfigError::Invalid(format!("bg_load {} outside 0..=1", self.bg_load)));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimConfigError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("simulation horizon {0} ns exceeds the limit")]
    Horizon(u128),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReport {
    pub observed_worst_latency_ns: u64,
    pub observed_frame_count: u64,
    pub dropped_frames: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortReport {
    /// Frames whose transmission overlapped a closed gate of their class.
    pub gate_violations: u64,
    pub scheduled_frames: u64,
    pub background_sent: u64,
    pub background_dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub horizon_ns: u64,
    pub streams: BTreeMap<StreamId, StreamReport>,
    /// Ports that carried or dropped anything.
    pub ports: BTreeMap<PortRef, PortReport>,
}

impl SimReport {
    pub fn gate_violations(&self) -> u64 {
        self.ports.values().map(|p| p.gate_violations).sum()
    }

    pub fn scheduled_drops(&self) -> u64 {
        self.streams.values().map(|s| s.dropped_frames).sum()
    }
}

/// One scheduled stream as the simulator sees it: its segments in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStream {
    pub requirement: StreamRequirement,
    pub segments: Vec<(Vec<Hop>, StreamSchedule)>,
}

/// Replay `streams` under `gcls` and report what was observed.
pub fn simulate(
    topology: &Topology,
    gcls: &BTreeMap<PortRef, GateControlList>,
    streams: &[SimStream],
    cfg: &SimConfig,
) -> Result<SimReport, SimConfigError> {
    sim::run(topology, gcls, streams, cfg)
}

/// Every stream admitted in `states`, with its per-domain segments chained in path order.
pub fn collect_streams(states: &BTreeMap<DomainId, CncState>) -> Result<Vec<SimStream>, SimConfigError> {
    let mut parts: BTreeMap<&StreamId, Vec<&crate::cnc::AdmittedStream>> = BTreeMap::new();
    for state in states.values() {
        for (id, admitted) in &state.admitted {
            parts.entry(id).or_default().push(admitted);
        }
    }
    let mut out = Vec::with_capacity(parts.len());
    for (id, mut pieces) in parts {
        let requirement = pieces[0].requirement.clone();
        let mut at = requirement.talker.node_id.clone();
        let mut segments = Vec::with_capacity(pieces.len());
        while !pieces.is_empty() {
            let pos = pieces
                .iter()
                .position(|p| p.hops.first().is_some_and(|h| h.egress.node == at))
                .ok_or_else(|| SimConfigError::Inconsistent(format!("stream {id} has no segment leaving {at}")))?;
            let piece = pieces.swap_remove(pos);
            at = piece.hops.last().expect("segments are non-empty").ingress.node.clone();
            segments.push((piece.hops.clone(), piece.schedule.clone()));
        }
        if at != requirement.listener.node_id {
            return Err(SimConfigError::Inconsistent(format!("stream {id} stops at {at}")));
        }
        out.push(SimStream { requirement, segments });
    }
    Ok(out)
}

/// Union of the gate control lists deployed in `states`.
pub fn collect_gcls(states: &BTreeMap<DomainId, CncState>) -> BTreeMap<PortRef, GateControlList> {
    states
        .values()
        .flat_map(|s| s.gcls.iter().map(|(p, g)| (p.clone(), g.clone())))
        .collect()
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("instance {0} is not active")]
    NotActive(String),
    #[error(transparent)]
    Sim(#[from] SimConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub instance_id: String,
    pub pass: bool,
    /// Human-readable reasons, empty on pass.
    pub failures: Vec<String>,
    /// Reports keyed by the background load they were run at.
    pub runs: Vec<(f64, SimReport)>,
}

/// Check one active instance against everything deployed in `states`.
///
/// Runs the structural GCL check on every deployed list and simulates at
/// zero load, at full load and, if different, at `cfg.bg_load`. Passes iff
/// all lists are well formed, no scheduled frame is dropped or sent through a
/// closed gate, every stream of the instance meets its latency bound, and
/// every run observes identical scheduled latencies.
pub fn verify_ns(
    instance: &NsInstance,
    topology: &Topology,
    states: &BTreeMap<DomainId, CncState>,
    cfg: &SimConfig,
) -> Result<VerifyOutcome, VerifyError> {
    if instance.status != InstanceStatus::Active {
        return Err(VerifyError::NotActive(instance.instance_id.clone()));
    }
    cfg.validate()?;
    let mut failures = Vec::new();
    let gcls = collect_gcls(states);
    for (port, gcl) in &gcls {
        let speed = topology
            .port_speed(port)
            .ok_or_else(|| SimConfigError::Inconsistent(format!("gate control list on unlinked port {port}")))?;
        if let Err(violations) = check_gcl_wellformed(gcl, speed) {
            for v in violations {
                failures.push(format!("{port}: {v}"));
            }
        }
    }
    let streams = collect_streams(states)?;

    let mut loads = vec![0.0, 1.0];
    if !loads.contains(&cfg.bg_load) {
        loads.push(cfg.bg_load);
    }
    let mut runs = Vec::with_capacity(loads.len());
    for load in loads {
        let run_cfg = SimConfig { bg_load: load, ..cfg.clone() };
        let report = simulate(topology, &gcls, &streams, &run_cfg)?;
        for (port, p) in &report.ports {
            if p.gate_violations > 0 {
                failures.push(format!("bg_load {load}: {port} sent {} frames through closed gates", p.gate_violations));
            }
        }
        for (id, s) in &report.streams {
            if s.dropped_frames > 0 {
                failures.push(format!("bg_load {load}: stream {id} lost {} frames", s.dropped_frames));
            }
        }
        for stream in &instance.streams {
            let bound = stream.traffic.max_latency_ns;
            match report.streams.get(&stream.stream_id) {
                None => failures.push(format!("bg_load {load}: stream {} is not deployed", stream.stream_id)),
                Some(s) if s.observed_worst_latency_ns > bound => failures.push(format!(
                    "bg_load {load}: stream {} worst latency {} ns exceeds {bound} ns",
                    stream.stream_id, s.observed_worst_latency_ns
                )),
                Some(_) => {}
            }
        }
        runs.push((load, report));
    }
    let baseline = latencies(&runs[0].1);
    for (load, report) in &runs[1..] {
        if latencies(report) != baseline {
            failures.push(format!("bg_load {load}: scheduled latencies differ from the unloaded run"));
        }
    }
    Ok(VerifyOutcome {
        instance_id: instance.instance_id.clone(),
        pass: failures.is_empty(),
        failures,
        runs,
    })
}

fn latencies(report: &SimReport) -> BTreeMap<&StreamId, u64> {
    report
        .streams
        .iter()
        .map(|(id, s)| (id, s.observed_worst_latency_ns))
        .collect()
}

#[cfg(test)]
mod tests;
