//! Centralized Network Configuration for one TSN domain.
//!
//! A CNC owns the reservations on every egress port of its domain. It admits
//! streams one segment at a time with a greedy as-soon-as-possible planner,
//! never moves a committed reservation, and derives the 802.1Qbv gate control
//! lists and bridge configuration documents from the reservation set.

mod gcl;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    DomainId, GateControlList, HopReservation, NodeId, PortRef, StreamId, StreamRequirement,
    StreamSchedule, MAX_HYPERPERIOD_NS,
};
use crate::topology::{Hop, Topology};
use crate::uni::{
    BridgeCapability, CapabilitySummary, FailureCause, StreamRequest, UniRequest, UniResponse,
};

pub use gcl::{build_port_gcl, Window};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CncError {
    #[error("stream {stream}: worst latency {latency_ns} ns exceeds budget {budget_ns} ns")]
    ExceedsBudget {
        stream: StreamId,
        latency_ns: u64,
        budget_ns: u64,
    },
    #[error("stream {stream}: no free window on {port}")]
    NoFreeWindow { stream: StreamId, port: PortRef },
    #[error("bridge {0} does not support 802.1Qbv")]
    Capability(NodeId),
    #[error("hyperperiod {0} ns exceeds {MAX_HYPERPERIOD_NS} ns")]
    HyperperiodOverflow(u128),
    #[error("gate control list of {port} needs {entries} entries, bridge allows {max}")]
    GclOverflow {
        port: PortRef,
        entries: usize,
        max: u32,
    },
    #[error("unknown stream {0}")]
    UnknownStream(StreamId),
    #[error("stream {0} is already admitted")]
    DuplicateStream(StreamId),
    #[error("malformed request: {0}")]
    Malformed(String),
}

impl CncError {
    pub fn cause(&self) -> FailureCause {
        match self {
            CncError::ExceedsBudget { .. } => FailureCause::InfeasibleBudget,
            CncError::NoFreeWindow { .. } => FailureCause::NoFreeWindow,
            CncError::Capability(_) => FailureCause::Capability,
            CncError::HyperperiodOverflow(_) => FailureCause::HyperperiodOverflow,
            CncError::GclOverflow { .. } => FailureCause::GclOverflow,
            CncError::UnknownStream(_) => FailureCause::UnknownStream,
            CncError::DuplicateStream(_) | CncError::Malformed(_) => FailureCause::Malformed,
        }
    }
}

/// When frames of a stream become available at the first hop of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentEntry {
    /// The segment starts at the talker, which sends at its window start.
    Talker,
    /// Frames arrive from an upstream segment. Offsets are last-bit arrival
    /// times at the segment's first node relative to the nominal period start:
    /// `earliest_ns` for the first frame of any instance, `latest_ns` for the
    /// last frame of any instance.
    Upstream { earliest_ns: u64, latest_ns: u64 },
}

impl SegmentEntry {
    pub fn release_offset(&self) -> u64 {
        match self {
            SegmentEntry::Talker => 0,
            SegmentEntry::Upstream { latest_ns, .. } => *latest_ns,
        }
    }

    /// Entry for the segment following one scheduled as `upstream`.
    pub fn after(upstream: &StreamSchedule) -> Self {
        SegmentEntry::Upstream {
            earliest_ns: upstream.exit_first_frame_min_ns,
            latest_ns: upstream.exit_latest_ns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmittedStream {
    pub requirement: StreamRequirement,
    pub hops: Vec<Hop>,
    pub latency_budget_ns: u64,
    pub schedule: StreamSchedule,
}

/// Everything a CNC knows about its domain's committed configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CncState {
    pub domain_id: DomainId,
    /// 0 while nothing is admitted.
    pub hyperperiod_ns: u64,
    pub admitted: BTreeMap<StreamId, AdmittedStream>,
    pub reservations: BTreeMap<PortRef, Vec<HopReservation>>,
    /// Gate control lists currently deployed, derived from `reservations`.
    pub gcls: BTreeMap<PortRef, GateControlList>,
}

impl CncState {
    pub fn new(domain_id: DomainId) -> Self {
        CncState {
            domain_id,
            hyperperiod_ns: 0,
            admitted: BTreeMap::new(),
            reservations: BTreeMap::new(),
            gcls: BTreeMap::new(),
        }
    }

    /// Pattern cycle of the stream owning `reservation`.
    fn cycle_of(&self, stream: &StreamId) -> u64 {
        self.admitted[stream].schedule.cycle_ns
    }

    /// All reservations on `port`, repeated to cover `cycle_ns` and reduced modulo it.
    pub(crate) fn windows_on(&self, port: &PortRef, cycle_ns: u64) -> Vec<Window> {
        let mut out = Vec::new();
        for r in self.reservations.get(port).into_iter().flatten() {
            let own_cycle = self.cycle_of(&r.stream_id);
            for m in 0..cycle_ns / own_cycle {
                let shift = m * own_cycle;
                out.push(Window {
                    start: (r.window_start_ns + shift) % cycle_ns,
                    len: r.window_len(),
                    queue_start: (r.queue_start_ns + shift) % cycle_ns,
                    queue_len: r.queue_len(),
                    class: r.traffic_class,
                });
            }
        }
        out
    }
}

/// Bridge-level configuration document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub bridge_id: NodeId,
    pub domain_id: DomainId,
    pub ports: Vec<GateControlList>,
    pub vlan_memberships: Vec<VlanMembership>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlanMembership {
    pub vlan_id: u16,
    pub ports: Vec<PortRef>,
}

/// A CNC bound to the topology it configures.
#[derive(Debug, Clone)]
pub struct Cnc {
    topology: Arc<Topology>,
    state: CncState,
}

impl Cnc {
    pub fn new(domain_id: DomainId, topology: Arc<Topology>) -> Self {
        Cnc {
            topology,
            state: CncState::new(domain_id),
        }
    }

    pub fn with_state(state: CncState, topology: Arc<Topology>) -> Self {
        Cnc { topology, state }
    }

    pub fn state(&self) -> &CncState {
        &self.state
    }

    pub fn into_state(self) -> CncState {
        self.state
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn domain_id(&self) -> &DomainId {
        &self.state.domain_id
    }

    /// Plan and commit reservations for `req` over `segment`.
    ///
    /// Fails without touching the state.
    pub fn admit_stream(
        &mut self,
        req: &StreamRequirement,
        segment: &[Hop],
        entry: SegmentEntry,
        latency_budget_ns: u64,
    ) -> Result<StreamSchedule, CncError> {
        if self.state.admitted.contains_key(&req.stream_id) {
            return Err(CncError::DuplicateStream(req.stream_id.clone()));
        }
        req.validate().map_err(|e| CncError::Malformed(e.to_string()))?;
        let planned = schedule::plan(&self.topology, &self.state, req, segment, entry, latency_budget_ns)?;

        let mut next = self.state.clone();
        for r in &planned.reservations {
            next.reservations.entry(r.port_id.clone()).or_default().push(r.clone());
        }
        for list in next.reservations.values_mut() {
            sort_reservations(list);
        }
        next.hyperperiod_ns = lcm_or(self.state.hyperperiod_ns, planned.cycle_ns);
        next.admitted.insert(
            req.stream_id.clone(),
            AdmittedStream {
                requirement: req.clone(),
                hops: segment.to_vec(),
                latency_budget_ns,
                schedule: planned.clone(),
            },
        );
        next.gcls = self.synthesize_for(&next)?;
        self.state = next;
        Ok(planned)
    }

    pub fn remove_stream(&mut self, stream_id: &StreamId) -> Result<(), CncError> {
        if !self.state.admitted.contains_key(stream_id) {
            return Err(CncError::UnknownStream(stream_id.clone()));
        }
        let mut next = self.state.clone();
        next.admitted.remove(stream_id);
        next.reservations.retain(|_, list| {
            list.retain(|r| &r.stream_id != stream_id);
            !list.is_empty()
        });
        next.hyperperiod_ns = next
            .admitted
            .values()
            .fold(0, |acc, a| lcm_or(acc, a.schedule.cycle_ns));
        next.gcls = self.synthesize_for(&next)?;
        self.state = next;
        Ok(())
    }

    /// Gate control list for every port holding at least one reservation.
    pub fn synthesize_gcls(&self) -> Result<BTreeMap<PortRef, GateControlList>, CncError> {
        self.synthesize_for(&self.state)
    }

    fn synthesize_for(
        &self,
        state: &CncState,
    ) -> Result<BTreeMap<PortRef, GateControlList>, CncError> {
        let mut out = BTreeMap::new();
        for port in state.reservations.keys() {
            let link = self
                .topology
                .link_at(port)
                .ok_or_else(|| CncError::Malformed(format!("port {port} has no link")))?;
            let max_entries = self
                .topology
                .node(&port.node)
                .and_then(|n| n.bridge())
                .map(|b| b.gcl_max_entries);
            let windows = state.windows_on(port, state.hyperperiod_ns);
            let gcl = build_port_gcl(port, &windows, state.hyperperiod_ns, link.speed_bps, max_entries)?;
            out.insert(port.clone(), gcl);
        }
        Ok(out)
    }

    /// One document per configured bridge, ordered by bridge id.
    pub fn bridge_config(&self) -> Vec<BridgeConfig> {
        let mut per_bridge: BTreeMap<NodeId, (Vec<GateControlList>, BTreeMap<u16, BTreeSet<PortRef>>)> =
            BTreeMap::new();
        for (port, gcl) in &self.state.gcls {
            if self.topology.node(&port.node).is_some_and(|n| n.is_bridge()) {
                per_bridge.entry(port.node.clone()).or_default().0.push(gcl.clone());
            }
        }
        for admitted in self.state.admitted.values() {
            let vlan = admitted.requirement.frame.vlan_id;
            for hop in &admitted.hops {
                for port in [&hop.egress, &hop.ingress] {
                    if let Some((_, vlans)) = per_bridge.get_mut(&port.node) {
                        vlans.entry(vlan).or_default().insert(port.clone());
                    }
                }
            }
        }
        per_bridge
            .into_iter()
            .map(|(bridge_id, (ports, vlans))| BridgeConfig {
                bridge_id,
                domain_id: self.state.domain_id.clone(),
                ports,
                vlan_memberships: vlans
                    .into_iter()
                    .map(|(vlan_id, ports)| VlanMembership {
                        vlan_id,
                        ports: ports.into_iter().collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn capability_summary(&self) -> CapabilitySummary {
        let bridges = self
            .topology
            .nodes()
            .iter()
            .filter(|n| n.domain_id == self.state.domain_id)
            .filter_map(|n| {
                n.bridge().map(|b| BridgeCapability {
                    bridge_id: n.node_id.clone(),
                    supports_qbv: b.supports_qbv,
                    gcl_max_entries: b.gcl_max_entries,
                    processing_delay_ns: b.processing_delay_ns,
                })
            })
            .collect();
        CapabilitySummary {
            domain_id: self.state.domain_id.clone(),
            bridges,
        }
    }

    /// Serve one UNI request addressed to this domain.
    pub fn handle(&mut self, request: &UniRequest) -> UniResponse {
        let id = request.request_id().to_owned();
        if request.domain_id() != &self.state.domain_id {
            return UniResponse::failed(
                id,
                FailureCause::Malformed,
                format!("request for {} delivered to {}", request.domain_id(), self.state.domain_id),
            );
        }
        match request {
            UniRequest::StreamRequest(StreamRequest {
                stream,
                segment,
                latency_budget_ns,
                entry,
                ..
            }) => match self.admit_stream(stream, segment, *entry, *latency_budget_ns) {
                Ok(schedule) => {
                    let talker_gcl = match entry {
                        SegmentEntry::Talker => self.state.gcls.get(&segment[0].egress).cloned(),
                        SegmentEntry::Upstream { .. } => None,
                    };
                    UniResponse {
                        schedule: Some(schedule),
                        talker_gcl,
                        ..UniResponse::ok(id)
                    }
                }
                Err(e) => UniResponse::failed(id, e.cause(), e.to_string()),
            },
            UniRequest::RemoveStream(r) => match self.remove_stream(&r.stream_id) {
                Ok(()) => UniResponse::ok(id),
                Err(e) => UniResponse::failed(id, e.cause(), e.to_string()),
            },
            UniRequest::CapabilityQuery(_) => UniResponse {
                capabilities: Some(self.capability_summary()),
                ..UniResponse::ok(id)
            },
        }
    }
}

fn lcm_or(acc: u64, x: u64) -> u64 {
    if acc == 0 {
        x
    } else {
        acc.lcm(&x)
    }
}

fn sort_reservations(list: &mut [HopReservation]) {
    list.sort_by(|a, b| {
        (a.window_start_ns, &a.stream_id, a.instance).cmp(&(b.window_start_ns, &b.stream_id, b.instance))
    });
}

#[cfg(test)]
mod tests;
