//! Centralized User Configuration: network-service lifecycle on top of the CNCs.
//!
//! The CUC turns descriptors into stream requirements, routes every stream,
//! splits its latency budget over the domains it crosses, and negotiates each
//! segment with the owning CNC. A lifecycle operation either commits every
//! reservation it needs or none: on failure the segments already admitted are
//! withdrawn again with compensating removals.

mod config;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnc::SegmentEntry;
use crate::descriptors::{
    derive_streams, validate_capabilities, CapabilityError, DescriptorError, MemberKind, Nsd,
    Placement, StationRole,
};
use crate::model::{
    ControllerId, DomainId, GateControlList, PortRef, StreamId, StreamRequirement, StreamSchedule,
};
use crate::topology::{split_by_domain, Hop, NodeKindTag, PathSegment, Topology, TopologyError};
use crate::uni::{
    AuditRecord, CncRegistry, Dispatcher, FailureCause, RemoveStream, StreamRequest, UniError,
    UniRequest,
};

pub use config::{generate_endstation_config, EndStationConfig, SchedulingPolicy, TasSchedule, VlanTag};

#[derive(Debug, Error)]
pub enum CucError {
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Uni(#[from] UniError),
    #[error("instance {instance_id}: stream {stream_id} rejected by domain {domain_id}: {cause}{}", detail_suffix(.detail))]
    AdmissionFailed {
        instance_id: String,
        stream_id: StreamId,
        domain_id: DomainId,
        cause: FailureCause,
        detail: Option<String>,
    },
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("instance {0} is already terminated")]
    AlreadyTerminated(String),
    #[error("instance {0} failed during instantiation and holds no reservations")]
    NotActive(String),
    #[error("update of {instance_id} failed: {cause}")]
    UpdateFailed {
        instance_id: String,
        cause: Box<CucError>,
    },
    #[error("controller of {domain_id} refused to release {stream_id}: {detail}")]
    RemoveFailed {
        domain_id: DomainId,
        stream_id: StreamId,
        detail: String,
    },
}

fn detail_suffix(detail: &Option<String>) -> String {
    detail.as_ref().map(|d| format!(" ({d})")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Active,
    Failed,
    Terminated,
}

/// What one CNC committed for one stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSchedule {
    pub domain_id: DomainId,
    pub controller_id: ControllerId,
    pub hops: Vec<Hop>,
    pub latency_budget_ns: u64,
    pub entry: SegmentEntry,
    pub schedule: StreamSchedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsInstance {
    pub instance_id: String,
    pub nsd: Nsd,
    pub placement: Placement,
    /// In admission order.
    pub streams: Vec<StreamRequirement>,
    /// Per stream, one schedule per domain in talker→listener order.
    pub schedules: BTreeMap<StreamId, Vec<SegmentSchedule>>,
    pub configs: Vec<EndStationConfig>,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl NsInstance {
    /// End-to-end worst latency of `stream`: the sum over its segments.
    pub fn e2e_latency_ns(&self, stream: &StreamId) -> Option<u64> {
        self.schedules
            .get(stream)
            .map(|segs| segs.iter().map(|s| s.schedule.e2e_latency_ns).sum())
    }

    pub fn stream(&self, id: &StreamId) -> Option<&StreamRequirement> {
        self.streams.iter().find(|s| &s.stream_id == id)
    }
}

/// A configuration document handed to an end station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedConfig {
    pub instance_id: String,
    pub config: EndStationConfig,
}

/// Split `max_latency_ns` over segments in proportion to their hop counts.
///
/// Each share is rounded down; the remainder goes to the last segment.
pub fn partition_latency_budget(max_latency_ns: u64, hops: &[usize]) -> Vec<u64> {
    let total: u128 = hops.iter().map(|&h| h as u128).sum();
    assert!(total > 0, "at least one hop is required");
    let mut budgets: Vec<u64> = hops
        .iter()
        .map(|&h| (max_latency_ns as u128 * h as u128 / total) as u64)
        .collect();
    let assigned: u64 = budgets.iter().sum();
    *budgets.last_mut().expect("non-empty") += max_latency_ns - assigned;
    budgets
}

struct Prepared {
    stream: StreamRequirement,
    segments: Vec<PathSegment>,
}

/// Counters and bookkeeping persisted between sessions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CucLedger {
    pub instances: BTreeMap<String, NsInstance>,
    pub audit: Vec<AuditRecord>,
    pub outbox: Vec<EmittedConfig>,
    pub next_instance: u64,
    pub next_request: u64,
}

/// The orchestrator side of the UNI.
#[derive(Debug)]
pub struct Cuc {
    topology: Arc<Topology>,
    dispatcher: Dispatcher,
    instances: BTreeMap<String, NsInstance>,
    outbox: Vec<EmittedConfig>,
    next_instance: u64,
    next_request: u64,
}

impl Cuc {
    pub fn new(topology: Arc<Topology>, registry: CncRegistry) -> Result<Self, CucError> {
        Self::resume(topology, registry, CucLedger::default())
    }

    pub fn resume(topology: Arc<Topology>, registry: CncRegistry, ledger: CucLedger) -> Result<Self, CucError> {
        registry.check_covers(&topology)?;
        Ok(Cuc {
            topology,
            dispatcher: Dispatcher::with_audit(registry, ledger.audit),
            instances: ledger.instances,
            outbox: ledger.outbox,
            next_instance: ledger.next_instance,
            next_request: ledger.next_request,
        })
    }

    pub fn ledger(&self) -> CucLedger {
        CucLedger {
            instances: self.instances.clone(),
            audit: self.dispatcher.audit.clone(),
            outbox: self.outbox.clone(),
            next_instance: self.next_instance,
            next_request: self.next_request,
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn registry(&self) -> &CncRegistry {
        &self.dispatcher.registry
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.dispatcher.audit
    }

    /// Every configuration document emitted so far, oldest first.
    pub fn outbox(&self) -> &[EmittedConfig] {
        &self.outbox
    }

    pub fn instances(&self) -> &BTreeMap<String, NsInstance> {
        &self.instances
    }

    pub fn instance(&self, id: &str) -> Option<&NsInstance> {
        self.instances.get(id)
    }

    pub fn instantiate(&mut self, nsd: &Nsd, placement: &Placement) -> Result<&NsInstance, CucError> {
        let instance_id = format!("ns-{}", self.next_instance + 1);
        let prepared = self.prepare(&instance_id, nsd, placement)?;
        self.next_instance += 1;
        let result = self.admit(&instance_id, nsd, placement, prepared);
        self.record(instance_id, nsd, placement, result)
    }

    pub fn terminate(&mut self, instance_id: &str) -> Result<&NsInstance, CucError> {
        match self.instances.get(instance_id).map(|i| i.status) {
            None => return Err(CucError::UnknownInstance(instance_id.to_owned())),
            Some(InstanceStatus::Terminated) => {
                return Err(CucError::AlreadyTerminated(instance_id.to_owned()))
            }
            Some(InstanceStatus::Failed) => return Err(CucError::NotActive(instance_id.to_owned())),
            Some(InstanceStatus::Active) => {}
        }
        self.release(instance_id)?;
        let instance = self.instances.get_mut(instance_id).expect("checked above");
        instance.status = InstanceStatus::Terminated;
        Ok(instance)
    }

    /// Replace the descriptors of an active instance, keeping its id.
    ///
    /// When the new descriptors cannot be admitted the original ones are
    /// admitted again and `UpdateFailed` is returned.
    pub fn update(&mut self, instance_id: &str, nsd: &Nsd, placement: &Placement) -> Result<&NsInstance, CucError> {
        let original = match self.instances.get(instance_id) {
            Some(i) if i.status == InstanceStatus::Active => i.clone(),
            _ => return Err(CucError::UnknownInstance(instance_id.to_owned())),
        };
        let failed = |cause: CucError| CucError::UpdateFailed {
            instance_id: instance_id.to_owned(),
            cause: Box::new(cause),
        };
        let prepared = self.prepare(instance_id, nsd, placement).map_err(failed)?;
        self.release(instance_id).map_err(failed)?;
        match self.admit(instance_id, nsd, placement, prepared) {
            Ok(admitted) => self.record(instance_id.to_owned(), nsd, placement, Ok(admitted)),
            Err(cause) => {
                let readmit = self
                    .prepare(instance_id, &original.nsd, &original.placement)
                    .and_then(|p| self.admit(instance_id, &original.nsd, &original.placement, p));
                let _ = self.record(instance_id.to_owned(), &original.nsd, &original.placement, readmit);
                Err(failed(cause))
            }
        }
    }

    /// Derive, route and check every stream without contacting any CNC.
    fn prepare(&self, instance_id: &str, nsd: &Nsd, placement: &Placement) -> Result<Vec<Prepared>, CucError> {
        nsd.validate()?;
        for member in nsd.member_ids() {
            let p = placement
                .get(member)
                .ok_or_else(|| DescriptorError::UnplacedMember(member.to_owned()))?;
            let node = self
                .topology
                .node(&p.node_id)
                .ok_or_else(|| TopologyError::UnknownNode(p.node_id.clone()))?;
            let (kind, expected) = match nsd.member_kind(member) {
                Some(MemberKind::Vnf) => ("VNF", NodeKindTag::ComputeHost),
                _ => ("PNF", NodeKindTag::ExternalStation),
            };
            if node.tag() != expected {
                return Err(DescriptorError::Validation(format!(
                    "{kind} {member} is placed on {}, which is not a {expected:?} node",
                    node.node_id
                ))
                .into());
            }
            if let Some(vnfd) = nsd.vnfd(member) {
                let missing = node.capabilities().missing(&vnfd.required_capabilities);
                if !missing.is_empty() {
                    return Err(DescriptorError::Validation(format!(
                        "VNF {member} requires {} which host {} lacks",
                        missing.join(", "),
                        node.node_id
                    ))
                    .into());
                }
            }
        }

        let mut prepared = Vec::new();
        for mut stream in derive_streams(nsd, placement)? {
            stream.stream_id = StreamId::new(format!("{instance_id}:{}", stream.stream_id));
            let caps = |id| self.topology.node(id).map(|n| n.capabilities()).unwrap_or_default();
            validate_capabilities(&stream, &caps(&stream.talker.node_id), &caps(&stream.listener.node_id))?;
            let path = self
                .topology
                .shortest_path(&stream.talker.node_id, &stream.listener.node_id)?;
            let segments = split_by_domain(&path, &self.topology, &self.topology.domains)?;
            prepared.push(Prepared { stream, segments });
        }
        prepared.sort_by(|a, b| {
            let key = |p: &Prepared| {
                (
                    p.stream.traffic.period_ns,
                    p.stream.traffic.max_latency_ns,
                    p.stream.stream_id.clone(),
                )
            };
            key(a).cmp(&key(b))
        });
        Ok(prepared)
    }

    fn next_request_id(&mut self) -> String {
        self.next_request += 1;
        format!("req-{}", self.next_request)
    }

    /// Submit every segment of every stream; withdraw everything on the first refusal.
    fn admit(&mut self, instance_id: &str, nsd: &Nsd, placement: &Placement, prepared: Vec<Prepared>) -> Result<NsInstance, CucError> {
        let mut committed: Vec<(DomainId, StreamId)> = Vec::new();
        let mut schedules = BTreeMap::new();
        let mut talker_gcls: BTreeMap<PortRef, GateControlList> = BTreeMap::new();
        let mut streams = Vec::with_capacity(prepared.len());

        for Prepared { stream, segments } in prepared {
            let hops: Vec<usize> = segments.iter().map(|s| s.hops.len()).collect();
            let budgets = partition_latency_budget(stream.traffic.max_latency_ns, &hops);
            let mut entry = SegmentEntry::Talker;
            let mut scheduled = Vec::with_capacity(segments.len());
            for (segment, budget) in segments.into_iter().zip(budgets) {
                let segment_entry = entry;
                let request = UniRequest::StreamRequest(StreamRequest {
                    request_id: self.next_request_id(),
                    domain_id: segment.domain_id.clone(),
                    stream: stream.clone(),
                    segment: segment.hops.clone(),
                    latency_budget_ns: budget,
                    entry,
                });
                let outcome = self.dispatcher.dispatch(&request);
                let response = match outcome {
                    Ok(r) => r,
                    Err(e) => {
                        self.withdraw(&committed);
                        return Err(e.into());
                    }
                };
                let schedule = match (response.is_ok(), response.schedule) {
                    (true, Some(schedule)) => schedule,
                    (ok, _) => {
                        self.withdraw(&committed);
                        return Err(CucError::AdmissionFailed {
                            instance_id: instance_id.to_owned(),
                            stream_id: stream.stream_id.clone(),
                            domain_id: segment.domain_id,
                            cause: response.cause.unwrap_or(FailureCause::Malformed),
                            detail: if ok {
                                Some("accepted without a schedule".into())
                            } else {
                                response.detail
                            },
                        });
                    }
                };
                committed.push((segment.domain_id.clone(), stream.stream_id.clone()));
                if let Some(gcl) = response.talker_gcl {
                    talker_gcls.insert(gcl.port_id.clone(), gcl);
                }
                entry = SegmentEntry::after(&schedule);
                scheduled.push(SegmentSchedule {
                    domain_id: segment.domain_id,
                    controller_id: segment.controller_id,
                    hops: segment.hops,
                    latency_budget_ns: budget,
                    entry: segment_entry,
                    schedule,
                });
            }
            schedules.insert(stream.stream_id.clone(), scheduled);
            streams.push(stream);
        }

        let configs = self.endstation_configs(&streams, &schedules, &talker_gcls);
        Ok(NsInstance {
            instance_id: instance_id.to_owned(),
            nsd: nsd.clone(),
            placement: placement.clone(),
            streams,
            schedules,
            configs,
            status: InstanceStatus::Active,
            failure: None,
        })
    }

    fn record(
        &mut self,
        instance_id: String,
        nsd: &Nsd,
        placement: &Placement,
        result: Result<NsInstance, CucError>,
    ) -> Result<&NsInstance, CucError> {
        match result {
            Ok(instance) => {
                self.outbox.extend(instance.configs.iter().map(|c| EmittedConfig {
                    instance_id: instance_id.clone(),
                    config: c.clone(),
                }));
                self.instances.insert(instance_id.clone(), instance);
                Ok(&self.instances[&instance_id])
            }
            Err(e) => {
                self.instances.insert(
                    instance_id.clone(),
                    NsInstance {
                        instance_id: instance_id.clone(),
                        nsd: nsd.clone(),
                        placement: placement.clone(),
                        streams: Vec::new(),
                        schedules: BTreeMap::new(),
                        configs: Vec::new(),
                        status: InstanceStatus::Failed,
                        failure: Some(e.to_string()),
                    },
                );
                Err(e)
            }
        }
    }

    /// Compensating removals, newest first. Best effort: failures are ignored
    /// because the original error is what the caller needs to see.
    fn withdraw(&mut self, committed: &[(DomainId, StreamId)]) {
        for (domain, stream) in committed.iter().rev() {
            let _ = self.remove(domain, stream);
        }
    }

    fn remove(&mut self, domain: &DomainId, stream: &StreamId) -> Result<(), CucError> {
        let request = UniRequest::RemoveStream(RemoveStream {
            request_id: self.next_request_id(),
            domain_id: domain.clone(),
            stream_id: stream.clone(),
        });
        let response = self.dispatcher.dispatch(&request)?;
        if response.is_ok() {
            Ok(())
        } else {
            Err(CucError::RemoveFailed {
                domain_id: domain.clone(),
                stream_id: stream.clone(),
                detail: response.detail.unwrap_or_default(),
            })
        }
    }

    /// Remove every reservation of an active instance, stream by stream.
    fn release(&mut self, instance_id: &str) -> Result<(), CucError> {
        let instance = &self.instances[instance_id];
        let targets: Vec<(DomainId, StreamId)> = instance
            .streams
            .iter()
            .flat_map(|s| {
                instance.schedules[&s.stream_id]
                    .iter()
                    .map(move |seg| (seg.domain_id.clone(), s.stream_id.clone()))
            })
            .collect();
        for (domain, stream) in &targets {
            self.remove(domain, stream)?;
        }
        Ok(())
    }

    /// One document per managed station interface, ordered by station and interface.
    fn endstation_configs(
        &self,
        streams: &[StreamRequirement],
        schedules: &BTreeMap<StreamId, Vec<SegmentSchedule>>,
        talker_gcls: &BTreeMap<PortRef, GateControlList>,
    ) -> Vec<EndStationConfig> {
        let mut merged: BTreeMap<(String, String), EndStationConfig> = BTreeMap::new();
        for stream in streams {
            let segments = &schedules[&stream.stream_id];
            let talker_port = segments.first().and_then(|s| s.hops.first()).map(|h| &h.egress);
            for (role, endpoint) in [
                (StationRole::Talker, &stream.talker),
                (StationRole::Listener, &stream.listener),
            ] {
                let Some(node) = self.topology.node(&endpoint.node_id) else {
                    continue;
                };
                let gcl = talker_port.and_then(|p| talker_gcls.get(p));
                if let Some(config) = generate_endstation_config(stream, segments, role, node, gcl) {
                    match merged.entry((config.station_id.clone(), config.interface.clone())) {
                        std::collections::btree_map::Entry::Occupied(mut e) => e.get_mut().merge(config),
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(config);
                        }
                    }
                }
            }
        }
        merged.into_values().collect()
    }
}
