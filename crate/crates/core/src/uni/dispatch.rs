use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{decode, encode, UniError, UniMessage, UniRequest, UniResponse};
use crate::cnc::{Cnc, CncState};
use crate::model::{ControllerId, DomainId};
use crate::topology::{DomainKind, Topology};

/// Where a controller lives; VIMs sit behind Or-Vi and WIMs behind Or-Wi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Vim,
    Wim,
}

impl ControllerKind {
    pub fn for_domain(kind: DomainKind) -> Self {
        match kind {
            DomainKind::NfviPop => ControllerKind::Vim,
            DomainKind::WanSegment => ControllerKind::Wim,
        }
    }

    pub fn reference_point(&self) -> ReferencePoint {
        match self {
            ControllerKind::Vim => ReferencePoint::OrVi,
            ControllerKind::Wim => ReferencePoint::OrWi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReferencePoint {
    #[serde(rename = "Or-Vi")]
    OrVi,
    #[serde(rename = "Or-Wi")]
    OrWi,
}

impl fmt::Display for ReferencePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferencePoint::OrVi => "Or-Vi",
            ReferencePoint::OrWi => "Or-Wi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_id: String,
    pub domain_id: DomainId,
    pub controller_id: ControllerId,
    pub reference_point: ReferencePoint,
    pub kind: String,
}

/// Anything able to answer UNI requests for one domain.
pub trait CncEndpoint: Send {
    fn call(&mut self, request: &UniRequest) -> Result<UniResponse, UniError>;

    /// Committed state, when the controller runs in this process.
    fn snapshot(&self) -> Option<CncState> {
        None
    }
}

/// A CNC living in the same process as the CUC.
#[derive(Debug, Clone)]
pub struct InProcessCnc {
    cnc: Cnc,
}

impl InProcessCnc {
    pub fn new(cnc: Cnc) -> Self {
        InProcessCnc { cnc }
    }

    pub fn cnc(&self) -> &Cnc {
        &self.cnc
    }
}

impl CncEndpoint for InProcessCnc {
    fn call(&mut self, request: &UniRequest) -> Result<UniResponse, UniError> {
        Ok(self.cnc.handle(request))
    }

    fn snapshot(&self) -> Option<CncState> {
        Some(self.cnc.state().clone())
    }
}

/// A CNC reached over a newline-delimited TCP connection.
#[derive(Debug)]
pub struct TcpCnc {
    address: String,
    conn: Option<BufReader<TcpStream>>,
}

impl TcpCnc {
    pub fn new(address: impl Into<String>) -> Self {
        TcpCnc {
            address: address.into(),
            conn: None,
        }
    }

    fn exchange(&mut self, bytes: &[u8]) -> Result<Vec<u8>, UniError> {
        let transport = |e: std::io::Error| UniError::Transport(e.to_string());
        if self.conn.is_none() {
            let stream = TcpStream::connect(&self.address).map_err(transport)?;
            stream.set_nodelay(true).map_err(transport)?;
            self.conn = Some(BufReader::new(stream));
        }
        let conn = self.conn.as_mut().expect("connected above");
        let result = (|| {
            conn.get_mut().write_all(bytes)?;
            conn.get_mut().flush()?;
            let mut line = Vec::new();
            conn.read_until(b'\n', &mut line)?;
            Ok(line)
        })();
        match result {
            Ok(line) if line.is_empty() => {
                self.conn = None;
                Err(UniError::Transport("connection closed by peer".into()))
            }
            Ok(line) => Ok(line),
            Err(e) => {
                self.conn = None;
                Err(transport(e))
            }
        }
    }
}

impl CncEndpoint for TcpCnc {
    fn call(&mut self, request: &UniRequest) -> Result<UniResponse, UniError> {
        let line = self.exchange(&encode(&UniMessage::from(request.clone())))?;
        decode(&line)?
            .into_response()
            .ok_or_else(|| UniError::Decode("expected a response".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "transport", content = "address")]
pub enum EndpointAddress {
    InProcess,
    Tcp(String),
}

pub struct RegistryEntry {
    pub controller_id: ControllerId,
    pub kind: ControllerKind,
    pub address: EndpointAddress,
    pub endpoint: Box<dyn CncEndpoint>,
}

impl fmt::Debug for RegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegistryEntry")
            .field("controller_id", &self.controller_id)
            .field("kind", &self.kind)
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

/// Which controller owns each domain.
#[derive(Debug, Default)]
pub struct CncRegistry {
    entries: BTreeMap<DomainId, RegistryEntry>,
}

impl CncRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// One in-process CNC per topology domain, seeded from `states` when given.
    pub fn in_process(
        topology: &Arc<Topology>,
        mut states: BTreeMap<DomainId, CncState>,
    ) -> Result<Self, UniError> {
        let mut registry = CncRegistry::new();
        for (domain, info) in &topology.domains {
            let state = states
                .remove(domain)
                .unwrap_or_else(|| CncState::new(domain.clone()));
            if &state.domain_id != domain {
                return Err(UniError::Registry(format!(
                    "state for {} filed under {domain}",
                    state.domain_id
                )));
            }
            registry.register(
                domain.clone(),
                RegistryEntry {
                    controller_id: info.controller_id.clone(),
                    kind: ControllerKind::for_domain(info.kind),
                    address: EndpointAddress::InProcess,
                    endpoint: Box::new(InProcessCnc::new(Cnc::with_state(state, topology.clone()))),
                },
            );
        }
        if let Some(domain) = states.keys().next() {
            return Err(UniError::Registry(format!("state for unknown domain {domain}")));
        }
        Ok(registry)
    }

    /// One TCP endpoint per topology domain, all at `address`.
    pub fn tcp(topology: &Topology, address: &str) -> Self {
        let mut registry = CncRegistry::new();
        for (domain, info) in &topology.domains {
            registry.register(
                domain.clone(),
                RegistryEntry {
                    controller_id: info.controller_id.clone(),
                    kind: ControllerKind::for_domain(info.kind),
                    address: EndpointAddress::Tcp(address.to_owned()),
                    endpoint: Box::new(TcpCnc::new(address)),
                },
            );
        }
        registry
    }

    pub fn register(&mut self, domain: DomainId, entry: RegistryEntry) -> Option<RegistryEntry> {
        self.entries.insert(domain, entry)
    }

    pub fn get(&self, domain: &DomainId) -> Option<&RegistryEntry> {
        self.entries.get(domain)
    }

    pub fn domains(&self) -> impl Iterator<Item = &DomainId> {
        self.entries.keys()
    }

    /// Checks that every topology domain is registered with the matching controller kind.
    pub fn check_covers(&self, topology: &Topology) -> Result<(), UniError> {
        for (domain, info) in &topology.domains {
            let entry = self
                .entries
                .get(domain)
                .ok_or_else(|| UniError::Registry(format!("domain {domain} has no controller")))?;
            if entry.kind != ControllerKind::for_domain(info.kind) {
                return Err(UniError::Registry(format!(
                    "domain {domain} needs a {:?} controller",
                    ControllerKind::for_domain(info.kind)
                )));
            }
        }
        Ok(())
    }

    /// States of every in-process controller.
    pub fn snapshots(&self) -> BTreeMap<DomainId, CncState> {
        self.entries
            .iter()
            .filter_map(|(d, e)| e.endpoint.snapshot().map(|s| (d.clone(), s)))
            .collect()
    }
}

/// Routes UNI requests to controllers and keeps the audit log.
#[derive(Debug, Default)]
pub struct Dispatcher {
    pub registry: CncRegistry,
    pub audit: Vec<AuditRecord>,
    issued: BTreeSet<String>,
}

impl Dispatcher {
    pub fn new(registry: CncRegistry) -> Self {
        Dispatcher {
            registry,
            audit: Vec::new(),
            issued: BTreeSet::new(),
        }
    }

    pub fn with_audit(registry: CncRegistry, audit: Vec<AuditRecord>) -> Self {
        let issued = audit.iter().map(|r| r.request_id.clone()).collect();
        Dispatcher {
            registry,
            audit,
            issued,
        }
    }

    pub fn dispatch(&mut self, request: &UniRequest) -> Result<UniResponse, UniError> {
        let domain = request.domain_id();
        let entry = self
            .registry
            .entries
            .get_mut(domain)
            .ok_or_else(|| UniError::UnknownDomain(domain.clone()))?;
        if !self.issued.insert(request.request_id().to_owned()) {
            return Err(UniError::Registry(format!(
                "request id {} was already issued",
                request.request_id()
            )));
        }
        self.audit.push(AuditRecord {
            request_id: request.request_id().to_owned(),
            domain_id: domain.clone(),
            controller_id: entry.controller_id.clone(),
            reference_point: entry.kind.reference_point(),
            kind: request.kind().to_owned(),
        });
        let response = entry.endpoint.call(request)?;
        if response.request_id != request.request_id() {
            return Err(UniError::Transport(format!(
                "response to {} answers {}",
                request.request_id(),
                response.request_id
            )));
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{reference_stream, TopologyBuilder, GBPS};
    use crate::uni::{CapabilityQuery, FailureCause, ResponseStatus, StreamRequest};
    use crate::cnc::SegmentEntry;

    fn two_domain_topology() -> Arc<Topology> {
        Arc::new(
            TopologyBuilder::new()
                .domain("pop1", DomainKind::NfviPop, "vim-1")
                .domain("wan", DomainKind::WanSegment, "wim-1")
                .host("A", "pop1")
                .bridge("B1", "pop1", 1000)
                .bridge("W1", "wan", 1000)
                .host("C", "wan")
                .link("A", "B1", GBPS, 500)
                .link("B1", "W1", GBPS, 500)
                .link("W1", "C", GBPS, 500)
                .build(),
        )
    }

    fn query(id: &str, domain: &str) -> UniRequest {
        UniRequest::CapabilityQuery(CapabilityQuery {
            request_id: id.into(),
            domain_id: domain.into(),
        })
    }

    #[test]
    fn vim_requests_travel_over_or_vi() {
        let topo = two_domain_topology();
        let mut d = Dispatcher::new(CncRegistry::in_process(&topo, BTreeMap::new()).unwrap());
        let hops = topo.shortest_path(&"A".into(), &"C".into()).unwrap().hops;
        let req = UniRequest::StreamRequest(StreamRequest {
            request_id: "r1".into(),
            domain_id: "pop1".into(),
            stream: reference_stream("s", 100_000),
            segment: hops[..2].to_vec(),
            latency_budget_ns: 100_000,
            entry: SegmentEntry::Talker,
        });
        let resp = d.dispatch(&req).unwrap();
        assert_eq!(resp.status, ResponseStatus::Ok);
        assert_eq!(d.audit.len(), 1);
        assert_eq!(d.audit[0].reference_point, ReferencePoint::OrVi);
        assert_eq!(d.audit[0].controller_id.as_str(), "vim-1");
        assert_eq!(d.audit[0].kind, "stream_request");
    }

    #[test]
    fn wim_requests_travel_over_or_wi() {
        let topo = two_domain_topology();
        let mut d = Dispatcher::new(CncRegistry::in_process(&topo, BTreeMap::new()).unwrap());
        d.dispatch(&query("r1", "wan")).unwrap();
        assert_eq!(d.audit[0].reference_point, ReferencePoint::OrWi);
        assert_eq!(
            serde_json::to_string(&d.audit[0].reference_point).unwrap(),
            "\"Or-Wi\""
        );
    }

    #[test]
    fn unregistered_domain() {
        let topo = two_domain_topology();
        let mut d = Dispatcher::new(CncRegistry::in_process(&topo, BTreeMap::new()).unwrap());
        assert!(matches!(
            d.dispatch(&query("r1", "mars")),
            Err(UniError::UnknownDomain(dom)) if dom.as_str() == "mars"
        ));
        assert!(d.audit.is_empty());
    }

    #[test]
    fn request_ids_are_single_use() {
        let topo = two_domain_topology();
        let mut d = Dispatcher::new(CncRegistry::in_process(&topo, BTreeMap::new()).unwrap());
        d.dispatch(&query("r1", "pop1")).unwrap();
        assert!(matches!(d.dispatch(&query("r1", "pop1")), Err(UniError::Registry(_))));
        assert_eq!(d.audit.len(), 1);
    }

    #[test]
    fn failures_are_audited_too() {
        let topo = two_domain_topology();
        let mut d = Dispatcher::new(CncRegistry::in_process(&topo, BTreeMap::new()).unwrap());
        let resp = d
            .dispatch(&UniRequest::RemoveStream(crate::uni::RemoveStream {
                request_id: "r1".into(),
                domain_id: "pop1".into(),
                stream_id: "ghost".into(),
            }))
            .unwrap();
        assert_eq!(resp.cause, Some(FailureCause::UnknownStream));
        assert_eq!(d.audit.len(), 1);
    }

    #[test]
    fn registry_coverage() {
        let topo = two_domain_topology();
        let mut registry = CncRegistry::new();
        assert!(registry.check_covers(&topo).is_err());
        registry = CncRegistry::in_process(&topo, BTreeMap::new()).unwrap();
        registry.check_covers(&topo).unwrap();
        registry.register(
            "wan".into(),
            RegistryEntry {
                controller_id: "vim-x".into(),
                kind: ControllerKind::Vim,
                address: EndpointAddress::InProcess,
                endpoint: Box::new(InProcessCnc::new(Cnc::new("wan".into(), topo.clone()))),
            },
        );
        assert!(registry.check_covers(&topo).is_err());
    }
}
