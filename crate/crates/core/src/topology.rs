//! Physical NFVI substrate: bridges, hosts, links and TSN domains.
//!
//! The topology is loaded from a JSON document and is immutable afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CapabilitySet, ControllerId, DomainId, LinkId, NodeId, PortId, PortRef};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology parse error: {0}")]
    Parse(String),
    #[error("topology validation error: {0}")]
    Validation(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {src} to {dst}")]
    NoPath { src: NodeId, dst: NodeId },
    #[error("domain {0} is not in the domain map")]
    UnmappedDomain(DomainId),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKindTag {
    Bridge,
    ComputeHost,
    ExternalStation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BridgeProps {
    pub processing_delay_ns: u64,
    pub gcl_max_entries: u32,
    pub supports_qbv: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Bridge(BridgeProps),
    ComputeHost { capabilities: CapabilitySet },
    ExternalStation { managed: bool, capabilities: CapabilitySet },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub node_id: NodeId,
    pub domain_id: DomainId,
    pub kind: NodeKind,
}

impl Node {
    pub fn tag(&self) -> NodeKindTag {
        match self.kind {
            NodeKind::Bridge(_) => NodeKindTag::Bridge,
            NodeKind::ComputeHost { .. } => NodeKindTag::ComputeHost,
            NodeKind::ExternalStation { .. } => NodeKindTag::ExternalStation,
        }
    }

    pub fn bridge(&self) -> Option<&BridgeProps> {
        match &self.kind {
            NodeKind::Bridge(props) => Some(props),
            _ => None,
        }
    }

    pub fn is_bridge(&self) -> bool {
        self.bridge().is_some()
    }

    pub fn processing_delay_ns(&self) -> u64 {
        self.bridge().map_or(0, |b| b.processing_delay_ns)
    }

    /// Station capabilities; bridges report none.
    pub fn capabilities(&self) -> CapabilitySet {
        match &self.kind {
            NodeKind::Bridge(_) => CapabilitySet::default(),
            NodeKind::ComputeHost { capabilities } => *capabilities,
            NodeKind::ExternalStation { capabilities, .. } => *capabilities,
        }
    }

    /// False only for external stations hidden from orchestration.
    pub fn is_managed(&self) -> bool {
        !matches!(self.kind, NodeKind::ExternalStation { managed: false, .. })
    }
}

/// Node as it appears in the topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub node_id: NodeId,
    pub kind: NodeKindTag,
    pub domain_id: DomainId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_delay_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcl_max_entries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports_qbv: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub managed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<CapabilitySet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEnd {
    pub node_id: NodeId,
    pub port_id: PortId,
}

impl LinkEnd {
    pub fn port_ref(&self) -> PortRef {
        PortRef {
            node: self.node_id.clone(),
            port: self.port_id.clone(),
        }
    }
}

/// Full-duplex point-to-point link.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub link_id: LinkId,
    pub a: LinkEnd,
    pub b: LinkEnd,
    pub speed_bps: u64,
    pub propagation_ns: u64,
}

impl Link {
    /// The far end seen from `node`.
    pub fn peer_of(&self, node: &NodeId) -> Option<&LinkEnd> {
        if &self.a.node_id == node {
            Some(&self.b)
        } else if &self.b.node_id == node {
            Some(&self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    NfviPop,
    WanSegment,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainInfo {
    pub kind: DomainKind,
    pub controller_id: ControllerId,
}

pub type DomainMap = BTreeMap<DomainId, DomainInfo>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub nodes: Vec<NodeDoc>,
    pub links: Vec<Link>,
    pub domains: DomainMap,
}

/// One link traversal: leave `egress`, cross `link_id`, enter `ingress`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub egress: PortRef,
    pub link_id: LinkId,
    pub ingress: PortRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub hops: Vec<Hop>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

/// Maximal run of hops whose egress nodes belong to one domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSegment {
    pub domain_id: DomainId,
    pub controller_id: ControllerId,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    pub domains: DomainMap,
    node_index: HashMap<NodeId, usize>,
    port_index: HashMap<PortRef, usize>,
}

impl Topology {
    pub fn from_document(doc: TopologyDoc) -> Result<Self, TopologyError> {
        let invalid = |msg: String| Err(TopologyError::Validation(msg));

        let mut controllers = BTreeSet::new();
        for (domain, info) in &doc.domains {
            if domain.0.is_empty() || info.controller_id.0.is_empty() {
                return invalid(format!("domain {domain:?} has an empty identifier"));
            }
            if !controllers.insert(&info.controller_id) {
                return invalid(format!(
                    "controller {} owns more than one domain",
                    info.controller_id
                ));
            }
        }

        let mut nodes = Vec::with_capacity(doc.nodes.len());
        let mut node_index = HashMap::new();
        for raw in doc.nodes {
            if raw.node_id.0.is_empty() || raw.node_id.0.contains('.') {
                return invalid(format!(
                    "node id {:?} must be non-empty and contain no '.'",
                    raw.node_id.0
                ));
            }
            if !doc.domains.contains_key(&raw.domain_id) {
                return invalid(format!(
                    "node {} references dangling domain {}",
                    raw.node_id, raw.domain_id
                ));
            }
            let node = node_from_doc(raw)?;
            if node_index.insert(node.node_id.clone(), nodes.len()).is_some() {
                return invalid(format!("duplicate node {}", node.node_id));
            }
            nodes.push(node);
        }

        let mut port_index = HashMap::new();
        let mut link_ids = BTreeSet::new();
        for (i, link) in doc.links.iter().enumerate() {
            if !link_ids.insert(&link.link_id) {
                return invalid(format!("duplicate link {}", link.link_id));
            }
            if link.a.node_id == link.b.node_id {
                return invalid(format!("link {} loops on one node", link.link_id));
            }
            if link.speed_bps == 0 {
                return invalid(format!("link {} has zero speed", link.link_id));
            }
            for end in [&link.a, &link.b] {
                if !node_index.contains_key(&end.node_id) {
                    return invalid(format!(
                        "link {} references unknown node {}",
                        link.link_id, end.node_id
                    ));
                }
                if end.port_id.0.is_empty() {
                    return invalid(format!("link {} has an empty port id", link.link_id));
                }
                if port_index.insert(end.port_ref(), i).is_some() {
                    return invalid(format!("duplicate port {}", end.port_ref()));
                }
            }
        }

        Ok(Topology {
            nodes,
            links: doc.links,
            domains: doc.domains,
            node_index,
            port_index,
        })
    }

    pub fn to_document(&self) -> TopologyDoc {
        TopologyDoc {
            nodes: self.nodes.iter().map(node_to_doc).collect(),
            links: self.links.clone(),
            domains: self.domains.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("topology serializes")
    }

    pub fn from_file(path: impl AsRef<FsPath>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_topology(&text)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.iter().find(|l| &l.link_id == id)
    }

    /// The link attached to `port`.
    pub fn link_at(&self, port: &PortRef) -> Option<&Link> {
        self.port_index.get(port).map(|&i| &self.links[i])
    }

    pub fn port_speed(&self, port: &PortRef) -> Option<u64> {
        self.link_at(port).map(|l| l.speed_bps)
    }

    /// Every linked port, sorted.
    pub fn ports(&self) -> Vec<PortRef> {
        let mut ports: Vec<PortRef> = self.port_index.keys().cloned().collect();
        ports.sort();
        ports
    }

    pub fn domain_of(&self, node: &NodeId) -> Option<&DomainId> {
        self.node(node).map(|n| &n.domain_id)
    }

    /// Outgoing (egress port, link, peer end) triples of `node`.
    fn neighbors<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = (&'a PortId, &'a Link, &'a LinkEnd)> {
        self.links.iter().filter_map(move |link| {
            if &link.a.node_id == node {
                Some((&link.a.port_id, link, &link.b))
            } else if &link.b.node_id == node {
                Some((&link.b.port_id, link, &link.a))
            } else {
                None
            }
        })
    }

    /// Minimum-hop route whose intermediate nodes are all bridges.
    ///
    /// Among equal-length routes the one with the lexicographically smallest
    /// sequence of (next node, egress port) pairs wins.
    pub fn shortest_path(&self, src: &NodeId, dst: &NodeId) -> Result<Path, TopologyError> {
        for n in [src, dst] {
            if self.node(n).is_none() {
                return Err(TopologyError::UnknownNode(n.clone()));
            }
        }
        let no_path = || TopologyError::NoPath {
            src: src.clone(),
            dst: dst.clone(),
        };
        if src == dst {
            return Err(no_path());
        }

        // Hop distance to dst; only bridges may relay.
        let mut dist: HashMap<&NodeId, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(dst, 0);
        queue.push_back(dst);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if u != dst && !self.node(u).is_some_and(Node::is_bridge) {
                continue;
            }
            for (_, _, peer) in self.neighbors(u) {
                if !dist.contains_key(&peer.node_id) {
                    dist.insert(&peer.node_id, du + 1);
                    queue.push_back(&peer.node_id);
                }
            }
        }

        let mut remaining = *dist.get(src).ok_or_else(no_path)?;
        let mut hops = Vec::with_capacity(remaining);
        let mut current = src;
        while current != dst {
            let next = self
                .neighbors(current)
                .filter(|(_, _, peer)| {
                    dist.get(&peer.node_id) == Some(&(remaining - 1))
                        && (&peer.node_id == dst
                            || self.node(&peer.node_id).is_some_and(Node::is_bridge))
                })
                .min_by(|(pa, _, ea), (pb, _, eb)| (&ea.node_id, *pa).cmp(&(&eb.node_id, *pb)))
                .ok_or_else(no_path)?;
            let (port, link, peer) = next;
            hops.push(Hop {
                egress: PortRef::new(current.clone(), port.clone()),
                link_id: link.link_id.clone(),
                ingress: peer.port_ref(),
            });
            current = &peer.node_id;
            remaining -= 1;
        }
        Ok(Path { hops })
    }
}

pub fn load_topology(text: &str) -> Result<Topology, TopologyError> {
    let doc: TopologyDoc =
        serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    Topology::from_document(doc)
}

fn node_from_doc(raw: NodeDoc) -> Result<Node, TopologyError> {
    let has_bridge_fields = raw.processing_delay_ns.is_some()
        || raw.gcl_max_entries.is_some()
        || raw.supports_qbv.is_some();
    let kind = match raw.kind {
        NodeKindTag::Bridge => {
            let missing = |field: &str| {
                TopologyError::Parse(format!("bridge {} is missing `{field}`", raw.node_id))
            };
            if raw.managed.is_some() || raw.capabilities.is_some() {
                return Err(TopologyError::Validation(format!(
                    "bridge {} carries end-station fields",
                    raw.node_id
                )));
            }
            let props = BridgeProps {
                processing_delay_ns: raw
                    .processing_delay_ns
                    .ok_or_else(|| missing("processing_delay_ns"))?,
                gcl_max_entries: raw.gcl_max_entries.ok_or_else(|| missing("gcl_max_entries"))?,
                supports_qbv: raw.supports_qbv.ok_or_else(|| missing("supports_qbv"))?,
            };
            if props.gcl_max_entries < 2 {
                return Err(TopologyError::Validation(format!(
                    "bridge {} gcl_max_entries must be >= 2",
                    raw.node_id
                )));
            }
            NodeKind::Bridge(props)
        }
        NodeKindTag::ComputeHost | NodeKindTag::ExternalStation if has_bridge_fields => {
            return Err(TopologyError::Validation(format!(
                "non-bridge node {} carries bridge fields",
                raw.node_id
            )));
        }
        NodeKindTag::ComputeHost => {
            if raw.managed.is_some() {
                return Err(TopologyError::Validation(format!(
                    "compute host {} carries `managed`",
                    raw.node_id
                )));
            }
            NodeKind::ComputeHost {
                capabilities: raw.capabilities.unwrap_or_default(),
            }
        }
        NodeKindTag::ExternalStation => NodeKind::ExternalStation {
            managed: raw.managed.ok_or_else(|| {
                TopologyError::Parse(format!("external station {} is missing `managed`", raw.node_id))
            })?,
            capabilities: raw.capabilities.unwrap_or_default(),
        },
    };
    Ok(Node {
        node_id: raw.node_id,
        domain_id: raw.domain_id,
        kind,
    })
}

fn node_to_doc(node: &Node) -> NodeDoc {
    let mut doc = NodeDoc {
        node_id: node.node_id.clone(),
        kind: node.tag(),
        domain_id: node.domain_id.clone(),
        processing_delay_ns: None,
        gcl_max_entries: None,
        supports_qbv: None,
        managed: None,
        capabilities: None,
    };
    match &node.kind {
        NodeKind::Bridge(b) => {
            doc.processing_delay_ns = Some(b.processing_delay_ns);
            doc.gcl_max_entries = Some(b.gcl_max_entries);
            doc.supports_qbv = Some(b.supports_qbv);
        }
        NodeKind::ComputeHost { capabilities } => doc.capabilities = Some(*capabilities),
        NodeKind::ExternalStation {
            managed,
            capabilities,
        } => {
            doc.managed = Some(*managed);
            doc.capabilities = Some(*capabilities);
        }
    }
    doc
}

/// Cut `path` into per-domain segments keyed by the egress node's domain.
pub fn split_by_domain(
    path: &Path,
    topology: &Topology,
    domain_map: &DomainMap,
) -> Result<Vec<PathSegment>, TopologyError> {
    let mut segments: Vec<PathSegment> = Vec::new();
    for hop in &path.hops {
        let domain = topology
            .domain_of(&hop.egress.node)
            .ok_or_else(|| TopologyError::UnknownNode(hop.egress.node.clone()))?;
        match segments.last_mut() {
            Some(seg) if &seg.domain_id == domain => seg.hops.push(hop.clone()),
            _ => {
                let info = domain_map
                    .get(domain)
                    .ok_or_else(|| TopologyError::UnmappedDomain(domain.clone()))?;
                segments.push(PathSegment {
                    domain_id: domain.clone(),
                    controller_id: info.controller_id.clone(),
                    hops: vec![hop.clone()],
                });
            }
        }
    }
    Ok(segments)
}
