//! Builders for small topologies and streams, used by tests and examples.

use std::collections::BTreeMap;

use crate::descriptors::{
    ConnectionPoint, CpRef, MemberPlacement, Nsd, Placement, PnfRef, TsnVlExtension, VirtualLink,
    Vnfd,
};
use crate::model::{
    CapabilitySet, DataFrameSpec, EndpointRef, MacAddr, NodeId, StreamId, StreamRequirement,
    TrafficSpec,
};
use crate::topology::{
    DomainInfo, DomainKind, Link, LinkEnd, NodeDoc, NodeKindTag, Topology, TopologyDoc,
};

pub const GBPS: u64 = 1_000_000_000;

#[derive(Debug, Default, Clone)]
pub struct TopologyBuilder {
    nodes: Vec<NodeDoc>,
    links: Vec<Link>,
    domains: BTreeMap<crate::model::DomainId, DomainInfo>,
    next_port: BTreeMap<String, usize>,
}

impl TopologyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn domain(mut self, id: &str, kind: DomainKind, controller: &str) -> Self {
        self.domains.insert(
            id.into(),
            DomainInfo {
                kind,
                controller_id: controller.into(),
            },
        );
        self
    }

    fn node(mut self, id: &str, kind: NodeKindTag, domain: &str) -> Self {
        self.nodes.push(NodeDoc {
            node_id: id.into(),
            kind,
            domain_id: domain.into(),
            processing_delay_ns: None,
            gcl_max_entries: None,
            supports_qbv: None,
            managed: None,
            capabilities: None,
        });
        self
    }

    /// Compute host offering every real-time capability.
    pub fn host(self, id: &str, domain: &str) -> Self {
        self.host_with(id, domain, CapabilitySet::ALL)
    }

    pub fn host_with(self, id: &str, domain: &str, caps: CapabilitySet) -> Self {
        let mut b = self.node(id, NodeKindTag::ComputeHost, domain);
        b.nodes.last_mut().unwrap().capabilities = Some(caps);
        b
    }

    pub fn bridge(self, id: &str, domain: &str, processing_delay_ns: u64) -> Self {
        self.bridge_with(id, domain, processing_delay_ns, 64, true)
    }

    pub fn bridge_with(
        self,
        id: &str,
        domain: &str,
        processing_delay_ns: u64,
        gcl_max_entries: u32,
        supports_qbv: bool,
    ) -> Self {
        let mut b = self.node(id, NodeKindTag::Bridge, domain);
        let n = b.nodes.last_mut().unwrap();
        n.processing_delay_ns = Some(processing_delay_ns);
        n.gcl_max_entries = Some(gcl_max_entries);
        n.supports_qbv = Some(supports_qbv);
        b
    }

    pub fn external(self, id: &str, domain: &str, managed: bool) -> Self {
        let mut b = self.node(id, NodeKindTag::ExternalStation, domain);
        let n = b.nodes.last_mut().unwrap();
        n.managed = Some(managed);
        n.capabilities = Some(CapabilitySet::ALL);
        b
    }

    fn port(&mut self, node: &str) -> LinkEnd {
        let n = self.next_port.entry(node.to_owned()).or_default();
        let end = LinkEnd {
            node_id: node.into(),
            port_id: format!("p{n}").into(),
        };
        *n += 1;
        end
    }

    /// Link with ports numbered `p0, p1, ...` per node in call order.
    pub fn link(mut self, a: &str, b: &str, speed_bps: u64, propagation_ns: u64) -> Self {
        let a_end = self.port(a);
        let b_end = self.port(b);
        self.links.push(Link {
            link_id: format!("{a}-{b}").into(),
            a: a_end,
            b: b_end,
            speed_bps,
            propagation_ns,
        });
        self
    }

    pub fn document(self) -> TopologyDoc {
        TopologyDoc {
            nodes: self.nodes,
            links: self.links,
            domains: self.domains,
        }
    }

    pub fn build(self) -> Topology {
        Topology::from_document(self.document()).expect("testkit topology is valid")
    }
}

/// `A — B1 — C`, one domain `pop1` managed by `vim-1`.
pub fn line_topology(speed_bps: u64, propagation_ns: u64, processing_ns: u64) -> Topology {
    TopologyBuilder::new()
        .domain("pop1", DomainKind::NfviPop, "vim-1")
        .host("A", "pop1")
        .bridge("B1", "pop1", processing_ns)
        .host("C", "pop1")
        .link("A", "B1", speed_bps, propagation_ns)
        .link("B1", "C", speed_bps, propagation_ns)
        .build()
}

/// The hand-traced reference setup: 1 Gb/s, 500 ns propagation, 1000 ns bridge delay.
pub fn reference_topology() -> Topology {
    line_topology(GBPS, 500, 1000)
}

pub fn mac_for(seed: &str) -> MacAddr {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let b = h.to_be_bytes();
    MacAddr([0x02, b[3], b[4], b[5], b[6], b[7]])
}

pub fn traffic(period_ns: u64, max_frame_bytes: u32, frames: u32, max_latency_ns: u64) -> TrafficSpec {
    TrafficSpec {
        period_ns,
        max_frame_bytes,
        frames_per_period: frames,
        max_latency_ns,
    }
}

/// Stream between the `eth0` interfaces of two nodes, VLAN 100.
pub fn stream(id: &str, talker: &str, listener: &str, traffic: TrafficSpec, pcp: u8) -> StreamRequirement {
    StreamRequirement {
        stream_id: StreamId::new(id),
        talker: EndpointRef {
            station_id: format!("{talker}-app"),
            interface: "eth0".into(),
            node_id: NodeId::new(talker),
        },
        listener: EndpointRef {
            station_id: format!("{listener}-app"),
            interface: "eth0".into(),
            node_id: NodeId::new(listener),
        },
        frame: DataFrameSpec {
            src_mac: mac_for(talker),
            dst_mac: mac_for(listener),
            src_ip: None,
            dst_ip: None,
            vlan_id: 100,
            pcp,
        },
        traffic,
    }
}

/// The reference stream: 250 µs period, one 500 B frame, class 7.
pub fn reference_stream(id: &str, max_latency_ns: u64) -> StreamRequirement {
    stream(id, "A", "C", traffic(250_000, 500, 1, max_latency_ns), 7)
}

/// `H1 — BA` in `pop-a`, `W1` in the WAN, `BB — H2` in `pop-b`.
pub fn cross_pop_topology(speed_bps: u64, propagation_ns: u64, processing_ns: u64) -> TopologyBuilder {
    TopologyBuilder::new()
        .domain("pop-a", DomainKind::NfviPop, "vim-a")
        .domain("wan", DomainKind::WanSegment, "wim-1")
        .domain("pop-b", DomainKind::NfviPop, "vim-b")
        .host("H1", "pop-a")
        .bridge("BA", "pop-a", processing_ns)
        .bridge("W1", "wan", processing_ns)
        .bridge("BB", "pop-b", processing_ns)
        .host("H2", "pop-b")
        .link("H1", "BA", speed_bps, propagation_ns)
        .link("BA", "W1", speed_bps, propagation_ns)
        .link("W1", "BB", speed_bps, propagation_ns)
        .link("BB", "H2", speed_bps, propagation_ns)
}

/// A TSN virtual link between `a` and `b` (connection point `cp0` on each).
#[derive(Debug, Clone)]
pub struct VlSpec {
    pub vl_id: String,
    pub a: String,
    pub b: String,
    pub vlan_id: u16,
    pub pcp: u8,
    pub fwd: TrafficSpec,
    pub rev: TrafficSpec,
}

pub fn vl(vl_id: &str, a: &str, b: &str, pcp: u8, fwd: TrafficSpec, rev: TrafficSpec) -> VlSpec {
    VlSpec {
        vl_id: vl_id.into(),
        a: a.into(),
        b: b.into(),
        vlan_id: 100,
        pcp,
        fwd,
        rev,
    }
}

fn cps() -> Vec<ConnectionPoint> {
    vec![ConnectionPoint {
        cp_id: "cp0".into(),
        interface: "eth0".into(),
    }]
}

/// Service with the given VNFs, PNFs and TSN virtual links.
pub fn nsd(ns_id: &str, vnfs: &[&str], pnfs: &[&str], links: &[VlSpec]) -> Nsd {
    Nsd {
        ns_id: ns_id.into(),
        vnfds: vnfs
            .iter()
            .map(|v| Vnfd {
                vnf_id: (*v).into(),
                connection_points: cps(),
                required_capabilities: CapabilitySet::default(),
            })
            .collect(),
        pnfs: pnfs
            .iter()
            .map(|p| PnfRef {
                pnf_id: (*p).into(),
                connection_points: cps(),
            })
            .collect(),
        virtual_links: links
            .iter()
            .map(|l| VirtualLink {
                vl_id: l.vl_id.clone(),
                endpoints: vec![
                    CpRef {
                        member_id: l.a.clone(),
                        cp_id: "cp0".into(),
                    },
                    CpRef {
                        member_id: l.b.clone(),
                        cp_id: "cp0".into(),
                    },
                ],
                tsn: Some(TsnVlExtension {
                    vlan_id: l.vlan_id,
                    pcp: l.pcp,
                    traffic_fwd: l.fwd,
                    traffic_rev: l.rev,
                }),
            })
            .collect(),
    }
}

/// Place each `(member, node)` on interface `eth0` with a derived MAC.
pub fn placement(members: &[(&str, &str)]) -> Placement {
    Placement {
        members: members
            .iter()
            .map(|(m, n)| {
                (
                    (*m).to_owned(),
                    MemberPlacement {
                        node_id: NodeId::new(*n),
                        interface: "eth0".into(),
                        mac: mac_for(m),
                        ip: None,
                    },
                )
            })
            .collect(),
    }
}
