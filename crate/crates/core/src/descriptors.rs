//! Network service descriptors with TSN virtual-link extensions, placements,
//! and the derivation of unidirectional stream requirements from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_vlan, CapabilitySet, DataFrameSpec, EndpointRef, MacAddr, NodeId, StreamId,
    StreamRequirement, TrafficSpec,
};

pub const FORWARD_SUFFIX: &str = "~fwd";
pub const REVERSE_SUFFIX: &str = "~rev";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("descriptor parse error: {0}")]
    Parse(String),
    #[error("descriptor validation error: {0}")]
    Validation(String),
    #[error("NS member {0} has no placement")]
    UnplacedMember(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationRole {
    Talker,
    Listener,
}

impl fmt::Display for StationRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StationRole::Talker => "talker",
            StationRole::Listener => "listener",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{role} {station} lacks capability {flag}")]
pub struct CapabilityError {
    pub station: String,
    pub role: StationRole,
    pub flag: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionPoint {
    pub cp_id: String,
    pub interface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vnfd {
    pub vnf_id: String,
    pub connection_points: Vec<ConnectionPoint>,
    #[serde(default)]
    pub required_capabilities: CapabilitySet,
}

/// A physical function taking part in the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnfRef {
    pub pnf_id: String,
    pub connection_points: Vec<ConnectionPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpRef {
    pub member_id: String,
    pub cp_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsnVlExtension {
    pub vlan_id: u16,
    pub pcp: u8,
    /// Endpoint 0 towards endpoint 1.
    pub traffic_fwd: TrafficSpec,
    /// Endpoint 1 towards endpoint 0.
    pub traffic_rev: TrafficSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualLink {
    pub vl_id: String,
    pub endpoints: Vec<CpRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsn: Option<TsnVlExtension>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nsd {
    pub ns_id: String,
    #[serde(default)]
    pub vnfds: Vec<Vnfd>,
    #[serde(default)]
    pub pnfs: Vec<PnfRef>,
    pub virtual_links: Vec<VirtualLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Vnf,
    Pnf,
}

impl Nsd {
    pub fn member_kind(&self, member_id: &str) -> Option<MemberKind> {
        if self.vnfds.iter().any(|v| v.vnf_id == member_id) {
            Some(MemberKind::Vnf)
        } else if self.pnfs.iter().any(|p| p.pnf_id == member_id) {
            Some(MemberKind::Pnf)
        } else {
            None
        }
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.vnfds
            .iter()
            .map(|v| v.vnf_id.as_str())
            .chain(self.pnfs.iter().map(|p| p.pnf_id.as_str()))
    }

    pub fn vnfd(&self, vnf_id: &str) -> Option<&Vnfd> {
        self.vnfds.iter().find(|v| v.vnf_id == vnf_id)
    }

    pub fn tsn_links(&self) -> impl Iterator<Item = (&VirtualLink, &TsnVlExtension)> {
        self.virtual_links
            .iter()
            .filter_map(|vl| vl.tsn.as_ref().map(|ext| (vl, ext)))
    }

    fn connection_points(&self, member_id: &str) -> Option<&[ConnectionPoint]> {
        if let Some(v) = self.vnfd(member_id) {
            return Some(&v.connection_points);
        }
        self.pnfs
            .iter()
            .find(|p| p.pnf_id == member_id)
            .map(|p| p.connection_points.as_slice())
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        let invalid = |msg: String| Err(DescriptorError::Validation(msg));
        if self.ns_id.is_empty() {
            return invalid("empty ns_id".into());
        }
        let mut members = BTreeSet::new();
        for id in self.member_ids() {
            if id.is_empty() || !members.insert(id) {
                return invalid(format!("duplicate or empty member id {id:?}"));
            }
        }
        for id in &members {
            let cps = self.connection_points(id).unwrap_or_default();
            let mut seen = BTreeSet::new();
            for cp in cps {
                if !seen.insert(cp.cp_id.as_str()) {
                    return invalid(format!("member {id} declares cp {} twice", cp.cp_id));
                }
            }
        }
        let mut vl_ids = BTreeSet::new();
        for vl in &self.virtual_links {
            if vl.vl_id.is_empty() || !vl_ids.insert(vl.vl_id.as_str()) {
                return invalid(format!("duplicate or empty vl id {:?}", vl.vl_id));
            }
            for ep in &vl.endpoints {
                let declared = self
                    .connection_points(&ep.member_id)
                    .is_some_and(|cps| cps.iter().any(|cp| cp.cp_id == ep.cp_id));
                if !declared {
                    return invalid(format!(
                        "vl {} references dangling cp {}:{}",
                        vl.vl_id, ep.member_id, ep.cp_id
                    ));
                }
            }
            match &vl.tsn {
                Some(ext) => {
                    if vl.endpoints.len() != 2 {
                        return invalid(format!(
                            "TSN vl {} has {} endpoints, exactly 2 required",
                            vl.vl_id,
                            vl.endpoints.len()
                        ));
                    }
                    if vl.endpoints[0].member_id == vl.endpoints[1].member_id {
                        return invalid(format!("TSN vl {} loops on one member", vl.vl_id));
                    }
                    validate_vlan(ext.vlan_id, ext.pcp)
                        .map_err(|e| DescriptorError::Validation(format!("vl {}: {e}", vl.vl_id)))?;
                    for spec in [&ext.traffic_fwd, &ext.traffic_rev] {
                        spec.validate().map_err(|e| {
                            DescriptorError::Validation(format!("vl {}: {e}", vl.vl_id))
                        })?;
                    }
                }
                None if vl.endpoints.len() < 2 => {
                    return invalid(format!("vl {} has fewer than 2 endpoints", vl.vl_id));
                }
                None => {}
            }
        }
        Ok(())
    }
}

pub fn parse_nsd(text: &str) -> Result<Nsd, DescriptorError> {
    let nsd: Nsd = serde_json::from_str(text).map_err(|e| DescriptorError::Parse(e.to_string()))?;
    nsd.validate()?;
    Ok(nsd)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberPlacement {
    pub node_id: NodeId,
    pub interface: String,
    pub mac: MacAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
}

/// Where each VNF/PNF of a service lives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub members: BTreeMap<String, MemberPlacement>,
}

impl Placement {
    pub fn get(&self, member_id: &str) -> Option<&MemberPlacement> {
        self.members.get(member_id)
    }

    pub fn endpoint(&self, member_id: &str) -> Result<EndpointRef, DescriptorError> {
        let p = self
            .get(member_id)
            .ok_or_else(|| DescriptorError::UnplacedMember(member_id.to_owned()))?;
        Ok(EndpointRef {
            station_id: member_id.to_owned(),
            interface: p.interface.clone(),
            node_id: p.node_id.clone(),
        })
    }
}

pub fn parse_placement(text: &str) -> Result<Placement, DescriptorError> {
    serde_json::from_str(text).map_err(|e| DescriptorError::Parse(e.to_string()))
}

/// Two streams per TSN virtual link, forward before reverse, in declaration order.
pub fn derive_streams(
    nsd: &Nsd,
    placement: &Placement,
) -> Result<Vec<StreamRequirement>, DescriptorError> {
    for member in nsd.member_ids() {
        if placement.get(member).is_none() {
            return Err(DescriptorError::UnplacedMember(member.to_owned()));
        }
    }
    let mut streams = Vec::new();
    for (vl, ext) in nsd.tsn_links() {
        let a = &vl.endpoints[0].member_id;
        let b = &vl.endpoints[1].member_id;
        let directions = [
            (a, b, &ext.traffic_fwd, FORWARD_SUFFIX),
            (b, a, &ext.traffic_rev, REVERSE_SUFFIX),
        ];
        for (talker, listener, traffic, suffix) in directions {
            let tp = placement
                .get(talker)
                .ok_or_else(|| DescriptorError::UnplacedMember(talker.clone()))?;
            let lp = placement
                .get(listener)
                .ok_or_else(|| DescriptorError::UnplacedMember(listener.clone()))?;
            streams.push(StreamRequirement {
                stream_id: StreamId::new(format!("{}{suffix}", vl.vl_id)),
                talker: placement.endpoint(talker)?,
                listener: placement.endpoint(listener)?,
                frame: DataFrameSpec {
                    src_mac: tp.mac,
                    dst_mac: lp.mac,
                    src_ip: tp.ip.clone(),
                    dst_ip: lp.ip.clone(),
                    vlan_id: ext.vlan_id,
                    pcp: ext.pcp,
                },
                traffic: *traffic,
            });
        }
    }
    Ok(streams)
}

/// Both stations must offer time synchronization and Qbv shaping.
pub fn validate_capabilities(
    stream: &StreamRequirement,
    talker_caps: &CapabilitySet,
    listener_caps: &CapabilitySet,
) -> Result<(), CapabilityError> {
    let checks = [
        (StationRole::Talker, &stream.talker.station_id, talker_caps),
        (StationRole::Listener, &stream.listener.station_id, listener_caps),
    ];
    for (role, station, caps) in checks {
        let flag = if !caps.time_sync {
            Some("time_sync")
        } else if !caps.qbv_shaping {
            Some("qbv_shaping")
        } else {
            None
        };
        if let Some(flag) = flag {
            return Err(CapabilityError {
                station: station.clone(),
                role,
                flag,
            });
        }
    }
    Ok(())
}
