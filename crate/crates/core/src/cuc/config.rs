use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SegmentSchedule;
use crate::descriptors::StationRole;
use crate::model::{GateControlList, GclEntry, NodeId, StreamId, StreamRequirement};
use crate::topology::Node;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingPolicy {
    Deadline,
    FifoRt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VlanTag {
    pub vlan_id: u16,
    pub pcp: u8,
}

/// Time-aware shaper program for a talker's egress interface.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TasSchedule {
    pub cycle_ns: u64,
    pub base_time_ns: u64,
    pub entries: Vec<GclEntry>,
}

impl From<&GateControlList> for TasSchedule {
    fn from(gcl: &GateControlList) -> Self {
        TasSchedule {
            cycle_ns: gcl.cycle_ns,
            base_time_ns: gcl.base_time_ns,
            entries: gcl.entries.clone(),
        }
    }
}

/// Directives for one end-station interface. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndStationConfig {
    pub station_id: String,
    pub interface: String,
    pub node_id: NodeId,
    pub sync_daemon: bool,
    pub vlans: Vec<VlanTag>,
    /// Internal socket priority → PCP.
    pub socket_priority_map: BTreeMap<u8, u8>,
    pub scheduling_policy: SchedulingPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tas_schedule: Option<TasSchedule>,
    /// Launch-time offsets within the stream's schedule cycle, one per period instance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub txtime_offsets_ns: BTreeMap<StreamId, Vec<u64>>,
}

impl EndStationConfig {
    /// Fold another directive set for the same interface into this one.
    pub fn merge(&mut self, other: EndStationConfig) {
        for v in other.vlans {
            if !self.vlans.contains(&v) {
                self.vlans.push(v);
            }
        }
        self.vlans.sort_unstable();
        self.socket_priority_map.extend(other.socket_priority_map);
        if other.tas_schedule.is_some() {
            self.tas_schedule = other.tas_schedule;
        }
        self.txtime_offsets_ns.extend(other.txtime_offsets_ns);
    }
}

/// Directives for `station` in `role` on `stream`, or `None` for stations
/// outside orchestration.
///
/// `talker_gcl` is the gate control list of the talker's egress port; it only
/// matters for the talker role.
pub fn generate_endstation_config(
    stream: &StreamRequirement,
    segments: &[SegmentSchedule],
    role: StationRole,
    station: &Node,
    talker_gcl: Option<&GateControlList>,
) -> Option<EndStationConfig> {
    if !station.is_managed() {
        return None;
    }
    let endpoint = match role {
        StationRole::Talker => &stream.talker,
        StationRole::Listener => &stream.listener,
    };
    let caps = station.capabilities();
    let pcp = stream.frame.pcp;
    let mut config = EndStationConfig {
        station_id: endpoint.station_id.clone(),
        interface: endpoint.interface.clone(),
        node_id: endpoint.node_id.clone(),
        sync_daemon: caps.time_sync,
        vlans: vec![VlanTag {
            vlan_id: stream.frame.vlan_id,
            pcp,
        }],
        socket_priority_map: BTreeMap::from([(pcp, pcp)]),
        scheduling_policy: if caps.rt_scheduling_policy {
            SchedulingPolicy::Deadline
        } else {
            SchedulingPolicy::FifoRt
        },
        tas_schedule: None,
        txtime_offsets_ns: BTreeMap::new(),
    };
    if role == StationRole::Talker {
        config.tas_schedule = talker_gcl.map(TasSchedule::from);
        if let Some(first) = segments.first() {
            let cycle = first.schedule.cycle_ns;
            let offsets = first
                .schedule
                .first_hop()
                .map(|r| r.window_start_ns % cycle)
                .collect();
            config.txtime_offsets_ns.insert(stream.stream_id.clone(), offsets);
        }
    }
    Some(config)
}
