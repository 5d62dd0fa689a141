//! Core domain types and exact integer time arithmetic.
//!
//! Every time quantity in the system is an integer number of nanoseconds on a
//! single shared clock with epoch 0. Nothing here uses floating point.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest schedulable hyperperiod (1 s).
pub const MAX_HYPERPERIOD_NS: u64 = 1_000_000_000;

/// Preamble + start delimiter (8 B) plus inter-frame gap (12 B).
pub const WIRE_OVERHEAD_BYTES: u64 = 20;

pub const MIN_FRAME_BYTES: u32 = 64;
pub const MAX_FRAME_BYTES: u32 = 1522;

pub const NUM_TRAFFIC_CLASSES: u8 = 8;

/// Gate mask with every gate closed.
pub const ALL_GATES_CLOSED: u8 = 0x00;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid traffic spec: {0}")]
    InvalidTraffic(String),
    #[error("invalid data frame spec: {0}")]
    InvalidFrame(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("invalid stream {stream}: {reason}")]
    InvalidStream { stream: String, reason: String },
    #[error("empty period list")]
    NoPeriods,
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("hyperperiod overflow: {lcm} ns exceeds {MAX_HYPERPERIOD_NS} ns")]
    HyperperiodOverflow { lcm: u128 },
    #[error("malformed MAC address {0:?}")]
    BadMac(String),
    #[error("malformed port reference {0:?}")]
    BadPortRef(String),
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Topology node (bridge, compute host or external station).
    NodeId
);
string_id!(
    /// Port name, unique within its node.
    PortId
);
string_id!(LinkId);
string_id!(
    /// TSN domain: one NFVI-PoP or one WAN segment.
    DomainId
);
string_id!(
    /// VIM or WIM hosting the CNC of a domain.
    ControllerId
);
string_id!(StreamId);

/// A port on a specific node, written `node.port`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub node: NodeId,
    pub port: PortId,
}

impl PortRef {
    pub fn new(node: impl Into<NodeId>, port: impl Into<PortId>) -> Self {
        Self {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

impl FromStr for PortRef {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((node, port)) if !node.is_empty() && !port.is_empty() => {
                Ok(PortRef::new(node, port))
            }
            _ => Err(ModelError::BadPortRef(s.to_owned())),
        }
    }
}

impl Serialize for PortRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 48-bit IEEE MAC address, written `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for byte in out.iter_mut() {
            let part = parts.next().ok_or_else(|| ModelError::BadMac(s.to_owned()))?;
            if part.len() != 2 {
                return Err(ModelError::BadMac(s.to_owned()));
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| ModelError::BadMac(s.to_owned()))?;
        }
        if parts.next().is_some() {
            return Err(ModelError::BadMac(s.to_owned()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Periodic traffic contract of one stream direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub period_ns: u64,
    pub max_frame_bytes: u32,
    pub frames_per_period: u32,
    pub max_latency_ns: u64,
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.period_ns == 0 {
            return Err(ModelError::InvalidTraffic("period_ns must be > 0".into()));
        }
        if !(MIN_FRAME_BYTES..=MAX_FRAME_BYTES).contains(&self.max_frame_bytes) {
            return Err(ModelError::InvalidTraffic(format!(
                "max_frame_bytes {} outside {MIN_FRAME_BYTES}..={MAX_FRAME_BYTES}",
                self.max_frame_bytes
            )));
        }
        if self.frames_per_period == 0 {
            return Err(ModelError::InvalidTraffic(
                "frames_per_period must be >= 1".into(),
            ));
        }
        if self.max_latency_ns == 0 {
            return Err(ModelError::InvalidTraffic("max_latency_ns must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFrameSpec {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_ip: Option<String>,
    pub vlan_id: u16,
    pub pcp: u8,
}

impl DataFrameSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        validate_vlan(self.vlan_id, self.pcp).map_err(ModelError::InvalidFrame)?;
        if self.src_mac == self.dst_mac {
            return Err(ModelError::InvalidFrame(format!(
                "src_mac equals dst_mac ({})",
                self.src_mac
            )));
        }
        Ok(())
    }

    /// Traffic class carrying this frame. PCP maps to class one-to-one.
    pub fn traffic_class(&self) -> u8 {
        self.pcp
    }
}

pub(crate) fn validate_vlan(vlan_id: u16, pcp: u8) -> Result<(), String> {
    if !(1..=4094).contains(&vlan_id) {
        return Err(format!("vlan_id {vlan_id} outside 1..=4094"));
    }
    if pcp >= NUM_TRAFFIC_CLASSES {
        return Err(format!("pcp {pcp} outside 0..=7"));
    }
    Ok(())
}

/// Identification of one end-station interface.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EndpointRef {
    pub station_id: String,
    pub interface: String,
    pub node_id: NodeId,
}

impl EndpointRef {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.station_id.is_empty() || self.interface.is_empty() || self.node_id.0.is_empty() {
            return Err(ModelError::InvalidEndpoint(format!(
                "empty identifier in {self:?}"
            )));
        }
        Ok(())
    }
}

/// One unidirectional talker to listener stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamRequirement {
    pub stream_id: StreamId,
    pub talker: EndpointRef,
    pub listener: EndpointRef,
    pub frame: DataFrameSpec,
    pub traffic: TrafficSpec,
}

impl StreamRequirement {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidStream {
            stream: self.stream_id.0.clone(),
            reason,
        };
        if self.stream_id.0.is_empty() {
            return Err(invalid("empty stream_id".into()));
        }
        self.talker.validate()?;
        self.listener.validate()?;
        if self.talker.node_id == self.listener.node_id
            && self.talker.interface == self.listener.interface
        {
            return Err(invalid("talker and listener are the same interface".into()));
        }
        self.frame.validate()?;
        self.traffic.validate()
    }

    pub fn traffic_class(&self) -> u8 {
        self.frame.traffic_class()
    }
}

/// One gate control list row: which gates are open and for how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GclEntry {
    /// Bit `i` set means the gate of traffic class `i` is open.
    pub gate_states: u8,
    pub interval_ns: u64,
}

impl GclEntry {
    pub fn is_open(&self, class: u8) -> bool {
        self.gate_states & (1 << class) != 0
    }
}

/// 802.1Qbv gate control list of one egress port.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateControlList {
    pub port_id: PortRef,
    pub cycle_ns: u64,
    pub base_time_ns: u64,
    /// Classes that own at least one scheduled window on this port.
    pub scheduled_classes: u8,
    pub entries: Vec<GclEntry>,
}

impl GateControlList {
    /// Gate mask in force at `t` (absolute, epoch 0) and the absolute time it ends.
    pub fn state_at(&self, t: u64) -> (u8, u64) {
        let offset = (t.saturating_sub(self.base_time_ns)) % self.cycle_ns;
        let mut acc = 0;
        for entry in &self.entries {
            if offset < acc + entry.interval_ns {
                return (entry.gate_states, t - offset + acc + entry.interval_ns);
            }
            acc += entry.interval_ns;
        }
        // Malformed list shorter than the cycle: the remainder is treated as closed.
        (ALL_GATES_CLOSED, t - offset + self.cycle_ns)
    }

    pub fn interval_sum(&self) -> u64 {
        self.entries.iter().map(|e| e.interval_ns).sum()
    }
}

/// A transmission window reserved for one instance of a stream on one egress port.
///
/// Times are on the stream's own schedule timeline and may run past the cycle;
/// reduce them with [`HopReservation::normalized_start`] for gate construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HopReservation {
    pub stream_id: StreamId,
    pub instance: u32,
    pub port_id: PortRef,
    pub traffic_class: u8,
    /// First instant a frame of this instance can sit in the class queue.
    pub queue_start_ns: u64,
    pub window_start_ns: u64,
    pub window_end_ns: u64,
}

impl HopReservation {
    pub fn window_len(&self) -> u64 {
        self.window_end_ns - self.window_start_ns
    }

    pub fn queue_len(&self) -> u64 {
        self.window_end_ns - self.queue_start_ns
    }

    pub fn normalized_start(&self, cycle_ns: u64) -> u64 {
        self.window_start_ns % cycle_ns
    }
}

/// The outcome of admitting one stream over one path segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamSchedule {
    pub stream_id: StreamId,
    pub domain_id: DomainId,
    pub period_ns: u64,
    /// Repetition cycle of this reservation pattern; a multiple of `period_ns`.
    pub cycle_ns: u64,
    /// Release offset at segment entry relative to each nominal period start.
    pub entry_offset_ns: u64,
    /// Instance-major, path-ordered reservations over one cycle.
    pub reservations: Vec<HopReservation>,
    /// Worst last-bit arrival at the segment exit, measured from the segment release.
    pub e2e_latency_ns: u64,
    /// Earliest last-bit arrival of any first frame at the segment exit,
    /// relative to the nominal period start.
    pub exit_first_frame_min_ns: u64,
}

impl StreamSchedule {
    /// Worst arrival at the segment exit relative to the nominal period start.
    pub fn exit_latest_ns(&self) -> u64 {
        self.entry_offset_ns + self.e2e_latency_ns
    }

    pub fn instances(&self) -> u32 {
        (self.cycle_ns / self.period_ns) as u32
    }

    /// Reservations on the first hop of the segment, in instance order.
    pub fn first_hop(&self) -> impl Iterator<Item = &HopReservation> {
        let first_port = self.reservations.first().map(|r| r.port_id.clone());
        self.reservations
            .iter()
            .filter(move |r| Some(&r.port_id) == first_port.as_ref())
    }

    pub fn ports(&self) -> Vec<PortRef> {
        let mut ports: Vec<PortRef> = Vec::new();
        for r in self.reservations.iter().filter(|r| r.instance == 0) {
            ports.push(r.port_id.clone());
        }
        ports
    }
}

/// Real-time features an end station offers. Only flags, nothing is executed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CapabilitySet {
    #[serde(default)]
    pub time_sync: bool,
    #[serde(default)]
    pub qbv_shaping: bool,
    #[serde(default)]
    pub rt_scheduling_policy: bool,
    #[serde(default)]
    pub rt_kernel_or_hypervisor: bool,
    #[serde(default)]
    pub hw_isolation: bool,
}

impl CapabilitySet {
    pub const ALL: CapabilitySet = CapabilitySet {
        time_sync: true,
        qbv_shaping: true,
        rt_scheduling_policy: true,
        rt_kernel_or_hypervisor: true,
        hw_isolation: true,
    };

    /// Flags required by `required` that `self` lacks.
    pub fn missing(&self, required: &CapabilitySet) -> Vec<&'static str> {
        let pairs = [
            ("time_sync", self.time_sync, required.time_sync),
            ("qbv_shaping", self.qbv_shaping, required.qbv_shaping),
            (
                "rt_scheduling_policy",
                self.rt_scheduling_policy,
                required.rt_scheduling_policy,
            ),
            (
                "rt_kernel_or_hypervisor",
                self.rt_kernel_or_hypervisor,
                required.rt_kernel_or_hypervisor,
            ),
            ("hw_isolation", self.hw_isolation, required.hw_isolation),
        ];
        pairs
            .into_iter()
            .filter(|(_, have, need)| *need && !*have)
            .map(|(name, _, _)| name)
            .collect()
    }
}

/// Least common multiple of `periods`, capped at [`MAX_HYPERPERIOD_NS`].
pub fn hyperperiod(periods: &[u64]) -> Result<u64, ModelError> {
    if periods.is_empty() {
        return Err(ModelError::NoPeriods);
    }
    let mut acc: u128 = 1;
    for &p in periods {
        if p == 0 {
            return Err(ModelError::ZeroPeriod);
        }
        acc = acc.lcm(&(p as u128));
        if acc > MAX_HYPERPERIOD_NS as u128 {
            return Err(ModelError::HyperperiodOverflow { lcm: acc });
        }
    }
    Ok(acc as u64)
}

/// Time one frame of `frame_bytes` holds a link, including preamble and IPG.
pub fn wire_occupancy(frame_bytes: u32, link_speed_bps: u64) -> u64 {
    let bits = (frame_bytes as u128 + WIRE_OVERHEAD_BYTES as u128) * 8;
    let ns = (bits * 1_000_000_000).div_ceil(link_speed_bps as u128);
    ns as u64
}

/// A whole period's burst sent back-to-back.
pub fn burst_occupancy(spec: &TrafficSpec, link_speed_bps: u64) -> u64 {
    spec.frames_per_period as u64 * wire_occupancy(spec.max_frame_bytes, link_speed_bps)
}

/// Guard band protecting a window against an in-flight maximum-size frame.
pub fn guard_band(link_speed_bps: u64) -> u64 {
    wire_occupancy(MAX_FRAME_BYTES, link_speed_bps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(period: u64, bytes: u32, frames: u32) -> TrafficSpec {
        TrafficSpec {
            period_ns: period,
            max_frame_bytes: bytes,
            frames_per_period: frames,
            max_latency_ns: 100_000,
        }
    }

    #[test]
    fn hyperperiod_examples() {
        assert_eq!(hyperperiod(&[250_000, 500_000]), Ok(500_000));
        assert_eq!(hyperperiod(&[300_000, 400_000]), Ok(1_200_000));
        assert!(matches!(
            hyperperiod(&[700_000_000, 900_000_000]),
            Err(ModelError::HyperperiodOverflow { lcm: 6_300_000_000 })
        ));
        assert_eq!(hyperperiod(&[]), Err(ModelError::NoPeriods));
        assert_eq!(hyperperiod(&[0]), Err(ModelError::ZeroPeriod));
    }

    #[test]
    fn occupancy_examples() {
        assert_eq!(wire_occupancy(500, 1_000_000_000), 4_160);
        assert_eq!(wire_occupancy(1522, 1_000_000_000), 12_336);
        assert_eq!(wire_occupancy(64, 100_000_000), 6_720);
        assert_eq!(burst_occupancy(&spec(250_000, 500, 1), 1_000_000_000), 4_160);
        assert_eq!(burst_occupancy(&spec(250_000, 500, 3), 1_000_000_000), 12_480);
        assert_eq!(burst_occupancy(&spec(1_000_000, 1522, 2), 1_000_000_000), 24_672);
    }

    #[test]
    fn occupancy_rounds_up() {
        // 84 B * 8 = 672 bits at 1 Gb/s and 10 Gb/s
        assert_eq!(wire_occupancy(64, 1_000_000_000), 672);
        assert_eq!(wire_occupancy(64, 10_000_000_000), 68);
    }

    #[test]
    fn traffic_spec_bounds() {
        assert!(spec(1, 64, 1).validate().is_ok());
        assert!(spec(0, 64, 1).validate().is_err());
        assert!(spec(1, 63, 1).validate().is_err());
        assert!(spec(1, 1523, 1).validate().is_err());
        assert!(spec(1, 100, 0).validate().is_err());
    }

    #[test]
    fn frame_spec_bounds() {
        let mut f = DataFrameSpec {
            src_mac: "02:00:00:00:00:01".parse().unwrap(),
            dst_mac: "02:00:00:00:00:02".parse().unwrap(),
            src_ip: None,
            dst_ip: None,
            vlan_id: 100,
            pcp: 7,
        };
        assert!(f.validate().is_ok());
        f.pcp = 8;
        assert!(f.validate().is_err());
        f.pcp = 0;
        f.vlan_id = 4095;
        assert!(f.validate().is_err());
        f.vlan_id = 1;
        f.dst_mac = f.src_mac;
        assert!(f.validate().is_err());
    }

    #[test]
    fn mac_and_port_parsing() {
        let mac: MacAddr = "AA:bb:0c:00:00:ff".parse().unwrap();
        assert_eq!(mac.to_string(), "aa:bb:0c:00:00:ff");
        assert!("aa:bb:cc".parse::<MacAddr>().is_err());
        assert!("aa:bb:cc:dd:ee:ff:00".parse::<MacAddr>().is_err());
        let p: PortRef = "B1.p1".parse().unwrap();
        assert_eq!(p, PortRef::new("B1", "p1"));
        assert!("B1".parse::<PortRef>().is_err());
        assert!(".p1".parse::<PortRef>().is_err());
    }

    #[test]
    fn gate_state_lookup() {
        let gcl = GateControlList {
            port_id: PortRef::new("B1", "p1"),
            cycle_ns: 100,
            base_time_ns: 0,
            scheduled_classes: 0x80,
            entries: vec![
                GclEntry { gate_states: 0x7f, interval_ns: 40 },
                GclEntry { gate_states: 0x80, interval_ns: 60 },
            ],
        };
        assert_eq!(gcl.state_at(0), (0x7f, 40));
        assert_eq!(gcl.state_at(39), (0x7f, 40));
        assert_eq!(gcl.state_at(40), (0x80, 100));
        assert_eq!(gcl.state_at(230), (0x7f, 240));
        assert_eq!(gcl.state_at(250), (0x80, 300));
    }

    proptest! {
        #[test]
        fn hyperperiod_divisible(periods in prop::collection::vec(1u64..5_000, 1..5)) {
            if let Ok(h) = hyperperiod(&periods) {
                for p in &periods {
                    prop_assert_eq!(h % p, 0);
                }
            }
        }

        #[test]
        fn hyperperiod_singleton(p in 1u64..=MAX_HYPERPERIOD_NS) {
            prop_assert_eq!(hyperperiod(&[p]), Ok(p));
        }

        #[test]
        fn occupancy_monotone(bytes in 64u32..1522, speed in 1_000_000u64..100_000_000_000) {
            prop_assert!(wire_occupancy(bytes, speed) <= wire_occupancy(bytes + 1, speed));
            prop_assert!(wire_occupancy(bytes, speed + 1) <= wire_occupancy(bytes, speed));
        }
    }
}
