//! User/Network Interface between the CUC and the per-domain CNCs.
//!
//! Messages travel as one JSON object per line. Requests name their target
//! domain; the dispatcher routes them to the owning controller and records
//! which NFV reference point (Or-Vi towards a VIM, Or-Wi towards a WIM) carried
//! each one.

mod dispatch;
mod service;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnc::SegmentEntry;
use crate::model::{DomainId, GateControlList, NodeId, StreamId, StreamRequirement, StreamSchedule};
use crate::topology::Hop;

pub use dispatch::{
    AuditRecord, CncEndpoint, CncRegistry, ControllerKind, Dispatcher, EndpointAddress,
    InProcessCnc, ReferencePoint, RegistryEntry, TcpCnc,
};
pub use service::{serve, UniService};

#[derive(Debug, Error)]
pub enum UniError {
    #[error("malformed message: {0}")]
    Decode(String),
    #[error("domain {0} is not registered")]
    UnknownDomain(DomainId),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("registry error: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRequest {
    pub request_id: String,
    pub domain_id: DomainId,
    pub stream: StreamRequirement,
    pub segment: Vec<Hop>,
    pub latency_budget_ns: u64,
    pub entry: SegmentEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoveStream {
    pub request_id: String,
    pub domain_id: DomainId,
    pub stream_id: StreamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityQuery {
    pub request_id: String,
    pub domain_id: DomainId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UniRequest {
    StreamRequest(StreamRequest),
    RemoveStream(RemoveStream),
    CapabilityQuery(CapabilityQuery),
}

impl UniRequest {
    pub fn request_id(&self) -> &str {
        match self {
            UniRequest::StreamRequest(r) => &r.request_id,
            UniRequest::RemoveStream(r) => &r.request_id,
            UniRequest::CapabilityQuery(r) => &r.request_id,
        }
    }

    pub fn domain_id(&self) -> &DomainId {
        match self {
            UniRequest::StreamRequest(r) => &r.domain_id,
            UniRequest::RemoveStream(r) => &r.domain_id,
            UniRequest::CapabilityQuery(r) => &r.domain_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            UniRequest::StreamRequest(_) => "stream_request",
            UniRequest::RemoveStream(_) => "remove_stream",
            UniRequest::CapabilityQuery(_) => "capability_query",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    InfeasibleBudget,
    NoFreeWindow,
    Capability,
    UnknownStream,
    Malformed,
    HyperperiodOverflow,
    GclOverflow,
    UnknownDomain,
}

impl FailureCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureCause::InfeasibleBudget => "infeasible_budget",
            FailureCause::NoFreeWindow => "no_free_window",
            FailureCause::Capability => "capability",
            FailureCause::UnknownStream => "unknown_stream",
            FailureCause::Malformed => "malformed",
            FailureCause::HyperperiodOverflow => "hyperperiod_overflow",
            FailureCause::GclOverflow => "gcl_overflow",
            FailureCause::UnknownDomain => "unknown_domain",
        }
    }
}

impl std::fmt::Display for FailureCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeCapability {
    pub bridge_id: NodeId,
    pub supports_qbv: bool,
    pub gcl_max_entries: u32,
    pub processing_delay_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilitySummary {
    pub domain_id: DomainId,
    pub bridges: Vec<BridgeCapability>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniResponse {
    pub request_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<StreamSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<FailureCause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<CapabilitySummary>,
    /// Gate control list of the talker's egress port, for segments starting at the talker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub talker_gcl: Option<GateControlList>,
}

impl UniResponse {
    pub fn ok(request_id: impl Into<String>) -> Self {
        UniResponse {
            request_id: request_id.into(),
            status: ResponseStatus::Ok,
            schedule: None,
            cause: None,
            detail: None,
            capabilities: None,
            talker_gcl: None,
        }
    }

    pub fn failed(request_id: impl Into<String>, cause: FailureCause, detail: impl Into<String>) -> Self {
        UniResponse {
            request_id: request_id.into(),
            status: ResponseStatus::Failed,
            schedule: None,
            cause: Some(cause),
            detail: Some(detail.into()),
            capabilities: None,
            talker_gcl: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ResponseStatus::Ok
    }
}

/// Everything that can appear on a UNI connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UniMessage {
    StreamRequest(StreamRequest),
    RemoveStream(RemoveStream),
    CapabilityQuery(CapabilityQuery),
    Response(UniResponse),
}

impl From<UniRequest> for UniMessage {
    fn from(req: UniRequest) -> Self {
        match req {
            UniRequest::StreamRequest(r) => UniMessage::StreamRequest(r),
            UniRequest::RemoveStream(r) => UniMessage::RemoveStream(r),
            UniRequest::CapabilityQuery(r) => UniMessage::CapabilityQuery(r),
        }
    }
}

impl From<UniResponse> for UniMessage {
    fn from(resp: UniResponse) -> Self {
        UniMessage::Response(resp)
    }
}

impl UniMessage {
    pub fn into_request(self) -> Option<UniRequest> {
        match self {
            UniMessage::StreamRequest(r) => Some(UniRequest::StreamRequest(r)),
            UniMessage::RemoveStream(r) => Some(UniRequest::RemoveStream(r)),
            UniMessage::CapabilityQuery(r) => Some(UniRequest::CapabilityQuery(r)),
            UniMessage::Response(_) => None,
        }
    }

    pub fn into_response(self) -> Option<UniResponse> {
        match self {
            UniMessage::Response(r) => Some(r),
            _ => None,
        }
    }
}

/// One JSON object terminated by `\n`.
pub fn encode(message: &UniMessage) -> Vec<u8> {
    let mut out = serde_json::to_vec(message).expect("UNI messages always serialize");
    out.push(b'\n');
    out
}

pub fn decode(bytes: &[u8]) -> Result<UniMessage, UniError> {
    let text = std::str::from_utf8(bytes).map_err(|e| UniError::Decode(e.to_string()))?;
    let line = text.strip_suffix('\n').unwrap_or(text);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains('\n') {
        return Err(UniError::Decode("more than one line".into()));
    }
    serde_json::from_str(line).map_err(|e| UniError::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataFrameSpec, EndpointRef, PortRef, TrafficSpec};

    fn request() -> UniMessage {
        UniMessage::StreamRequest(StreamRequest {
            request_id: "req-1".into(),
            domain_id: "pop1".into(),
            stream: StreamRequirement {
                stream_id: "vl1~fwd".into(),
                talker: EndpointRef {
                    station_id: "plc".into(),
                    interface: "eth0".into(),
                    node_id: "A".into(),
                },
                listener: EndpointRef {
                    station_id: "io".into(),
                    interface: "eth0".into(),
                    node_id: "C".into(),
                },
                frame: DataFrameSpec {
                    src_mac: "02:00:00:00:00:01".parse().unwrap(),
                    dst_mac: "02:00:00:00:00:02".parse().unwrap(),
                    src_ip: None,
                    dst_ip: Some("10.0.0.2".into()),
                    vlan_id: 100,
                    pcp: 7,
                },
                traffic: TrafficSpec {
                    period_ns: 250_000,
                    max_frame_bytes: 500,
                    frames_per_period: 1,
                    max_latency_ns: 100_000,
                },
            },
            segment: vec![Hop {
                egress: PortRef::new("A", "p0"),
                link_id: "l1".into(),
                ingress: PortRef::new("B1", "p0"),
            }],
            latency_budget_ns: 100_000,
            entry: SegmentEntry::Talker,
        })
    }

    #[test]
    fn stream_request_round_trips() {
        let msg = request();
        let bytes = encode(&msg);
        assert_eq!(*bytes.last().unwrap(), b'\n');
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = encode(&request());
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(decode(cut), Err(UniError::Decode(_))));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let line = br#"{"kind":"teleport","request_id":"r"}"#;
        assert!(matches!(decode(line), Err(UniError::Decode(_))));
        let no_kind = br#"{"request_id":"r","domain_id":"d"}"#;
        assert!(matches!(decode(no_kind), Err(UniError::Decode(_))));
    }

    #[test]
    fn wire_shape() {
        let msg = UniMessage::RemoveStream(RemoveStream {
            request_id: "req-9".into(),
            domain_id: "wan".into(),
            stream_id: "vl1~rev".into(),
        });
        assert_eq!(
            String::from_utf8(encode(&msg)).unwrap(),
            "{\"kind\":\"remove_stream\",\"request_id\":\"req-9\",\"domain_id\":\"wan\",\"stream_id\":\"vl1~rev\"}\n"
        );
        let resp = UniMessage::Response(UniResponse::failed("req-9", FailureCause::UnknownStream, "gone"));
        assert_eq!(
            String::from_utf8(encode(&resp)).unwrap(),
            "{\"kind\":\"response\",\"request_id\":\"req-9\",\"status\":\"failed\",\"cause\":\"unknown_stream\",\"detail\":\"gone\"}\n"
        );
    }
}
