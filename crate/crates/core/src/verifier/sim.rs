//! Event-driven replay of scheduled streams under gate control lists.
//!
//! Time is integer nanoseconds. Every linked egress port runs the 802.1Qbv
//! transmission selection: the highest-numbered class whose gate is open, whose
//! queue is non-empty and whose head frame completes before that gate closes
//! goes next. Bridges store and forward with their processing delay.
//! Best-effort background traffic is injected at every port in the lowest
//! class that owns no scheduled window there.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PortReport, SimConfig, SimConfigError, SimReport, SimStream, StreamReport};
use crate::model::{
    wire_occupancy, GateControlList, PortRef, MAX_FRAME_BYTES, NUM_TRAFFIC_CLASSES,
};
use crate::topology::Topology;

/// Best-effort queue depth per port.
pub const BG_QUEUE_CAP: usize = 64;
/// Longest horizon the simulator accepts, in ns.
pub const MAX_SIM_HORIZON_NS: u128 = 10_000_000_000;

// Ordering is only needed to sit in the event heap; keys are unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Frame {
    /// Index into the stream list; `None` for background frames.
    stream: Option<usize>,
    hop: usize,
    bytes: u32,
    class: u8,
    release: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    // Order matters: at equal times, arrivals are queued before a port picks.
    Enqueue,
    Background,
    TxDone,
    TrySend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: u64,
    kind: Kind,
    seq: u64,
}

struct Port<'a> {
    id: PortRef,
    gcl: Option<&'a GateControlList>,
    speed_bps: u64,
    propagation_ns: u64,
    queues: [VecDeque<Frame>; NUM_TRAFFIC_CLASSES as usize],
    in_flight: Option<Frame>,
    try_pending: Option<u64>,
    bg_class: Option<u8>,
    bg_gap_ns: u64,
    rng: ChaCha8Rng,
    report: PortReport,
}

impl Port<'_> {
    fn gate(&self, t: u64) -> (u8, u64) {
        match self.gcl {
            Some(g) => g.state_at(t),
            None => (0xff, u64::MAX),
        }
    }

    /// First instant at or after `t` when `class`'s gate is closed.
    fn closes_at(&self, class: u8, t: u64) -> u64 {
        let Some(gcl) = self.gcl else {
            return u64::MAX;
        };
        let mut at = t;
        while at - t <= gcl.cycle_ns {
            let (mask, end) = gcl.state_at(at);
            if mask & (1 << class) == 0 {
                return at;
            }
            at = end;
        }
        u64::MAX
    }
}

/// Whether `class` stays open over `[from, to)`, checked entry by entry.
fn open_throughout(gcl: Option<&GateControlList>, class: u8, from: u64, to: u64) -> bool {
    let Some(gcl) = gcl else {
        return true;
    };
    let n = gcl.entries.len();
    let cycle_start = from - from % gcl.cycle_ns;
    let mut t = cycle_start;
    let mut i = 0;
    while t < to {
        let e = &gcl.entries[i % n];
        let end = t + e.interval_ns;
        if end > from && e.gate_states & (1 << class) == 0 {
            return false;
        }
        t = end;
        i += 1;
        if i % n == 0 && t != cycle_start + (i / n) as u64 * gcl.cycle_ns {
            // Intervals do not add up to the cycle; treat the gate as unreliable.
            return false;
        }
    }
    true
}

struct Route {
    /// Port index per hop.
    ports: Vec<usize>,
    /// Processing delay paid on arrival at the node owning the next hop.
    processing: Vec<u64>,
}

pub(super) fn run(
    topology: &Topology,
    gcls: &BTreeMap<PortRef, GateControlList>,
    streams: &[SimStream],
    cfg: &SimConfig,
) -> Result<SimReport, SimConfigError> {
    cfg.validate()?;
    if streams.is_empty() {
        return Ok(SimReport::default());
    }

    let mut horizon: u128 = 1;
    for s in streams {
        for (_, schedule) in &s.segments {
            horizon = horizon.lcm(&(schedule.cycle_ns as u128));
        }
    }
    for g in gcls.values() {
        horizon = horizon.lcm(&(g.cycle_ns as u128));
    }
    if horizon > MAX_SIM_HORIZON_NS {
        return Err(SimConfigError::Horizon(horizon));
    }
    let horizon = horizon as u64;
    let release_end = horizon * cfg.duration_cycles as u64;
    let slack = streams.iter().map(|s| s.requirement.traffic.max_latency_ns).max().unwrap_or(0);
    let end = release_end + horizon + slack.max(horizon);

    // Ports: every egress port of every link, in deterministic order.
    let mut port_ids: Vec<PortRef> = topology.ports();
    port_ids.sort();
    let index: BTreeMap<PortRef, usize> = port_ids.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut ports: Vec<Port> = Vec::with_capacity(port_ids.len());
    for (i, id) in port_ids.iter().enumerate() {
        let link = topology.link_at(id).expect("ports come from links");
        let gcl = gcls.get(id);
        let scheduled = gcl.map_or(0, |g| g.scheduled_classes);
        let bg_class = (0..NUM_TRAFFIC_CLASSES).find(|c| scheduled & (1 << c) == 0);
        let frame_ns = wire_occupancy(MAX_FRAME_BYTES, link.speed_bps);
        ports.push(Port {
            id: id.clone(),
            gcl,
            speed_bps: link.speed_bps,
            propagation_ns: link.propagation_ns,
            queues: Default::default(),
            in_flight: None,
            try_pending: None,
            bg_class: if cfg.bg_load > 0.0 { bg_class } else { None },
            bg_gap_ns: if cfg.bg_load > 0.0 {
                ((frame_ns as f64) / cfg.bg_load).ceil() as u64
            } else {
                0
            },
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            report: PortReport::default(),
        });
    }

    let mut routes = Vec::with_capacity(streams.len());
    for s in streams {
        let hops: Vec<_> = s.segments.iter().flat_map(|(h, _)| h.iter()).collect();
        let mut route = Route {
            ports: Vec::with_capacity(hops.len()),
            processing: Vec::with_capacity(hops.len()),
        };
        for hop in &hops {
            let &p = index.get(&hop.egress).ok_or_else(|| {
                SimConfigError::Inconsistent(format!("stream {} uses unknown port {}", s.requirement.stream_id, hop.egress))
            })?;
            route.ports.push(p);
            let next = topology.node(&hop.ingress.node).map_or(0, |n| n.processing_delay_ns());
            route.processing.push(next);
        }
        routes.push(route);
    }

    let mut queue: BinaryHeap<Reverse<(Key, usize, Option<Frame>)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, time: u64, kind: Kind, port: usize, frame: Option<Frame>| {
        seq += 1;
        queue.push(Reverse((Key { time, kind, seq }, port, frame)));
    };

    let mut reports: Vec<StreamReport> = vec![StreamReport::default(); streams.len()];
    let mut released = vec![0u64; streams.len()];

    // Talker releases at the first-hop window starts of every cycle.
    for (si, s) in streams.iter().enumerate() {
        let Some((_, first)) = s.segments.first() else {
            continue;
        };
        let class = s.requirement.traffic_class();
        for r in first.first_hop() {
            let nominal = r.instance as u64 * first.period_ns;
            let mut m = 0;
            while nominal + m * first.cycle_ns < release_end {
                let shift = m * first.cycle_ns;
                for _ in 0..s.requirement.traffic.frames_per_period {
                    let frame = Frame {
                        stream: Some(si),
                        hop: 0,
                        bytes: s.requirement.traffic.max_frame_bytes,
                        class,
                        release: nominal + shift,
                    };
                    released[si] += 1;
                    push(&mut queue, r.window_start_ns + shift, Kind::Enqueue, routes[si].ports[0], Some(frame));
                }
                m += 1;
            }
        }
    }

    for (i, port) in ports.iter_mut().enumerate() {
        if let Some(class) = port.bg_class {
            let prefill = ((BG_QUEUE_CAP as f64) * cfg.bg_load).floor() as usize;
            for _ in 0..prefill {
                port.queues[class as usize].push_back(bg_frame(class));
            }
            if prefill > 0 {
                push(&mut queue, 0, Kind::TrySend, i, None);
                port.try_pending = Some(0);
            }
            push(&mut queue, 0, Kind::Background, i, None);
        }
    }

    while let Some(Reverse((key, pi, frame))) = queue.pop() {
        let t = key.time;
        if t > end {
            break;
        }
        match key.kind {
            Kind::Enqueue => {
                let frame = frame.expect("enqueue carries a frame");
                ports[pi].queues[frame.class as usize].push_back(frame);
                schedule_try(&mut ports[pi], pi, t, &mut queue, &mut push);
            }
            Kind::Background => {
                let port = &mut ports[pi];
                let class = port.bg_class.expect("background port");
                if port.queues[class as usize].len() < BG_QUEUE_CAP {
                    port.queues[class as usize].push_back(bg_frame(class));
                } else {
                    port.report.background_dropped += 1;
                }
                let gap = if cfg.bg_load >= 1.0 {
                    port.bg_gap_ns
                } else {
                    let jitter: f64 = port.rng.gen_range(0.5..1.5);
                    ((port.bg_gap_ns as f64) * jitter).round().max(1.0) as u64
                };
                push(&mut queue, t + gap, Kind::Background, pi, None);
                schedule_try(&mut ports[pi], pi, t, &mut queue, &mut push);
            }
            Kind::TxDone => {
                let port = &mut ports[pi];
                let frame = port.in_flight.take().expect("a frame was on the wire");
                let arrival = t + port.propagation_ns;
                if let Some(si) = frame.stream {
                    let route = &routes[si];
                    if frame.hop + 1 < route.ports.len() {
                        let next = Frame { hop: frame.hop + 1, ..frame };
                        let ready = arrival + route.processing[frame.hop];
                        push(&mut queue, ready, Kind::Enqueue, route.ports[frame.hop + 1], Some(next));
                    } else if arrival <= end {
                        let rep = &mut reports[si];
                        rep.observed_frame_count += 1;
                        rep.observed_worst_latency_ns = rep.observed_worst_latency_ns.max(arrival - frame.release);
                    }
                }
                schedule_try(&mut ports[pi], pi, t, &mut queue, &mut push);
            }
            Kind::TrySend => {
                let port = &mut ports[pi];
                if port.try_pending == Some(t) {
                    port.try_pending = None;
                }
                if port.in_flight.is_some() {
                    continue;
                }
                let (mask, entry_end) = port.gate(t);
                let mut chosen = None;
                for class in (0..NUM_TRAFFIC_CLASSES).rev() {
                    if mask & (1 << class) == 0 {
                        continue;
                    }
                    let Some(head) = port.queues[class as usize].front() else {
                        continue;
                    };
                    let tx = wire_occupancy(head.bytes, port.speed_bps);
                    if t + tx <= port.closes_at(class, t) {
                        chosen = Some((class, tx));
                        break;
                    }
                }
                match chosen {
                    Some((class, tx)) => {
                        let frame = port.queues[class as usize].pop_front().expect("non-empty");
                        if !open_throughout(port.gcl, class, t, t + tx) {
                            port.report.gate_violations += 1;
                        }
                        if frame.stream.is_some() {
                            port.report.scheduled_frames += 1;
                        } else {
                            port.report.background_sent += 1;
                        }
                        port.in_flight = Some(frame);
                        push(&mut queue, t + tx, Kind::TxDone, pi, None);
                    }
                    None => {
                        let waiting = port.queues.iter().any(|q| !q.is_empty());
                        if waiting && entry_end != u64::MAX && port.try_pending.is_none_or(|p| p > entry_end) {
                            port.try_pending = Some(entry_end);
                            push(&mut queue, entry_end, Kind::TrySend, pi, None);
                        }
                    }
                }
            }
        }
    }

    let mut report = SimReport {
        horizon_ns: horizon,
        streams: BTreeMap::new(),
        ports: BTreeMap::new(),
    };
    for (si, s) in streams.iter().enumerate() {
        let mut rep = reports[si].clone();
        rep.dropped_frames = released[si] - rep.observed_frame_count;
        report.streams.insert(s.requirement.stream_id.clone(), rep);
    }
    for port in ports {
        if port.report != PortReport::default() {
            report.ports.insert(port.id, port.report);
        }
    }
    Ok(report)
}

fn bg_frame(class: u8) -> Frame {
    Frame {
        stream: None,
        hop: 0,
        bytes: MAX_FRAME_BYTES,
        class,
        release: 0,
    }
}

type Heap = BinaryHeap<Reverse<(Key, usize, Option<Frame>)>>;

/// Ask the port to pick a frame at `t` unless one is already on the wire or a pick is pending.
fn schedule_try(
    port: &mut Port,
    pi: usize,
    t: u64,
    queue: &mut Heap,
    push: &mut impl FnMut(&mut Heap, u64, Kind, usize, Option<Frame>),
) {
    if port.in_flight.is_some() || port.try_pending == Some(t) {
        return;
    }
    port.try_pending = Some(t);
    push(queue, t, Kind::TrySend, pi, None);
}
