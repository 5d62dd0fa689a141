//! Greedy as-soon-as-possible window placement for one stream over one segment.
//!
//! Every period instance inside the schedule cycle is placed in turn. At each
//! hop the burst gets the earliest window that starts after the whole burst is
//! queued and that collides with no other window on the port. On top of window
//! disjointness, frames of one traffic class must never share a class queue
//! with another instance: the span from the first frame entering the queue to
//! the window end is kept disjoint from every other same-class span on the
//! port. When that fails at a bridge the talker release is pushed back and the
//! instance is placed again.

use num_integer::Integer;

use super::{CncError, CncState, SegmentEntry, Window};
use crate::model::{
    burst_occupancy, wire_occupancy, HopReservation, PortRef, StreamRequirement, StreamSchedule,
    MAX_HYPERPERIOD_NS,
};
use crate::topology::{Hop, Topology};

struct HopInfo {
    port: PortRef,
    /// Processing delay of the egress node, paid by frames arriving there.
    processing_ns: u64,
    propagation_ns: u64,
    frame_ns: u64,
    burst_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Placed {
    queue_start: u64,
    start: u64,
    end: u64,
}

impl Placed {
    fn shifted(&self, by: u64) -> Placed {
        Placed {
            queue_start: self.queue_start + by,
            start: self.start + by,
            end: self.end + by,
        }
    }
}

/// True when `[a, a+a_len)` and `[b, b+b_len)` intersect on a circle of length `cycle`.
pub(crate) fn overlaps(a: u64, a_len: u64, b: u64, b_len: u64, cycle: u64) -> bool {
    if a_len == 0 || b_len == 0 {
        return false;
    }
    if a_len >= cycle || b_len >= cycle {
        return true;
    }
    let (am, bm) = (a % cycle, b % cycle);
    let a_after_b = (am + cycle - bm) % cycle;
    let b_after_a = (bm + cycle - am) % cycle;
    a_after_b < b_len || b_after_a < a_len
}

/// How far `a` must move forward to clear `[b, b+b_len)`, given that they overlap.
fn push_past(a: u64, b: u64, b_len: u64, cycle: u64) -> u64 {
    let (am, bm) = (a % cycle, b % cycle);
    let a_after_b = (am + cycle - bm) % cycle;
    if a_after_b < b_len {
        b_len - a_after_b
    } else {
        (bm + cycle - am) % cycle + b_len
    }
}

/// Earliest `s >= from` such that `[s, s+len)` avoids every blocked interval.
fn earliest_free(from: u64, len: u64, blocked: &[(u64, u64)], cycle: u64) -> Option<u64> {
    let mut s = from;
    loop {
        if s - from >= cycle {
            return None;
        }
        let mut moved = false;
        for &(b, b_len) in blocked {
            if overlaps(s, len, b, b_len, cycle) {
                s += push_past(s, b, b_len, cycle);
                moved = true;
            }
        }
        if !moved {
            return Some(s);
        }
    }
}

fn hop_infos(
    topology: &Topology,
    state: &CncState,
    req: &StreamRequirement,
    segment: &[Hop],
    entry: SegmentEntry,
) -> Result<Vec<HopInfo>, CncError> {
    let malformed = |msg: String| CncError::Malformed(msg);
    if segment.is_empty() {
        return Err(malformed("empty segment".into()));
    }
    if entry == SegmentEntry::Talker && segment[0].egress.node != req.talker.node_id {
        return Err(malformed(format!(
            "segment starts at {} but the talker sits on {}",
            segment[0].egress.node, req.talker.node_id
        )));
    }
    let mut infos = Vec::with_capacity(segment.len());
    for (i, hop) in segment.iter().enumerate() {
        if i > 0 && segment[i - 1].ingress.node != hop.egress.node {
            return Err(malformed(format!("hop {i} does not continue from hop {}", i - 1)));
        }
        let node = topology
            .node(&hop.egress.node)
            .ok_or_else(|| malformed(format!("unknown node {}", hop.egress.node)))?;
        if node.domain_id != state.domain_id {
            return Err(malformed(format!(
                "egress {} belongs to {}, not {}",
                hop.egress, node.domain_id, state.domain_id
            )));
        }
        if let Some(b) = node.bridge() {
            if !b.supports_qbv {
                return Err(CncError::Capability(node.node_id.clone()));
            }
        }
        let link = topology
            .link_at(&hop.egress)
            .filter(|l| l.link_id == hop.link_id && l.peer_of(&hop.egress.node).map(|e| e.port_ref()) == Some(hop.ingress.clone()))
            .ok_or_else(|| malformed(format!("hop {} -> {} is not a topology link", hop.egress, hop.ingress)))?;
        infos.push(HopInfo {
            port: hop.egress.clone(),
            processing_ns: node.processing_delay_ns(),
            propagation_ns: link.propagation_ns,
            frame_ns: wire_occupancy(req.traffic.max_frame_bytes, link.speed_bps),
            burst_ns: burst_occupancy(&req.traffic, link.speed_bps),
        });
    }
    Ok(infos)
}

pub(super) fn plan(
    topology: &Topology,
    state: &CncState,
    req: &StreamRequirement,
    segment: &[Hop],
    entry: SegmentEntry,
    budget_ns: u64,
) -> Result<StreamSchedule, CncError> {
    let infos = hop_infos(topology, state, req, segment, entry)?;
    let period = req.traffic.period_ns;
    let class = req.traffic_class();

    let cycle = if state.hyperperiod_ns == 0 {
        period as u128
    } else {
        (state.hyperperiod_ns as u128).lcm(&(period as u128))
    };
    if cycle > MAX_HYPERPERIOD_NS as u128 {
        return Err(CncError::HyperperiodOverflow(cycle));
    }
    let cycle = cycle as u64;

    let existing: Vec<Vec<Window>> = infos.iter().map(|h| state.windows_on(&h.port, cycle)).collect();
    let mut own: Vec<Vec<Window>> = vec![Vec::new(); infos.len()];
    let release_offset = entry.release_offset();
    let last = infos.len() - 1;

    let no_window = |h: usize| CncError::NoFreeWindow {
        stream: req.stream_id.clone(),
        port: infos[h].port.clone(),
    };

    let mut instances: Vec<Vec<Placed>> = Vec::new();
    for k in 0..cycle / period {
        let base = k * period;
        let release = base + release_offset;
        let mut talker_not_before = base;

        let placed = 'attempt: loop {
            if talker_not_before - base >= cycle {
                return Err(no_window(0));
            }
            let mut placed: Vec<Placed> = Vec::with_capacity(infos.len());
            for (h, info) in infos.iter().enumerate() {
                let talker_hop = h == 0 && entry == SegmentEntry::Talker;
                let (ready_first, ready_last) = match (h, entry) {
                    (0, SegmentEntry::Talker) => (talker_not_before, talker_not_before),
                    (0, SegmentEntry::Upstream { earliest_ns, latest_ns }) => (
                        base + earliest_ns + info.processing_ns,
                        base + latest_ns + info.processing_ns,
                    ),
                    _ => {
                        let prev = &placed[h - 1];
                        let up = &infos[h - 1];
                        (
                            prev.start + up.frame_ns + up.propagation_ns + info.processing_ns,
                            prev.end + up.propagation_ns + info.processing_ns,
                        )
                    }
                };

                let same_class = existing[h]
                    .iter()
                    .chain(own[h].iter())
                    .filter(|w| w.class == class);
                let mut blocked: Vec<(u64, u64)> = existing[h]
                    .iter()
                    .chain(own[h].iter())
                    .map(|w| (w.start, w.len))
                    .collect();
                if talker_hop {
                    blocked.extend(same_class.clone().map(|w| (w.queue_start, w.queue_len)));
                }
                let start = earliest_free(ready_last, info.burst_ns, &blocked, cycle)
                    .ok_or_else(|| no_window(h))?;
                let end = start + info.burst_ns;

                let latency = end + info.propagation_ns - release;
                if latency > budget_ns {
                    return Err(CncError::ExceedsBudget {
                        stream: req.stream_id.clone(),
                        latency_ns: latency,
                        budget_ns,
                    });
                }

                let queue_start = if talker_hop { start } else { ready_first };
                if !talker_hop {
                    if end - queue_start >= cycle {
                        return Err(no_window(h));
                    }
                    let conflict = same_class
                        .filter(|w| overlaps(queue_start, end - queue_start, w.queue_start, w.queue_len, cycle))
                        .map(|w| push_past(queue_start, w.queue_start, w.queue_len, cycle))
                        .max();
                    if let Some(push) = conflict {
                        match entry {
                            SegmentEntry::Talker => {
                                talker_not_before = placed[0].start + push;
                                continue 'attempt;
                            }
                            SegmentEntry::Upstream { .. } => return Err(no_window(h)),
                        }
                    }
                }
                placed.push(Placed {
                    queue_start,
                    start,
                    end,
                });
            }
            break placed;
        };

        for (h, p) in placed.iter().enumerate() {
            own[h].push(Window {
                start: p.start % cycle,
                len: p.end - p.start,
                queue_start: p.queue_start % cycle,
                queue_len: p.end - p.queue_start,
                class,
            });
        }
        instances.push(placed);
    }

    let pattern_cycle = minimal_cycle(&instances, period, cycle);
    let kept = &instances[..(pattern_cycle / period) as usize];

    let mut reservations = Vec::with_capacity(kept.len() * infos.len());
    let mut worst = 0;
    let mut exit_first_min = u64::MAX;
    for (k, placed) in kept.iter().enumerate() {
        let base = k as u64 * period;
        let tail = &placed[last];
        worst = worst.max(tail.end + infos[last].propagation_ns - base - release_offset);
        exit_first_min =
            exit_first_min.min(tail.start + infos[last].frame_ns + infos[last].propagation_ns - base);
        for (h, p) in placed.iter().enumerate() {
            reservations.push(HopReservation {
                stream_id: req.stream_id.clone(),
                instance: k as u32,
                port_id: infos[h].port.clone(),
                traffic_class: class,
                queue_start_ns: p.queue_start,
                window_start_ns: p.start,
                window_end_ns: p.end,
            });
        }
    }

    Ok(StreamSchedule {
        stream_id: req.stream_id.clone(),
        domain_id: state.domain_id.clone(),
        period_ns: period,
        cycle_ns: pattern_cycle,
        entry_offset_ns: release_offset,
        reservations,
        e2e_latency_ns: worst,
        exit_first_frame_min_ns: exit_first_min,
    })
}

/// Smallest multiple of `period` dividing `cycle` under which the placement repeats.
fn minimal_cycle(instances: &[Vec<Placed>], period: u64, cycle: u64) -> u64 {
    let n = instances.len();
    let mut candidates: Vec<u64> = (1..=n as u64).filter(|m| n as u64 % m == 0).collect();
    candidates.sort_unstable();
    for m in candidates {
        let shift = m * period;
        let m = m as usize;
        let periodic = (0..n - m).all(|k| {
            instances[k]
                .iter()
                .zip(&instances[k + m])
                .all(|(a, b)| a.shifted(shift) == *b)
        });
        if periodic {
            return shift;
        }
    }
    cycle
}
