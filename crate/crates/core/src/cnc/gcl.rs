use serde::{Deserialize, Serialize};

use super::CncError;
use crate::model::{guard_band, GateControlList, GclEntry, PortRef, ALL_GATES_CLOSED};

/// A reserved window reduced onto one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub len: u64,
    pub queue_start: u64,
    pub queue_len: u64,
    pub class: u8,
}

/// Piece of the cycle with a fixed gate mask; `start` is in `[0, cycle)`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    start: u64,
    len: u64,
    mask: u8,
}

/// Build the gate control list of one port from its (pairwise disjoint) windows.
///
/// Each window opens only its own class. A window preceded by at least a guard
/// band of free time gets an all-closed guard right before it; a shorter gap
/// after another window is closed entirely. The remaining time opens every
/// class that owns no window on the port.
pub fn build_port_gcl(
    port: &PortRef,
    windows: &[Window],
    cycle_ns: u64,
    link_speed_bps: u64,
    max_entries: Option<u32>,
) -> Result<GateControlList, CncError> {
    let guard = guard_band(link_speed_bps);
    let scheduled: u8 = windows.iter().fold(0, |acc, w| acc | (1 << w.class));
    let open_mask = !scheduled;

    // Split at the cycle boundary, sort, and merge back-to-back windows of one class.
    let mut spans: Vec<(u64, u64, u8)> = Vec::new();
    for w in windows {
        let start = w.start % cycle_ns;
        let end = start + w.len;
        if end > cycle_ns {
            spans.push((start, cycle_ns, w.class));
            spans.push((0, end - cycle_ns, w.class));
        } else {
            spans.push((start, end, w.class));
        }
    }
    spans.sort_unstable();
    let mut merged: Vec<(u64, u64, u8)> = Vec::with_capacity(spans.len());
    for span in spans {
        match merged.last_mut() {
            Some(prev) if prev.1 == span.0 && prev.2 == span.2 => prev.1 = span.1,
            _ => merged.push(span),
        }
    }

    let mut pieces: Vec<Piece> = Vec::new();
    for (i, &(start, end, class)) in merged.iter().enumerate() {
        let prev_end = if i == 0 {
            merged[merged.len() - 1].1
        } else {
            merged[i - 1].1
        };
        let gap = (start + cycle_ns - prev_end) % cycle_ns;
        if gap >= guard {
            if gap > guard {
                pieces.push(Piece {
                    start: prev_end % cycle_ns,
                    len: gap - guard,
                    mask: open_mask,
                });
            }
            pieces.push(Piece {
                start: (start + cycle_ns - guard) % cycle_ns,
                len: guard,
                mask: ALL_GATES_CLOSED,
            });
        } else if gap > 0 {
            pieces.push(Piece {
                start: prev_end % cycle_ns,
                len: gap,
                mask: ALL_GATES_CLOSED,
            });
        }
        pieces.push(Piece {
            start,
            len: end - start,
            mask: 1 << class,
        });
    }
    if merged.is_empty() {
        pieces.push(Piece {
            start: 0,
            len: cycle_ns,
            mask: open_mask,
        });
    }

    let mut cut: Vec<Piece> = Vec::with_capacity(pieces.len() + 1);
    for p in pieces {
        if p.start + p.len > cycle_ns {
            cut.push(Piece {
                len: cycle_ns - p.start,
                ..p
            });
            cut.push(Piece {
                start: 0,
                len: p.start + p.len - cycle_ns,
                ..p
            });
        } else {
            cut.push(p);
        }
    }
    cut.sort_by_key(|p| p.start);

    let entries: Vec<GclEntry> = cut
        .into_iter()
        .map(|p| GclEntry {
            gate_states: p.mask,
            interval_ns: p.len,
        })
        .collect();
    debug_assert_eq!(entries.iter().map(|e| e.interval_ns).sum::<u64>(), cycle_ns);

    if let Some(max) = max_entries {
        if entries.len() > max as usize {
            return Err(CncError::GclOverflow {
                port: port.clone(),
                entries: entries.len(),
                max,
            });
        }
    }
    Ok(GateControlList {
        port_id: port.clone(),
        cycle_ns,
        base_time_ns: 0,
        scheduled_classes: scheduled,
        entries,
    })
}
