use serde::{Deserialize, Serialize};

use crate::model::{guard_band, GateControlList, ALL_GATES_CLOSED};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GclViolation {
    Empty,
    SumMismatch { expected: u64, actual: u64 },
    ZeroLength { index: usize },
    /// A scheduled window must open exactly one gate.
    WindowGates { index: usize, open_gates: u32 },
    /// The closed run before the window at `index` is shorter than one maximum frame.
    GuardTooShort { index: usize, guard_ns: u64, need_ns: u64 },
}

impl std::fmt::Display for GclViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GclViolation::Empty => write!(f, "empty list"),
            GclViolation::SumMismatch { expected, actual } => {
                write!(f, "sum_mismatch: intervals sum to {actual}, cycle is {expected}")
            }
            GclViolation::ZeroLength { index } => write!(f, "zero_length: entry {index}"),
            GclViolation::WindowGates { index, open_gates } => {
                write!(f, "window_gates: entry {index} opens {open_gates} gates")
            }
            GclViolation::GuardTooShort { index, guard_ns, need_ns } => {
                write!(f, "guard_too_short: entry {index} guarded by {guard_ns} ns, need {need_ns}")
            }
        }
    }
}

/// Structural checks on one gate control list.
///
/// Windows are the entries opening a class listed in `scheduled_classes`.
/// Whenever best-effort classes are open right before a window (possibly
/// followed by closed entries), the closed run must last at least one
/// maximum-size frame on the link.
pub fn check_gcl_wellformed(gcl: &GateControlList, link_speed_bps: u64) -> Result<(), Vec<GclViolation>> {
    let mut violations = Vec::new();
    let n = gcl.entries.len();
    if n == 0 {
        return Err(vec![GclViolation::Empty]);
    }
    let actual = gcl.interval_sum();
    if actual != gcl.cycle_ns {
        violations.push(GclViolation::SumMismatch {
            expected: gcl.cycle_ns,
            actual,
        });
    }
    let need = guard_band(link_speed_bps);
    let best_effort = !gcl.scheduled_classes;
    for (i, entry) in gcl.entries.iter().enumerate() {
        if entry.interval_ns == 0 {
            violations.push(GclViolation::ZeroLength { index: i });
        }
        if entry.gate_states & gcl.scheduled_classes == 0 {
            continue;
        }
        let open = entry.gate_states.count_ones();
        if open != 1 {
            violations.push(GclViolation::WindowGates {
                index: i,
                open_gates: open,
            });
        }
        let mut closed = 0;
        for back in 1..n {
            let prev = &gcl.entries[(i + n - back) % n];
            if prev.gate_states == ALL_GATES_CLOSED {
                closed += prev.interval_ns;
                continue;
            }
            if prev.gate_states & best_effort != 0 && closed < need {
                violations.push(GclViolation::GuardTooShort {
                    index: i,
                    guard_ns: closed,
                    need_ns: need,
                });
            }
            break;
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
