//! Expected phases, the consecutive-mismatch filter, and the prediction rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::PhaseLabel;

/// Execution phase of a running skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivePhase {
    Pre,
    Core,
    Effect,
}

/// What the monitor expects to observe, or nothing while checks are suspended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Label(PhaseLabel),
    Suspended,
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expected::Label(l) => l.fmt(f),
            Expected::Suspended => f.write_str("suspended"),
        }
    }
}

pub fn expected_phase(active: ActivePhase) -> Expected {
    match active {
        ActivePhase::Pre => Expected::Label(PhaseLabel::Precondition),
        ActivePhase::Core => Expected::Suspended,
        ActivePhase::Effect => Expected::Label(PhaseLabel::Effect),
    }
}

/// Frames of consecutive mismatch needed before an anomaly is declared.
pub const FILTER_THRESHOLD: usize = 8;

/// Counts consecutive mismatches under one expected phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterState {
    pub consecutive_mismatch_count: usize,
    pub threshold: usize,
    last_expected: Option<Expected>,
}

impl Default for FilterState {
    fn default() -> Self {
        FilterState::new(FILTER_THRESHOLD)
    }
}

impl FilterState {
    pub fn new(threshold: usize) -> Self {
        FilterState {
            consecutive_mismatch_count: 0,
            threshold,
            last_expected: None,
        }
    }

    pub fn reset(&mut self) {
        self.consecutive_mismatch_count = 0;
        self.last_expected = None;
    }
}

/// Advance the filter by one frame. The count resets on a match, while
/// suspended, and whenever the expected phase changes.
pub fn filter_update(state: FilterState, expected: Expected, predicted: PhaseLabel) -> (FilterState, bool) {
    let mut next = state;
    if next.last_expected != Some(expected) {
        next.consecutive_mismatch_count = 0;
    }
    next.last_expected = Some(expected);
    match expected {
        Expected::Suspended => {
            next.consecutive_mismatch_count = 0;
            (next, false)
        }
        Expected::Label(e) if e == predicted => {
            next.consecutive_mismatch_count = 0;
            (next, false)
        }
        Expected::Label(_) => {
            next.consecutive_mismatch_count += 1;
            let fire = next.consecutive_mismatch_count >= next.threshold;
            (next, fire)
        }
    }
}

/// Argmax over the three confidences; a shared maximum resolves to Unsatisfied.
pub fn decide(confidences: [f64; 3]) -> PhaseLabel {
    let m = confidences.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..3).filter(|&i| confidences[i] == m).collect();
    if winners.len() == 1 {
        PhaseLabel::from_index(winners[0]).expect("index < 3")
    } else {
        PhaseLabel::Unsatisfied
    }
}
