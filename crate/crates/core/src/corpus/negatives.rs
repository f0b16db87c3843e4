//! Mismatched-action negatives for the Unsatisfied class.

use rand::Rng as _;

use super::{ActionSpec, Demonstration, FrameRef};
use crate::rng::Rng;

/// Decides whether `candidate` is a valid mismatched query for one frame.
pub trait NegativeFilter: Send + Sync {
    fn admissible(&self, demo: &Demonstration, frame: &FrameRef, candidate: &ActionSpec) -> bool;
}

/// Different canonical text and no object in common with the demonstrated action.
#[derive(Debug, Clone, Copy, Default)]
pub struct DistinctAction;

impl NegativeFilter for DistinctAction {
    fn admissible(&self, demo: &Demonstration, _frame: &FrameRef, candidate: &ActionSpec) -> bool {
        let own = demo.action();
        own.text != candidate.text && !own.slots.iter().any(|s| candidate.slots.contains(s))
    }
}

/// Draw a negative query for `frame` of `demo`.
///
/// Pools are tried in order and the first pool with an admissible candidate
/// wins. When no pool has one, any action with different text is used.
pub fn pick_negative(
    demo: &Demonstration,
    frame: &FrameRef,
    pools: &[&[ActionSpec]],
    filter: &dyn NegativeFilter,
    rng: &mut Rng,
) -> Option<ActionSpec> {
    for pool in pools {
        let ok: Vec<&ActionSpec> = pool
            .iter()
            .filter(|c| filter.admissible(demo, frame, c))
            .collect();
        if !ok.is_empty() {
            return Some(ok[rng.random_range(0..ok.len())].clone());
        }
    }
    let own = demo.canonical_action();
    let mut any: Vec<&ActionSpec> = pools.iter().flat_map(|p| p.iter()).filter(|c| c.text != own).collect();
    any.sort();
    any.dedup();
    if any.is_empty() {
        None
    } else {
        Some(any[rng.random_range(0..any.len())].clone())
    }
}
