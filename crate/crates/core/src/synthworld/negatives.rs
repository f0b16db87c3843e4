//! Negatives that are provably Unsatisfied in the frame's world state.

use std::collections::HashMap;
use std::sync::Mutex;

use super::{SymAction, WorldState};
use crate::corpus::{ActionSpec, Demonstration, FrameRef, NegativeFilter};
use crate::encoders::FrameFile;

/// Admits a candidate only when neither its precondition nor its effect
/// holds in the frame. World states come from the frame file's `world`
/// field, or from a preloaded table.
#[derive(Debug, Default)]
pub struct WorldNegativeFilter {
    states: Mutex<HashMap<FrameRef, Option<WorldState>>>,
}

impl WorldNegativeFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_states(states: impl IntoIterator<Item = (FrameRef, WorldState)>) -> Self {
        WorldNegativeFilter {
            states: Mutex::new(states.into_iter().map(|(k, v)| (k, Some(v))).collect()),
        }
    }

    fn state(&self, frame: &FrameRef) -> Option<WorldState> {
        let mut cache = self.states.lock().expect("state cache lock");
        cache
            .entry(frame.clone())
            .or_insert_with(|| {
                let text = std::fs::read_to_string(frame.as_str()).ok()?;
                let file: FrameFile = serde_json::from_str(&text).ok()?;
                serde_json::from_value(file.world).ok()
            })
            .clone()
    }
}

impl NegativeFilter for WorldNegativeFilter {
    fn admissible(&self, demo: &Demonstration, frame: &FrameRef, candidate: &ActionSpec) -> bool {
        if candidate.text == demo.canonical_action() {
            return false;
        }
        let (Ok(action), Some(state)) = (SymAction::parse(&candidate.text), self.state(frame)) else {
            return false;
        };
        !action.precondition(&state) && !action.effect_state(&state)
    }
}
