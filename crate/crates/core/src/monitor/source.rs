//! Frame sources driven by the monitor's active skill.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ActivePhase;
use crate::corpus::PhaseLabel;
use crate::encoders::TokenGrid;
use crate::error::Result;

/// The skill the tree is running and how far into its phase it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSkill {
    pub action: String,
    pub phase: ActivePhase,
    /// Fraction of the phase's duration already elapsed, in `[0, 1)`.
    pub progress: f64,
    /// Activation counter; a new value marks a fresh execution of the skill.
    pub run: u64,
}

/// One observation delivered to the monitor.
#[derive(Debug, Clone)]
pub struct SourceFrame {
    pub index: usize,
    /// Encoded frame; absent when the source runs without an encoder.
    pub grid: Option<Arc<TokenGrid>>,
    /// Ground-truth phase of the world for the active skill, when known.
    pub truth: Option<PhaseLabel>,
}

/// Produces the next frame given what the robot is doing. Returns `None`
/// when the stream is exhausted.
pub trait FrameSource {
    fn next_frame(&mut self, active: Option<&ActiveSkill>) -> Result<Option<SourceFrame>>;
}
