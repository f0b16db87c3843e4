//! Action precondition/effect phase classification and execution monitoring.
//!
//! A two-stage transformer reads a frozen-backbone token grid and an action
//! embedding and classifies the frame as the action's precondition, its
//! effect, or neither. A behavior-tree runtime compares those predictions
//! with the phase each running skill expects and raises filtered anomalies.

pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod monitor;
pub mod net;
pub mod objectives;
pub mod rng;
pub mod synthworld;
pub mod trainkit;

pub use error::{Error, Result};
