//! Synthetic scene rendering: each symbolic attribute owns a seeded random
//! direction that is added to its patch.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EncoderSpec, TokenGrid};
use crate::error::{Error, Result};
use crate::rng::Seed;

fn one() -> f64 {
    1.0
}

/// One symbolic fact rendered into the grid. `patch: None` paints every patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub key: String,
    #[serde(default)]
    pub patch: Option<usize>,
    #[serde(default = "one")]
    pub strength: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub noise_scale: f64,
    pub attributes: Vec<Attribute>,
}

/// On-disk frame: the scene to render plus free-form ground truth for tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFile {
    pub scene: Scene,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub world: serde_json::Value,
}

fn attribute_vector(spec: &EncoderSpec, key: &str) -> Array1<f64> {
    let mut rng = Seed(spec.seed).fork("attribute").fork(key).rng();
    Array1::from_shape_simple_fn(spec.working_dim, || StandardNormal.sample(&mut rng))
}

/// Render a scene to an L² × D grid.
pub fn encode_scene(spec: &EncoderSpec, scene: &Scene) -> Result<TokenGrid> {
    let n = spec.token_count();
    let mut tokens = Array2::<f64>::zeros((n, spec.working_dim));
    for a in &scene.attributes {
        let v = attribute_vector(spec, &a.key) * a.strength;
        match a.patch {
            Some(p) if p >= n => {
                return Err(Error::shape(
                    format!("attribute `{}` patch", a.key),
                    format!("< {n}"),
                    p,
                ))
            }
            Some(p) => {
                let mut row = tokens.row_mut(p);
                row += &v;
            }
            None => {
                for mut row in tokens.rows_mut() {
                    row += &v;
                }
            }
        }
    }
    if scene.noise_scale > 0.0 {
        let mut rng = Seed(spec.seed).fork("noise").fork_index(scene.noise_seed).rng();
        for x in tokens.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += scene.noise_scale * z;
        }
    }
    TokenGrid::new(tokens, spec.grid_side)
}
