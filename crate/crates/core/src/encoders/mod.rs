//! Frozen image and text encoders.
//!
//! Nothing here is trainable: every output is a pure function of the
//! [`EncoderSpec`] and the input.

mod features;
mod store;
mod synthetic;

pub use features::{precompute_features, read_feature_file, write_feature_file, FeatureIndex, IndexEntry};
pub use store::{EncodingStore, FrameStore, MemoryStore, TextStore};
pub use synthetic::{encode_scene, Attribute, FrameFile, Scene};

use std::fs;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::FrameRef;
use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Scene files rendered by seeded random maps per attribute.
    Synthetic,
    /// Feature files written by an external backbone.
    Precomputed,
}

/// L² × D patch features of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Array2<f64>,
    pub grid_side: usize,
    pub dim: usize,
}

impl TokenGrid {
    pub fn new(tokens: Array2<f64>, grid_side: usize) -> Result<Self> {
        let (n, dim) = tokens.dim();
        if n != grid_side * grid_side {
            return Err(Error::shape("token grid", format!("{} tokens", grid_side * grid_side), format!("{n} tokens")));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("token grid has non-finite entries".into()));
        }
        Ok(TokenGrid { tokens, grid_side, dim })
    }

    pub fn token_count(&self) -> usize {
        self.tokens.nrows()
    }
}

/// Action-semantics vector in the working dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVector {
    pub values: Array1<f64>,
}

impl SemanticVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn default_native_dim() -> usize {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecFields {
    kind: EncoderKind,
    grid_side: usize,
    #[serde(default = "default_native_dim")]
    native_text_dim: usize,
    working_dim: usize,
    #[serde(default)]
    seed: u64,
}

/// Encoder configuration. The text projection is fixed and seeded, so it is
/// rebuilt from `seed` rather than stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpecFields", into = "SpecFields")]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub grid_side: usize,
    pub native_text_dim: usize,
    pub working_dim: usize,
    pub seed: u64,
    projection: Option<Array2<f64>>,
}

impl PartialEq for EncoderSpec {
    fn eq(&self, other: &Self) -> bool {
        SpecFields::from(self.clone()) == SpecFields::from(other.clone())
    }
}

impl PartialEq for SpecFields {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.grid_side == o.grid_side
            && self.native_text_dim == o.native_text_dim
            && self.working_dim == o.working_dim
            && self.seed == o.seed
    }
}

impl From<EncoderSpec> for SpecFields {
    fn from(s: EncoderSpec) -> Self {
        SpecFields {
            kind: s.kind,
            grid_side: s.grid_side,
            native_text_dim: s.native_text_dim,
            working_dim: s.working_dim,
            seed: s.seed,
        }
    }
}

impl TryFrom<SpecFields> for EncoderSpec {
    type Error = Error;
    fn try_from(f: SpecFields) -> Result<Self> {
        let native = if f.native_text_dim == 0 { f.working_dim } else { f.native_text_dim };
        EncoderSpec::new(f.kind, f.grid_side, native, f.working_dim, f.seed)
    }
}

impl EncoderSpec {
    pub fn new(kind: EncoderKind, grid_side: usize, native_text_dim: usize, working_dim: usize, seed: u64) -> Result<Self> {
        if working_dim == 0 || native_text_dim == 0 || grid_side == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let projection = (native_text_dim != working_dim).then(|| {
            let mut rng = Seed(seed).fork("text-projection").rng();
            let scale = 1.0 / (native_text_dim as f64).sqrt();
            Array2::from_shape_simple_fn((native_text_dim, working_dim), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        });
        Ok(EncoderSpec {
            kind,
            grid_side,
            native_text_dim,
            working_dim,
            seed,
            projection,
        })
    }

    pub fn synthetic(grid_side: usize, working_dim: usize, seed: u64) -> Self {
        Self::new(EncoderKind::Synthetic, grid_side, working_dim, working_dim, seed)
            .expect("positive dimensions")
    }

    pub fn token_count(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn projection(&self) -> Option<&Array2<f64>> {
        self.projection.as_ref()
    }
}

/// Encode one frame file.
pub fn encode_image(spec: &EncoderSpec, frame: &FrameRef) -> Result<TokenGrid> {
    match spec.kind {
        EncoderKind::Precomputed => read_feature_file(spec, frame.as_str()),
        EncoderKind::Synthetic => {
            let bytes = fs::read(frame.as_str()).map_err(|e| Error::io(frame.as_str(), e))?;
            encode_image_bytes(spec, &bytes)
        }
    }
}

/// Encode raw frame content. Scene files are rendered; any other bytes are
/// hashed into a seeded grid.
pub fn encode_image_bytes(spec: &EncoderSpec, bytes: &[u8]) -> Result<TokenGrid> {
    if let Ok(file) = serde_json::from_slice::<FrameFile>(bytes) {
        return encode_scene(spec, &file.scene);
    }
    let mut rng = Seed(spec.seed).fork("raw").fork(bytes).rng();
    let tokens = Array2::from_shape_simple_fn((spec.token_count(), spec.working_dim), || {
        StandardNormal.sample(&mut rng)
    });
    TokenGrid::new(tokens, spec.grid_side)
}

/// Hash unigrams and bigrams of the canonical text to Gaussian vectors in the
/// native dimension, sum, normalize, project, renormalize.
pub fn encode_text(spec: &EncoderSpec, text: &str) -> Result<SemanticVector> {
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    if words.is_empty() {
        return Err(Error::Input("cannot encode empty text".into()));
    }
    let base = Seed(spec.seed).fork("text");
    let mut native = Array1::<f64>::zeros(spec.native_text_dim);
    let mut add = |gram: &str| {
        let mut rng = base.fork(gram).rng();
        for v in native.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += z;
        }
    };
    for w in &words {
        add(w);
    }
    for pair in words.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let values = match &spec.projection {
        None => unit(native),
        Some(p) => unit(unit(native).dot(p)),
    };
    Ok(SemanticVector { values })
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
    }

    #[test]
    fn text_is_deterministic_unit_and_distinct() {
        let spec = EncoderSpec::synthetic(4, 32, 0);
        let vocab = [
            "pick up bottle",
            "pick up cup",
            "pick up cloth",
            "place bottle on table",
            "place cloth on table",
            "pour bottle into cup",
            "pour juice into mug",
            "wipe table",
        ];
        let vs: Vec<_> = vocab.iter().map(|t| encode_text(&spec, t).unwrap().values).collect();
        for (i, v) in vs.iter().enumerate() {
            assert!((v.dot(v).sqrt() - 1.0).abs() < 1e-6);
            assert_eq!(v, &encode_text(&spec, vocab[i]).unwrap().values);
            for w in &vs[i + 1..] {
                assert!(cos(v, w) < 0.99);
            }
        }
        assert!(matches!(encode_text(&spec, "  "), Err(Error::Input(_))));
    }

    #[test]
    fn projection_only_when_dims_differ() {
        let same = EncoderSpec::new(EncoderKind::Synthetic, 2, 16, 16, 1).unwrap();
        assert!(same.projection().is_none());
        let diff = EncoderSpec::new(EncoderKind::Synthetic, 2, 24, 16, 1).unwrap();
        assert_eq!(diff.projection().unwrap().dim(), (24, 16));
        let v = encode_text(&diff, "wipe table").unwrap();
        assert_eq!(v.dim(), 16);
        assert!((v.values.dot(&v.values) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spec_round_trips_and_rebuilds_projection() {
        let s = EncoderSpec::new(EncoderKind::Synthetic, 4, 48, 32, 7).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("projection"));
        let back: EncoderSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.projection(), s.projection());
        assert_eq!(back, s);
    }

    #[test]
    fn default_grid_shape() {
        let spec = EncoderSpec::synthetic(16, 384, 0);
        let g = encode_image_bytes(&spec, b"not a scene").unwrap();
        assert_eq!(g.tokens.dim(), (256, 384));
        assert_eq!(g, encode_image_bytes(&spec, b"not a scene").unwrap());
    }
}
