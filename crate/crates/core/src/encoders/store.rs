//! Frame and text lookup with memoization.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{encode_image, encode_text, EncoderSpec, SemanticVector, TokenGrid};
use crate::corpus::FrameRef;
use crate::error::{Error, Result};

/// Source of encoded frames.
pub trait FrameStore: Send + Sync {
    fn grid(&self, frame: &FrameRef) -> Result<Arc<TokenGrid>>;
}

/// Encodes frames on first use and caches the grids.
#[derive(Debug)]
pub struct EncodingStore {
    spec: EncoderSpec,
    cache: Mutex<HashMap<FrameRef, Arc<TokenGrid>>>,
}

impl EncodingStore {
    pub fn new(spec: EncoderSpec) -> Self {
        EncodingStore {
            spec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl FrameStore for EncodingStore {
    fn grid(&self, frame: &FrameRef) -> Result<Arc<TokenGrid>> {
        if let Some(g) = self.cache.lock().expect("cache lock").get(frame) {
            return Ok(g.clone());
        }
        let g = Arc::new(encode_image(&self.spec, frame)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(frame.clone(), g.clone());
        Ok(g)
    }
}

/// Grids held in memory, keyed by frame reference.
#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    grids: HashMap<FrameRef, Arc<TokenGrid>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: FrameRef, grid: TokenGrid) {
        self.grids.insert(frame, Arc::new(grid));
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }
}

impl FrameStore for MemoryStore {
    fn grid(&self, frame: &FrameRef) -> Result<Arc<TokenGrid>> {
        self.grids
            .get(frame)
            .cloned()
            .ok_or_else(|| Error::Input(format!("frame `{frame}` not in memory store")))
    }
}

/// Memoized text encoder.
#[derive(Debug)]
pub struct TextStore {
    spec: EncoderSpec,
    cache: Mutex<HashMap<String, Arc<SemanticVector>>>,
}

impl TextStore {
    pub fn new(spec: EncoderSpec) -> Self {
        TextStore {
            spec,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Arc<SemanticVector>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(text) {
            return Ok(v.clone());
        }
        let v = Arc::new(encode_text(&self.spec, text)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}
