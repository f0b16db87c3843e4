//! A stack of transformer blocks followed by a final layer norm.

use ndarray::Array2;

use super::layers::{Block, BlockCache, LayerNorm, LnCache, Params};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stage {
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
}

#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
}

impl Stage {
    pub fn new(depth: usize, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Stage {
            blocks: (0..depth).map(|_| Block::new(dim, hidden, rng)).collect(),
            ln_f: LayerNorm::new(dim),
        }
    }

    pub fn forward(&self, x: Array2<f64>, seq_len: usize, heads: usize) -> (Array2<f64>, StageCache) {
        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&h, seq_len, heads);
            caches.push(c);
            h = next;
        }
        let (y, ln_f) = self.ln_f.forward(h.view());
        (y, StageCache { blocks: caches, ln_f })
    }

    pub fn backward(&self, cache: &StageCache, dy: &Array2<f64>, seq_len: usize, heads: usize, g: &mut Stage) -> Array2<f64> {
        let mut d = self.ln_f.backward(&cache.ln_f, dy.view(), &mut g.ln_f);
        for ((b, c), gb) in self.blocks.iter().zip(&cache.blocks).zip(g.blocks.iter_mut()).rev() {
            d = b.backward(c, &d, seq_len, heads, gb);
        }
        d
    }
}

impl Params for Stage {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(&str, &'a [f64], bool)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{name}.blocks.{i}"), f);
        }
        self.ln_f.visit(&format!("{name}.ln_f"), f);
    }
    fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64], bool)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{name}.blocks.{i}"), f);
        }
        self.ln_f.visit_mut(&format!("{name}.ln_f"), f);
    }
}
