//! Binary feature files and the per-frame index.
//!
//! Layout: three little-endian `u32` (grid_side, grid_side, dim) followed by
//! `grid_side² · dim` little-endian `f32` values in row-major token order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{encode_image, EncoderSpec, TokenGrid};
use crate::corpus::{DemonstrationSet, FrameRef};
use crate::error::{Error, Result};

const HEADER_BYTES: usize = 12;

pub fn feature_bytes(grid: &TokenGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * grid.tokens.len());
    for h in [grid.grid_side, grid.grid_side, grid.dim] {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    for v in grid.tokens.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Write a feature file, leaving an identical existing file untouched.
pub fn write_feature_file(path: impl AsRef<Path>, grid: &TokenGrid) -> Result<()> {
    let path = path.as_ref();
    let bytes = feature_bytes(grid);
    if fs::read(path).map(|old| old == bytes).unwrap_or(false) {
        return Ok(());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a feature file and check it against the encoder's grid shape.
pub fn read_feature_file(spec: &EncoderSpec, path: &str) -> Result<TokenGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_BYTES {
        return Err(Error::shape(format!("feature file {path}"), "12-byte header", format!("{} bytes", bytes.len())));
    }
    let h: Vec<usize> = bytes[..HEADER_BYTES]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let tokens = h[0] * h[1];
    let expected = spec.token_count();
    if tokens != expected || h[2] != spec.working_dim {
        return Err(Error::shape(
            format!("feature file {path}"),
            format!("{expected} tokens x {}", spec.working_dim),
            format!("{tokens} tokens x {}", h[2]),
        ));
    }
    let body = &bytes[HEADER_BYTES..];
    if body.len() != 4 * tokens * h[2] {
        return Err(Error::shape(
            format!("feature file {path}"),
            format!("{} data bytes", 4 * tokens * h[2]),
            format!("{} data bytes", body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let arr = Array2::from_shape_vec((tokens, h[2]), values).expect("length checked");
    TokenGrid::new(arr, spec.grid_side)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub demo_id: String,
    pub frame_index: usize,
    /// Path relative to the index directory.
    pub path: String,
}

/// `(demo id, frame index) → feature file` table, stored as `index.tsv`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl FeatureIndex {
    pub const FILE: &'static str = "index.tsv";

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("demo_id\tframe_index\tpath\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.demo_id, e.frame_index, e.path));
        }
        s
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let path = root.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            let parsed = (cols.len() == 3).then(|| cols[1].parse::<usize>().ok()).flatten();
            let Some(frame_index) = parsed else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: "expected demo_id<TAB>frame_index<TAB>path".into(),
                });
            };
            entries.push(IndexEntry {
                demo_id: cols[0].to_string(),
                frame_index,
                path: cols[2].to_string(),
            });
        }
        Ok(FeatureIndex {
            root: root.to_path_buf(),
            entries,
        })
    }

    /// Copy of `set` whose frames point at the indexed feature files.
    pub fn apply(&self, set: &DemonstrationSet) -> Result<DemonstrationSet> {
        let mut out = set.clone();
        let mut by_demo: std::collections::HashMap<&str, Vec<&IndexEntry>> = Default::default();
        for e in &self.entries {
            by_demo.entry(e.demo_id.as_str()).or_default().push(e);
        }
        for d in &mut out.demos {
            let entries = by_demo.get(d.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            for (i, f) in d.frames.iter_mut().enumerate() {
                let e = entries.iter().find(|e| e.frame_index == i).ok_or_else(|| {
                    Error::Input(format!("feature index has no entry for `{}` frame {i}", d.id))
                })?;
                *f = FrameRef(self.root.join(&e.path).to_string_lossy().into_owned());
            }
        }
        Ok(out)
    }
}

/// Encode every frame of `set` into `out_dir/{demo}/{frame:06}.feat` and write
/// `index.tsv`. Reruns produce byte-identical output.
pub fn precompute_features(spec: &EncoderSpec, set: &DemonstrationSet, out_dir: impl AsRef<Path>) -> Result<FeatureIndex> {
    let root = out_dir.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::new();
    for d in set.iter() {
        for (i, frame) in d.frames.iter().enumerate() {
            let grid = encode_image(spec, frame)?;
            let rel = format!("{}/{i:06}.feat", d.id);
            write_feature_file(root.join(&rel), &grid)?;
            entries.push(IndexEntry {
                demo_id: d.id.clone(),
                frame_index: i,
                path: rel,
            });
        }
    }
    let index = FeatureIndex {
        root: root.to_path_buf(),
        entries,
    };
    let path = root.join(FeatureIndex::FILE);
    let tsv = index.to_tsv();
    if fs::read_to_string(&path).map(|old| old != tsv).unwrap_or(true) {
        fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
    }
    Ok(index)
}
