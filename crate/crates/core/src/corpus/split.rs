//! Seeded train/validation split at demonstration granularity.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DemonstrationSet;
use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl Split {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Split stratified by success flag. Within each stratum `round(n * train_fraction)`
/// demonstrations go to train. Both id lists come back sorted.
pub fn stratified_split(set: &DemonstrationSet, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0,1]")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (label, success) in [("success", true), ("failure", false)] {
        let mut ids: Vec<String> = set
            .iter()
            .filter(|d| d.success == success)
            .map(|d| d.id.clone())
            .collect();
        ids.shuffle(&mut Seed(seed).fork(label).rng());
        let k = (ids.len() as f64 * train_fraction).round() as usize;
        val.extend(ids.split_off(k));
        train.extend(ids);
    }
    train.sort();
    val.sort();
    Ok(Split { seed, train, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::demo;

    fn set(n_ok: usize, n_fail: usize) -> DemonstrationSet {
        let mut v = Vec::new();
        for i in 0..n_ok {
            v.push(demo(&format!("ok{i:03}"), "pick up cup", &["cup"], true, 2, 1, 2));
        }
        for i in 0..n_fail {
            v.push(demo(&format!("bad{i:03}"), "pick up cup", &["cup"], false, 2, 1, 2));
        }
        DemonstrationSet::new(v, vec![]).unwrap()
    }

    #[test]
    fn seventy_thirty_per_stratum() {
        let s = set(70, 30);
        let split = stratified_split(&s, 0.7, 4).unwrap();
        assert_eq!(split.train.len(), 70);
        assert_eq!(split.val.len(), 30);
        let val_fail = split.val.iter().filter(|id| id.starts_with("bad")).count();
        assert_eq!(val_fail, 9);
        assert_eq!(split, stratified_split(&s, 0.7, 4).unwrap());
        assert_ne!(split, stratified_split(&s, 0.7, 5).unwrap());
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let split = stratified_split(&set(5, 3), 0.7, 1).unwrap();
        let p = dir.path().join("split.json");
        split.save(&p).unwrap();
        assert_eq!(Split::load(&p).unwrap(), split);
    }
}
