//! Append-only training log, mirrored to line-delimited JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordEntry {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        condition: f64,
        consistency: f64,
        total: f64,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        phase_accuracy: Option<f64>,
        anomaly_f1: Option<f64>,
        improved: bool,
        wall_seconds: f64,
    },
    /// Written before a numeric failure stops the run.
    Abort {
        epoch: usize,
        step: usize,
        demo_ids: Vec<String>,
        message: String,
    },
}

#[derive(Debug)]
pub struct TrainRecord {
    pub entries: Vec<RecordEntry>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl TrainRecord {
    pub fn in_memory() -> Self {
        TrainRecord { entries: Vec::new(), sink: None }
    }

    /// Truncates `path` and appends every pushed entry to it.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TrainRecord {
            entries: Vec::new(),
            sink: Some((path, BufWriter::new(file))),
        })
    }

    pub fn push(&mut self, entry: RecordEntry) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            let line = serde_json::to_string(&entry).expect("record entry serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn steps(&self) -> impl Iterator<Item = &RecordEntry> {
        self.entries.iter().filter(|e| matches!(e, RecordEntry::Step { .. }))
    }

    pub fn epochs(&self) -> impl Iterator<Item = &RecordEntry> {
        self.entries.iter().filter(|e| matches!(e, RecordEntry::Epoch { .. }))
    }

    /// Parse a line-delimited record written by [`TrainRecord::create`].
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<RecordEntry>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
