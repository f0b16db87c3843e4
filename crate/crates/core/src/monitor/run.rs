//! The monitoring loop: one inference, one filter update and one tree tick
//! per incoming frame.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bt::{AnomalyRecord, BehaviorTree, Blackboard, Status};
use super::{decide, expected_phase, filter_update, ActivePhase, Expected, FilterState, FrameSource, SourceFrame};
use crate::corpus::PhaseLabel;
use crate::encoders::TextStore;
use crate::error::{Error, Result};
use crate::net::{softmax3, NetConfig, NetState};

/// Phase confidences for a frame under one or more action descriptions.
pub trait Predictor {
    /// One softmax triple per entry of `actions`.
    fn confidences(&self, frame: &SourceFrame, actions: &[&str]) -> Result<Vec<[f64; 3]>>;
}

/// Read-only inference with a trained network.
pub struct NetPredictor<'a> {
    pub net: &'a NetState,
    pub cfg: &'a NetConfig,
    pub text: &'a TextStore,
}

impl Predictor for NetPredictor<'_> {
    fn confidences(&self, frame: &SourceFrame, actions: &[&str]) -> Result<Vec<[f64; 3]>> {
        let grid = frame.grid.as_ref().ok_or_else(|| Error::Validation {
            id: format!("frame {}", frame.index),
            message: "frame source delivers no encoded grid".into(),
        })?;
        let sems = actions.iter().map(|a| self.text.encode(a)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = sems.iter().map(|s| s.as_ref()).collect();
        let logits = self.net.predict_all(self.cfg, &[grid.as_ref()], &refs)?;
        Ok(logits[0].iter().map(|l| softmax3(*l)).collect())
    }
}

/// Ground truth of the active skill delivered as a one-hot prediction.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn confidences(&self, frame: &SourceFrame, actions: &[&str]) -> Result<Vec<[f64; 3]>> {
        let truth = frame.truth.ok_or_else(|| Error::Validation {
            id: format!("frame {}", frame.index),
            message: "oracle prediction needs ground truth".into(),
        })?;
        let mut c = [0.0; 3];
        c[truth as usize] = 1.0;
        Ok(vec![c; actions.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Frames to keep observing after the tree finishes.
    pub idle_frames: usize,
    pub threshold: usize,
    /// Additional actions predicted on every frame for the log.
    pub log_actions: Vec<String>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            idle_frames: 5,
            threshold: super::FILTER_THRESHOLD,
            log_actions: Vec::new(),
        }
    }
}

/// Per-frame record of what the monitor saw and decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub frame: usize,
    pub action: Option<String>,
    pub phase: Option<ActivePhase>,
    pub run: Option<u64>,
    pub expected: Option<Expected>,
    pub predicted: Option<PhaseLabel>,
    pub confidences: Option<[f64; 3]>,
    pub truth: Option<PhaseLabel>,
    pub filter_count: usize,
    pub anomaly: bool,
    /// Confidences for `MonitorConfig::log_actions`, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(String, [f64; 3])>,
}

/// How a monitoring run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "end", rename_all = "snake_case")]
pub enum RunEnd {
    /// The tree finished and the idle budget ran out.
    Finished { frame: usize, status: Status },
    /// The stream ended while a skill was running.
    Truncated { frame: usize, action: String, phase: ActivePhase },
    /// The stream ended after the tree finished but before the idle budget.
    StreamEnded { frame: usize, status: Option<Status> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorLog {
    pub events: Vec<MonitorEvent>,
    pub end: RunEnd,
}

impl MonitorLog {
    /// Maximal runs of consecutive anomalous frames as `(first, last)`.
    pub fn anomaly_episodes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for e in self.events.iter().filter(|e| e.anomaly) {
            match out.last_mut() {
                Some((_, last)) if *last + 1 == e.frame => *last = e.frame,
                _ => out.push((e.frame, e.frame)),
            }
        }
        out
    }

    pub fn anomaly_frames(&self) -> Vec<usize> {
        self.events.iter().filter(|e| e.anomaly).map(|e| e.frame).collect()
    }

    /// Frames where a run of `action` enters its effect phase.
    pub fn effect_onsets(&self, action: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev: Option<(Option<u64>, Option<ActivePhase>)> = None;
        for e in &self.events {
            let now = (e.run, e.phase);
            if e.action.as_deref() == Some(action) && e.phase == Some(ActivePhase::Effect) && prev != Some(now) {
                out.push(e.frame);
            }
            prev = Some(now);
        }
        out
    }

    /// Line-delimited JSON: one event per line, then the end marker.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for e in &self.events {
            serde_json::to_writer(&mut w, e).map_err(|e| Error::io(path, e.into()))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        serde_json::to_writer(&mut w, &self.end).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = std::io::BufReader::new(f).lines().collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        };
        let Some((last, body)) = lines.split_last() else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: "empty event log".into(),
            });
        };
        let events = body
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
            .collect::<Result<_>>()?;
        let end = serde_json::from_str(last).map_err(|e| parse_err(lines.len(), e))?;
        Ok(MonitorLog { events, end })
    }
}

/// Drive `tree` against `source` until the stream ends or the tree has
/// finished and `idle_frames` more frames were observed.
pub fn run_monitor(tree: &mut BehaviorTree, predictor: &dyn Predictor, source: &mut dyn FrameSource, config: &MonitorConfig) -> Result<MonitorLog> {
    let mut bb = Blackboard::default();
    let mut filter = FilterState::new(config.threshold);
    let mut events = Vec::new();
    let mut idle = 0usize;
    let mut filter_run = None;
    tree.tick(&mut bb);
    loop {
        let active = bb.active.clone();
        if active.is_none() && idle >= config.idle_frames {
            let frame = events.len();
            return Ok(MonitorLog {
                events,
                end: RunEnd::Finished {
                    frame,
                    status: tree.finished().unwrap_or(Status::Failure),
                },
            });
        }
        let Some(frame) = source.next_frame(active.as_ref())? else {
            let at = events.len();
            let end = match active {
                Some(a) => RunEnd::Truncated {
                    frame: at,
                    action: a.action,
                    phase: a.phase,
                },
                None => RunEnd::StreamEnded {
                    frame: at,
                    status: tree.finished(),
                },
            };
            return Ok(MonitorLog { events, end });
        };
        let mut event = MonitorEvent {
            frame: frame.index,
            action: None,
            phase: None,
            run: None,
            expected: None,
            predicted: None,
            confidences: None,
            truth: frame.truth,
            filter_count: 0,
            anomaly: false,
            extra: Vec::new(),
        };
        let mut names: Vec<&str> = Vec::new();
        if let Some(a) = &active {
            names.push(&a.action);
        }
        names.extend(config.log_actions.iter().map(String::as_str));
        let conf = if names.is_empty() { Vec::new() } else { predictor.confidences(&frame, &names)? };
        let offset = usize::from(active.is_some());
        event.extra = config.log_actions.iter().cloned().zip(conf[offset.min(conf.len())..].iter().copied()).collect();
        match &active {
            Some(a) => {
                if filter_run != Some(a.run) {
                    filter.reset();
                    filter_run = Some(a.run);
                }
                let expected = expected_phase(a.phase);
                let predicted = decide(conf[0]);
                let (next, anomaly) = filter_update(filter, expected, predicted);
                filter = next;
                event.action = Some(a.action.clone());
                event.phase = Some(a.phase);
                event.run = Some(a.run);
                event.expected = Some(expected);
                event.predicted = Some(predicted);
                event.confidences = Some(conf[0]);
                event.filter_count = filter.consecutive_mismatch_count;
                event.anomaly = anomaly;
                if anomaly {
                    bb.post_anomaly(AnomalyRecord {
                        frame: frame.index,
                        skill: a.action.clone(),
                        run: a.run,
                    });
                }
            }
            None => {
                idle += 1;
                filter.reset();
                filter_run = None;
            }
        }
        events.push(event);
        tree.tick(&mut bb);
    }
}
