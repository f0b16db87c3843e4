//! Run configuration: defaults, config-file tables and `--set` overrides
//! merged into one resolved value.

use std::path::Path;

use anyhow::{bail, Context};
use condmon::encoders::{EncoderKind, EncoderSpec};
use condmon::monitor::MonitorConfig;
use condmon::net::NetConfig;
use condmon::synthworld::CorpusSpec;
use condmon::trainkit::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// Reject candidates whose precondition or effect holds in the frame's
    /// recorded world state. Frames without one get no negatives.
    World,
    /// Any action with a different description and no shared objects.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub grid_side: usize,
    pub native_text_dim: usize,
    pub working_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn spec(&self) -> condmon::Result<EncoderSpec> {
        EncoderSpec::new(self.kind, self.grid_side, self.native_text_dim, self.working_dim, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub bench_batches: usize,
    pub bench_actions: usize,
    pub negatives: NegativePolicy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub monitor: MonitorConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults sized for generated toy corpora.
    fn default() -> Self {
        let net = NetConfig {
            working_dim: 64,
            grid_side: 4,
            state_depth: 2,
            condition_depth: 2,
            heads: 4,
            mlp_ratio: 2.0,
            head_hidden: 64,
            ..NetConfig::default()
        };
        let train = TrainConfig {
            batch_demos: 16,
            peak_lr: 1e-3,
            triplets_per_demo: 4,
            ..TrainConfig::default()
        };
        RunConfig {
            encoder: EncoderConfig {
                kind: EncoderKind::Synthetic,
                grid_side: net.grid_side,
                native_text_dim: net.working_dim,
                working_dim: net.working_dim,
                seed: 7,
            },
            net,
            train,
            corpus: CorpusSpec::default(),
            split: SplitConfig { train_fraction: 0.7, seed: 0 },
            eval: EvalConfig {
                bench_batches: 1000,
                bench_actions: 6,
                negatives: NegativePolicy::World,
                seed: 0,
            },
            monitor: MonitorConfig::default(),
        }
    }
}

/// Parse `key.path=value`; the value is read as TOML and falls back to a
/// plain string.
fn parse_assignment(s: &str) -> anyhow::Result<(Vec<String>, toml::Value)> {
    let Some((key, raw)) = s.split_once('=') else {
        bail!("override `{s}` is not of the form key.path=value");
    };
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override `{s}` has an empty key segment");
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut toml::Value, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let toml::Value::Table(t) = cur else {
            bail!("`{}` is not a table", path[..i].join("."));
        };
        if i + 1 == path.len() {
            t.insert(seg.clone(), value);
            return Ok(());
        }
        cur = t.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, then the config file, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut value = toml::Value::try_from(RunConfig::default()).context("serializing defaults")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| condmon::Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            let table = match table.get("config") {
                Some(toml::Value::Table(inner)) if table.contains_key("command") => inner.clone(),
                _ => table,
            };
            merge(&mut value, toml::Value::Table(table));
        }
        for s in overrides {
            let (path, v) = parse_assignment(s)?;
            set_path(&mut value, &path, v)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| condmon::Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> condmon::Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.encoder.spec()?;
        if self.encoder.working_dim != self.net.working_dim || self.encoder.grid_side != self.net.grid_side {
            return Err(condmon::Error::Config(format!(
                "encoder produces {}x{} grids of width {} but the net expects {}x{} of width {}",
                self.encoder.grid_side, self.encoder.grid_side, self.encoder.working_dim, self.net.grid_side, self.net.grid_side, self.net.working_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.split.train_fraction) {
            return Err(condmon::Error::Config("split.train_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}
