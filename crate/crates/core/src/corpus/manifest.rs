//! Line-delimited JSON manifest reader and writer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentationRule, Demonstration, DemonstrationSet, FrameRef, Interval, Segments};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Demonstration(DemoRecord),
    AugmentationRule(AugmentationRule),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRecord {
    id: String,
    action_text: String,
    #[serde(default)]
    object_slots: Vec<String>,
    success: bool,
    #[serde(default = "default_camera")]
    camera_id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    anomaly: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_ext: Option<String>,
    pre: Interval,
    core: Interval,
    post: Interval,
}

fn default_camera() -> String {
    "cam0".into()
}

fn resolve(base: &Path, rel: &str) -> FrameRef {
    let p = Path::new(rel);
    if p.is_absolute() || base.as_os_str().is_empty() {
        FrameRef(rel.to_string())
    } else {
        FrameRef(base.join(p).to_string_lossy().into_owned())
    }
}

impl DemoRecord {
    fn into_demo(self, base: &Path) -> std::result::Result<Demonstration, String> {
        let frames = match (self.frames, self.frame_dir) {
            (Some(_), Some(_)) => return Err("give either `frames` or `frame_dir`, not both".into()),
            (Some(list), None) => list.iter().map(|f| resolve(base, f)).collect(),
            (None, Some(dir)) => {
                let count = self
                    .frame_count
                    .unwrap_or(self.post.end);
                let start = self.frame_start.unwrap_or(0);
                let ext = self.frame_ext.as_deref().unwrap_or("json");
                (start..start + count)
                    .map(|i| resolve(base, &format!("{dir}/{i:06}.{ext}")))
                    .collect()
            }
            (None, None) => return Err("missing `frames` or `frame_dir`".into()),
        };
        Ok(Demonstration {
            id: self.id,
            frames,
            action_text: self.action_text,
            object_slots: self.object_slots,
            success: self.success,
            segments: Segments {
                pre: self.pre,
                core: self.core,
                post: self.post,
            },
            camera_id: self.camera_id,
            anomaly: self.anomaly,
        })
    }
}

/// Parse manifest text. Relative frame paths resolve against `base`.
pub fn parse_manifest(text: &str, origin: &str, base: &Path) -> Result<DemonstrationSet> {
    let mut demos = Vec::new();
    let mut rules = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        match record {
            Record::Demonstration(r) => {
                let id = r.id.clone();
                let demo = r
                    .into_demo(base)
                    .map_err(|m| parse_err(format!("record `{id}`: {m}")))?;
                demos.push(demo);
            }
            Record::AugmentationRule(rule) => rules.push(rule),
        }
    }
    DemonstrationSet::new(demos, rules)
}

/// Read and validate a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DemonstrationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, &path.display().to_string(), base)
}

/// Write `set` as a manifest at `path`, storing frame paths relative to the
/// manifest directory when possible.
pub fn write_manifest(set: &DemonstrationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = String::new();
    for d in &set.demos {
        let frames = d
            .frames
            .iter()
            .map(|f| {
                Path::new(f.as_str())
                    .strip_prefix(base)
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_else(|_| f.0.clone())
            })
            .collect();
        let rec = Record::Demonstration(DemoRecord {
            id: d.id.clone(),
            action_text: d.action_text.clone(),
            object_slots: d.object_slots.clone(),
            success: d.success,
            camera_id: d.camera_id.clone(),
            anomaly: d.anomaly,
            frames: Some(frames),
            frame_dir: None,
            frame_start: None,
            frame_count: None,
            frame_ext: None,
            pre: d.segments.pre,
            core: d.segments.core,
            post: d.segments.post,
        });
        out.push_str(&serde_json::to_string(&rec).expect("manifest record serializes"));
        out.push('\n');
    }
    for r in &set.rules {
        let rec = Record::AugmentationRule(r.clone());
        out.push_str(&serde_json::to_string(&rec).expect("rule serializes"));
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
