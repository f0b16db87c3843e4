//! Demonstrations, per-frame phase labels, and training-triplet construction.

mod augment;
mod manifest;
mod negatives;
mod paraphrase;
mod split;

pub use augment::{cross_action_augment, AugmentationRule, Augmenter, Direction};
pub use manifest::{load_manifest, parse_manifest, write_manifest};
pub use negatives::{pick_negative, DistinctAction, NegativeFilter};
pub use paraphrase::{sample_paraphrase, ParaphraseBank};
pub use split::{stratified_split, Split};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path-like handle to one frame: an image, a symbolic scene file, or a
/// precomputed feature file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameRef(pub String);

impl FrameRef {
    pub fn new(s: impl Into<String>) -> Self {
        FrameRef(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The three phase classes. The discriminant is the class index used by the
/// losses and the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    Precondition = 0,
    Effect = 1,
    Unsatisfied = 2,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 3] = [
        PhaseLabel::Precondition,
        PhaseLabel::Effect,
        PhaseLabel::Unsatisfied,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut y = [0.0; 3];
        y[self.index()] = 1.0;
        y
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseLabel::Precondition => "precondition",
            PhaseLabel::Effect => "effect",
            PhaseLabel::Unsatisfied => "unsatisfied",
        })
    }
}

/// Half-open frame-index interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<[usize; 2]> for Interval {
    fn from(v: [usize; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [usize; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub pre: Interval,
    pub core: Interval,
    pub post: Interval,
}

/// Which segment a frame falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Pre,
    Core,
    Post,
}

impl Segments {
    pub fn segment_of(&self, frame: usize) -> Option<Segment> {
        if self.pre.contains(frame) {
            Some(Segment::Pre)
        } else if self.core.contains(frame) {
            Some(Segment::Core)
        } else if self.post.contains(frame) {
            Some(Segment::Post)
        } else {
            None
        }
    }
}

/// One recorded execution of one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub frames: Vec<FrameRef>,
    pub action_text: String,
    pub object_slots: Vec<String>,
    pub success: bool,
    pub segments: Segments,
    pub camera_id: String,
    /// Annotated anomaly that does not show up in the success flag.
    #[serde(default)]
    pub anomaly: bool,
}

impl Demonstration {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Ground truth for the offline anomaly-detection task.
    pub fn is_anomalous(&self) -> bool {
        !self.success || self.anomaly
    }

    pub fn canonical_action(&self) -> String {
        canonical_text(&self.action_text)
    }

    pub fn template(&self) -> String {
        action_template(&self.action_text, &self.object_slots)
    }

    pub fn action(&self) -> ActionSpec {
        ActionSpec {
            text: self.canonical_action(),
            slots: self.object_slots.iter().map(|s| canonical_text(s)).collect(),
        }
    }

    /// Check the segment and text invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Validation {
                id: self.id.clone(),
                message,
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id".into());
        }
        if self.action_text.trim().is_empty() {
            return fail("empty action_text".into());
        }
        let Segments { pre, core, post } = self.segments;
        for (name, iv) in [("pre", pre), ("core", core), ("post", post)] {
            if iv.start > iv.end {
                return fail(format!("{name} interval {iv} is reversed"));
            }
        }
        if pre.start != 0 {
            return fail(format!("pre interval {pre} does not start at frame 0"));
        }
        for ((a_name, a), (b_name, b)) in [(("pre", pre), ("core", core)), (("core", core), ("post", post))] {
            if a.end > b.start {
                return fail(format!("{a_name} {a} overlaps {b_name} {b}"));
            }
            if a.end < b.start {
                return fail(format!("gap between {a_name} {a} and {b_name} {b}"));
            }
        }
        if post.end != self.frames.len() {
            return fail(format!(
                "segments cover [0,{}) but the demonstration has {} frames",
                post.end,
                self.frames.len()
            ));
        }
        if self.success && post.is_empty() {
            return fail("successful demonstration has an empty post segment".into());
        }
        Ok(())
    }
}

/// A canonical action text with its object bindings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionSpec {
    pub text: String,
    pub slots: Vec<String>,
}

/// Validated demonstrations (sorted by id) plus the dataset's augmentation rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub demos: Vec<Demonstration>,
    pub rules: Vec<AugmentationRule>,
}

impl DemonstrationSet {
    pub fn new(mut demos: Vec<Demonstration>, rules: Vec<AugmentationRule>) -> Result<Self> {
        demos.sort_by(|a, b| a.id.cmp(&b.id));
        for w in demos.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Validation {
                    id: w[0].id.clone(),
                    message: "duplicate demonstration id".into(),
                });
            }
        }
        for d in &demos {
            d.validate()?;
        }
        Ok(DemonstrationSet { demos, rules })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Demonstration> {
        self.demos.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demos
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.demos[i])
    }

    /// Subset by ids, keeping the rules.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut demos = Vec::with_capacity(ids.len());
        for id in ids {
            let d = self
                .get(id.as_ref())
                .ok_or_else(|| Error::Input(format!("unknown demonstration id `{}`", id.as_ref())))?;
            demos.push(d.clone());
        }
        DemonstrationSet::new(demos, self.rules.clone())
    }

    /// Distinct actions, ordered by canonical text.
    pub fn actions(&self) -> Vec<ActionSpec> {
        let mut map = BTreeMap::new();
        for d in &self.demos {
            let a = d.action();
            map.entry(a.text.clone()).or_insert(a);
        }
        map.into_values().collect()
    }

    pub fn templates(&self) -> Vec<String> {
        let mut t: Vec<String> = self.demos.iter().map(|d| d.template()).collect();
        t.sort();
        t.dedup();
        t
    }
}

/// Lowercase, whitespace-normalized form used for action matching.
pub fn canonical_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            if is_placeholder(w) {
                w.to_uppercase()
            } else {
                w.to_lowercase()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `O1`, `O2`, ... slot placeholders in action templates.
pub fn is_placeholder(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some('O') | Some('o'))
        && word.len() > 1
        && chars.all(|c| c.is_ascii_digit())
}

/// Replace each object slot in `action_text` by its placeholder (`O1`, `O2`, ...).
///
/// `("pour bottle into cup", ["bottle", "cup"])` gives `"pour O1 into O2"`.
pub fn action_template(action_text: &str, slots: &[String]) -> String {
    let mut words: Vec<String> = canonical_text(action_text)
        .split(' ')
        .map(str::to_string)
        .collect();
    // Longer names first so "juice bottle" wins over "bottle".
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(slots[i].split_whitespace().count()));
    for i in order {
        let name: Vec<String> = canonical_text(&slots[i])
            .split(' ')
            .map(str::to_string)
            .collect();
        if name.is_empty() || name[0].is_empty() {
            continue;
        }
        let placeholder = format!("O{}", i + 1);
        let mut j = 0;
        while j + name.len() <= words.len() {
            if words[j..j + name.len()] == name[..] {
                words.splice(j..j + name.len(), std::iter::once(placeholder.clone()));
            }
            j += 1;
        }
    }
    words.join(" ")
}

/// Label of one frame with respect to a queried action.
pub fn phase_label(demo: &Demonstration, frame_index: usize, queried_action: &str) -> Result<PhaseLabel> {
    let segment = demo.segments.segment_of(frame_index).ok_or(Error::Bounds {
        index: frame_index,
        len: demo.frame_count(),
    })?;
    if canonical_text(queried_action) != demo.canonical_action() {
        return Ok(PhaseLabel::Unsatisfied);
    }
    Ok(match segment {
        Segment::Pre => PhaseLabel::Precondition,
        Segment::Core => PhaseLabel::Unsatisfied,
        Segment::Post if demo.success => PhaseLabel::Effect,
        Segment::Post => PhaseLabel::Unsatisfied,
    })
}

/// Training unit for the condition and consistency objectives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionTriplet {
    pub pre_frame: FrameRef,
    pub effect_frame: FrameRef,
    pub action_text: String,
    pub paraphrased_text: String,
    pub indicator: bool,
    pub source_demo_id: String,
    /// Demonstration that contributed a substituted frame, if augmented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitute_demo_id: Option<String>,
}

/// Every (pre frame, post frame) pairing of one demonstration.
pub fn build_triplets(demo: &Demonstration) -> Vec<ConditionTriplet> {
    let Segments { pre, post, .. } = demo.segments;
    let mut out = Vec::with_capacity(pre.len() * post.len());
    for i in pre.iter() {
        for j in post.iter() {
            out.push(ConditionTriplet {
                pre_frame: demo.frames[i].clone(),
                effect_frame: demo.frames[j].clone(),
                action_text: demo.action_text.clone(),
                paraphrased_text: demo.action_text.clone(),
                indicator: demo.success,
                source_demo_id: demo.id.clone(),
                substitute_demo_id: None,
            });
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn demo(id: &str, action: &str, slots: &[&str], success: bool, pre: usize, core: usize, post: usize) -> Demonstration {
        let n = pre + core + post;
        Demonstration {
            id: id.into(),
            frames: (0..n).map(|i| FrameRef(format!("{id}/{i:06}.json"))).collect(),
            action_text: action.into(),
            object_slots: slots.iter().map(|s| s.to_string()).collect(),
            success,
            segments: Segments {
                pre: Interval::new(0, pre),
                core: Interval::new(pre, pre + core),
                post: Interval::new(pre + core, n),
            },
            camera_id: "cam0".into(),
            anomaly: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::demo;
    use super::*;

    #[test]
    fn labels_follow_segments_for_matching_action() {
        let d = demo("d", "pick up bottle", &["bottle"], true, 3, 2, 4);
        let labels: Vec<_> = (0..9).map(|i| phase_label(&d, i, "Pick  up bottle").unwrap()).collect();
        use PhaseLabel::*;
        assert_eq!(
            labels,
            vec![Precondition, Precondition, Precondition, Unsatisfied, Unsatisfied, Effect, Effect, Effect, Effect]
        );
    }

    #[test]
    fn failed_post_and_mismatched_query_are_unsatisfied() {
        let d = demo("d", "pour bottle into cup", &["bottle", "cup"], false, 2, 2, 3);
        assert_eq!(phase_label(&d, 5, "pour bottle into cup").unwrap(), PhaseLabel::Unsatisfied);
        assert_eq!(phase_label(&d, 0, "pour bottle into cup").unwrap(), PhaseLabel::Precondition);
        for i in 0..7 {
            assert_eq!(phase_label(&d, i, "wipe table").unwrap(), PhaseLabel::Unsatisfied);
        }
        assert!(matches!(phase_label(&d, 7, "wipe table"), Err(Error::Bounds { index: 7, len: 7 })));
    }

    #[test]
    fn triplet_counts() {
        let d = demo("d", "pick up cup", &["cup"], true, 3, 1, 2);
        let t = build_triplets(&d);
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|x| x.indicator));

        let f = demo("f", "pick up cup", &["cup"], false, 3, 1, 2);
        assert!(build_triplets(&f).iter().all(|x| !x.indicator));

        let e = demo("e", "pick up cup", &["cup"], false, 3, 1, 0);
        assert!(build_triplets(&e).is_empty());
    }

    #[test]
    fn validation_rejects_overlap_gap_and_empty_post() {
        let mut d = demo("d", "pick up cup", &["cup"], true, 5, 3, 2);
        d.segments.core = Interval::new(4, 8);
        let err = d.validate().unwrap_err().to_string();
        assert!(err.contains("overlaps") && err.contains("`d`"), "{err}");

        let mut g = demo("g", "pick up cup", &["cup"], true, 5, 3, 2);
        g.segments.core = Interval::new(6, 8);
        assert!(g.validate().unwrap_err().to_string().contains("gap"));

        let p = demo("p", "pick up cup", &["cup"], true, 5, 3, 0);
        assert!(p.validate().is_err());
        let p = demo("p", "pick up cup", &["cup"], false, 5, 3, 0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn templates() {
        assert_eq!(
            action_template("Pour bottle into cup", &["bottle".into(), "cup".into()]),
            "pour O1 into O2"
        );
        assert_eq!(
            action_template("pick up juice bottle", &["juice bottle".into()]),
            "pick up O1"
        );
        assert_eq!(action_template("wipe table", &["table".into()]), "wipe O1");
        assert_eq!(canonical_text("place o1 on  O2"), "place O1 on O2");
    }
}
