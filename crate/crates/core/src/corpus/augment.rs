//! Cross-action state reuse between related demonstrations.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{build_triplets, canonical_text, is_placeholder, ConditionTriplet, Demonstration, DemonstrationSet};
use crate::error::{Error, Result};
use crate::rng::{Rng, Seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// A post frame of a `source` demonstration replaces the pre frame of a `target` triplet.
    PostAsPre,
    /// A pre frame of a `source` demonstration replaces the effect frame of a `target` triplet.
    PreAsPost,
}

/// Declares that states of `source` demonstrations can stand in for states of
/// `target` demonstrations. Placeholders shared by both templates must bind
/// to the same object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentationRule {
    pub source: String,
    pub target: String,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
struct Substitution {
    direction: Direction,
    sources: Vec<usize>,
}

fn bindings(d: &Demonstration) -> HashMap<String, String> {
    d.object_slots
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("O{}", i + 1), canonical_text(s)))
        .collect()
}

fn placeholders(template: &str) -> Vec<String> {
    template
        .split_whitespace()
        .filter(|w| is_placeholder(w))
        .map(|w| w.to_uppercase())
        .collect()
}

/// Precomputed substitution candidates for every demonstration of a set.
#[derive(Debug, Clone)]
pub struct Augmenter<'a> {
    set: &'a DemonstrationSet,
    probability: f64,
    options: HashMap<&'a str, Vec<Substitution>>,
}

impl<'a> Augmenter<'a> {
    pub fn new(set: &'a DemonstrationSet, rules: &[AugmentationRule], probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Config(format!("augmentation probability {probability} outside [0,1]")));
        }
        let known = set.templates();
        let templates: Vec<String> = set.iter().map(|d| d.template()).collect();
        let binds: Vec<_> = set.iter().map(bindings).collect();
        let mut options: HashMap<&str, Vec<Substitution>> = HashMap::new();
        for rule in rules {
            let source = canonical_text(&rule.source);
            let target = canonical_text(&rule.target);
            for t in [&source, &target] {
                if !known.contains(t) {
                    return Err(Error::Config(format!(
                        "augmentation rule references unknown template `{t}`"
                    )));
                }
            }
            let src_ph = placeholders(&source);
            let shared: Vec<String> = placeholders(&target)
                .into_iter()
                .filter(|p| src_ph.contains(p))
                .collect();
            for (ti, d) in set.iter().enumerate() {
                if templates[ti] != target {
                    continue;
                }
                if rule.direction == Direction::PreAsPost && !d.success {
                    continue;
                }
                let sources: Vec<usize> = set
                    .iter()
                    .enumerate()
                    .filter(|&(si, s)| {
                        si != ti
                            && templates[si] == source
                            && shared.iter().all(|p| binds[si].get(p) == binds[ti].get(p))
                            && match rule.direction {
                                Direction::PostAsPre => s.success && !s.segments.post.is_empty(),
                                Direction::PreAsPost => !s.segments.pre.is_empty(),
                            }
                    })
                    .map(|(si, _)| si)
                    .collect();
                if !sources.is_empty() {
                    options.entry(d.id.as_str()).or_default().push(Substitution {
                        direction: rule.direction,
                        sources,
                    });
                }
            }
        }
        Ok(Augmenter {
            set,
            probability,
            options,
        })
    }

    /// Whether triplets of `demo_id` have at least one substitution candidate.
    pub fn is_eligible(&self, demo_id: &str) -> bool {
        self.options.contains_key(demo_id)
    }

    /// With the configured probability, substitute one frame of an eligible
    /// triplet. Ineligible triplets come back unchanged and consume no randomness.
    pub fn augment(&self, triplet: &ConditionTriplet, rng: &mut Rng) -> ConditionTriplet {
        let Some(opts) = self.options.get(triplet.source_demo_id.as_str()) else {
            return triplet.clone();
        };
        if rng.random::<f64>() >= self.probability {
            return triplet.clone();
        }
        let opt = &opts[rng.random_range(0..opts.len())];
        let src = &self.set.demos[opt.sources[rng.random_range(0..opt.sources.len())]];
        let mut out = triplet.clone();
        match opt.direction {
            Direction::PostAsPre => {
                let iv = src.segments.post;
                out.pre_frame = src.frames[rng.random_range(iv.start..iv.end)].clone();
            }
            Direction::PreAsPost => {
                let iv = src.segments.pre;
                out.effect_frame = src.frames[rng.random_range(iv.start..iv.end)].clone();
            }
        }
        out.indicator = triplet.indicator && src.success;
        out.substitute_demo_id = Some(src.id.clone());
        out
    }
}

/// All triplets of `set`, each eligible one augmented with `probability`.
/// Randomness is forked per demonstration id.
pub fn cross_action_augment(
    set: &DemonstrationSet,
    rules: &[AugmentationRule],
    probability: f64,
    seed: Seed,
) -> Result<Vec<ConditionTriplet>> {
    let aug = Augmenter::new(set, rules, probability)?;
    let mut out = Vec::new();
    for d in set.iter() {
        let mut rng = seed.fork(&d.id).rng();
        out.extend(build_triplets(d).iter().map(|t| aug.augment(t, &mut rng)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::demo;

    fn rule(source: &str, target: &str, direction: Direction) -> AugmentationRule {
        AugmentationRule {
            source: source.into(),
            target: target.into(),
            direction,
        }
    }

    fn pair() -> DemonstrationSet {
        DemonstrationSet::new(
            vec![
                demo("place", "place cup on table", &["cup", "table"], true, 2, 1, 3),
                demo("pick", "pick up cup", &["cup"], true, 3, 1, 2),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn probability_zero_is_identity() {
        let set = pair();
        let rules = [rule("place O1 on O2", "pick up O1", Direction::PostAsPre)];
        let got = cross_action_augment(&set, &rules, 0.0, Seed(9)).unwrap();
        let plain: Vec<_> = set.iter().flat_map(build_triplets).collect();
        assert_eq!(got, plain);
    }

    #[test]
    fn probability_one_uses_place_post_frames() {
        let set = pair();
        let rules = [rule("place O1 on O2", "pick up O1", Direction::PostAsPre)];
        let got = cross_action_augment(&set, &rules, 1.0, Seed(9)).unwrap();
        let place = set.get("place").unwrap();
        let place_post: Vec<_> = place.segments.post.iter().map(|i| &place.frames[i]).collect();
        let pick: Vec<_> = got.iter().filter(|t| t.source_demo_id == "pick").collect();
        assert_eq!(pick.len(), 6);
        for t in pick {
            assert!(place_post.contains(&&t.pre_frame), "{t:?}");
            assert!(t.effect_frame.as_str().starts_with("pick/"));
            assert_eq!(t.substitute_demo_id.as_deref(), Some("place"));
            assert!(t.indicator);
        }
        for t in got.iter().filter(|t| t.source_demo_id == "place") {
            assert!(t.substitute_demo_id.is_none());
        }
    }

    #[test]
    fn failed_source_clears_indicator_and_bindings_must_agree() {
        let set = DemonstrationSet::new(
            vec![
                demo("place", "place cup on table", &["cup", "table"], true, 2, 1, 3),
                demo("pick", "pick up cup", &["cup"], true, 3, 1, 2),
                demo("pickmug", "pick up mug", &["mug"], true, 3, 1, 2),
                demo("pickpour", "pick up mug", &["mug"], false, 3, 1, 2),
            ],
            vec![],
        )
        .unwrap();
        let rules = [rule("pick up O1", "place O1 on O2", Direction::PreAsPost)];
        let aug = Augmenter::new(&set, &rules, 1.0).unwrap();
        assert!(aug.is_eligible("place"));
        let mut rng = Seed(0).rng();
        for t in build_triplets(set.get("place").unwrap()) {
            let a = aug.augment(&t, &mut rng);
            assert_eq!(a.substitute_demo_id.as_deref(), Some("pick"));
        }
    }

    #[test]
    fn unknown_template_is_config_error() {
        let set = pair();
        let rules = [rule("wipe O1", "pick up O1", Direction::PostAsPre)];
        assert!(matches!(
            cross_action_augment(&set, &rules, 0.5, Seed(0)),
            Err(Error::Config(m)) if m.contains("wipe O1")
        ));
    }

    #[test]
    fn half_probability_substitutes_about_half() {
        let mut demos = vec![demo("place", "place cup on table", &["cup", "table"], true, 2, 1, 3)];
        for i in 0..100 {
            demos.push(demo(&format!("pick{i:03}"), "pick up cup", &["cup"], true, 10, 1, 10));
        }
        let set = DemonstrationSet::new(demos, vec![]).unwrap();
        let rules = [rule("place O1 on O2", "pick up O1", Direction::PostAsPre)];
        let got = cross_action_augment(&set, &rules, 0.5, Seed(42)).unwrap();
        let eligible: Vec<_> = got.iter().filter(|t| t.source_demo_id != "place").collect();
        assert_eq!(eligible.len(), 10_000);
        let f = eligible.iter().filter(|t| t.substitute_demo_id.is_some()).count() as f64 / 1e4;
        assert!((0.48..=0.52).contains(&f), "{f}");
    }

    #[test]
    fn deterministic() {
        let set = pair();
        let rules = [rule("place O1 on O2", "pick up O1", Direction::PostAsPre)];
        let a = cross_action_augment(&set, &rules, 0.5, Seed(3)).unwrap();
        let b = cross_action_augment(&set, &rules, 0.5, Seed(3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
