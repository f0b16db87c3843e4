//! Random training corpora of successful and failed demonstrations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::script::{generate_episode, Episode, Event, ScenarioScript, ScriptAction};
use super::{Layout, RenderStyle, SymAction, WorldNegativeFilter, WorldState};
use crate::corpus::{write_manifest, AugmentationRule, DemonstrationSet, Direction, FrameRef, ParaphraseBank};
use crate::encoders::{encode_scene, EncoderSpec, FrameFile, MemoryStore};
use crate::error::{Error, Result};
use crate::rng::{Rng, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub successes: usize,
    pub failures: usize,
    pub seed: u64,
    pub grid_side: usize,
    pub style: RenderStyle,
    /// Actions per episode are drawn from `1..=max_actions`.
    pub max_actions: usize,
    /// Inclusive frame-count ranges.
    pub pre: (usize, usize),
    pub core: (usize, usize),
    pub post: (usize, usize),
    /// Post length of failed actions; at least the anomaly threshold plus margin.
    pub failure_post: (usize, usize),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            successes: 400,
            failures: 140,
            seed: 0,
            grid_side: 4,
            style: RenderStyle::default(),
            max_actions: 3,
            pre: (6, 10),
            core: (6, 10),
            post: (6, 10),
            failure_post: (10, 14),
        }
    }
}

/// Demonstrations plus every frame they reference.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub set: DemonstrationSet,
    pub episodes: Vec<Episode>,
    pub spec: CorpusSpec,
}

impl GeneratedCorpus {
    pub fn frames(&self) -> impl Iterator<Item = &(FrameRef, FrameFile)> {
        self.episodes.iter().flat_map(|e| e.frames.iter())
    }

    pub fn frame_count(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }

    /// Encode every frame into an in-memory store.
    pub fn encode(&self, spec: &EncoderSpec) -> Result<MemoryStore> {
        let mut store = MemoryStore::new();
        for (r, f) in self.frames() {
            store.insert(r.clone(), encode_scene(spec, &f.scene)?);
        }
        Ok(store)
    }

    /// Negative filter backed by the generated world states.
    pub fn negative_filter(&self) -> Result<WorldNegativeFilter> {
        let states = self
            .frames()
            .map(|(r, f)| {
                let s: WorldState = serde_json::from_value(f.world.clone()).map_err(|e| Error::Input(format!("frame `{r}`: {e}")))?;
                Ok((r.clone(), s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WorldNegativeFilter::from_states(states))
    }

    /// World state of one frame.
    pub fn world(&self, frame: &FrameRef) -> Option<WorldState> {
        self.frames()
            .find(|(r, _)| r == frame)
            .and_then(|(_, f)| serde_json::from_value(f.world.clone()).ok())
    }

    /// Write frames, `manifest.jsonl` and `paraphrases.json` under `dir`. The
    /// corpus must have been generated with `root` equal to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for e in &self.episodes {
            e.write_frames()?;
        }
        write_manifest(&self.set, dir.join("manifest.jsonl"))?;
        let p = dir.join("paraphrases.json");
        std::fs::write(&p, paraphrase_bank().to_json()).map_err(|e| Error::io(&p, e))
    }
}

/// Place and pick leave each other's states: a placed object is ready to be
/// picked, and a picked object is ready to be placed.
pub fn augmentation_rules() -> Vec<AugmentationRule> {
    let rule = |source: &str, target: &str, direction| AugmentationRule {
        source: source.into(),
        target: target.into(),
        direction,
    };
    vec![
        rule("place O1 on O2", "pick up O1", Direction::PostAsPre),
        rule("pick up O1", "place O1 on O2", Direction::PostAsPre),
        rule("pick up O1", "place O1 on O2", Direction::PreAsPost),
        rule("place O1 on O2", "pick up O1", Direction::PreAsPost),
    ]
}

/// Alternative phrasings for the world's templates and objects.
pub fn paraphrase_bank() -> ParaphraseBank {
    let list = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let actions: BTreeMap<String, Vec<String>> = [
        ("pick up O1", list(&["grab O1", "lift O1", "take O1", "pick O1 up"])),
        ("place O1 on O2", list(&["put O1 on O2", "set O1 down on O2", "put down O1 on O2"])),
        ("pour O1 into O2", list(&["pour O1 in O2", "fill O2 with O1", "empty O1 into O2"])),
        ("wipe O1", list(&["clean O1", "wipe up O1", "mop O1"])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let objects: BTreeMap<String, Vec<String>> = [
        ("bottle", list(&["flask", "water bottle"])),
        ("juice", list(&["juice box", "juice carton"])),
        ("cup", list(&["glass", "tumbler"])),
        ("mug", list(&["coffee mug", "tea mug"])),
        ("cloth", list(&["rag", "towel"])),
        ("table", list(&["tabletop", "counter"])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ParaphraseBank::new(actions, objects)
}

fn draw(range: (usize, usize), rng: &mut Rng) -> usize {
    rng.random_range(range.0..=range.1.max(range.0))
}

fn can_fail(a: &SymAction) -> bool {
    matches!(a, SymAction::PickUp(_) | SymAction::Place(..) | SymAction::Pour(..))
}

/// Verb of an action's template.
fn verb(a: &SymAction) -> String {
    a.text().split(' ').next().unwrap_or_default().to_string()
}

/// Draw random start states until one admits an action of `template`.
fn start_state(layout: &Layout, template: &str, rng: &mut Rng) -> WorldState {
    let mut s = WorldState::random(layout, rng);
    for _ in 0..START_STATE_TRIES {
        if SymAction::vocabulary().iter().any(|a| verb(a) == template && a.precondition(&s)) {
            break;
        }
        s = WorldState::random(layout, rng);
    }
    s
}

const START_STATE_TRIES: usize = 10_000;

const TEMPLATES: [&str; 4] = ["pick", "place", "pour", "wipe"];

/// Templates with a scripted failure mode.
const FAILURE_TEMPLATES: [&str; 3] = ["pick", "place", "pour"];

/// An admissible action of the `prefer` template when one exists, otherwise
/// uniform over templates first, then instances.
fn choose_action(state: &WorldState, failing: bool, prefer: Option<&str>, rng: &mut Rng) -> Option<SymAction> {
    let ok: Vec<SymAction> = SymAction::vocabulary()
        .into_iter()
        .filter(|a| a.precondition(state) && (!failing || can_fail(a)))
        .collect();
    let mut by_template: BTreeMap<String, Vec<SymAction>> = BTreeMap::new();
    for a in ok {
        by_template.entry(verb(&a)).or_default().push(a);
    }
    if let Some(g) = prefer.and_then(|t| by_template.get(t)) {
        return g.choose(rng).cloned();
    }
    let groups: Vec<&Vec<SymAction>> = by_template.values().collect();
    let g = groups.choose(rng)?;
    g.choose(rng).cloned()
}

/// Episodes until exactly `successes` successful and `failures` failed
/// demonstrations exist. A successful episode runs one to `max_actions`
/// actions and opens with a uniformly drawn template; a failed episode is one
/// failing action of a uniformly drawn template with a failure mode. Start
/// states are random states that admit the opening template. Frames are
/// referenced under `root`.
pub fn generate_corpus(spec: &CorpusSpec, root: &str) -> Result<GeneratedCorpus> {
    let layout = Layout::new(spec.grid_side)?;
    if spec.successes + spec.failures == 0 || spec.max_actions == 0 {
        return Err(Error::Config("corpus needs at least one demonstration".into()));
    }
    let (mut succ_left, mut fail_left) = (spec.successes, spec.failures);
    let mut episodes = Vec::new();
    let mut demos = Vec::new();
    let mut e = 0u64;
    while succ_left + fail_left > 0 {
        let mut rng = Seed(spec.seed).fork("episode").fork_index(e).rng();
        let id = format!("ep{e:05}");
        e += 1;
        let p_fail = fail_left as f64 / (succ_left + fail_left) as f64;
        let fail = fail_left > 0 && (succ_left == 0 || rng.random::<f64>() < p_fail);
        let templates: &[&str] = if fail { &FAILURE_TEMPLATES } else { &TEMPLATES };
        let template = *templates.choose(&mut rng).expect("templates");
        let initial = start_state(&layout, template, &mut rng);
        let mut state = initial.clone();
        let len = rng.random_range(1..=spec.max_actions);
        let n_success = if fail { 0 } else { len.min(succ_left) };
        let mut actions = Vec::new();
        for k in 0..=n_success {
            let failing = k == n_success;
            if failing && !fail {
                break;
            }
            let prefer = (k == 0).then_some(template);
            let Some(a) = choose_action(&state, failing, prefer, &mut rng) else { break };
            let post = draw(if failing { spec.failure_post } else { spec.post }, &mut rng);
            actions.push((
                ScriptAction {
                    action: a.clone(),
                    pre: draw(spec.pre, &mut rng),
                    core: draw(spec.core, &mut rng),
                    post,
                },
                failing,
            ));
            state = a.apply(&state, &layout, &mut rng);
        }
        if actions.is_empty() {
            continue;
        }
        let mut events = Vec::new();
        if let Some((last, true)) = actions.last() {
            let core_start: usize = actions[0].0.pre
                + actions[..actions.len() - 1].iter().map(|(a, _)| a.core + a.post).sum::<usize>();
            let offset = rng.random_range(1..last.core.max(2));
            let frame = core_start + offset.min(last.core - 1);
            events.push(match &last.action {
                SymAction::Pour(..) => Event::Spill { frame },
                a => Event::RemoveObject {
                    object: a.slots()[0].clone(),
                    frame,
                },
            });
        }
        let script = ScenarioScript {
            name: id.clone(),
            grid_side: spec.grid_side,
            initial: Some(initial),
            style: spec.style,
            actions: actions.iter().map(|(a, _)| a.clone()).collect(),
            events,
        };
        let ep = generate_episode(&script, Seed(spec.seed).fork("render").fork_index(e - 1).0, root, &id)?;
        for d in &ep.demos {
            if d.success {
                succ_left -= 1;
            } else {
                fail_left -= 1;
            }
        }
        demos.extend(ep.demos.iter().cloned());
        episodes.push(ep);
    }
    let set = DemonstrationSet::new(demos, augmentation_rules())?;
    Ok(GeneratedCorpus {
        set,
        episodes,
        spec: spec.clone(),
    })
}
