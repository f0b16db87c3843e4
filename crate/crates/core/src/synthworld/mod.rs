//! Symbolic tabletop world: objects on table cells, a gripper, liquid and
//! spills. Generates labeled demonstrations and live frame streams whose
//! frames render through the synthetic encoder.

mod closed_loop;
mod generate;
mod negatives;
mod raster;
mod script;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use closed_loop::ClosedLoopWorld;
pub use generate::{augmentation_rules, generate_corpus, paraphrase_bank, CorpusSpec, GeneratedCorpus};
pub use negatives::WorldNegativeFilter;
pub use raster::render_svg;
pub use script::{generate_demo, generate_episode, stream_frames, Episode, Event, ScenarioScript, ScriptAction, StreamFrame};

use crate::corpus::PhaseLabel;
use crate::encoders::{Attribute, FrameFile, Scene};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TABLE: &str = "table";
pub const CLOTH: &str = "cloth";
/// Movable objects in rendering order.
pub const OBJECTS: [&str; 5] = ["bottle", "juice", "cup", "mug", CLOTH];
/// Objects that start filled and can be poured from.
pub const SOURCES: [&str; 2] = ["bottle", "juice"];
/// Objects that can receive a pour.
pub const RECEIVERS: [&str; 2] = ["cup", "mug"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "at", content = "cell")]
pub enum Location {
    Table(usize),
    Gripper,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClothState {
    #[default]
    Clean,
    Dirty,
    InGripper,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<String, Location>,
    pub held_object: Option<String>,
    /// Containers holding liquid.
    pub filled: BTreeSet<String>,
    /// Object the gripper is manipulating mid-motion.
    #[serde(default)]
    pub engaged: Option<String>,
    pub spill: bool,
    pub cloth_state: ClothState,
    /// The cloth has soaked up a spill.
    #[serde(default)]
    pub cloth_soiled: bool,
}

impl WorldState {
    /// All objects on distinct cells, gripper empty, sources filled.
    pub fn tabletop(cells: &[usize]) -> Self {
        WorldState {
            objects: OBJECTS
                .iter()
                .zip(cells)
                .map(|(o, &c)| (o.to_string(), Location::Table(c)))
                .collect(),
            held_object: None,
            filled: SOURCES.iter().map(|s| s.to_string()).collect(),
            engaged: None,
            spill: false,
            cloth_state: ClothState::Clean,
            cloth_soiled: false,
        }
    }

    /// A random consistent state on `layout`.
    pub fn random(layout: &Layout, rng: &mut Rng) -> Self {
        let mut cells: Vec<usize> = (0..layout.cells()).collect();
        for i in 0..cells.len() {
            let j = rng.random_range(i..cells.len());
            cells.swap(i, j);
        }
        let mut s = WorldState::tabletop(&cells);
        s.filled.clear();
        for o in SOURCES {
            if rng.random::<f64>() < 0.8 {
                s.filled.insert(o.into());
            }
        }
        for o in RECEIVERS {
            if rng.random::<f64>() < 0.2 {
                s.filled.insert(o.into());
            }
        }
        if rng.random::<f64>() < 0.4 {
            let o = *OBJECTS.choose(rng).expect("objects");
            s.objects.insert(o.into(), Location::Gripper);
            s.held_object = Some(o.into());
            if o == CLOTH {
                s.cloth_state = ClothState::InGripper;
            }
        }
        s.spill = rng.random::<f64>() < 0.25;
        s
    }

    pub fn location(&self, object: &str) -> Option<Location> {
        self.objects.get(object).copied()
    }

    pub fn on_table(&self, object: &str) -> bool {
        matches!(self.location(object), Some(Location::Table(_)))
    }

    pub fn holds(&self, object: &str) -> bool {
        self.held_object.as_deref() == Some(object)
    }

    pub fn is_filled(&self, object: &str) -> bool {
        self.filled.contains(object)
    }

    pub fn free_cells(&self, layout: &Layout) -> Vec<usize> {
        let used: BTreeSet<usize> = self
            .objects
            .values()
            .filter_map(|l| match l {
                Location::Table(c) => Some(*c),
                _ => None,
            })
            .collect();
        (0..layout.cells()).filter(|c| !used.contains(c)).collect()
    }

    /// At most one held object, matching locations, unique cells in range.
    pub fn validate(&self, layout: &Layout) -> Result<()> {
        let bad = |m: String| Err(Error::Validation { id: "world".into(), message: m });
        let held: Vec<&String> = self.objects.iter().filter(|(_, l)| **l == Location::Gripper).map(|(o, _)| o).collect();
        if held.len() > 1 {
            return bad(format!("{} objects in the gripper", held.len()));
        }
        if held.first().map(|s| s.as_str()) != self.held_object.as_deref() {
            return bad("held_object disagrees with object locations".into());
        }
        let mut seen = BTreeSet::new();
        for (o, l) in &self.objects {
            if let Location::Table(c) = l {
                if *c >= layout.cells() {
                    return bad(format!("`{o}` on cell {c} of {}", layout.cells()));
                }
                if !seen.insert(*c) {
                    return bad(format!("cell {c} holds two objects"));
                }
            }
        }
        if (self.cloth_state == ClothState::InGripper) != self.holds(CLOTH) {
            return bad("cloth state disagrees with the gripper".into());
        }
        Ok(())
    }

    fn drop_held(&mut self) -> Option<String> {
        let o = self.held_object.take()?;
        if o == CLOTH {
            self.cloth_state = if self.cloth_soiled { ClothState::Dirty } else { ClothState::Clean };
        }
        Some(o)
    }

    /// Take `object` out of the scene.
    pub fn remove(&mut self, object: &str) {
        if self.holds(object) {
            self.drop_held();
        }
        if let Some(l) = self.objects.get_mut(object) {
            *l = Location::Removed;
        }
        if self.engaged.as_deref() == Some(object) {
            self.engaged = None;
        }
    }

    /// Liquid leaves `source` onto the table.
    pub fn spill_from(&mut self, source: Option<&str>) {
        if let Some(s) = source {
            self.filled.remove(s);
        }
        self.spill = true;
    }
}

/// Patch assignment: the first `cells` patches are table cells, followed by
/// the gripper, spill and motion patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub grid_side: usize,
}

impl Layout {
    pub fn new(grid_side: usize) -> Result<Self> {
        let l = Layout { grid_side };
        if grid_side * grid_side < OBJECTS.len() + 3 {
            return Err(Error::Config(format!(
                "grid side {grid_side} leaves no room for {} objects",
                OBJECTS.len()
            )));
        }
        Ok(l)
    }

    pub fn patches(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn cells(&self) -> usize {
        self.patches() - 3
    }

    pub fn gripper(&self) -> usize {
        self.patches() - 3
    }

    pub fn spill(&self) -> usize {
        self.patches() - 2
    }

    pub fn motion(&self) -> usize {
        self.patches() - 1
    }
}

/// Rendering knobs for frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub noise_scale: f64,
    /// Attribute strengths are drawn from `1 ± jitter`.
    pub jitter: f64,
    /// Strength of the distractor painted on a random cell.
    pub distractor: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            noise_scale: 0.3,
            jitter: 0.15,
            distractor: 0.5,
        }
    }
}

/// Scene attributes for `state`. `motion` is the core-phase progress in
/// `[0, 1]` when the gripper is moving.
pub fn render(state: &WorldState, layout: &Layout, style: &RenderStyle, motion: Option<f64>, noise_seed: u64, rng: &mut Rng) -> FrameFile {
    let mut attrs = Vec::new();
    let mut put = |key: &str, patch: usize, base: f64, rng: &mut Rng| {
        let j = if style.jitter > 0.0 { rng.random_range(-style.jitter..=style.jitter) } else { 0.0 };
        attrs.push(Attribute {
            key: key.to_string(),
            patch: Some(patch),
            strength: base * (1.0 + j),
        });
    };
    for (o, l) in &state.objects {
        let patch = match l {
            Location::Table(c) => *c,
            Location::Gripper => layout.gripper(),
            Location::Removed => continue,
        };
        put(&format!("obj:{o}"), patch, 1.0, rng);
        if state.is_filled(o) {
            put("filled", patch, 1.0, rng);
        }
        if o == CLOTH && state.cloth_soiled {
            put("dirty", patch, 1.0, rng);
        }
    }
    put(if state.held_object.is_some() { "grip:closed" } else { "grip:open" }, layout.gripper(), 1.0, rng);
    if state.spill {
        put("spill", layout.spill(), 1.5, rng);
    }
    if let Some(e) = &state.engaged {
        put("engaged", layout.gripper(), 1.0, rng);
        if let Some(Location::Table(c)) = state.location(e) {
            put("engaged", c, 0.7, rng);
        }
    }
    if let Some(p) = motion {
        put("motion", layout.motion(), 0.5 + p, rng);
    }
    if style.distractor > 0.0 {
        let c = rng.random_range(0..layout.cells());
        put("distractor", c, style.distractor, rng);
    }
    FrameFile {
        scene: Scene {
            noise_seed,
            noise_scale: style.noise_scale,
            attributes: attrs,
        },
        world: serde_json::to_value(state).expect("world state serializes"),
    }
}

/// One of the four action templates with its bound objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SymAction {
    PickUp(String),
    Place(String, String),
    Pour(String, String),
    Wipe(String),
}

impl TryFrom<String> for SymAction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        SymAction::parse(&s)
    }
}

impl From<SymAction> for String {
    fn from(a: SymAction) -> String {
        a.text()
    }
}

impl std::fmt::Display for SymAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text())
    }
}

fn known(o: &str) -> bool {
    OBJECTS.contains(&o)
}

impl SymAction {
    /// Parse `pick up O`, `place O1 on O2`, `pour O1 into O2` or `wipe O`.
    pub fn parse(text: &str) -> Result<Self> {
        let lower = text.to_lowercase();
        let w: Vec<&str> = lower.split_whitespace().collect();
        let a = match w.as_slice() {
            ["pick", "up", o] => SymAction::PickUp(o.to_string()),
            ["place", o, "on", s] => SymAction::Place(o.to_string(), s.to_string()),
            ["pour", o, "into", t] => SymAction::Pour(o.to_string(), t.to_string()),
            ["wipe", o] => SymAction::Wipe(o.to_string()),
            _ => return Err(Error::Input(format!("unknown action `{text}`"))),
        };
        let ok = match &a {
            SymAction::PickUp(o) => known(o),
            SymAction::Place(o, s) => known(o) && s == TABLE,
            SymAction::Pour(o, t) => SOURCES.contains(&o.as_str()) && RECEIVERS.contains(&t.as_str()),
            SymAction::Wipe(o) => o == TABLE,
        };
        if !ok {
            return Err(Error::Input(format!("action `{text}` names objects outside the world")));
        }
        Ok(a)
    }

    pub fn text(&self) -> String {
        match self {
            SymAction::PickUp(o) => format!("pick up {o}"),
            SymAction::Place(o, s) => format!("place {o} on {s}"),
            SymAction::Pour(o, t) => format!("pour {o} into {t}"),
            SymAction::Wipe(o) => format!("wipe {o}"),
        }
    }

    /// Object slots in template order.
    pub fn slots(&self) -> Vec<String> {
        match self {
            SymAction::PickUp(o) | SymAction::Wipe(o) => vec![o.clone()],
            SymAction::Place(a, b) | SymAction::Pour(a, b) => vec![a.clone(), b.clone()],
        }
    }

    /// Every action instance the world supports.
    pub fn vocabulary() -> Vec<SymAction> {
        let mut v = Vec::new();
        for o in OBJECTS {
            v.push(SymAction::PickUp(o.into()));
            v.push(SymAction::Place(o.into(), TABLE.into()));
        }
        for s in SOURCES {
            for t in RECEIVERS {
                v.push(SymAction::Pour(s.into(), t.into()));
            }
        }
        v.push(SymAction::Wipe(TABLE.into()));
        v
    }

    /// Object the gripper engages during the core motion.
    pub fn engaged_object(&self) -> &str {
        match self {
            SymAction::PickUp(o) | SymAction::Place(o, _) => o,
            SymAction::Pour(_, t) => t,
            SymAction::Wipe(o) => o,
        }
    }

    pub fn precondition(&self, s: &WorldState) -> bool {
        if s.engaged.is_some() {
            return false;
        }
        match self {
            SymAction::PickUp(o) => s.held_object.is_none() && s.on_table(o),
            SymAction::Place(o, _) => s.holds(o),
            SymAction::Pour(o, t) => s.holds(o) && s.is_filled(o) && s.on_table(t) && !s.is_filled(t),
            SymAction::Wipe(_) => s.holds(CLOTH) && s.spill,
        }
    }

    /// State predicate of the effect, without reference to the prior state.
    pub fn effect_state(&self, s: &WorldState) -> bool {
        if s.engaged.is_some() {
            return false;
        }
        match self {
            SymAction::PickUp(o) => s.holds(o),
            SymAction::Place(o, _) => s.held_object.is_none() && s.on_table(o),
            SymAction::Pour(o, t) => s.holds(o) && !s.is_filled(o) && s.on_table(t) && s.is_filled(t),
            SymAction::Wipe(_) => s.holds(CLOTH) && !s.spill,
        }
    }

    /// Effect relative to the state the action started from.
    pub fn effect(&self, before: &WorldState, after: &WorldState) -> bool {
        self.effect_state(after)
            && match self {
                SymAction::Wipe(_) => before.spill,
                SymAction::Pour(_, t) => !before.is_filled(t),
                _ => true,
            }
    }

    /// Nominal outcome of executing the action from `s`.
    pub fn apply(&self, s: &WorldState, layout: &Layout, rng: &mut Rng) -> WorldState {
        let mut n = s.clone();
        n.engaged = None;
        match self {
            SymAction::PickUp(o) => {
                n.objects.insert(o.clone(), Location::Gripper);
                n.held_object = Some(o.clone());
                if o == CLOTH {
                    n.cloth_state = ClothState::InGripper;
                }
            }
            SymAction::Place(o, _) => {
                let free = n.free_cells(layout);
                let c = *free.choose(rng).expect("a free cell exists when an object is held");
                n.drop_held();
                n.objects.insert(o.clone(), Location::Table(c));
            }
            SymAction::Pour(o, t) => {
                n.filled.remove(o);
                n.filled.insert(t.clone());
            }
            SymAction::Wipe(_) => {
                n.spill = false;
                n.cloth_soiled = true;
            }
        }
        n
    }
}

/// Symbolic phase of `after` for `action` started from `before`.
pub fn world_effect_oracle(before: &WorldState, action: &str, after: &WorldState) -> Result<PhaseLabel> {
    let a = SymAction::parse(action)?;
    Ok(if a.effect(before, after) {
        PhaseLabel::Effect
    } else if a.precondition(after) {
        PhaseLabel::Precondition
    } else {
        PhaseLabel::Unsatisfied
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn layout() -> Layout {
        Layout::new(4).unwrap()
    }

    #[test]
    fn pick_up_bottle_oracle_cases() {
        let before = WorldState::tabletop(&[0, 1, 2, 3, 4]);
        let after = SymAction::parse("pick up bottle").unwrap().apply(&before, &layout(), &mut Seed(1).rng());
        assert_eq!(world_effect_oracle(&before, "pick up bottle", &after).unwrap(), PhaseLabel::Effect);
        assert_eq!(world_effect_oracle(&before, "pick up bottle", &before).unwrap(), PhaseLabel::Precondition);
        let mut gone = before.clone();
        gone.spill_from(Some("bottle"));
        gone.remove("bottle");
        assert_eq!(world_effect_oracle(&before, "pick up bottle", &gone).unwrap(), PhaseLabel::Unsatisfied);
        assert!(matches!(world_effect_oracle(&before, "juggle bottle", &before), Err(Error::Input(_))));
    }

    #[test]
    fn vocabulary_round_trips_through_text() {
        let v = SymAction::vocabulary();
        assert_eq!(v.len(), 15);
        for a in v {
            assert_eq!(SymAction::parse(&a.text()).unwrap(), a);
        }
        assert!(SymAction::parse("pour cup into bottle").is_err());
        assert!(SymAction::parse("place cup on mug").is_err());
    }

    #[test]
    fn precondition_and_effect_are_exclusive() {
        let l = layout();
        let mut rng = Seed(9).rng();
        for _ in 0..500 {
            let s = WorldState::random(&l, &mut rng);
            s.validate(&l).unwrap();
            for a in SymAction::vocabulary() {
                assert!(!(a.precondition(&s) && a.effect_state(&s)), "{a} on {s:?}");
                if a.precondition(&s) {
                    let n = a.apply(&s, &l, &mut rng);
                    n.validate(&l).unwrap();
                    assert!(a.effect(&s, &n), "{a}");
                    assert!(!a.precondition(&n));
                }
            }
        }
    }

    #[test]
    fn place_post_state_is_pick_pre_state() {
        let l = layout();
        let mut rng = Seed(2).rng();
        let mut checked = 0;
        for _ in 0..500 {
            let s = WorldState::random(&l, &mut rng);
            for o in OBJECTS {
                let place = SymAction::Place(o.into(), TABLE.into());
                if place.precondition(&s) {
                    let n = place.apply(&s, &l, &mut rng);
                    assert!(SymAction::PickUp(o.into()).precondition(&n));
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn render_marks_held_objects_on_the_gripper_patch() {
        let l = layout();
        let s = SymAction::parse("pick up cup").unwrap().apply(&WorldState::tabletop(&[0, 1, 2, 3, 4]), &l, &mut Seed(1).rng());
        let f = render(&s, &l, &RenderStyle::default(), None, 7, &mut Seed(3).rng());
        let cup = f.scene.attributes.iter().find(|a| a.key == "obj:cup").unwrap();
        assert_eq!(cup.patch, Some(l.gripper()));
        assert!(f.scene.attributes.iter().any(|a| a.key == "grip:closed"));
        let back: WorldState = serde_json::from_value(f.world).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validation_rejects_shared_cells() {
        let s = WorldState::tabletop(&[0, 0, 2, 3, 4]);
        assert!(s.validate(&layout()).is_err());
        assert!(Layout::new(2).is_err());
    }
}
