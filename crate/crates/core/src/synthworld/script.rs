//! Scenario scripts: timed action sequences with injected events, simulated
//! frame by frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{render, Layout, RenderStyle, SymAction, WorldState, OBJECTS};
use crate::corpus::{Demonstration, FrameRef, Interval, PhaseLabel, Segments};
use crate::encoders::FrameFile;
use crate::error::{Error, Result};
use crate::monitor::ActivePhase;
use crate::rng::{Rng, Seed};

/// One action with its phase durations in frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptAction {
    pub action: SymAction,
    pub pre: usize,
    pub core: usize,
    pub post: usize,
}

/// Disturbances injected into a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// The object disappears from the scene at `frame`.
    RemoveObject { object: String, frame: usize },
    /// Liquid spills at `frame`; during a pour the source empties onto the table.
    Spill { frame: usize },
    /// The `attempt`-th pick (1-based) is pushed away before grasping.
    GraspFailure { attempt: usize },
}

fn default_grid_side() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default = "default_grid_side")]
    pub grid_side: usize,
    /// Defaults to every object on the table, spread over the cells.
    #[serde(default)]
    pub initial: Option<WorldState>,
    #[serde(default)]
    pub style: RenderStyle,
    pub actions: Vec<ScriptAction>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl ScenarioScript {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let s: ScenarioScript = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.grid_side)
    }

    pub fn initial_state(&self) -> Result<WorldState> {
        if let Some(s) = &self.initial {
            return Ok(s.clone());
        }
        let cells = self.layout()?.cells();
        let spread: Vec<usize> = (0..OBJECTS.len()).map(|i| i * cells / OBJECTS.len()).collect();
        Ok(WorldState::tabletop(&spread))
    }

    /// Frames played by [`stream_frames`]: every phase of every action.
    pub fn stream_len(&self) -> usize {
        self.actions.iter().map(|a| a.pre + a.core + a.post).sum()
    }

    /// Frames produced by [`generate_episode`], where each post block is
    /// also the next action's pre block.
    pub fn episode_len(&self) -> usize {
        self.actions
            .iter()
            .enumerate()
            .map(|(k, a)| if k == 0 { a.pre } else { 0 } + a.core + a.post)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::Validation {
                id: self.name.clone(),
                message: m,
            })
        };
        let layout = self.layout()?;
        let initial = self.initial_state()?;
        initial.validate(&layout).map_err(|e| Error::Validation {
            id: self.name.clone(),
            message: format!("initial state: {e}"),
        })?;
        if self.actions.is_empty() {
            return bad("script has no actions".into());
        }
        for (k, a) in self.actions.iter().enumerate() {
            if a.pre == 0 || a.core == 0 || a.post == 0 {
                return bad(format!("action {k} `{}` has a zero-length phase", a.action));
            }
            for o in a.action.slots() {
                if o != super::TABLE && !matches!(initial.location(&o), Some(super::Location::Table(_)) | Some(super::Location::Gripper)) {
                    return bad(format!("action {k} `{}` references absent object `{o}`", a.action));
                }
            }
        }
        let len = self.stream_len();
        for e in &self.events {
            match e {
                Event::RemoveObject { object, frame } => {
                    if initial.location(object).is_none() {
                        return bad(format!("event removes unknown object `{object}`"));
                    }
                    if *frame >= len {
                        return bad(format!("event frame {frame} beyond script length {len}"));
                    }
                }
                Event::Spill { frame } if *frame >= len => {
                    return bad(format!("event frame {frame} beyond script length {len}"));
                }
                Event::GraspFailure { attempt: 0 } => return bad("grasp attempts count from 1".into()),
                _ => {}
            }
        }
        Ok(())
    }
}

struct Running {
    action: SymAction,
    start: WorldState,
    grasp_fails: bool,
    disrupted: bool,
}

/// Frame-by-frame world simulation shared by scripted and closed-loop runs.
pub(crate) struct Simulator {
    pub layout: Layout,
    pub style: RenderStyle,
    pub state: WorldState,
    events: Vec<Event>,
    rng: Rng,
    noise_base: u64,
    frames: u64,
    pick_attempts: usize,
    running: Option<Running>,
}

impl Simulator {
    pub fn new(layout: Layout, style: RenderStyle, state: WorldState, events: Vec<Event>, seed: Seed) -> Self {
        Simulator {
            layout,
            style,
            state,
            events,
            rng: seed.fork("simulation").rng(),
            noise_base: seed.fork("noise").0,
            frames: 0,
            pick_attempts: 0,
            running: None,
        }
    }

    /// Start of an action's pre phase.
    pub fn begin(&mut self, action: &SymAction) {
        let mut grasp_fails = false;
        if matches!(action, SymAction::PickUp(_)) {
            self.pick_attempts += 1;
            let k = self.pick_attempts;
            grasp_fails = self.events.iter().any(|e| *e == Event::GraspFailure { attempt: k });
        }
        self.running = Some(Running {
            action: action.clone(),
            start: self.state.clone(),
            grasp_fails,
            disrupted: false,
        });
    }

    pub fn enter_core(&mut self) {
        let Some(r) = &mut self.running else { return };
        if !r.action.precondition(&self.state) {
            r.disrupted = true;
        }
        if !r.grasp_fails && !r.disrupted {
            self.state.engaged = Some(r.action.engaged_object().to_string());
        }
    }

    /// End of the core motion; applies the nominal effect unless an event
    /// intervened. Returns whether the effect now holds.
    pub fn finish_core(&mut self) -> bool {
        let Some(r) = &self.running else { return false };
        self.state.engaged = None;
        if !r.grasp_fails && !r.disrupted {
            self.state = r.action.apply(&self.state, &self.layout, &mut self.rng);
        }
        r.action.effect(&r.start, &self.state)
    }

    pub fn pick_attempts(&self) -> usize {
        self.pick_attempts
    }

    fn apply_events(&mut self, frame: usize) {
        for e in self.events.clone() {
            match e {
                Event::RemoveObject { object, frame: f } if f == frame => {
                    self.state.remove(&object);
                    if let Some(r) = &mut self.running {
                        if r.action.slots().contains(&object) {
                            r.disrupted = true;
                        }
                    }
                }
                Event::Spill { frame: f } if f == frame => {
                    let mut source = None;
                    if let Some(r) = &mut self.running {
                        if let SymAction::Pour(o, _) = &r.action {
                            if self.state.engaged.is_some() {
                                source = Some(o.clone());
                                r.disrupted = true;
                            }
                        }
                    }
                    self.state.spill_from(source.as_deref());
                }
                _ => {}
            }
        }
    }

    /// Apply events due at `frame`, then render the current state.
    pub fn frame(&mut self, frame: usize, motion: Option<f64>) -> FrameFile {
        self.apply_events(frame);
        let seed = self.noise_base.wrapping_add(self.frames);
        self.frames += 1;
        render(&self.state, &self.layout, &self.style, motion, seed, &mut self.rng)
    }

    /// Ground truth for the running action.
    pub fn truth(&self) -> Option<PhaseLabel> {
        let r = self.running.as_ref()?;
        let a = &r.action;
        Some(if a.effect(&r.start, &self.state) {
            PhaseLabel::Effect
        } else if a.precondition(&self.state) {
            PhaseLabel::Precondition
        } else {
            PhaseLabel::Unsatisfied
        })
    }
}

/// One frame of a scripted stream with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub index: usize,
    pub frame: FrameFile,
    /// Index into the script's actions.
    pub action: usize,
    pub phase: ActivePhase,
    /// Oracle phase of the world for the active action.
    pub truth: PhaseLabel,
}

/// Play every phase of every action in order.
pub fn stream_frames(script: &ScenarioScript, seed: u64) -> Result<Vec<StreamFrame>> {
    script.validate()?;
    let mut sim = Simulator::new(script.layout()?, script.style, script.initial_state()?, script.events.clone(), Seed(seed));
    let mut out = Vec::with_capacity(script.stream_len());
    for (k, a) in script.actions.iter().enumerate() {
        sim.begin(&a.action);
        for (phase, n) in [(ActivePhase::Pre, a.pre), (ActivePhase::Core, a.core), (ActivePhase::Effect, a.post)] {
            if phase == ActivePhase::Core {
                sim.enter_core();
            }
            for i in 0..n {
                let index = out.len();
                let motion = (phase == ActivePhase::Core).then(|| i as f64 / n as f64);
                let frame = sim.frame(index, motion);
                out.push(StreamFrame {
                    index,
                    frame,
                    action: k,
                    phase,
                    truth: sim.truth().expect("an action is running"),
                });
            }
            if phase == ActivePhase::Core {
                sim.finish_core();
            }
        }
    }
    Ok(out)
}

/// Demonstrations of one episode plus the frame files they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub demos: Vec<Demonstration>,
    pub frames: Vec<(FrameRef, FrameFile)>,
}

impl Episode {
    /// Write each frame file to its reference path.
    pub fn write_frames(&self) -> Result<()> {
        for (r, f) in &self.frames {
            let path = Path::new(r.as_str());
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let text = serde_json::to_string(f).expect("frame serializes");
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Simulate the script and cut it into one demonstration per action. Each
/// action's post block doubles as the next action's pre block, so `pre` is
/// only used for the first action. Frames are referenced as
/// `{root}/{id}/{index:06}.json`.
pub fn generate_episode(script: &ScenarioScript, seed: u64, root: &str, id: &str) -> Result<Episode> {
    script.validate()?;
    let mut sim = Simulator::new(script.layout()?, script.style, script.initial_state()?, script.events.clone(), Seed(seed));
    let mut frames: Vec<(FrameRef, FrameFile)> = Vec::with_capacity(script.episode_len());
    let push = |sim: &mut Simulator, frames: &mut Vec<(FrameRef, FrameFile)>, motion: Option<f64>| {
        let i = frames.len();
        let f = sim.frame(i, motion);
        frames.push((FrameRef(format!("{root}/{id}/{i:06}.json")), f));
    };
    let mut demos = Vec::new();
    let mut pre_block = Interval::new(0, 0);
    for (k, a) in script.actions.iter().enumerate() {
        sim.begin(&a.action);
        if k == 0 {
            for _ in 0..a.pre {
                push(&mut sim, &mut frames, None);
            }
            pre_block = Interval::new(0, a.pre);
        }
        sim.enter_core();
        let core_start = frames.len();
        for i in 0..a.core {
            push(&mut sim, &mut frames, Some(i as f64 / a.core as f64));
        }
        let success = sim.finish_core();
        let post_start = frames.len();
        for _ in 0..a.post {
            push(&mut sim, &mut frames, None);
        }
        let post_block = Interval::new(post_start, frames.len());
        let offset = pre_block.start;
        let shift = |iv: Interval| Interval::new(iv.start - offset, iv.end - offset);
        demos.push(Demonstration {
            id: format!("{id}-{k}"),
            frames: frames[offset..post_block.end].iter().map(|(r, _)| r.clone()).collect(),
            action_text: a.action.text(),
            object_slots: a.action.slots(),
            success,
            segments: Segments {
                pre: shift(pre_block),
                core: shift(Interval::new(core_start, post_start)),
                post: shift(post_block),
            },
            camera_id: "cam0".into(),
            anomaly: false,
        });
        pre_block = post_block;
    }
    for d in &demos {
        d.validate()?;
    }
    Ok(Episode {
        id: id.to_string(),
        demos,
        frames,
    })
}

/// A single-action script as one demonstration and its frames.
pub fn generate_demo(script: &ScenarioScript, seed: u64, root: &str) -> Result<Episode> {
    if script.actions.len() != 1 {
        return Err(Error::Validation {
            id: script.name.clone(),
            message: format!("expected one action, found {}", script.actions.len()),
        });
    }
    generate_episode(script, seed, root, &script.name)
}
