//! The world reacting to whatever skill the monitor's tree is running.

use std::sync::Arc;

use super::script::{Event, ScenarioScript, Simulator};
use super::{Layout, RenderStyle, SymAction, WorldState};
use crate::encoders::{encode_scene, EncoderSpec, FrameFile};
use crate::error::Result;
use crate::monitor::{ActivePhase, ActiveSkill, BTNode, FrameSource, SkillSpec, SourceFrame, TreeFile};
use crate::rng::Seed;

/// Live world for closed-loop monitoring. Events fire at absolute frame
/// indices; grasp failures count pick attempts.
pub struct ClosedLoopWorld {
    sim: Simulator,
    encoder: Option<EncoderSpec>,
    max_frames: usize,
    index: usize,
    last: Option<(u64, ActivePhase)>,
    /// Every frame file produced so far.
    pub history: Vec<FrameFile>,
}

impl ClosedLoopWorld {
    pub fn new(layout: Layout, style: RenderStyle, initial: WorldState, events: Vec<Event>, seed: u64, encoder: Option<EncoderSpec>, max_frames: usize) -> Self {
        ClosedLoopWorld {
            sim: Simulator::new(layout, style, initial, events, Seed(seed)),
            encoder,
            max_frames,
            index: 0,
            last: None,
            history: Vec::new(),
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.sim.state
    }

    pub fn pick_attempts(&self) -> usize {
        self.sim.pick_attempts()
    }

    fn track(&mut self, active: Option<&ActiveSkill>) -> Result<()> {
        let now = active.map(|a| (a.run, a.phase));
        if now == self.last {
            return Ok(());
        }
        let prev = self.last;
        self.last = now;
        let same_run = matches!((prev, now), (Some((r0, _)), Some((r1, _))) if r0 == r1);
        if let Some((_, ActivePhase::Core)) = prev {
            if same_run {
                self.sim.finish_core();
            } else {
                self.sim.state.engaged = None;
            }
        }
        let Some(a) = active else { return Ok(()) };
        if !same_run {
            self.sim.begin(&SymAction::parse(&a.action)?);
        }
        if a.phase == ActivePhase::Core {
            self.sim.enter_core();
        }
        Ok(())
    }
}

impl ScenarioScript {
    /// One skill per distinct action, timed by its first occurrence; the
    /// post duration becomes the effect window.
    pub fn skills(&self) -> Vec<SkillSpec> {
        let mut out: Vec<SkillSpec> = Vec::new();
        for a in &self.actions {
            let name = a.action.text();
            if out.iter().all(|s| s.name != name) {
                out.push(SkillSpec {
                    name,
                    pre: a.pre,
                    core: a.core,
                    effect_window: a.post,
                });
            }
        }
        out
    }

    /// A plain sequence over the script's actions.
    pub fn sequence_tree(&self) -> TreeFile {
        TreeFile {
            skills: self.skills(),
            root: BTNode::sequence(self.actions.iter().map(|a| BTNode::action(a.action.text())).collect()),
        }
    }

    /// A live world starting from the script's initial state with its events.
    pub fn closed_loop(&self, seed: u64, encoder: Option<EncoderSpec>, max_frames: usize) -> Result<ClosedLoopWorld> {
        self.validate()?;
        Ok(ClosedLoopWorld::new(self.layout()?, self.style, self.initial_state()?, self.events.clone(), seed, encoder, max_frames))
    }
}

impl FrameSource for ClosedLoopWorld {
    fn next_frame(&mut self, active: Option<&ActiveSkill>) -> Result<Option<SourceFrame>> {
        if self.index >= self.max_frames {
            return Ok(None);
        }
        self.track(active)?;
        let motion = active.filter(|a| a.phase == ActivePhase::Core).map(|a| a.progress);
        let frame = self.sim.frame(self.index, motion);
        let grid = match &self.encoder {
            Some(spec) => Some(Arc::new(encode_scene(spec, &frame.scene)?)),
            None => None,
        };
        let out = SourceFrame {
            index: self.index,
            grid,
            truth: active.and_then(|_| self.sim.truth()),
        };
        self.history.push(frame);
        self.index += 1;
        Ok(Some(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhaseLabel;

    fn skill(action: &str, phase: ActivePhase, run: u64) -> ActiveSkill {
        ActiveSkill {
            action: action.into(),
            phase,
            progress: 0.0,
            run,
        }
    }

    fn world(events: Vec<Event>) -> ClosedLoopWorld {
        let l = Layout::new(4).unwrap();
        ClosedLoopWorld::new(l, RenderStyle::default(), WorldState::tabletop(&[0, 3, 6, 9, 12]), events, 1, None, 100)
    }

    fn run(w: &mut ClosedLoopWorld, a: &str, run: u64) -> Vec<PhaseLabel> {
        let mut out = Vec::new();
        for phase in [ActivePhase::Pre, ActivePhase::Core, ActivePhase::Effect] {
            for _ in 0..3 {
                out.push(w.next_frame(Some(&skill(a, phase, run))).unwrap().unwrap().truth.unwrap());
            }
        }
        out
    }

    #[test]
    fn pick_then_retry_after_grasp_failure() {
        let mut w = world(vec![Event::GraspFailure { attempt: 1 }]);
        let first = run(&mut w, "pick up cloth", 1);
        assert!(first.iter().all(|l| *l == PhaseLabel::Precondition));
        let second = run(&mut w, "pick up cloth", 2);
        use PhaseLabel::*;
        assert_eq!(second, vec![Precondition, Precondition, Precondition, Unsatisfied, Unsatisfied, Unsatisfied, Effect, Effect, Effect]);
        assert_eq!(w.pick_attempts(), 2);
        assert!(w.state().holds("cloth"));
    }

    #[test]
    fn preempted_core_leaves_no_effect() {
        let mut w = world(vec![]);
        w.next_frame(Some(&skill("pick up cup", ActivePhase::Core, 1))).unwrap();
        w.next_frame(None).unwrap();
        assert!(w.state().held_object.is_none());
        assert!(w.state().engaged.is_none());
    }

    #[test]
    fn stops_after_max_frames() {
        let l = Layout::new(4).unwrap();
        let mut w = ClosedLoopWorld::new(l, RenderStyle::default(), WorldState::tabletop(&[0, 1, 2, 3, 4]), vec![], 1, Some(EncoderSpec::synthetic(4, 8, 1)), 2);
        assert!(w.next_frame(None).unwrap().unwrap().grid.is_some());
        assert!(w.next_frame(None).unwrap().is_some());
        assert!(w.next_frame(None).unwrap().is_none());
    }
}
