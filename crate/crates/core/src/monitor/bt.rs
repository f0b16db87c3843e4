//! Behavior trees with memory over a library of timed three-phase skills.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActivePhase, ActiveSkill};
use crate::error::{Error, Result};

fn default_effect_window() -> usize {
    30
}

/// A skill's timing: pre and core run on timers, then the effect phase is
/// watched for `effect_window` frames before the skill reports success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillSpec {
    pub name: String,
    pub pre: usize,
    pub core: usize,
    #[serde(default = "default_effect_window")]
    pub effect_window: usize,
}

impl SkillSpec {
    pub fn new(name: impl Into<String>, pre: usize, core: usize) -> Self {
        SkillSpec {
            name: name.into(),
            pre,
            core,
            effect_window: default_effect_window(),
        }
    }

    fn duration(&self, phase: ActivePhase) -> usize {
        match phase {
            ActivePhase::Pre => self.pre,
            ActivePhase::Core => self.core,
            ActivePhase::Effect => self.effect_window,
        }
    }
}

/// Blackboard queries available to condition nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Succeeds if an anomaly was recorded, optionally only for `skill`.
    /// On success the matching records are consumed.
    Anomaly {
        #[serde(default)]
        skill: Option<String>,
    },
    /// Succeeds if no anomaly is recorded.
    NoAnomaly,
}

/// Tree definition as written in tree files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BTNode {
    Selector {
        #[serde(default)]
        name: Option<String>,
        children: Vec<BTNode>,
    },
    Sequence {
        #[serde(default)]
        name: Option<String>,
        children: Vec<BTNode>,
    },
    Action {
        skill: String,
    },
    Condition(Check),
}

impl BTNode {
    pub fn action(skill: impl Into<String>) -> Self {
        BTNode::Action { skill: skill.into() }
    }

    pub fn sequence(children: Vec<BTNode>) -> Self {
        BTNode::Sequence { name: None, children }
    }

    pub fn selector(children: Vec<BTNode>) -> Self {
        BTNode::Selector { name: None, children }
    }

    /// Skill names referenced by action nodes, in depth-first order.
    pub fn skills(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let BTNode::Action { skill } = n {
                out.push(skill.as_str());
            }
        });
        out
    }

    fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a BTNode)) {
        f(self);
        if let BTNode::Selector { children, .. } | BTNode::Sequence { children, .. } = self {
            for c in children {
                c.walk(f);
            }
        }
    }
}

/// A tree file: the skill library and the root node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub skills: Vec<SkillSpec>,
    pub root: BTNode,
}

impl TreeFile {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let t: TreeFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        t.validate(origin)?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Composite nodes need children, skills need nonzero timers and unique
    /// names, and every action node must name a known skill.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let bad = |m: String| {
            Err(Error::Validation {
                id: origin.into(),
                message: m,
            })
        };
        let mut names = HashMap::new();
        for s in &self.skills {
            if s.pre == 0 || s.core == 0 || s.effect_window == 0 {
                return bad(format!("skill `{}` has a zero-length phase", s.name));
            }
            if names.insert(s.name.as_str(), ()).is_some() {
                return bad(format!("skill `{}` defined twice", s.name));
            }
        }
        let mut problem = None;
        self.root.walk(&mut |n| match n {
            BTNode::Selector { children, .. } | BTNode::Sequence { children, .. } if children.is_empty() => {
                problem.get_or_insert_with(|| "composite node without children".to_string());
            }
            BTNode::Action { skill } if !names.contains_key(skill.as_str()) => {
                problem.get_or_insert_with(|| format!("action node references unknown skill `{skill}`"));
            }
            _ => {}
        });
        match problem {
            Some(m) => bad(m),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failure,
    Running,
}

/// One recorded anomaly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub frame: usize,
    pub skill: String,
    pub run: u64,
}

/// State shared between the monitor and the tree.
#[derive(Debug, Clone, Default)]
pub struct Blackboard {
    /// Anomaly raised against the running skill, consumed by its action node.
    pub pending: Option<AnomalyRecord>,
    /// Anomalies not yet consumed by a condition node.
    pub anomalies: Vec<AnomalyRecord>,
    /// Skill left running by the last tick.
    pub active: Option<ActiveSkill>,
    runs: u64,
}

impl Blackboard {
    pub fn post_anomaly(&mut self, record: AnomalyRecord) {
        self.anomalies.push(record.clone());
        self.pending = Some(record);
    }
}

#[derive(Debug, Clone, Copy)]
struct Progress {
    phase: ActivePhase,
    elapsed: usize,
    run: u64,
}

enum Node {
    Selector { children: Vec<Node>, current: usize },
    Sequence { children: Vec<Node>, current: usize },
    Action { skill: usize, progress: Option<Progress> },
    Condition(Check),
}

/// Executable tree. Composites remember their running child between ticks.
pub struct BehaviorTree {
    skills: Vec<SkillSpec>,
    root: Node,
    finished: Option<Status>,
}

impl BehaviorTree {
    pub fn new(file: &TreeFile) -> Result<Self> {
        file.validate("tree")?;
        let index: HashMap<&str, usize> = file.skills.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
        fn build(n: &BTNode, index: &HashMap<&str, usize>) -> Node {
            match n {
                BTNode::Selector { children, .. } => Node::Selector {
                    children: children.iter().map(|c| build(c, index)).collect(),
                    current: 0,
                },
                BTNode::Sequence { children, .. } => Node::Sequence {
                    children: children.iter().map(|c| build(c, index)).collect(),
                    current: 0,
                },
                BTNode::Action { skill } => Node::Action {
                    skill: index[skill.as_str()],
                    progress: None,
                },
                BTNode::Condition(c) => Node::Condition(c.clone()),
            }
        }
        Ok(BehaviorTree {
            skills: file.skills.clone(),
            root: build(&file.root, &index),
            finished: None,
        })
    }

    /// Final status of the root once it stops running; the robot idles after.
    pub fn finished(&self) -> Option<Status> {
        self.finished
    }

    /// Tick the root once. Sets `bb.active` to the skill left running, or
    /// `None` when the tree has finished and the idle behavior takes over.
    pub fn tick(&mut self, bb: &mut Blackboard) -> Status {
        bb.active = None;
        if let Some(s) = self.finished {
            bb.pending = None;
            return s;
        }
        let s = tick_node(&mut self.root, &self.skills, bb);
        bb.pending = None;
        if s != Status::Running {
            self.finished = Some(s);
        }
        s
    }
}

fn tick_node(node: &mut Node, skills: &[SkillSpec], bb: &mut Blackboard) -> Status {
    match node {
        Node::Selector { children, current } => {
            while *current < children.len() {
                match tick_node(&mut children[*current], skills, bb) {
                    Status::Running => return Status::Running,
                    Status::Success => {
                        *current = 0;
                        return Status::Success;
                    }
                    Status::Failure => *current += 1,
                }
            }
            *current = 0;
            Status::Failure
        }
        Node::Sequence { children, current } => {
            while *current < children.len() {
                match tick_node(&mut children[*current], skills, bb) {
                    Status::Running => return Status::Running,
                    Status::Failure => {
                        *current = 0;
                        return Status::Failure;
                    }
                    Status::Success => *current += 1,
                }
            }
            *current = 0;
            Status::Success
        }
        Node::Condition(check) => match check {
            Check::Anomaly { skill } => {
                let hit = |r: &AnomalyRecord| skill.as_ref().is_none_or(|s| *s == r.skill);
                if bb.anomalies.iter().any(hit) {
                    bb.anomalies.retain(|r| !hit(r));
                    Status::Success
                } else {
                    Status::Failure
                }
            }
            Check::NoAnomaly if bb.anomalies.is_empty() => Status::Success,
            Check::NoAnomaly => Status::Failure,
        },
        Node::Action { skill, progress } => {
            let spec = &skills[*skill];
            let next = match *progress {
                None => {
                    bb.runs += 1;
                    Some(Progress {
                        phase: ActivePhase::Pre,
                        elapsed: 0,
                        run: bb.runs,
                    })
                }
                Some(p) if bb.pending.as_ref().is_some_and(|a| a.run == p.run) => {
                    bb.pending = None;
                    *progress = None;
                    return Status::Failure;
                }
                Some(mut p) => {
                    p.elapsed += 1;
                    if p.elapsed == spec.duration(p.phase) {
                        p.elapsed = 0;
                        p.phase = match p.phase {
                            ActivePhase::Pre => ActivePhase::Core,
                            ActivePhase::Core => ActivePhase::Effect,
                            ActivePhase::Effect => {
                                *progress = None;
                                return Status::Success;
                            }
                        };
                    }
                    Some(p)
                }
            };
            let p = next.expect("progress set above");
            *progress = next;
            bb.active = Some(ActiveSkill {
                action: spec.name.clone(),
                phase: p.phase,
                progress: p.elapsed as f64 / spec.duration(p.phase) as f64,
                run: p.run,
            });
            Status::Running
        }
    }
}
