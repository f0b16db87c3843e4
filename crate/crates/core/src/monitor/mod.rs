//! Execution monitoring: behavior-tree skill sequencing, expected-vs-predicted
//! phase comparison with core-phase suspension, and the anomaly filter.

mod bt;
mod filter;
mod run;
mod source;
mod timeline;

pub use bt::{AnomalyRecord, BTNode, BehaviorTree, Blackboard, Check, SkillSpec, Status, TreeFile};
pub use filter::{decide, expected_phase, filter_update, ActivePhase, Expected, FilterState, FILTER_THRESHOLD};
pub use run::{run_monitor, MonitorConfig, MonitorEvent, MonitorLog, NetPredictor, OraclePredictor, Predictor, RunEnd};
pub use source::{ActiveSkill, FrameSource, SourceFrame};
pub use timeline::timeline_svg;
