//! Teacher pretraining, the contrastive amalgamation loop, baselines and
//! union-label evaluation.

mod config;
mod eval;
mod metrics;
mod pretrain;
mod train;

pub use config::{AmalgamationConfig, PretrainConfig, TargetMode, TeacherView};
pub use eval::{ensemble_predict, evaluate_union, union_scores, Accuracy, Predictor};
pub use metrics::{EpochMetrics, RunMetrics, RunSummary};
pub use pretrain::{cross_entropy, pretrain_teacher, PretrainReport};
pub use train::{
    amalgamate_student, cfl_baseline, student_gradients, vanilla_kd_baseline, AmalgamationRun, EvalSet, StepGradients,
};
