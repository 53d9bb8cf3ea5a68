//! Two-phase planners: choose every slot's MODCOD targets first, then solve
//! one sparse precoding problem per slot.

pub mod dnn;
pub mod features;
pub mod heuristic;
pub mod mlp;

pub use dnn::{collect_samples, infer_action, run_dnn_pipeline, train_policy, DnnConfig, PolicySample};
pub use features::{build_features, penalty_metric, sample_candidates, PacingPenalty, PenaltyWeights};
pub use heuristic::{heuristic_assign, run_heuristic_pipeline};
pub use mlp::{train, Mlp, TrainSettings};
