//! Group partitioning, group-l0 / group-Lasso penalties with exact proximal
//! operators, and the relaxed splitting optimizer built on them.

pub mod optimizer;
pub mod partition;
pub mod prox;

pub use optimizer::{
    hard_prune, penalty_value, sgd_step, sparsity_report, zero_group_fraction, PenaltyKind,
    RgsmConfig, RgsmOptimizer, SparsityRow, SplitState,
};
pub use partition::{build_partitions, describe_targets, GroupPartition, WIDTH_THRESHOLD};
pub use prox::{group_norm, prox_gl, prox_gl0};
