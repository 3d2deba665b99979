//! Clustering stage: alternating minimization over `U`, the network weights
//! and the Lagrange multiplier of the `U = Z` constraint.

pub mod checkpoint;
pub mod losses;
pub mod state;
pub mod steps;
pub mod trainer;

pub use checkpoint::{load_run, read_run, save_run, write_run};
pub use losses::{evaluate_losses, LossBreakdown};
pub use state::{AdmmState, ClusterConfig, Mode};
pub use steps::{
    dual_update, epoch_items, net_batch_gradient, net_step, shuffled_items, u_batch_gradient,
    u_step, BatchItem,
};
pub use trainer::{clustering_representation, train_clustering_stage, EpochRecord, History};
