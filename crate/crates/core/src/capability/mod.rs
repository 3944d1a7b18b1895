//! The capability module: a small classifier from a local patch to
//! per-action next-state distributions, trained either alone on random-walk
//! transitions (MSE, optionally with a difficulty curriculum) or end to end
//! through the planner (see [`crate::e2e`]).

mod adam;
mod net;
mod samples;
mod train;

pub use adam::Adam;
pub use net::{CapabilityNet, DEFAULT_HIDDEN};
pub(crate) use net::Activations;
pub use samples::{collect_samples, curriculum_order, difficulty_margin, CapSample, CURRICULUM_BOUNDS};
pub use train::{
    argmax_accuracy, mse_gradient, mse_loss, train_curriculum, train_supervised, LrSchedule,
    SupervisedConfig,
};
