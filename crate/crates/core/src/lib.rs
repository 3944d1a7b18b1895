//! Grid-world path planning with a capability iteration network.
//!
//! A learned capability model turns the neighbourhood of every cell into
//! per-action next-state distributions; those distributions are used as
//! spatially varying convolution kernels inside a value-iteration
//! recurrence driven by a sparse goal reward.
//!
//! - [`gridworld`]: maps, ground-truth motion, generators, patches
//! - [`oracle`]: exact value iteration and BFS distances
//! - [`capability`]: the patch classifier and its supervised training
//! - [`planner`]: the value-iteration module, greedy policy and rollouts
//! - [`e2e`]: differentiating the planner for imitation learning
//! - [`eval`]: datasets and the %Optimal / %Success / %Error protocol
//! - [`dump`]: text and image exports of reward, value and Q maps

pub mod capability;
pub mod dump;
pub mod e2e;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod oracle;
pub mod planner;
pub mod seed;

pub use error::{CinError, Result};
