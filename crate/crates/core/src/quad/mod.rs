//! The quadratic regression model and its update maps.

mod dynamics;
mod model;
mod optimizer;
pub mod trajectory;

pub use dynamics::{quadratic_loss_sam_step, Advance, RescaledForm, DIVERGENCE_NORM};
pub use model::{DynState, ModelScales, QuadraticModel};
pub use optimizer::{batch_size, BatchMask, BatchSampling, OptimizerSpec, UpdateRule};
