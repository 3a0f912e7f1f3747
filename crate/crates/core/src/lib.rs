pub mod bvh;
pub mod debias;
pub mod error;
pub mod ik_augment;
pub mod kinematics;
pub mod latent;
pub mod metrics;
pub mod physics;
pub mod pipeline;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
