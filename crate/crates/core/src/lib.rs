//! Promptable volumetric segmentation: region growing gated by intensity
//! homogeneity and surrogate entropy, re-seeded step by step by an
//! actor-critic agent.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the engine scalar to `f64`.

pub mod engine;
pub mod env;
pub mod error;
pub mod eval;
pub mod grow;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod ppo;
pub mod rng;
pub mod scalar;
pub mod surrogate;
pub mod volume;

pub use env::{EnvConfig, SeedPolicy, SegEnv};
pub use error::{Error, Result};
pub use grow::{grow, grow_oracle, GrowConfig, GrowResult, RegionGrower, Traversal};
pub use scalar::Real;
pub use volume::{
    binary_entropy, dice_loss, entropy_map, mask_l1_diff, neighbourhood_std, Dims, Mask, VoxelIndex, DICE_EPS,
};

/// Engine scalar used by the CLI, the service and the evaluation harness.
pub type Scalar = f64;

pub type Volume = volume::Volume<Scalar>;
pub type ProbabilityField = volume::ProbabilityField<Scalar>;
pub type EntropyField = volume::EntropyField<Scalar>;
pub type PhantomSample = phantom::PhantomSample<Scalar>;
pub type SurrogateParams = surrogate::SurrogateParams<Scalar>;

pub type Volume32 = volume::Volume<f32>;
