//! Voxel-wise probability model supplying the entropy map that gates
//! region growing. Trained once on soft Dice, then frozen.

mod features;
mod model;
mod train;

pub use features::{featurize, FeatureSet, FeatureStack};
pub use model::{
    entropy_of, gradient, loss_and_gradient, predict, predict_features, read_params, write_params, SurrogateArch,
    SurrogateParams, TrainingMeta,
};
pub use train::{train, SurrogateTrainConfig};
