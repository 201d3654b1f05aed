pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod fastcluster;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod prototypes;
pub mod seeding;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use numerics::Matrix;
pub use types::{ClusterResult, FeatureMatrix};
