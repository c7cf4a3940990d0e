//! Clustering of precomputed embeddings with an ensemble of student/teacher
//! heads trained on pointwise mutual information between mined neighbor pairs.
//!
//! The pipeline is: load or synthesize a [`FeatureSet`], mine a cosine
//! [`NeighborTable`], then [`train`](trainer::train) a [`HeadEnsemble`] with
//! one of the [`LossMode`] objectives and evaluate the assignments with the
//! [`metrics`] module. [`baselines`] holds k-means and linear probing, and
//! [`theorem`] checks the objective's optimality claims on small discrete
//! models by exact enumeration.

pub mod baselines;
pub mod error;
pub mod features;
pub mod heads;
pub mod knn;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod theorem;
pub mod trainer;

mod binio;

pub use error::{Error, Result};
pub use features::{FeatureSet, SynthConfig};
pub use heads::{Arch, HeadEnsemble, HeadParams};
pub use knn::NeighborTable;
pub use objective::{LossMode, ObjectiveState};
pub use trainer::{TrainConfig, TrainResult};
