//! Reference points for the clustering heads: k-means on the features and a
//! supervised linear probe.

mod kmeans;
mod probe;

pub use kmeans::{inertia_of, kmeans, KMeansConfig, KMeansResult};
pub use probe::{linear_probe, ProbeConfig, ProbeResult};
