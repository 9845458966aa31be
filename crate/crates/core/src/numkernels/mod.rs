//! Dense numerical primitives: symmetric eigensolver, k-means, distances.
//!
//! All functions are pure and deterministic given their inputs (and seed).

mod distance;
mod eigen;
mod kmeans;

pub use distance::{cosine_distance, euclidean_distance, squared_euclidean, Distance, Real};
pub use eigen::{sym_eigen, sym_eigen_smallest, DenseSymMatrix, EigenPairs};
pub use kmeans::{kmeans, KMeans, KMeansConfig, DEFAULT_MAX_ITERS};
