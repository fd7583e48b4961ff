//! Point-cloud indexing for massive LiDAR data.
//!
//! The crate ingests LAS 1.2 and ASCII xyz point files into a columnar
//! [`PointCloud`], builds a bucketed 3-d tree with the sliding-midpoint
//! split rule ([`kdtree::build`], or [`parallel::par_build`] for fork-join
//! construction over a binary worker topology), and answers exact
//! k-nearest-neighbour queries with ball-rectangle pruning ([`knn::knn`]).
//! A deterministic benchmark harness ([`bench`]) measures the leaf-size
//! versus build/query-time trade-off, and [`polygon`] crops clouds by their
//! planar footprint.
//!
//! ```
//! use lidarkd::bench::{generate, GenMode, GenSpec};
//! use lidarkd::cloud::Aabb;
//! use lidarkd::kdtree::{build, BuildConfig};
//! use lidarkd::knn::knn;
//! use std::num::NonZeroUsize;
//!
//! let cloud = generate(&GenSpec {
//!     n: 10_000,
//!     mode: GenMode::Uniform { bbox: Aabb::new([0.0; 3], [100.0; 3]) },
//!     seed: 7,
//! })
//! .unwrap();
//! let tree = build(&cloud, BuildConfig::new(64).unwrap()).unwrap();
//! let nearest = knn(&tree, &cloud, [50.0, 50.0, 50.0], NonZeroUsize::new(5).unwrap()).unwrap();
//! assert_eq!(nearest.len(), 5);
//! ```

pub mod bench;
pub mod cli;
pub mod cloud;
pub mod ingest;
pub mod kdtree;
pub mod knn;
pub mod las;
pub mod parallel;
pub mod polygon;
pub mod rng;
pub mod xyz;

pub use cloud::{Aabb, PointCloud};
pub use kdtree::{BuildConfig, KdTree};
pub use knn::Neighbor;
