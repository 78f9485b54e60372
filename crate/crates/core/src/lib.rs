//! Task-aware sampling for point-wise analysis networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`cloud`]: point containers, exact grid-accelerated neighbor queries and
//!   inverse-distance feature interpolation.
//! - [`sampling`]: task-agnostic samplers (farthest point, random, voxel grid).
//! - [`task_aware`]: supervision samplers that use ground-truth task information
//!   (Edge-FPS, Part-FPS, soft keypoints, Key-FPS, completion supervision).
//! - [`metrics`]: Chamfer and earth mover's distances, the assignment solver,
//!   segmentation scores and keypoint AP.
//! - [`dispnet`]: the displacement network with hand-written backward passes.
//! - [`training`]: joint training of the learned sampler with toy task heads.
//! - [`datagen`]: seeded synthetic datasets with complete labels.

pub mod cloud;
pub mod datagen;
pub mod dispnet;
mod error;
pub mod geom;
pub mod matrix;
pub mod metrics;
pub mod sampling;
pub mod task_aware;
pub mod training;

pub use cloud::{interpolate_features, knn_query, radius_query, Neighbor, NeighborList, PointCloud};
pub use error::{Error, Result};
pub use geom::Point3;
pub use matrix::Matrix;
pub use sampling::{fps, grid_sample, random_sample, SampleResult};
