//! Marching-cubes extraction under lossless signs, the one-voxel error
//! bound, and Hausdorff/Chamfer surface metrics.

pub mod mc;
pub mod metrics;
pub mod tables;

pub use mc::{error_bound_check, marching_cubes, mesh_volume, topology_equal, GridEdge, Mesh};
pub use metrics::{chamfer, hausdorff, point_to_mesh_distance, surface_distance, Bvh, SurfaceDistance};
