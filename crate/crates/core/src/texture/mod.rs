//! Block-level texture parametrization.
//!
//! Every occupied block gets one square chart. Inside a block, triangles are
//! grouped by normal, projected onto the group's tangent plane, wrapped in a
//! minimum-area rectangle and packed into the chart with a quadtree. Charts
//! sit on a uniform slot grid at `M2^-1(rank(M3(x, y, z)))`, so the layout is
//! a pure function of the mesh and needs no side information.

pub mod atlas;
pub mod calipers;
pub mod chart;
pub mod morton;
pub mod pack;

pub use atlas::{assign_chart_slots, rank_locality, slot_layout, Atlas, ColorField, Image};
pub use calipers::{convex_hull, min_area_rect, MinRect};
pub use chart::{group_triangles, Chart, Placement, TriangleGroup};
pub use morton::{morton2, morton2_inv, morton3, morton3_inv};
pub use pack::{pack_rects, GUTTER};

use crate::surface::{mesh_volume, Mesh};
use crate::volume::TsdfVolume;
use crate::Result;

/// Meshes a (decoded) volume and charts it. Sender and receiver both call
/// this on the same reconstruction.
pub fn recompute_uvs(volume: &TsdfVolume, k: usize, resolution: u32) -> Result<(Mesh, Atlas)> {
    let mesh = mesh_volume(volume)?;
    let atlas = Atlas::build(&mesh, k, resolution)?;
    Ok((mesh, atlas))
}
