//! Block-based compression of truncated signed distance fields.
//!
//! The codec splits a TSDF volume into `k³` blocks, keeps only blocks that
//! touch the surface, and codes each block as an integer latent (lossy, under
//! a learned factorized prior) plus its sign configuration (lossless, under a
//! probability model conditioned on the latent). Because the signs survive
//! exactly, marching cubes on the decoded volume produces the same cell
//! configurations as on the original and every vertex moves by less than a
//! voxel. Textures are parametrized per block and packed into an atlas by
//! Morton rank, so the receiver can recompute UVs without transmitting them.

pub mod coder;
pub mod container;
pub mod error;
pub mod hash;
pub mod nnet;
pub mod prior;
pub mod surface;
pub mod texture;
pub mod volume;
mod wire;

pub use error::{Error, Result};
