//! Dense TSDF volumes, analytic test scenes, occupied-block extraction and
//! block index delta coding.

use std::path::Path;

use rand::Rng;

use crate::wire::{put_f32, put_u32, Reader};
use crate::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 4] = b"TSDF";
pub const VOLUME_VERSION: u8 = 1;

/// Default voxel edge length in mm.
pub const DEFAULT_VOXEL_SIZE: f32 = 5.0;
/// Default truncation distance in mm (two voxels).
pub const DEFAULT_TAU: f32 = 10.0;

/// Sign rule shared by every stage: only strictly negative values are inside.
#[inline]
pub fn is_inside(value: f32) -> bool {
    value < 0.0
}

/// Truncated signed distances on a regular grid, x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    dims: [usize; 3],
    voxel_size: f32,
    origin: [f32; 3],
    tau: f32,
    values: Vec<f32>,
}

impl TsdfVolume {
    pub fn new(
        dims: [usize; 3],
        voxel_size: f32,
        origin: [f32; 3],
        tau: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("zero dimension in {dims:?}")));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidVolume(format!("voxel size {voxel_size}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidVolume(format!("truncation {tau}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::Shape { expected: n, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !(v.abs() <= tau)) {
            return Err(Error::InvalidVolume(format!(
                "value {} at {i} exceeds truncation {tau}",
                values[i]
            )));
        }
        Ok(TsdfVolume { dims, voxel_size, origin, tau, values })
    }

    /// Volume with every voxel set to `+tau` (empty space).
    pub fn empty(dims: [usize; 3], voxel_size: f32, origin: [f32; 3], tau: f32) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, voxel_size, origin, tau, vec![tau; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn tau(&self) -> f32 {
        self.tau
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    /// Writes `value` clamped to `[-tau, tau]`.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.values[i] = value.clamp(-self.tau, self.tau);
    }

    /// World position (mm) of a grid point.
    pub fn position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let vs = f64::from(self.voxel_size);
        [
            f64::from(self.origin[0]) + x as f64 * vs,
            f64::from(self.origin[1]) + y as f64 * vs,
            f64::from(self.origin[2]) + z as f64 * vs,
        ]
    }

    pub fn inside_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| is_inside(v)).collect()
    }

    pub fn check_block_size(&self, k: usize) -> Result<()> {
        check_block_size(self.dims, k)
    }

    /// Number of blocks along each axis.
    pub fn block_grid(&self, k: usize) -> [usize; 3] {
        [self.dims[0] / k, self.dims[1] / k, self.dims[2] / k]
    }

    /// Pads each dimension up to a multiple of `k` with `+tau`.
    pub fn padded(&self, k: usize) -> TsdfVolume {
        let nd = self.dims.map(|d| d.div_ceil(k) * k);
        if nd == self.dims {
            return self.clone();
        }
        let mut values = vec![self.tau; nd[0] * nd[1] * nd[2]];
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                let src = self.index(0, y, z);
                let dst = nd[0] * (y + nd[1] * z);
                values[dst..dst + self.dims[0]]
                    .copy_from_slice(&self.values[src..src + self.dims[0]]);
            }
        }
        TsdfVolume { dims: nd, values, ..*self }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + 4 * self.values.len());
        out.extend_from_slice(VOLUME_MAGIC);
        out.push(VOLUME_VERSION);
        for d in self.dims {
            put_u32(&mut out, d as u32);
        }
        put_f32(&mut out, self.voxel_size);
        put_f32(&mut out, self.tau);
        for o in self.origin {
            put_f32(&mut out, o);
        }
        for &v in &self.values {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != VOLUME_MAGIC {
            return Err(Error::BadMagic { expected: "TSDF" });
        }
        let version = r.u8()?;
        if version != VOLUME_VERSION {
            return Err(Error::Version(version));
        }
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let voxel_size = r.f32()?;
        let tau = r.f32()?;
        let origin = [r.f32()?, r.f32()?, r.f32()?];
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidVolume(format!("dims {dims:?} overflow")))?;
        if r.remaining() != 4 * n {
            return Err(Error::Truncated);
        }
        let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        Self::new(dims, voxel_size, origin, tau, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn check_block_size(dims: [usize; 3], k: usize) -> Result<()> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::InvalidVolume(format!("block size {k} is not a power of two")));
    }
    if dims.iter().any(|d| d % k != 0) {
        return Err(Error::DimsNotMultiple { dims, k });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Analytic scenes

/// Signed distance primitives and their compositions (distances in mm).
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    /// Torus around the y axis.
    Torus { center: [f64; 3], major: f64, minor: f64 },
    Union(Box<Shape>, Box<Shape>),
    SmoothUnion { a: Box<Shape>, b: Box<Shape>, blend: f64 },
}

impl Shape {
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Shape::Sphere { center, radius } => norm(sub(p, *center)) - radius,
            Shape::Box { center, half_extents } => {
                let q = [
                    (p[0] - center[0]).abs() - half_extents[0],
                    (p[1] - center[1]).abs() - half_extents[1],
                    (p[2] - center[2]).abs() - half_extents[2],
                ];
                let outside = norm(q.map(|c| c.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Shape::Torus { center, major, minor } => {
                let d = sub(p, *center);
                let ring = (d[0] * d[0] + d[2] * d[2]).sqrt() - major;
                (ring * ring + d[1] * d[1]).sqrt() - minor
            }
            Shape::Union(a, b) => a.distance(p).min(b.distance(p)),
            Shape::SmoothUnion { a, b, blend } => {
                let da = a.distance(p);
                let db = b.distance(p);
                let h = (0.5 + 0.5 * (db - da) / blend).clamp(0.0, 1.0);
                db + (da - db) * h - blend * h * (1.0 - h)
            }
        }
    }

    pub fn translated(&self, t: [f64; 3]) -> Shape {
        match self {
            Shape::Sphere { center, radius } => {
                Shape::Sphere { center: add(*center, t), radius: *radius }
            }
            Shape::Box { center, half_extents } => {
                Shape::Box { center: add(*center, t), half_extents: *half_extents }
            }
            Shape::Torus { center, major, minor } => {
                Shape::Torus { center: add(*center, t), major: *major, minor: *minor }
            }
            Shape::Union(a, b) => Shape::Union(Box::new(a.translated(t)), Box::new(b.translated(t))),
            Shape::SmoothUnion { a, b, blend } => Shape::SmoothUnion {
                a: Box::new(a.translated(t)),
                b: Box::new(b.translated(t)),
                blend: *blend,
            },
        }
    }
}

/// A scene placed inside a volume of a given world extent.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
}

pub const SCENE_NAMES: [&str; 5] = ["sphere", "box", "torus", "blend", "random"];

impl SceneSpec {
    pub fn new(shape: Shape) -> Self {
        SceneSpec { shape }
    }

    /// Named scene scaled to a cube of side `extent` mm starting at the origin.
    /// `random` draws from [`SceneSpec::random`] with the given seed.
    pub fn named(name: &str, extent: f64, seed: u64) -> Option<SceneSpec> {
        let c = [extent / 2.0; 3];
        let shape = match name {
            "sphere" => Shape::Sphere { center: c, radius: 0.3 * extent },
            "box" => Shape::Box { center: c, half_extents: [0.3 * extent, 0.22 * extent, 0.26 * extent] },
            "torus" => Shape::Torus { center: c, major: 0.28 * extent, minor: 0.1 * extent },
            "blend" => Shape::SmoothUnion {
                a: Box::new(Shape::Sphere { center: [0.4 * extent, 0.45 * extent, 0.5 * extent], radius: 0.2 * extent }),
                b: Box::new(Shape::Box {
                    center: [0.62 * extent, 0.55 * extent, 0.5 * extent],
                    half_extents: [0.14 * extent, 0.2 * extent, 0.12 * extent],
                }),
                blend: 0.08 * extent,
            },
            "random" => {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                return Some(Self::random(&mut rng, extent));
            }
            _ => return None,
        };
        Some(SceneSpec { shape })
    }

    /// Random composition of one to three primitives that stays inside the cube.
    pub fn random<R: Rng>(rng: &mut R, extent: f64) -> SceneSpec {
        let count = rng.gen_range(1..=3);
        let mut shape = random_primitive(rng, extent);
        for _ in 1..count {
            let other = random_primitive(rng, extent);
            shape = if rng.gen_bool(0.5) {
                Shape::SmoothUnion {
                    a: Box::new(shape),
                    b: Box::new(other),
                    blend: rng.gen_range(0.02..0.1) * extent,
                }
            } else {
                Shape::Union(Box::new(shape), Box::new(other))
            };
        }
        SceneSpec { shape }
    }
}

fn random_primitive<R: Rng>(rng: &mut R, extent: f64) -> Shape {
    let mut center = || {
        [
            rng.gen_range(0.35..0.65) * extent,
            rng.gen_range(0.35..0.65) * extent,
            rng.gen_range(0.35..0.65) * extent,
        ]
    };
    let c = center();
    match rng.gen_range(0..3) {
        0 => Shape::Sphere { center: c, radius: rng.gen_range(0.12..0.3) * extent },
        1 => Shape::Box {
            center: c,
            half_extents: [
                rng.gen_range(0.08..0.25) * extent,
                rng.gen_range(0.08..0.25) * extent,
                rng.gen_range(0.08..0.25) * extent,
            ],
        },
        _ => {
            let minor = rng.gen_range(0.05..0.1) * extent;
            Shape::Torus { center: c, major: rng.gen_range(0.12..0.22) * extent, minor }
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Samples `scene` at grid points `i * voxel_size` and clamps to `[-tau, tau]`.
pub fn synth_volume(
    scene: &SceneSpec,
    dims: [usize; 3],
    voxel_size: f32,
    tau: f32,
    k: usize,
) -> Result<TsdfVolume> {
    check_block_size(dims, k)?;
    let vs = f64::from(voxel_size);
    let t = f64::from(tau);
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * vs, y as f64 * vs, z as f64 * vs];
                values.push(scene.shape.distance(p).clamp(-t, t) as f32);
            }
        }
    }
    TsdfVolume::new(dims, voxel_size, [0.0; 3], tau, values)
}

// ---------------------------------------------------------------------------
// Blocks

/// Signs of a `(k+2)³` neighbourhood around a block; voxels outside the
/// volume count as outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SignHalo {
    k: usize,
    inside: Vec<bool>,
}

impl SignHalo {
    /// Halo that repeats the block's own border signs, i.e. no crossings
    /// leave the block.
    pub fn isolated(values: &[f32], k: usize) -> SignHalo {
        let e = k + 2;
        let mut inside = vec![false; e * e * e];
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    let c = |v: usize| v.clamp(1, k) - 1;
                    inside[x + e * (y + e * z)] =
                        is_inside(values[c(x) + k * (c(y) + k * c(z))]);
                }
            }
        }
        SignHalo { k, inside }
    }

    pub fn from_volume(volume: &TsdfVolume, index: [usize; 3], k: usize) -> SignHalo {
        let e = k + 2;
        let d = volume.dims();
        let mut inside = vec![false; e * e * e];
        for z in 0..e {
            for y in 0..e {
                for x in 0..e {
                    let g = [
                        (index[0] * k + x).wrapping_sub(1),
                        (index[1] * k + y).wrapping_sub(1),
                        (index[2] * k + z).wrapping_sub(1),
                    ];
                    if g[0] < d[0] && g[1] < d[1] && g[2] < d[2] {
                        inside[x + e * (y + e * z)] = is_inside(volume.get(g[0], g[1], g[2]));
                    }
                }
            }
        }
        SignHalo { k, inside }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sign at block-local coordinates, where `-1` and `k` address the halo.
    #[inline]
    pub fn inside(&self, x: isize, y: isize, z: isize) -> bool {
        let e = (self.k + 2) as isize;
        self.inside[((x + 1) + e * ((y + 1) + e * (z + 1))) as usize]
    }
}

/// One `k³` sub-cube of a volume, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: [usize; 3],
    pub k: usize,
    pub values: Vec<f32>,
    pub halo: SignHalo,
}

impl Block {
    pub fn from_volume(volume: &TsdfVolume, index: [usize; 3], k: usize) -> Block {
        let mut values = Vec::with_capacity(k * k * k);
        for z in 0..k {
            for y in 0..k {
                let row = volume.index(index[0] * k, index[1] * k + y, index[2] * k + z);
                values.extend_from_slice(&volume.values[row..row + k]);
            }
        }
        Block { index, k, values, halo: SignHalo::from_volume(volume, index, k) }
    }

    pub fn inside_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| is_inside(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIndexStream {
    pub sorted_indices: Vec<u64>,
    pub deltas: Vec<u64>,
}

impl BlockIndexStream {
    pub fn from_sorted(sorted_indices: Vec<u64>) -> Result<Self> {
        let deltas = delta_encode_indices(&sorted_indices)?;
        Ok(BlockIndexStream { sorted_indices, deltas })
    }

    pub fn from_deltas(deltas: Vec<u64>) -> Result<Self> {
        let sorted_indices = delta_decode_indices(&deltas)?;
        Ok(BlockIndexStream { sorted_indices, deltas })
    }
}

/// Row-major, x fastest.
pub fn block_linear_index(index: [usize; 3], grid: [usize; 3]) -> u64 {
    (index[0] + grid[0] * (index[1] + grid[1] * index[2])) as u64
}

pub fn block_coords(linear: u64, grid: [usize; 3]) -> [usize; 3] {
    let l = linear as usize;
    [l % grid[0], (l / grid[0]) % grid[1], l / (grid[0] * grid[1])]
}

/// Per-block occupancy flags in linear order. A block is occupied when one
/// of its voxels has an axis neighbour of the opposite sign, including
/// neighbours that lie in the adjacent block, so both ends of every crossing
/// edge end up in occupied blocks.
pub fn occupancy(volume: &TsdfVolume, k: usize) -> Result<Vec<bool>> {
    volume.check_block_size(k)?;
    let d = volume.dims();
    let grid = volume.block_grid(k);
    let mut occupied = vec![false; grid[0] * grid[1] * grid[2]];
    let inside = volume.inside_mask();
    let block_of = |x: usize, y: usize, z: usize| {
        (x / k) + grid[0] * ((y / k) + grid[1] * (z / k))
    };
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let i = volume.index(x, y, z);
                let s = inside[i];
                let mut mark = |nx: usize, ny: usize, nz: usize| {
                    if inside[volume.index(nx, ny, nz)] != s {
                        occupied[block_of(x, y, z)] = true;
                        occupied[block_of(nx, ny, nz)] = true;
                    }
                };
                if x + 1 < d[0] {
                    mark(x + 1, y, z);
                }
                if y + 1 < d[1] {
                    mark(x, y + 1, z);
                }
                if z + 1 < d[2] {
                    mark(x, y, z + 1);
                }
            }
        }
    }
    Ok(occupied)
}

/// Occupied blocks in ascending linear index order, with their index stream.
pub fn extract_occupied_blocks(
    volume: &TsdfVolume,
    k: usize,
) -> Result<(Vec<Block>, BlockIndexStream)> {
    let occupied = occupancy(volume, k)?;
    let grid = volume.block_grid(k);
    let mut blocks = Vec::new();
    let mut indices = Vec::new();
    for (linear, _) in occupied.iter().enumerate().filter(|(_, &o)| o) {
        let idx = block_coords(linear as u64, grid);
        blocks.push(Block::from_volume(volume, idx, k));
        indices.push(linear as u64);
    }
    Ok((blocks, BlockIndexStream::from_sorted(indices)?))
}

pub fn delta_encode_indices(indices: &[u64]) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(indices.len());
    let mut prev = None;
    for (position, &i) in indices.iter().enumerate() {
        match prev {
            None => out.push(i),
            Some(p) if i > p => out.push(i - p),
            Some(_) => return Err(Error::NotAscending { position }),
        }
        prev = Some(i);
    }
    Ok(out)
}

pub fn delta_decode_indices(deltas: &[u64]) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut acc: Option<u64> = None;
    for (position, &d) in deltas.iter().enumerate() {
        let next = match acc {
            None => d,
            Some(_) if d == 0 => return Err(Error::NotAscending { position }),
            Some(a) => a
                .checked_add(d)
                .ok_or_else(|| Error::Malformed("block index overflow".into()))?,
        };
        out.push(next);
        acc = Some(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn centered_sphere(r_vox: f64) -> (SceneSpec, TsdfVolume) {
        let scene = SceneSpec::new(Shape::Sphere { center: [80.0; 3], radius: r_vox * 5.0 });
        let vol = synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap();
        (scene, vol)
    }

    #[test]
    fn sphere_center_is_fully_truncated_and_surface_is_zero() {
        let (_, vol) = centered_sphere(10.0);
        assert_eq!(vol.get(16, 16, 16), -10.0);
        assert_eq!(vol.get(26, 16, 16), 0.0);
        assert_eq!(vol.get(16, 6, 16), 0.0);
    }

    #[test]
    fn probe_voxels_match_scalar_evaluation() {
        let (_, vol) = centered_sphere(10.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (x, y, z) = (rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(0..32));
            let p = [x as f64 * 5.0, y as f64 * 5.0, z as f64 * 5.0];
            let d = ((p[0] - 80.0).powi(2) + (p[1] - 80.0).powi(2) + (p[2] - 80.0).powi(2)).sqrt()
                - 50.0;
            assert_eq!(vol.get(x, y, z), d.clamp(-10.0, 10.0) as f32);
        }
    }

    #[test]
    fn dims_must_be_block_multiples() {
        let scene = SceneSpec::named("sphere", 100.0, 0).unwrap();
        let err = synth_volume(&scene, [30, 32, 32], 5.0, 10.0, 8).unwrap_err();
        assert!(matches!(err, Error::DimsNotMultiple { .. }));
        assert!(err.to_string().contains("not a multiple"));
    }

    #[test]
    fn values_never_exceed_tau() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let scene = SceneSpec::random(&mut rng, 160.0);
            let vol = synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap();
            assert!(vol.values().iter().all(|v| v.abs() <= 10.0));
        }
        assert!(TsdfVolume::new([1, 1, 1], 5.0, [0.0; 3], 1.0, vec![1.5]).is_err());
    }

    #[test]
    fn padding_adds_outside_voxels() {
        let vol = TsdfVolume::new([3, 2, 1], 5.0, [0.0; 3], 10.0, vec![-1.0; 6]).unwrap();
        let p = vol.padded(4);
        assert_eq!(p.dims(), [4, 4, 4]);
        assert_eq!(p.get(2, 1, 0), -1.0);
        assert_eq!(p.get(3, 1, 0), 10.0);
        assert_eq!(p.get(0, 2, 0), 10.0);
        assert_eq!(p.get(0, 0, 1), 10.0);
    }

    #[test]
    fn all_positive_volume_has_no_blocks() {
        let vol = TsdfVolume::empty([16; 3], 5.0, [0.0; 3], 10.0).unwrap();
        let (blocks, stream) = extract_occupied_blocks(&vol, 8).unwrap();
        assert!(blocks.is_empty());
        assert!(stream.deltas.is_empty());
    }

    #[test]
    fn single_interior_negative_voxel_occupies_one_block() {
        let mut vol = TsdfVolume::empty([16; 3], 5.0, [0.0; 3], 10.0).unwrap();
        vol.set(11, 12, 3, -2.0);
        let (blocks, stream) = extract_occupied_blocks(&vol, 8).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].index, [1, 1, 0]);
        assert_eq!(stream.sorted_indices, vec![3]);
        assert_eq!(blocks[0].values[3 + 8 * (4 + 8 * 3)], -2.0);
    }

    #[test]
    fn zero_is_outside() {
        let mut vol = TsdfVolume::empty([8; 3], 5.0, [0.0; 3], 10.0).unwrap();
        vol.set(3, 3, 3, 0.0);
        vol.set(4, 4, 4, -0.0);
        assert!(extract_occupied_blocks(&vol, 8).unwrap().0.is_empty());
    }

    // Exhaustive oracle: a block is occupied iff some voxel inside it has an
    // axis neighbour (anywhere in the volume) of opposite sign.
    fn brute_force_occupied(vol: &TsdfVolume, k: usize) -> Vec<u64> {
        let d = vol.dims();
        let grid = vol.block_grid(k);
        let mut out = Vec::new();
        for bz in 0..grid[2] {
            for by in 0..grid[1] {
                for bx in 0..grid[0] {
                    let mut hit = false;
                    for z in bz * k..(bz + 1) * k {
                        for y in by * k..(by + 1) * k {
                            for x in bx * k..(bx + 1) * k {
                                let s = vol.get(x, y, z) < 0.0;
                                for (dx, dy, dz) in [
                                    (1i64, 0i64, 0i64), (-1, 0, 0), (0, 1, 0),
                                    (0, -1, 0), (0, 0, 1), (0, 0, -1),
                                ] {
                                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                    if nx < 0 || ny < 0 || nz < 0
                                        || nx >= d[0] as i64 || ny >= d[1] as i64 || nz >= d[2] as i64
                                    {
                                        continue;
                                    }
                                    if (vol.get(nx as usize, ny as usize, nz as usize) < 0.0) != s {
                                        hit = true;
                                    }
                                }
                            }
                        }
                    }
                    if hit {
                        out.push(block_linear_index([bx, by, bz], grid));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sphere_occupancy_matches_exhaustive_scan() {
        let (_, vol) = centered_sphere(10.0);
        let (blocks, stream) = extract_occupied_blocks(&vol, 8).unwrap();
        let expected = brute_force_occupied(&vol, 8);
        assert_eq!(stream.sorted_indices, expected);
        assert_eq!(blocks.len(), expected.len());
    }

    #[test]
    fn blocks_partition_crossing_voxels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let scene = SceneSpec::random(&mut rng, 160.0);
        let vol = synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap();
        let (blocks, _) = extract_occupied_blocks(&vol, 8).unwrap();
        let mut covered = vec![0u8; vol.len()];
        for b in &blocks {
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        covered[vol.index(b.index[0] * 8 + x, b.index[1] * 8 + y, b.index[2] * 8 + z)] += 1;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c <= 1));
        let d = vol.dims();
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] - 1 {
                    if (vol.get(x, y, z) < 0.0) != (vol.get(x + 1, y, z) < 0.0) {
                        assert_eq!(covered[vol.index(x, y, z)], 1);
                        assert_eq!(covered[vol.index(x + 1, y, z)], 1);
                    }
                }
            }
        }
    }

    #[test]
    fn block_values_and_halo() {
        let (_, vol) = centered_sphere(10.0);
        let b = Block::from_volume(&vol, [1, 2, 1], 8);
        assert_eq!(b.values[5 + 8 * (6 + 8 * 7)], vol.get(13, 22, 15));
        assert_eq!(b.halo.inside(-1, 0, 0), vol.get(7, 16, 8) < 0.0);
        assert_eq!(b.halo.inside(8, 8, 8), vol.get(16, 24, 16) < 0.0);
        let corner = Block::from_volume(&vol, [0, 0, 0], 8);
        assert!(!corner.halo.inside(-1, -1, -1));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_encode_indices(&[3, 7, 15]).unwrap(), vec![3, 4, 8]);
        assert_eq!(delta_encode_indices(&[0]).unwrap(), vec![0]);
        assert!(matches!(
            delta_encode_indices(&[3, 3]),
            Err(Error::NotAscending { position: 1 })
        ));
        assert!(delta_encode_indices(&[5, 2]).is_err());
        assert!(delta_decode_indices(&[1, 0]).is_err());
    }

    #[test]
    fn thousand_random_indices_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut v: Vec<u64> = (0..1000).map(|_| rng.gen_range(0..1_000_000)).collect();
        v.sort_unstable();
        v.dedup();
        let d = delta_encode_indices(&v).unwrap();
        assert_eq!(delta_decode_indices(&d).unwrap(), v);
    }

    #[test]
    fn volume_file_roundtrip_and_layout() {
        let (_, vol) = centered_sphere(8.0);
        let bytes = vol.to_bytes();
        assert_eq!(&bytes[..4], b"TSDF");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &32u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &5.0f32.to_le_bytes());
        assert_eq!(&bytes[21..25], &10.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 37 + 4 * 32 * 32 * 32);
        assert_eq!(TsdfVolume::from_bytes(&bytes).unwrap(), vol);
        assert!(matches!(TsdfVolume::from_bytes(&bytes[..100]), Err(Error::Truncated)));
    }

    proptest! {
        #[test]
        fn delta_coding_roundtrips(mut v in proptest::collection::vec(0u64..u64::MAX / 2, 0..200)) {
            v.sort_unstable();
            v.dedup();
            let s = BlockIndexStream::from_sorted(v.clone()).unwrap();
            prop_assert!(s.deltas.iter().skip(1).all(|&d| d >= 1));
            prop_assert_eq!(BlockIndexStream::from_deltas(s.deltas).unwrap().sorted_indices, v);
        }
    }
}
