//! Atlas assembly: Morton-rank slot placement, rasterization and images.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::chart::Chart;
use super::morton::{morton2_inv, morton3};
use super::pack::GUTTER;
use crate::surface::Mesh;
use crate::{Error, Result};

/// Smallest chart side in pixels.
pub const MIN_SLOT: u32 = 8;

/// Slot of every block: `M2^-1(rank(M3(x, y, z)))`, as `(u, v)`.
pub fn assign_chart_slots(blocks: &[[u32; 3]]) -> Result<BTreeMap<[u32; 3], [u32; 2]>> {
    let mut codes: Vec<(u64, [u32; 3])> = blocks.iter().map(|&b| (morton3(b[0], b[1], b[2]), b)).collect();
    codes.sort_unstable();
    if let Some(w) = codes.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Malformed(format!("duplicate block {:?}", w[0].1)));
    }
    Ok(codes
        .into_iter()
        .enumerate()
        .map(|(rank, (_, b))| {
            let (u, v) = morton2_inv(rank as u64);
            (b, [u, v])
        })
        .collect())
}

/// Slots per atlas side and slot side in pixels for `blocks` charts in an
/// atlas of nominal side `resolution`.
pub fn slot_layout(blocks: usize, resolution: u32) -> (u32, u32) {
    let mut levels = 0u32;
    while 4usize.pow(levels) < blocks {
        levels += 1;
    }
    let grid = 1u32 << levels;
    (grid, (resolution / grid).max(MIN_SLOT))
}

/// Fraction of blocks present in both frames whose rank moved by the same
/// amount as the previous shared block in Morton order, i.e. whose slot
/// changed by a rank shift only. `None` when no block is shared.
pub fn rank_locality(prev: &[[u32; 3]], next: &[[u32; 3]]) -> Option<f64> {
    let rank = |blocks: &[[u32; 3]]| -> BTreeMap<u64, usize> {
        let mut codes: Vec<u64> = blocks.iter().map(|b| morton3(b[0], b[1], b[2])).collect();
        codes.sort_unstable();
        codes.dedup();
        codes.into_iter().enumerate().map(|(r, c)| (c, r)).collect()
    };
    let (a, b) = (rank(prev), rank(next));
    let shifts: Vec<i64> = a.iter().filter_map(|(c, &ra)| b.get(c).map(|&rb| rb as i64 - ra as i64)).collect();
    if shifts.is_empty() {
        return None;
    }
    let kept = 1 + shifts.windows(2).filter(|w| w[0] == w[1]).count();
    Some(kept as f64 / shifts.len() as f64)
}

/// All charts of a mesh placed on the slot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    /// Atlas side in pixels.
    pub size: u32,
    pub slot_size: u32,
    pub grid: u32,
    /// Charts in Morton rank order.
    pub charts: Vec<Chart>,
    /// Slot `(u, v)` of each chart.
    pub slots: Vec<[u32; 2]>,
    /// Atlas pixel coordinates of every triangle corner, three per triangle.
    pub uvs: Vec<[f64; 2]>,
}

/// Block of every triangle, from the cell that produced it.
fn triangle_blocks(mesh: &Mesh, k: usize) -> Result<Vec<[u32; 3]>> {
    let [cx, cy, cz] = mesh.cell_dims;
    if cx * cy * cz == 0 && !mesh.triangles.is_empty() {
        return Err(Error::GridMismatch("mesh carries no grid cells".into()));
    }
    if k == 0 {
        return Err(Error::InvalidVolume("block size must be positive".into()));
    }
    Ok(mesh
        .triangle_cells
        .iter()
        .map(|&c| {
            let c = c as usize;
            [c % cx / k, c / cx % cy / k, c / (cx * cy) / k].map(|v| v as u32)
        })
        .collect())
}

impl Atlas {
    /// Charts every block that holds triangles and places the charts by
    /// Morton rank. Depends only on the mesh, so a receiver that meshes the
    /// same decoded volume gets identical UVs.
    pub fn build(mesh: &Mesh, k: usize, resolution: u32) -> Result<Atlas> {
        let owners = triangle_blocks(mesh, k)?;
        let mut per_block: BTreeMap<[u32; 3], Vec<u32>> = BTreeMap::new();
        for (t, b) in owners.iter().enumerate() {
            per_block.entry(*b).or_default().push(t as u32);
        }
        let blocks: Vec<[u32; 3]> = per_block.keys().copied().collect();
        let slot_of = assign_chart_slots(&blocks)?;
        let (grid, slot_size) = slot_layout(blocks.len(), resolution);

        let mut ranked: Vec<([u32; 3], Vec<u32>)> = per_block.into_iter().collect();
        ranked.sort_by_key(|(b, _)| morton3(b[0], b[1], b[2]));
        let charts: Vec<Chart> =
            ranked.par_iter().map(|(b, tris)| Chart::build(mesh, *b, tris, slot_size)).collect();
        let slots: Vec<[u32; 2]> = charts.iter().map(|c| slot_of[&c.block]).collect();

        let mut uvs = vec![[0.0; 2]; 3 * mesh.triangles.len()];
        for (chart, slot) in charts.iter().zip(&slots) {
            let base = slot.map(|s| f64::from(s * slot_size));
            for g in 0..chart.groups.len() {
                let local = chart.group_uvs(g);
                for (i, &t) in chart.groups[g].triangles.iter().enumerate() {
                    for c in 0..3 {
                        let p = local[3 * i + c];
                        uvs[3 * t as usize + c] = [base[0] + p[0], base[1] + p[1]];
                    }
                }
            }
        }
        Ok(Atlas { size: grid * slot_size, slot_size, grid, charts, slots, uvs })
    }

    /// Normalized texture coordinates for OBJ export (`v` pointing up).
    pub fn obj_uvs(&self) -> Vec<[f32; 2]> {
        let s = f64::from(self.size.max(1));
        self.uvs.iter().map(|p| [(p[0] / s) as f32, (1.0 - p[1] / s) as f32]).collect()
    }

    /// Little-endian bytes of the pixel UV array, for exact comparisons.
    pub fn uv_bytes(&self) -> Vec<u8> {
        self.uvs.iter().flat_map(|p| p.iter().flat_map(|c| c.to_le_bytes())).collect()
    }

    pub fn slot_map(&self) -> BTreeMap<[u32; 3], [u32; 2]> {
        self.charts.iter().zip(&self.slots).map(|(c, s)| (c.block, *s)).collect()
    }

    /// Paints every chart: texels inside a group rectangle or its gutter take
    /// the colour of the surface point they map to, extrapolating from the
    /// nearest triangle outside the footprint.
    pub fn rasterize<F>(&self, mesh: &Mesh, field: &F) -> Image
    where
        F: Fn([f64; 3]) -> [f64; 3] + Sync,
    {
        let texels: Vec<Vec<([u32; 2], [u8; 3])>> = self
            .charts
            .par_iter()
            .zip(&self.slots)
            .map(|(chart, slot)| {
                let base = slot.map(|s| s * self.slot_size);
                let mut out = Vec::new();
                for (g, group) in chart.groups.iter().enumerate() {
                    let p = chart.placements[g];
                    if !p.packed {
                        continue;
                    }
                    let uv = chart.group_uvs(g);
                    let tris: Vec<([[f64; 2]; 3], [[f64; 3]; 3])> = group
                        .triangles
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| ([uv[3 * i], uv[3 * i + 1], uv[3 * i + 2]], mesh.triangle(t as usize)))
                        .filter(|(q, _)| signed_area(q).abs() > 1e-12)
                        .collect();
                    if tris.is_empty() {
                        continue;
                    }
                    let x0 = p.origin[0] - GUTTER;
                    let y0 = p.origin[1] - GUTTER;
                    for y in y0..p.origin[1] + p.size[1] + GUTTER {
                        for x in x0..p.origin[0] + p.size[0] + GUTTER {
                            let c = [f64::from(x) + 0.5, f64::from(y) + 0.5];
                            let (q, pts) = owner(&tris, c);
                            let w = barycentric(q, c);
                            let pos = [0, 1, 2].map(|k| w[0] * pts[0][k] + w[1] * pts[1][k] + w[2] * pts[2][k]);
                            let rgb = field(pos).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                            out.push(([base[0] + x, base[1] + y], rgb));
                        }
                    }
                }
                out
            })
            .collect();
        let mut img = Image::new(self.size, self.size);
        for chart in texels {
            for (p, rgb) in chart {
                img.set(p[0], p[1], rgb);
            }
        }
        img
    }

    /// Blocks covered by the atlas.
    pub fn blocks(&self) -> Vec<[u32; 3]> {
        self.charts.iter().map(|c| c.block).collect()
    }

    /// True iff no two charts share a slot.
    pub fn slots_injective(&self) -> bool {
        self.slots.iter().collect::<HashSet<_>>().len() == self.slots.len()
    }
}

pub(crate) fn signed_area(q: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((q[1][0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[2][0] - q[0][0]) * (q[1][1] - q[0][1]))
}

/// Barycentric coordinates of `p`; negative outside the triangle.
pub(crate) fn barycentric(q: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let a = signed_area(q);
    let w0 = signed_area(&[p, q[1], q[2]]) / a;
    let w1 = signed_area(&[q[0], p, q[2]]) / a;
    [w0, w1, 1.0 - w0 - w1]
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// First triangle containing `c`, else the nearest one.
fn owner<'a>(tris: &'a [([[f64; 2]; 3], [[f64; 3]; 3])], c: [f64; 2]) -> &'a ([[f64; 2]; 3], [[f64; 3]; 3]) {
    if let Some(t) = tris.iter().find(|(q, _)| barycentric(q, c).iter().all(|&w| w >= -1e-12)) {
        return t;
    }
    let dist = |q: &[[f64; 2]; 3]| (0..3).map(|i| segment_distance(c, q[i], q[(i + 1) % 3])).fold(f64::INFINITY, f64::min);
    let mut best = &tris[0];
    let mut best_d = dist(&best.0);
    for t in &tris[1..] {
        let d = dist(&t.0);
        if d < best_d {
            best = t;
            best_d = d;
        }
    }
    best
}

/// Procedural colour sources defined on 3D surface points (millimetres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorField {
    Constant([f64; 3]),
    /// Alternating cubes of side `period`.
    Checker { period: f64 },
    /// Smooth sinusoidal bands per channel.
    Bands { period: f64 },
}

impl ColorField {
    pub const NAMES: [&'static str; 3] = ["constant", "checker", "bands"];

    pub fn named(name: &str) -> Option<ColorField> {
        match name {
            "constant" => Some(ColorField::Constant([0.8, 0.6, 0.4])),
            "checker" => Some(ColorField::Checker { period: 10.0 }),
            "bands" => Some(ColorField::Bands { period: 80.0 }),
            _ => None,
        }
    }

    pub fn color(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            ColorField::Constant(c) => c,
            ColorField::Checker { period } => {
                let parity: i64 = p.iter().map(|&v| (v / period).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    [0.9, 0.9, 0.9]
                } else {
                    [0.15, 0.2, 0.5]
                }
            }
            ColorField::Bands { period } => {
                let w = std::f64::consts::TAU / period;
                [0.5 + 0.5 * (w * p[0]).sin(), 0.5 + 0.5 * (w * p[1]).sin(), 0.5 + 0.5 * (w * p[2]).sin()]
            }
        }
    }
}

/// 8-bit RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Image {
        Image { width, height, data: vec![0; 3 * width as usize * height as usize] }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at pixel coordinates (texel centres at `i + 0.5`),
    /// channels in `[0, 1]`.
    pub fn sample(&self, p: [f64; 2]) -> [f64; 3] {
        let fx = (p[0] - 0.5).clamp(0.0, f64::from(self.width - 1));
        let fy = (p[1] - 0.5).clamp(0.0, f64::from(self.height - 1));
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - f64::from(x0), fy - f64::from(y0));
        let px = |x, y| self.get(x, y).map(|c| f64::from(c) / 255.0);
        let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
        [0, 1, 2].map(|k| (1.0 - ty) * ((1.0 - tx) * a[k] + tx * b[k]) + ty * ((1.0 - tx) * c[k] + tx * d[k]))
    }

    pub fn write_ppm<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)?;
        Ok(())
    }

    pub fn write_png<W: Write>(&self, out: W) -> Result<()> {
        let mut enc = png::Encoder::new(out, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Malformed(format!("png: {e}")))?;
        w.write_image_data(&self.data).map_err(|e| Error::Malformed(format!("png: {e}")))?;
        Ok(())
    }

    /// Writes PPM for a `.ppm` extension and PNG otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
            self.write_ppm(&mut f)?;
        } else {
            self.write_png(&mut f)?;
        }
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::mesh_volume;
    use crate::volume::{synth_volume, SceneSpec, Shape};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene_mesh(name: &str, seed: u64, n: usize) -> Mesh {
        let scene = SceneSpec::named(name, 5.0 * n as f64, seed).unwrap();
        mesh_volume(&synth_volume(&scene, [n; 3], 5.0, 10.0, 8).unwrap()).unwrap()
    }

    #[test]
    fn slot_examples() {
        let m = assign_chart_slots(&[[0, 0, 0], [1, 0, 0]]).unwrap();
        assert_eq!(m[&[0, 0, 0]], [0, 0]);
        assert_eq!(m[&[1, 0, 0]], [0, 1]);
        assert_eq!(assign_chart_slots(&[[5, 9, 2]]).unwrap()[&[5, 9, 2]], [0, 0]);
        assert!(assign_chart_slots(&[[1, 2, 3], [1, 2, 3]]).is_err());
    }

    #[test]
    fn slots_ignore_input_order_and_are_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut blocks: Vec<[u32; 3]> = Vec::new();
        for x in 0..6 {
            for y in 0..5 {
                for z in 0..4 {
                    if (x * 7 + y * 3 + z) % 3 != 0 {
                        blocks.push([x, y, z]);
                    }
                }
            }
        }
        let a = assign_chart_slots(&blocks).unwrap();
        blocks.shuffle(&mut rng);
        assert_eq!(a, assign_chart_slots(&blocks).unwrap());
        let distinct: HashSet<[u32; 2]> = a.values().copied().collect();
        assert_eq!(distinct.len(), a.len());
    }

    #[test]
    fn layout_is_power_of_two_grid() {
        assert_eq!(slot_layout(1, 512), (1, 512));
        assert_eq!(slot_layout(4, 512), (2, 256));
        assert_eq!(slot_layout(5, 512), (4, 128));
        assert_eq!(slot_layout(100, 512), (16, 32));
        assert_eq!(slot_layout(5000, 512), (128, 8));
    }

    #[test]
    fn uvs_stay_in_their_slot() {
        let m = scene_mesh("blend", 2, 48);
        let atlas = Atlas::build(&m, 8, 512).unwrap();
        assert!(atlas.slots_injective());
        let s = f64::from(atlas.slot_size);
        for (chart, slot) in atlas.charts.iter().zip(&atlas.slots) {
            let lo = slot.map(|v| f64::from(v) * s);
            for g in &chart.groups {
                for &t in &g.triangles {
                    for c in 0..3 {
                        let p = atlas.uvs[3 * t as usize + c];
                        assert!(p[0] >= lo[0] + 1.0 && p[0] <= lo[0] + s - 1.0);
                        assert!(p[1] >= lo[1] + 1.0 && p[1] <= lo[1] + s - 1.0);
                    }
                }
            }
        }
        assert_eq!(atlas.charts.iter().map(Chart::triangle_count).sum::<usize>(), m.triangles.len());
    }

    #[test]
    fn footprints_do_not_overlap() {
        for (name, seed) in [("sphere", 0), ("blend", 1), ("box", 3), ("torus", 0), ("random", 7), ("random", 8), ("blend", 9)] {
            let m = scene_mesh(name, seed, 40);
            let atlas = Atlas::build(&m, 8, 256).unwrap();
            let mut owners: BTreeMap<[u32; 2], usize> = BTreeMap::new();
            for t in 0..m.triangles.len() {
                let q = [atlas.uvs[3 * t], atlas.uvs[3 * t + 1], atlas.uvs[3 * t + 2]];
                if signed_area(&q).abs() < 1e-12 {
                    continue;
                }
                let lo = [0, 1].map(|k| q.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min).floor() as u32);
                let hi = [0, 1].map(|k| q.iter().map(|p| p[k]).fold(0.0, f64::max).ceil() as u32);
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        let c = [f64::from(x) + 0.5, f64::from(y) + 0.5];
                        if barycentric(&q, c).iter().all(|&w| w > 1e-9) {
                            *owners.entry([x, y]).or_default() += 1;
                        }
                    }
                }
            }
            let doubled = owners.values().filter(|&&n| n > 1).count();
            assert_eq!(doubled, 0, "{name}: {doubled} texels covered twice");
        }
    }

    #[test]
    fn constant_field_paints_every_chart_texel() {
        let m = scene_mesh("sphere", 0, 32);
        let atlas = Atlas::build(&m, 8, 128).unwrap();
        let img = atlas.rasterize(&m, &|_| [0.2, 0.4, 0.6]);
        let painted = img.data.chunks(3).filter(|p| p != &[0, 0, 0]).count();
        assert!(painted > 0);
        assert!(img.data.chunks(3).all(|p| p == [0, 0, 0] || p == [51, 102, 153]));
    }

    #[test]
    fn checker_on_flat_quad_shows_both_colours() {
        let mut v = crate::volume::TsdfVolume::empty([16; 3], 5.0, [0.0; 3], 10.0).unwrap();
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    v.set(x, y, z, ((z as f32 - 7.5) * 5.0).clamp(-10.0, 10.0));
                }
            }
        }
        let m = mesh_volume(&v).unwrap();
        let atlas = Atlas::build(&m, 8, 64).unwrap();
        assert_eq!(atlas.charts.len(), 4);
        let img = atlas.rasterize(&m, &|p| ColorField::Checker { period: 10.0 }.color(p));
        let light = img.data.chunks(3).filter(|p| p[0] > 200).count();
        let dark = img.data.chunks(3).filter(|p| p[0] > 0 && p[0] < 100).count();
        assert!(light > 50 && dark > 50, "{light} {dark}");
    }

    #[test]
    fn render_back_matches_field_at_vertices() {
        // Gently varying field; the per-vertex error is dominated by 8-bit rounding.
        let field = |p: [f64; 3]| [0.5 + 0.002 * p[0], 0.3 + 0.002 * p[1], 0.2 + 0.002 * p[2]];
        for (name, seed) in [("sphere", 0), ("blend", 5)] {
            let m = scene_mesh(name, seed, 40);
            let atlas = Atlas::build(&m, 8, 512).unwrap();
            let img = atlas.rasterize(&m, &field);
            let mut worst = 0.0f64;
            for (t, tri) in m.triangles.iter().enumerate() {
                for c in 0..3 {
                    let want = field(m.vertices[tri[c] as usize]);
                    let got = img.sample(atlas.uvs[3 * t + c]);
                    for k in 0..3 {
                        worst = worst.max((want[k] - got[k]).abs());
                    }
                }
            }
            assert!(worst <= 1.0 / 255.0, "{name}: {}", worst * 255.0);
        }
    }

    #[test]
    fn translation_keeps_rank_shifts() {
        let base = SceneSpec::new(Shape::Sphere { center: [160.0, 160.0, 160.0], radius: 90.0 });
        let blocks = |dx: f64| {
            let mut s = base.clone();
            s.shape = s.shape.translated([dx, 0.0, 0.0]);
            let m = mesh_volume(&synth_volume(&s, [64; 3], 5.0, 10.0, 8).unwrap()).unwrap();
            Atlas::build(&m, 8, 512).unwrap().blocks()
        };
        let a = blocks(0.0);
        // Up to half a block per frame; a full-block step scores about 0.6.
        for dx in [5.0, 10.0, 20.0] {
            let l = rank_locality(&a, &blocks(dx)).unwrap();
            assert!(l >= 0.8, "shift {dx} mm: {l}");
        }
        assert_eq!(rank_locality(&a, &a), Some(1.0));
    }

    #[test]
    fn images_encode() {
        let mut img = Image::new(3, 2);
        img.set(2, 1, [1, 2, 3]);
        let mut ppm = Vec::new();
        img.write_ppm(&mut ppm).unwrap();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(&ppm[ppm.len() - 3..], &[1, 2, 3]);
        let mut png_bytes = Vec::new();
        img.write_png(&mut png_bytes).unwrap();
        let dec = png::Decoder::new(&png_bytes[..]);
        let mut r = dec.read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size()];
        r.next_frame(&mut buf).unwrap();
        assert_eq!(buf, img.data);
    }
}
