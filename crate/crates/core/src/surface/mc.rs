//! Marching cubes driven by an explicit sign grid.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::tables::TRI_TABLE;
use crate::volume::TsdfVolume;
use crate::{Error, Result};

/// Vertices are kept at least this fraction of an edge away from its ends.
pub const EDGE_EPS: f64 = 1e-4;
/// Triangles with area at or below this (mm²) are dropped.
pub const MIN_AREA: f64 = 1e-12;

/// Corner offsets in table order.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the 12 cell edges in table order.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// A grid edge: its lower voxel and the axis it runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridEdge {
    pub voxel: [usize; 3],
    pub axis: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Grid edge each vertex lies on.
    pub vertex_edges: Vec<GridEdge>,
    /// Cell that produced each triangle (linear, x fastest).
    pub triangle_cells: Vec<u32>,
    /// Configuration of every cell, x fastest.
    pub cell_configs: Vec<u8>,
    /// Cells per axis (voxel dims minus one).
    pub cell_dims: [usize; 3],
}

impl Mesh {
    /// Triangle soup with no grid provenance (for metric fixtures).
    pub fn from_triangles(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Self {
        Mesh {
            vertex_edges: Vec::new(),
            triangle_cells: vec![0; triangles.len()],
            vertices,
            triangles,
            cell_configs: Vec::new(),
            cell_dims: [0; 3],
        }
    }

    pub fn triangle(&self, t: usize) -> [[f64; 3]; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn area(&self, t: usize) -> f64 {
        triangle_area(&self.triangle(t))
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Wavefront OBJ; `uvs` holds one coordinate per triangle corner.
    pub fn write_obj<W: Write>(&self, out: &mut W, uvs: Option<&[[f32; 2]]>) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        for v in &self.vertices {
            writeln!(w, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2])?;
        }
        match uvs {
            Some(uv) => {
                if uv.len() != 3 * self.triangles.len() {
                    return Err(Error::Shape { expected: 3 * self.triangles.len(), actual: uv.len() });
                }
                for c in uv {
                    writeln!(w, "vt {:.6} {:.6}", c[0], c[1])?;
                }
                for (t, tri) in self.triangles.iter().enumerate() {
                    let [a, b, c] = tri.map(|i| i + 1);
                    let k = 3 * t + 1;
                    writeln!(w, "f {a}/{} {b}/{} {c}/{}", k, k + 1, k + 2)?;
                }
            }
            None => {
                for tri in &self.triangles {
                    let [a, b, c] = tri.map(|i| i + 1);
                    writeln!(w, "f {a} {b} {c}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_obj(&self, path: impl AsRef<Path>, uvs: Option<&[[f32; 2]]>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_obj(&mut f, uvs)
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn triangle_area(t: &[[f64; 3]; 3]) -> f64 {
    0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0])))
}

/// Configuration index of a cell from its corner signs (`true` = inside).
pub fn cell_config(inside: [bool; 8]) -> u8 {
    inside.iter().enumerate().fold(0u8, |acc, (i, &s)| acc | (u8::from(s) << i))
}

/// Number of triangles the table emits for a configuration.
pub fn table_triangles(config: u8) -> usize {
    TRI_TABLE[config as usize].iter().take_while(|&&e| e >= 0).count() / 3
}

/// Interpolation parameter along an edge from `d0` to `d1` (opposite signs).
pub fn edge_t(d0: f64, d1: f64) -> f64 {
    let denom = d0 - d1;
    let t = if denom == 0.0 { 0.5 } else { d0 / denom };
    if t.is_nan() {
        0.5
    } else {
        t.clamp(EDGE_EPS, 1.0 - EDGE_EPS)
    }
}

/// Extracts the surface using `inside` for topology and `|values|` for
/// vertex placement.
pub fn marching_cubes(volume: &TsdfVolume, inside: &[bool]) -> Result<Mesh> {
    let dims = volume.dims();
    let n = dims[0] * dims[1] * dims[2];
    if inside.len() != n {
        return Err(Error::GridMismatch(format!("{} signs for {n} voxels", inside.len())));
    }
    let cell_dims = dims.map(|d| d.saturating_sub(1));
    let values = volume.values();
    let vs = f64::from(volume.voxel_size());
    let origin = volume.origin().map(f64::from);
    let vidx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let signed = |i: usize| {
        let m = f64::from(values[i].abs());
        if inside[i] {
            -m
        } else {
            m
        }
    };

    struct Slice {
        configs: Vec<u8>,
        tris: Vec<([GridEdge; 3], u32)>,
    }
    let slices: Vec<Slice> = (0..cell_dims[2])
        .into_par_iter()
        .map(|z| {
            let mut configs = Vec::with_capacity(cell_dims[0] * cell_dims[1]);
            let mut tris = Vec::new();
            for y in 0..cell_dims[1] {
                for x in 0..cell_dims[0] {
                    let corner = |c: usize| vidx(x + CORNERS[c][0], y + CORNERS[c][1], z + CORNERS[c][2]);
                    let config = cell_config(std::array::from_fn(|c| inside[corner(c)]));
                    configs.push(config);
                    let row = &TRI_TABLE[config as usize];
                    let cell = (x + cell_dims[0] * (y + cell_dims[1] * z)) as u32;
                    for t in row.chunks(3).take_while(|t| t[0] >= 0) {
                        let e = [t[0], t[1], t[2]].map(|e| {
                            let [a, b] = EDGES[e as usize];
                            let (ca, cb) = (CORNERS[a], CORNERS[b]);
                            let lo = [0, 1, 2].map(|k| ca[k].min(cb[k]));
                            let axis = (0..3).find(|&k| ca[k] != cb[k]).unwrap() as u8;
                            GridEdge { voxel: [x + lo[0], y + lo[1], z + lo[2]], axis }
                        });
                        tris.push((e, cell));
                    }
                }
            }
            Slice { configs, tris }
        })
        .collect();

    let mut mesh = Mesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
        vertex_edges: Vec::new(),
        triangle_cells: Vec::new(),
        cell_configs: Vec::with_capacity(cell_dims.iter().product()),
        cell_dims,
    };
    let mut welded: HashMap<GridEdge, u32> = HashMap::new();
    for s in slices {
        mesh.cell_configs.extend_from_slice(&s.configs);
        for (edges, cell) in s.tris {
            let ids = edges.map(|e| {
                *welded.entry(e).or_insert_with(|| {
                    let [x, y, z] = e.voxel;
                    let mut o = e.voxel;
                    o[e.axis as usize] += 1;
                    let t = edge_t(signed(vidx(x, y, z)), signed(vidx(o[0], o[1], o[2])));
                    let mut p = [x as f64, y as f64, z as f64];
                    p[e.axis as usize] += t;
                    mesh.vertices.push([0, 1, 2].map(|k| origin[k] + vs * p[k]));
                    mesh.vertex_edges.push(e);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            let tri = ids.map(|i| mesh.vertices[i as usize]);
            if triangle_area(&tri) > MIN_AREA {
                mesh.triangles.push(ids);
                mesh.triangle_cells.push(cell);
            }
        }
    }
    Ok(mesh)
}

/// Marching cubes with the signs stored in the volume itself.
pub fn mesh_volume(volume: &TsdfVolume) -> Result<Mesh> {
    marching_cubes(volume, &volume.inside_mask())
}

/// True iff both meshes come from same-sized grids with identical per-cell
/// configurations.
pub fn topology_equal(a: &Mesh, b: &Mesh) -> bool {
    a.cell_dims == b.cell_dims && a.cell_configs == b.cell_configs
}

/// Largest distance between vertices on the same grid edge.
pub fn error_bound_check(original: &Mesh, decoded: &Mesh, voxel_size: f64) -> Result<f64> {
    if !topology_equal(original, decoded) {
        return Err(Error::GridMismatch("meshes differ in cell configurations".into()));
    }
    let by_edge: HashMap<GridEdge, [f64; 3]> =
        decoded.vertex_edges.iter().copied().zip(decoded.vertices.iter().copied()).collect();
    let mut worst = 0.0f64;
    for (e, p) in original.vertex_edges.iter().zip(&original.vertices) {
        let q = by_edge
            .get(e)
            .ok_or_else(|| Error::GridMismatch(format!("edge {e:?} missing from decoded mesh")))?;
        worst = worst.max(norm(sub(*p, *q)));
    }
    debug_assert!(worst <= voxel_size);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{synth_volume, SceneSpec, SCENE_NAMES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn sphere() -> TsdfVolume {
        let scene = SceneSpec::named("sphere", 160.0, 0).unwrap();
        synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap()
    }

    /// Counts of undirected and directed edges across all triangles.
    fn edge_audit(m: &Mesh) -> (BTreeMap<(u32, u32), usize>, BTreeMap<(u32, u32), usize>) {
        let mut und = BTreeMap::new();
        let mut dir = BTreeMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *und.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                *dir.entry((a, b)).or_insert(0) += 1;
            }
        }
        (und, dir)
    }

    #[test]
    fn midpoint_interpolation() {
        assert_eq!(edge_t(0.5, -0.5), 0.5);
        assert_eq!(edge_t(0.0, -1.0), EDGE_EPS);
        assert_eq!(edge_t(1.0, 0.0), 1.0 - EDGE_EPS);
        assert_eq!(edge_t(0.0, 0.0), 0.5);
    }

    #[test]
    fn table_uses_exactly_the_crossing_edges() {
        for c in 0..=255u8 {
            let inside: [bool; 8] = std::array::from_fn(|i| c & (1 << i) != 0);
            let crossing: Vec<usize> = (0..12).filter(|&e| inside[EDGES[e][0]] != inside[EDGES[e][1]]).collect();
            let mut used: Vec<usize> =
                TRI_TABLE[c as usize].iter().take_while(|&&e| e >= 0).map(|&e| e as usize).collect();
            used.sort_unstable();
            used.dedup();
            assert_eq!(used, crossing, "config {c}");
        }
        for i in 0..8 {
            assert_eq!(table_triangles(1 << i), 1);
            assert_eq!(table_triangles(!(1u8 << i)), 1);
        }
        assert_eq!(table_triangles(0), 0);
        assert_eq!(table_triangles(255), 0);
    }

    #[test]
    fn single_negative_corner_gives_one_triangle() {
        let mut v = TsdfVolume::empty([2, 2, 2], 5.0, [0.0; 3], 10.0).unwrap();
        v.set(0, 0, 0, -5.0);
        let m = mesh_volume(&v).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert_eq!(m.cell_configs, vec![1]);
        // d0 = -5, d1 = +10 puts each vertex a third of the way along.
        for p in &m.vertices {
            let s: f64 = p.iter().sum();
            assert!((s - 5.0 / 3.0).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn emitted_triangles_match_table_for_every_config() {
        for c in 0..=255u8 {
            let mut v = TsdfVolume::empty([2, 2, 2], 5.0, [0.0; 3], 10.0).unwrap();
            for (i, o) in CORNERS.iter().enumerate() {
                if c & (1 << i) != 0 {
                    v.set(o[0], o[1], o[2], -4.0);
                }
            }
            let m = mesh_volume(&v).unwrap();
            assert_eq!(m.cell_configs, vec![c]);
            assert_eq!(m.triangles.len(), table_triangles(c), "config {c}");
        }
    }

    #[test]
    fn sphere_is_watertight_and_consistently_oriented() {
        let m = mesh_volume(&sphere()).unwrap();
        assert!(m.triangles.len() > 500);
        let (und, dir) = edge_audit(&m);
        assert!(und.values().all(|&n| n == 2));
        assert!(dir.values().all(|&n| n == 1));
        for t in &m.triangles {
            assert!(t.iter().all(|&i| (i as usize) < m.vertices.len()));
        }
    }

    #[test]
    fn random_scenes_are_watertight() {
        for (i, name) in SCENE_NAMES.iter().enumerate() {
            let scene = SceneSpec::named(name, 160.0, i as u64 + 5).unwrap();
            let v = synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap();
            let m = mesh_volume(&v).unwrap();
            let (und, dir) = edge_audit(&m);
            assert!(und.values().all(|&n| n == 2), "{name}");
            assert!(dir.values().all(|&n| n == 1), "{name}");
        }
    }

    #[test]
    fn vertices_lie_on_crossing_edges() {
        let v = sphere();
        let m = mesh_volume(&v).unwrap();
        let inside = v.inside_mask();
        for (e, p) in m.vertex_edges.iter().zip(&m.vertices) {
            let [x, y, z] = e.voxel;
            let mut o = e.voxel;
            o[e.axis as usize] += 1;
            assert_ne!(inside[v.index(x, y, z)], inside[v.index(o[0], o[1], o[2])]);
            let a = v.position(x, y, z);
            let off = p[e.axis as usize] - a[e.axis as usize];
            assert!(off > 0.0 && off < 5.0);
            for k in 0..3 {
                if k != e.axis as usize {
                    assert_eq!(p[k], a[k]);
                }
            }
        }
    }

    #[test]
    fn outward_normals() {
        let m = mesh_volume(&sphere()).unwrap();
        let c = [80.0; 3];
        let mut outward = 0;
        for t in 0..m.triangles.len() {
            let [a, b, d] = m.triangle(t);
            let n = cross(sub(b, a), sub(d, a));
            if dot(n, sub(a, c)) > 0.0 {
                outward += 1;
            }
        }
        // Every triangle faces one way or the other; the orientation is
        // consistent, so it is all or nothing.
        assert!(outward == 0 || outward == m.triangles.len(), "{outward}");
    }

    #[test]
    fn topology_and_error_bound() {
        let v = sphere();
        let m = mesh_volume(&v).unwrap();
        assert!(topology_equal(&m, &m));
        assert_eq!(error_bound_check(&m, &m, 5.0).unwrap(), 0.0);
        let mut flipped = v.clone();
        let i = (0..v.len()).find(|&i| v.values()[i] > 0.0 && v.values()[i] < 10.0).unwrap();
        let (x, y, z) = (i % 32, (i / 32) % 32, i / 1024);
        flipped.set(x, y, z, -1.0);
        assert!(!topology_equal(&m, &mesh_volume(&flipped).unwrap()));
        assert!(error_bound_check(&m, &mesh_volume(&flipped).unwrap(), 5.0).is_err());
    }

    #[test]
    fn magnitude_fuzz_stays_within_one_voxel() {
        let v = sphere();
        let inside = v.inside_mask();
        let m = marching_cubes(&v, &inside).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let vals: Vec<f32> = inside
                .iter()
                .map(|&s| {
                    let mag = rng.gen_range(f32::MIN_POSITIVE..=10.0);
                    if s { -mag } else { mag }
                })
                .collect();
            let fuzzed = TsdfVolume::new(v.dims(), 5.0, v.origin(), 10.0, vals).unwrap();
            let mf = marching_cubes(&fuzzed, &inside).unwrap();
            assert!(topology_equal(&m, &mf));
            let d = error_bound_check(&m, &mf, 5.0).unwrap();
            assert!(d < 5.0, "{d}");
        }
    }

    #[test]
    fn sign_grid_size_is_checked() {
        assert!(matches!(marching_cubes(&sphere(), &[true; 10]), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn obj_output() {
        let m = Mesh::from_triangles(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]);
        let mut out = Vec::new();
        m.write_obj(&mut out, Some(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.contains("v 1.000000 0.000000 0.000000"));
        assert!(s.contains("vt 0.000000 1.000000"));
        assert!(s.contains("f 1/1 2/2 3/3"));
        assert!(m.write_obj(&mut Vec::new(), Some(&[[0.0, 0.0]])).is_err());
    }
}
