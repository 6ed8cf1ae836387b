//! Point-to-surface distance over a bounding volume hierarchy, surface
//! sampling, and the Hausdorff and Chamfer distances built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mc::{dot, sub, Mesh};

const LEAF_SIZE: usize = 4;

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let add = |o: [f64; 3], d: [f64; 3], s: f64| [o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2]];
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return add(a, ab, d1 / (d1 - d3));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return add(a, ac, d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return add(b, sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(add(a, ab, v), ac, w)
}

pub fn point_triangle_distance(p: [f64; 3], t: &[[f64; 3]; 3]) -> f64 {
    let q = closest_point_on_triangle(p, t[0], t[1], t[2]);
    dot(sub(p, q), sub(p, q)).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    fn grow(&mut self, p: [f64; 3]) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        self.grow(o.min);
        self.grow(o.max);
    }

    fn dist2(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|k| {
                let d = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split hierarchy over a mesh's triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[[f64; 3]; 3]>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn new(mesh: &Mesh) -> Self {
        let tris: Vec<[[f64; 3]; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            Self::build(&tris, &mut order, 0, tris.len(), &mut nodes);
        }
        let tris = order.iter().map(|&i| tris[i]).collect();
        Bvh { tris, nodes }
    }

    fn build(tris: &[[[f64; 3]; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        let centroid = |t: &[[f64; 3]; 3]| [0, 1, 2].map(|k| (t[0][k] + t[1][k] + t[2][k]) / 3.0);
        for &i in &order[start..end] {
            for v in tris[i] {
                bounds.grow(v);
            }
            cb.grow(centroid(&tris[i]));
        }
        let id = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        nodes.push(Node::Leaf { bounds, start, end });
        let ext = [0, 1, 2].map(|k| cb.max[k] - cb.min[k]);
        let axis = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroid(&tris[a])[axis].total_cmp(&centroid(&tris[b])[axis]).then(a.cmp(&b))
        });
        let left = Self::build(tris, order, start, mid, nodes);
        let right = Self::build(tris, order, mid, end, nodes);
        let mut b = *nodes[left].bounds();
        b.merge(nodes[right].bounds());
        nodes[id] = Node::Inner { bounds: b, left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Exact distance from `p` to the nearest triangle (∞ for an empty mesh).
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best2 = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().dist2(p) >= best2 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for t in &self.tris[start..end] {
                        let d = point_triangle_distance(p, t);
                        best2 = best2.min(d * d);
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best2.sqrt()
    }
}

pub fn point_to_mesh_distance(p: [f64; 3], mesh: &Mesh) -> f64 {
    Bvh::new(mesh).distance(p)
}

/// All vertices plus `per_triangle · #triangles` area-weighted random
/// points, reproducible from `seed`.
pub fn sample_surface(mesh: &Mesh, per_triangle: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut pts = mesh.vertices.clone();
    let n_tri = mesh.triangles.len();
    if n_tri == 0 || per_triangle == 0 {
        return pts;
    }
    let mut cdf = Vec::with_capacity(n_tri);
    let mut acc = 0.0;
    for t in 0..n_tri {
        acc += mesh.area(t);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..per_triangle * n_tri {
        let r = rng.gen::<f64>() * acc;
        let t = cdf.partition_point(|&c| c < r).min(n_tri - 1);
        let [a, b, c] = mesh.triangle(t);
        let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        pts.push([0, 1, 2].map(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k])));
    }
    pts
}

/// Directed distances from `points` to a surface.
pub fn directed_distances(points: &[[f64; 3]], target: &Bvh) -> Vec<f64> {
    points.par_iter().map(|&p| target.distance(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDistance {
    pub hausdorff: f64,
    pub chamfer: f64,
    /// Mean distance from samples of the first surface to the second.
    pub mean_ab: f64,
    pub mean_ba: f64,
    pub max_ab: f64,
    pub max_ba: f64,
}

/// Hausdorff (larger directed maximum) and Chamfer (average of the two
/// directed means) between two meshes, from `per_triangle` samples per
/// triangle plus all vertices on each side.
pub fn surface_distance(a: &Mesh, b: &Mesh, per_triangle: usize, seed: u64) -> SurfaceDistance {
    if a.vertices.is_empty() && b.vertices.is_empty() {
        return SurfaceDistance { hausdorff: 0.0, chamfer: 0.0, mean_ab: 0.0, mean_ba: 0.0, max_ab: 0.0, max_ba: 0.0 };
    }
    let sa = sample_surface(a, per_triangle, seed);
    let sb = sample_surface(b, per_triangle, seed);
    let dab = directed_distances(&sa, &Bvh::new(b));
    let dba = directed_distances(&sb, &Bvh::new(a));
    let stats = |d: &[f64]| {
        if d.is_empty() {
            (0.0, 0.0)
        } else {
            (d.iter().sum::<f64>() / d.len() as f64, d.iter().fold(0.0f64, |m, &x| m.max(x)))
        }
    };
    let (mean_ab, max_ab) = stats(&dab);
    let (mean_ba, max_ba) = stats(&dba);
    SurfaceDistance {
        hausdorff: max_ab.max(max_ba),
        chamfer: 0.5 * mean_ab + 0.5 * mean_ba,
        mean_ab,
        mean_ba,
        max_ab,
        max_ba,
    }
}

pub fn hausdorff(a: &Mesh, b: &Mesh, per_triangle: usize, seed: u64) -> f64 {
    surface_distance(a, b, per_triangle, seed).hausdorff
}

pub fn chamfer(a: &Mesh, b: &Mesh, per_triangle: usize, seed: u64) -> f64 {
    surface_distance(a, b, per_triangle, seed).chamfer
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::mc::mesh_volume;
    use crate::volume::{synth_volume, SceneSpec};

    fn quad(size: f64, z: f64) -> Mesh {
        Mesh::from_triangles(
            vec![[0.0, 0.0, z], [size, 0.0, z], [size, size, z], [0.0, size, z]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    fn brute(p: [f64; 3], m: &Mesh) -> f64 {
        (0..m.triangles.len()).map(|t| point_triangle_distance(p, &m.triangle(t))).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn simple_distances() {
        let q = quad(100.0, 0.0);
        assert_eq!(point_to_mesh_distance([0.0, 0.0, 0.0], &q), 0.0);
        assert!((point_to_mesh_distance([30.0, 40.0, 7.5], &q) - 7.5).abs() < 1e-12);
        assert!((point_to_mesh_distance([-3.0, -4.0, 0.0], &q) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let scene = SceneSpec::named("blend", 160.0, 3).unwrap();
        let m = mesh_volume(&synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap()).unwrap();
        let bvh = Bvh::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = [0, 1, 2].map(|_| rng.gen_range(-20.0..180.0));
            assert!((bvh.distance(p) - brute(p, &m)).abs() < 1e-9);
        }
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 4.0, 0.0]);
        assert_eq!(closest_point_on_triangle([-1.0, -1.0, 3.0], a, b, c), a);
        assert_eq!(closest_point_on_triangle([9.0, -1.0, 0.0], a, b, c), b);
        assert_eq!(closest_point_on_triangle([2.0, -3.0, 0.0], a, b, c), [2.0, 0.0, 0.0]);
        assert_eq!(closest_point_on_triangle([3.0, 3.0, 0.0], a, b, c), [2.0, 2.0, 0.0]);
        assert_eq!(closest_point_on_triangle([1.0, 1.0, 5.0], a, b, c), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_meshes_have_zero_distance() {
        let scene = SceneSpec::named("torus", 160.0, 0).unwrap();
        let m = mesh_volume(&synth_volume(&scene, [32; 3], 5.0, 10.0, 8).unwrap()).unwrap();
        let d = surface_distance(&m, &m, 4, 1);
        assert!(d.hausdorff < 1e-9 && d.chamfer < 1e-9);
    }

    #[test]
    fn translated_quad() {
        let a = quad(100.0, 0.0);
        let b = quad(100.0, 2.5);
        let d = surface_distance(&a, &b, 50, 7);
        assert!((d.hausdorff - 2.5).abs() < 0.025);
        assert!((d.chamfer - 2.5).abs() < 0.025);
    }

    #[test]
    fn asymmetric_pair_matches_hand_combination() {
        let big = quad(10.0, 0.0);
        let small = Mesh::from_triangles(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]], vec![[0, 1, 2]]);
        let d = surface_distance(&small, &big, 20, 3);
        // Every point of the small patch sits 1 above the big one.
        assert!((d.mean_ab - 1.0).abs() < 1e-12 && (d.max_ab - 1.0).abs() < 1e-12);
        let pts = sample_surface(&big, 20, 3);
        let dists: Vec<f64> = pts.iter().map(|&p| brute(p, &small)).collect();
        let mean_ba = dists.iter().sum::<f64>() / dists.len() as f64;
        let max_ba = dists.iter().fold(0.0f64, |m, &x| m.max(x));
        assert!((d.mean_ba - mean_ba).abs() < 1e-9);
        assert!(d.mean_ba > d.mean_ab);
        assert!((d.hausdorff - max_ba.max(1.0)).abs() < 1e-9);
        assert!((d.chamfer - 0.5 * (1.0 + mean_ba)).abs() < 1e-9);
        let r = surface_distance(&big, &small, 20, 3);
        assert_eq!((r.hausdorff, r.chamfer), (d.hausdorff, d.chamfer));
    }

    #[test]
    fn sampling_is_seeded_and_area_weighted() {
        let m = Mesh::from_triangles(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0], [19.0, 0.0, 0.0], [10.0, 9.0, 0.0]],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let a = sample_surface(&m, 1000, 5);
        assert_eq!(a, sample_surface(&m, 1000, 5));
        assert_eq!(a.len(), 6 + 2000);
        let on_small = a[6..].iter().filter(|p| p[0] < 5.0).count() as f64;
        // Area ratio 1 : 81.
        assert!((on_small / 2000.0 - 1.0 / 82.0).abs() < 0.01);
    }
}
