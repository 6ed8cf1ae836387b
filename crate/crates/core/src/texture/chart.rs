//! Per-block charts: normal grouping, tangent projection and packing.

use std::collections::HashMap;

use super::calipers::{min_area_rect, MinRect};
use super::pack::{pack_rects, GUTTER};
use crate::surface::mc::{cross, dot, norm};
use crate::surface::Mesh;

/// Triangles join a group while their normal is within 60 degrees of the
/// group's mean normal.
pub const GROUP_COS: f64 = 0.5;
/// Uniform shrink factor applied while the groups of a chart do not fit.
const SHRINK: f64 = 0.8;

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let l = norm(v);
    (l > 1e-300).then(|| v.map(|c| c / l))
}

fn triangle_normal(t: &[[f64; 3]; 3]) -> [f64; 3] {
    let e1 = [0, 1, 2].map(|k| t[1][k] - t[0][k]);
    let e2 = [0, 1, 2].map(|k| t[2][k] - t[0][k]);
    unit(cross(e1, e2)).unwrap_or([0.0, 0.0, 1.0])
}

/// Orthonormal tangent axes for a plane with normal `n`.
pub fn tangent_frame(n: [f64; 3]) -> [[f64; 3]; 2] {
    let k = (0..3).min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs())).unwrap();
    let mut axis = [0.0; 3];
    axis[k] = 1.0;
    let u = unit(cross(axis, n)).unwrap();
    [u, cross(n, u)]
}

/// Triangles of one block that share a chart rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleGroup {
    /// Mesh triangle ids, ascending.
    pub triangles: Vec<u32>,
    /// Area-weighted mean normal, unit length.
    pub normal: [f64; 3],
    pub frame: [[f64; 3]; 2],
    /// Tangent-plane coordinates of each triangle corner, three per triangle.
    pub points: Vec<[f64; 2]>,
    pub rect: MinRect,
}

/// Greedy region growing over the triangles `tris` of one block: seed with
/// the largest unassigned triangle (lowest id on ties), absorb unassigned
/// triangles that share a vertex with the group and whose normal is within
/// 60 degrees of the mean, refresh the mean, and repeat until stable.
pub fn group_triangles(mesh: &Mesh, tris: &[u32]) -> Vec<TriangleGroup> {
    let normals: Vec<[f64; 3]> = tris.iter().map(|&t| triangle_normal(&mesh.triangle(t as usize))).collect();
    let areas: Vec<f64> = tris.iter().map(|&t| mesh.area(t as usize)).collect();
    let mut by_vertex: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, &t) in tris.iter().enumerate() {
        for v in mesh.triangles[t as usize] {
            by_vertex.entry(v).or_default().push(i);
        }
    }
    let mut order: Vec<usize> = (0..tris.len()).collect();
    order.sort_by(|&a, &b| areas[b].total_cmp(&areas[a]).then(tris[a].cmp(&tris[b])));

    let mut assigned = vec![false; tris.len()];
    let mut groups = Vec::new();
    while let Some(&seed) = order.iter().find(|&&i| !assigned[i]) {
        assigned[seed] = true;
        let mut members = vec![seed];
        let mean_of = |members: &[usize]| {
            let mut sum = [0.0; 3];
            for &m in members {
                for k in 0..3 {
                    sum[k] += areas[m] * normals[m][k];
                }
            }
            unit(sum).unwrap_or(normals[seed])
        };
        let mut mean = normals[seed];
        loop {
            let mut candidates: Vec<usize> = members
                .iter()
                .flat_map(|&m| mesh.triangles[tris[m] as usize])
                .flat_map(|v| by_vertex[&v].iter().copied())
                .filter(|&c| !assigned[c] && dot(normals[c], mean) > GROUP_COS)
                .collect();
            if candidates.is_empty() {
                break;
            }
            candidates.sort_unstable();
            candidates.dedup();
            for c in candidates {
                assigned[c] = true;
                members.push(c);
            }
            mean = mean_of(&members);
        }
        // The mean drifts while growing; release members it left behind.
        loop {
            let (keep, drop): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&m| m == seed || dot(normals[m], mean) > GROUP_COS);
            if drop.is_empty() {
                break;
            }
            for m in drop {
                assigned[m] = false;
            }
            members = keep;
            mean = mean_of(&members);
        }
        members.sort_unstable();
        let frame = tangent_frame(mean);
        let points: Vec<[f64; 2]> = members
            .iter()
            .flat_map(|&m| mesh.triangle(tris[m] as usize))
            .map(|p| [dot(p, frame[0]), dot(p, frame[1])])
            .collect();
        let rect = min_area_rect(&points);
        groups.push(TriangleGroup { triangles: members.iter().map(|&m| tris[m]).collect(), normal: mean, frame, points, rect });
    }
    groups
}

/// Where a group landed inside its chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    /// Top-left pixel of the rectangle, gutter excluded.
    pub origin: [u32; 2],
    /// Rectangle size in pixels.
    pub size: [u32; 2],
    /// False when the chart overflowed and the group was collapsed to a point.
    pub packed: bool,
}

/// The 2D chart of one occupied block.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub block: [u32; 3],
    /// Side length in pixels.
    pub size: u32,
    /// Pixels per millimetre, shared by every group of the chart.
    pub scale: f64,
    pub groups: Vec<TriangleGroup>,
    pub placements: Vec<Placement>,
}

fn pixel_sizes(groups: &[TriangleGroup], scale: f64) -> Vec<[u32; 2]> {
    groups
        .iter()
        .map(|g| [g.rect.width, g.rect.height].map(|e| ((e * scale).ceil() as u32).max(1)))
        .collect()
}

impl Chart {
    /// Groups the triangles of one block and packs them into a chart of
    /// `size` pixels. Groups are shrunk uniformly until they fit; if even
    /// one-pixel rectangles overflow, the smallest groups collapse to a point.
    pub fn build(mesh: &Mesh, block: [u32; 3], tris: &[u32], size: u32) -> Chart {
        let groups = group_triangles(mesh, tris);
        let usable = f64::from(size - 2 * GUTTER);
        let extent = groups.iter().map(|g| g.rect.width).fold(0.0, f64::max);
        let mut scale = if extent > 0.0 { usable / extent } else { 1.0 };
        loop {
            let sizes = pixel_sizes(&groups, scale);
            if let Some(at) = pack_rects(&sizes, size) {
                let placements =
                    at.into_iter().zip(sizes).map(|(origin, size)| Placement { origin, size, packed: true }).collect();
                return Chart { block, size, scale, groups, placements };
            }
            if sizes.iter().all(|s| *s == [1, 1]) {
                break;
            }
            scale *= SHRINK;
        }
        // Overflow: keep the largest groups that fit at one pixel.
        let sizes = pixel_sizes(&groups, scale);
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|&a, &b| groups[b].rect.width.total_cmp(&groups[a].rect.width).then(a.cmp(&b)));
        let mut keep = groups.len();
        let at = loop {
            keep -= 1;
            let chosen: Vec<[u32; 2]> = order[..keep].iter().map(|&i| sizes[i]).collect();
            if let Some(at) = pack_rects(&chosen, size) {
                break at;
            }
        };
        let first = at.first().copied().unwrap_or([GUTTER; 2]);
        let mut placements = vec![Placement { origin: first, size: [1, 1], packed: false }; groups.len()];
        for (j, &i) in order[..keep].iter().enumerate() {
            placements[i] = Placement { origin: at[j], size: sizes[i], packed: true };
        }
        Chart { block, size, scale, groups, placements }
    }

    /// Chart-space pixel coordinates of every corner of group `g`.
    pub fn group_uvs(&self, g: usize) -> Vec<[f64; 2]> {
        let group = &self.groups[g];
        let p = self.placements[g];
        let o = p.origin.map(f64::from);
        if !p.packed {
            return vec![[o[0] + 0.5, o[1] + 0.5]; group.points.len()];
        }
        let (w, h) = (group.rect.width, group.rect.height);
        let [sx, sy] = p.size.map(f64::from);
        group
            .points
            .iter()
            .map(|&q| {
                let l = group.rect.local(q);
                let x = (l[0].clamp(0.0, w) * self.scale).min(sx);
                let y = (l[1].clamp(0.0, h) * self.scale).min(sy);
                [o[0] + x, o[1] + y]
            })
            .collect()
    }

    pub fn triangle_count(&self) -> usize {
        self.groups.iter().map(|g| g.triangles.len()).sum()
    }
}
