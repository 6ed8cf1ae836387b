//! Minimum-area enclosing rectangles by rotating calipers.

/// An oriented rectangle: `width` runs along `(cos angle, sin angle)`,
/// `height` along the perpendicular. `width >= height` and
/// `angle` lies in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinRect {
    pub angle: f64,
    pub width: f64,
    pub height: f64,
    pub center: [f64; 2],
}

impl MinRect {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.angle.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Coordinates of `p` in the rectangle frame, `[0, width] x [0, height]`
    /// for points inside.
    pub fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let [a, b] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        [dot2(d, a) + 0.5 * self.width, dot2(d, b) + 0.5 * self.height]
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull without collinear points (monotone chain).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Rectangle aligned with direction `e` (unit) that bounds `points`.
pub(crate) fn rect_along(points: &[[f64; 2]], e: [f64; 2]) -> MinRect {
    let n = [-e[1], e[0]];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &p in points {
        for (k, axis) in [e, n].into_iter().enumerate() {
            let t = dot2(p, axis);
            lo[k] = lo[k].min(t);
            hi[k] = hi[k].max(t);
        }
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let center = [mid[0] * e[0] + mid[1] * n[0], mid[0] * e[1] + mid[1] * n[1]];
    normalized(e[1].atan2(e[0]), hi[0] - lo[0], hi[1] - lo[1], center)
}

fn normalized(mut angle: f64, mut width: f64, mut height: f64, center: [f64; 2]) -> MinRect {
    if height > width {
        std::mem::swap(&mut width, &mut height);
        angle += std::f64::consts::FRAC_PI_2;
    }
    angle = angle.rem_euclid(std::f64::consts::PI);
    if angle >= std::f64::consts::PI {
        angle = 0.0;
    }
    MinRect { angle, width, height, center }
}

/// Smallest-area rectangle enclosing `points`. Panics on an empty slice.
pub fn min_area_rect(points: &[[f64; 2]]) -> MinRect {
    assert!(!points.is_empty(), "min_area_rect needs at least one point");
    let h = convex_hull(points);
    match h.len() {
        1 => return MinRect { angle: 0.0, width: 0.0, height: 0.0, center: h[0] },
        2 => {
            let d = [h[1][0] - h[0][0], h[1][1] - h[0][1]];
            let l = d[0].hypot(d[1]);
            return rect_along(&h, [d[0] / l, d[1] / l]);
        }
        _ => {}
    }
    let m = h.len();
    let at = |i: usize| h[i % m];
    let edge = |i: usize| {
        let (a, b) = (at(i), at(i + 1));
        let d = [b[0] - a[0], b[1] - a[1]];
        let l = d[0].hypot(d[1]);
        [d[0] / l, d[1] / l]
    };
    let step = |i: usize| [at(i + 1)[0] - at(i)[0], at(i + 1)[1] - at(i)[1]];

    // Calipers: r maximizes the projection on the edge, t the height above
    // it, l minimizes the projection. All three only move forward.
    let (mut r, mut t, mut l) = (0usize, 0usize, 0usize);
    let mut best: Option<(f64, usize)> = None;
    for i in 0..m {
        let e = edge(i);
        let n = [-e[1], e[0]];
        r = r.max(i);
        while dot2(step(r), e) > 0.0 {
            r += 1;
        }
        t = t.max(r);
        while dot2(step(t), n) > 0.0 {
            t += 1;
        }
        l = l.max(t);
        while dot2(step(l), e) < 0.0 {
            l += 1;
        }
        let width = dot2(at(r), e) - dot2(at(l), e);
        let height = dot2(at(t), n) - dot2(at(i), n);
        let area = width * height;
        if best.map_or(true, |b| area < b.0) {
            best = Some((area, i));
        }
    }
    let (_, i) = best.unwrap();
    rect_along(&h, edge(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every direction through two input points; the optimum is among them.
    fn brute_force_area(points: &[[f64; 2]]) -> f64 {
        let mut best = f64::INFINITY;
        for a in points {
            for b in points {
                let d = [b[0] - a[0], b[1] - a[1]];
                let l = d[0].hypot(d[1]);
                if l > 0.0 {
                    best = best.min(rect_along(points, [d[0] / l, d[1] / l]).area());
                }
            }
        }
        best
    }

    #[test]
    fn unit_square() {
        let r = min_area_rect(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert!((r.area() - 1.0).abs() < 1e-12);
        let q = r.angle / std::f64::consts::FRAC_PI_2;
        assert!((q - q.round()).abs() < 1e-12);
    }

    #[test]
    fn diamond_beats_bounding_box() {
        let r = min_area_rect(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [1.0, -1.0]]);
        assert!((r.area() - 2.0).abs() < 1e-12);
        assert!((r.angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12 || (r.angle - 3.0 * std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let one = min_area_rect(&[[3.0, 4.0]]);
        assert_eq!((one.width, one.height, one.center), (0.0, 0.0, [3.0, 4.0]));
        let line = min_area_rect(&[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0], [2.0, 2.0]]);
        assert!(line.height.abs() < 1e-12);
        assert!((line.width - 18f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], [1.0, 1.0]]);
        assert_eq!(h.len(), 4);
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(3..30);
            let (sx, sy) = (rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0));
            let pts: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.gen_range(-sx..sx), rng.gen_range(-sy..sy)]).collect();
            let r = min_area_rect(&pts);
            let b = brute_force_area(&pts);
            assert!((r.area() - b).abs() <= 1e-9 * b, "{} vs {b}", r.area());
            for p in &pts {
                let q = r.local(*p);
                assert!(q[0] > -1e-9 && q[0] < r.width + 1e-9 && q[1] > -1e-9 && q[1] < r.height + 1e-9);
            }
        }
    }
}
