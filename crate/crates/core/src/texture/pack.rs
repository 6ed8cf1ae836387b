//! Quadtree rectangle packing inside a square chart.

/// Pixels kept free around every packed rectangle.
pub const GUTTER: u32 = 1;

enum Node {
    Free,
    Full,
    Split(Box<[Node; 4]>),
}

/// Quadrant pairs a wide (rows) or tall (columns) rectangle may span.
const ROWS: [[usize; 2]; 2] = [[0, 1], [2, 3]];
const COLS: [[usize; 2]; 2] = [[0, 2], [1, 3]];

fn quadrant(origin: [u32; 2], half: u32, i: usize) -> [u32; 2] {
    [origin[0] + half * (i as u32 & 1), origin[1] + half * (i as u32 >> 1)]
}

/// Claims two free sibling quadrants for a rectangle that spans them.
fn claim_pair(children: &mut [Node; 4], origin: [u32; 2], half: u32, w: u32, h: u32) -> Option<[u32; 2]> {
    let pairs: &[[usize; 2]] = if h <= half && w <= 2 * half {
        &ROWS
    } else if w <= half && h <= 2 * half {
        &COLS
    } else {
        &[]
    };
    let pair = pairs.iter().find(|p| p.iter().all(|&i| matches!(children[i], Node::Free)))?;
    for &i in pair {
        children[i] = Node::Full;
    }
    Some(quadrant(origin, half, pair[0]))
}

fn insert(node: &mut Node, origin: [u32; 2], size: u32, w: u32, h: u32) -> Option<[u32; 2]> {
    let half = size / 2;
    match node {
        Node::Full => None,
        Node::Split(children) => {
            if w <= half && h <= half {
                if let Some(at) =
                    (0..4).find_map(|i| insert(&mut children[i], quadrant(origin, half, i), half, w, h))
                {
                    return Some(at);
                }
            }
            claim_pair(children, origin, half, w, h)
        }
        Node::Free => {
            if w > size || h > size {
                return None;
            }
            if half == 0 || (w > half && h > half) {
                *node = Node::Full;
                return Some(origin);
            }
            let mut children = Box::new([Node::Free, Node::Free, Node::Free, Node::Free]);
            let at = if w <= half && h <= half {
                insert(&mut children[0], origin, half, w, h)
            } else {
                claim_pair(&mut children, origin, half, w, h)
            };
            *node = Node::Split(children);
            at
        }
    }
}

/// Packs rectangles of the given pixel sizes into a `chart x chart` square,
/// largest first. Each rectangle claims its size plus [`GUTTER`] on every
/// side. Returns the top-left corner of every rectangle (inside its gutter)
/// in input order, or `None` if they do not all fit.
pub fn pack_rects(sizes: &[[u32; 2]], chart: u32) -> Option<Vec<[u32; 2]>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| {
        let [w, h] = sizes[i];
        (std::cmp::Reverse(w.max(h)), std::cmp::Reverse(w * h), i)
    });
    let mut root = Node::Free;
    let mut out = vec![[0; 2]; sizes.len()];
    for i in order {
        let [w, h] = sizes[i];
        let at = insert(&mut root, [0, 0], chart, w + 2 * GUTTER, h + 2 * GUTTER)?;
        out[i] = [at[0] + GUTTER, at[1] + GUTTER];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn padded(p: [u32; 2], s: [u32; 2]) -> [u32; 4] {
        [p[0] - GUTTER, p[1] - GUTTER, p[0] + s[0] + GUTTER, p[1] + s[1] + GUTTER]
    }

    fn overlap(a: [u32; 4], b: [u32; 4]) -> u64 {
        let w = a[2].min(b[2]).saturating_sub(a[0].max(b[0]));
        let h = a[3].min(b[3]).saturating_sub(a[1].max(b[1]));
        u64::from(w) * u64::from(h)
    }

    #[test]
    fn single_rect_goes_to_origin() {
        assert_eq!(pack_rects(&[[5, 3]], 32), Some(vec![[GUTTER, GUTTER]]));
    }

    #[test]
    fn four_quarters_fill_the_quadrants() {
        let s = 16 - 2 * GUTTER;
        let p = pack_rects(&[[s, s]; 4], 32).unwrap();
        let mut corners: Vec<[u32; 2]> = p.iter().map(|q| [q[0] - GUTTER, q[1] - GUTTER]).collect();
        corners.sort();
        assert_eq!(corners, vec![[0, 0], [0, 16], [16, 0], [16, 16]]);
        assert!(pack_rects(&[[s, s]; 5], 32).is_none());
    }

    #[test]
    fn wide_rects_share_a_row() {
        // Two 30x14 rectangles stack as the two rows of a 32 px chart.
        let p = pack_rects(&[[28, 12], [28, 12]], 32).unwrap();
        let mut ys: Vec<u32> = p.iter().map(|q| q[1] - GUTTER).collect();
        ys.sort();
        assert_eq!(ys, vec![0, 16]);
        assert!(pack_rects(&[[28, 12], [28, 12], [12, 12]], 32).is_none());
        assert!(pack_rects(&[[28, 12], [12, 28]], 32).is_none());
        assert!(pack_rects(&[[28, 12], [12, 12], [12, 12]], 32).is_some());
    }

    #[test]
    fn too_large_fails() {
        assert!(pack_rects(&[[31, 1]], 32).is_none());
        assert!(pack_rects(&[[30, 30]], 32).is_some());
    }

    proptest! {
        #[test]
        fn placements_never_overlap(sizes in prop::collection::vec((1u32..20, 1u32..20), 1..12)) {
            let sizes: Vec<[u32; 2]> = sizes.into_iter().map(|(w, h)| [w, h]).collect();
            if let Some(p) = pack_rects(&sizes, 64) {
                let boxes: Vec<[u32; 4]> = p.iter().zip(&sizes).map(|(&p, &s)| padded(p, s)).collect();
                for (i, a) in boxes.iter().enumerate() {
                    prop_assert!(a[2] <= 64 && a[3] <= 64);
                    for b in &boxes[i + 1..] {
                        prop_assert_eq!(overlap(*a, *b), 0);
                    }
                }
            }
        }
    }
}
