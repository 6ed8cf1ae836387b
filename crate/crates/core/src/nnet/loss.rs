//! The three terms of the rate-distortion objective for a single block.

use std::f64::consts::LN_2;

use super::network::SIGN_EPS;
use crate::volume::{Block, SignHalo};

/// Per-voxel sign of a block: `true` means outside (`s = +1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMask {
    pub outside: Vec<bool>,
}

impl SignMask {
    /// Zero counts as outside (same rule as [`crate::volume::is_inside`]).
    pub fn from_values<T: Copy + Into<f64>>(values: &[T]) -> Self {
        SignMask { outside: values.iter().map(|&v| v.into() >= 0.0).collect() }
    }

    pub fn len(&self) -> usize {
        self.outside.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outside.is_empty()
    }

    /// `s ∈ {-1, +1}` per voxel.
    pub fn to_pm1(&self) -> Vec<f64> {
        self.outside.iter().map(|&o| if o { 1.0 } else { -1.0 }).collect()
    }
}

/// Per-axis masks of voxels next to a sign change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyMasks {
    pub k: usize,
    pub axes: [Vec<bool>; 3],
}

impl TopologyMasks {
    /// Masks from a sign grid extended by a one-voxel halo. Crossings to a
    /// halo voxel mark only the in-block endpoint.
    pub fn from_halo(halo: &SignHalo) -> Self {
        let k = halo.k();
        let n = k * k * k;
        let mut axes = [vec![false; n], vec![false; n], vec![false; n]];
        let ki = k as isize;
        for z in 0..ki {
            for y in 0..ki {
                for x in 0..ki {
                    let s = halo.inside(x, y, z);
                    let i = (x + ki * (y + ki * z)) as usize;
                    let nb = [
                        [(x - 1, y, z), (x + 1, y, z)],
                        [(x, y - 1, z), (x, y + 1, z)],
                        [(x, y, z - 1), (x, y, z + 1)],
                    ];
                    for (d, pair) in nb.iter().enumerate() {
                        axes[d][i] = pair.iter().any(|&(a, b, c)| halo.inside(a, b, c) != s);
                    }
                }
            }
        }
        TopologyMasks { k, axes }
    }

    pub fn from_block(block: &Block) -> Self {
        Self::from_halo(&block.halo)
    }

    /// Masks of a block taken with no neighbours.
    pub fn isolated(values: &[f32], k: usize) -> Self {
        Self::from_halo(&SignHalo::isolated(values, k))
    }

    pub fn marked(&self) -> usize {
        self.axes.iter().map(|a| a.iter().filter(|&&m| m).count()).sum()
    }
}

/// Reconstruction `s · |b|`.
pub fn apply_signs(signs: &SignMask, magnitudes: &[f64]) -> Vec<f64> {
    signs
        .outside
        .iter()
        .zip(magnitudes)
        .map(|(&o, &b)| if o { b.abs() } else { -b.abs() })
        .collect()
}

/// `Σ_d ‖m_d · (x̂ − x)‖²` for one block.
pub fn masked_distortion(x: &[f64], x_hat: &[f64], masks: &TopologyMasks) -> f64 {
    let mut sum = 0.0;
    for (i, (&a, &b)) in x.iter().zip(x_hat).enumerate() {
        let w = masks.axes.iter().filter(|m| m[i]).count();
        if w > 0 {
            sum += w as f64 * (b - a) * (b - a);
        }
    }
    sum
}

/// Mean of [`masked_distortion`] over a batch of `(x, x̂, masks)`.
pub fn batch_masked_distortion(batch: &[(&[f64], &[f64], &TopologyMasks)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let sum: f64 = batch.iter().map(|(x, xh, m)| masked_distortion(x, xh, m)).sum();
    sum / batch.len() as f64
}

/// Gradient of [`masked_distortion`] with respect to the raw magnitude head
/// `b`, where `x̂ = s · |b|` and the subgradient of `|·|` at 0 is 0.
pub fn masked_distortion_grad(
    x: &[f64],
    signs: &SignMask,
    magnitudes: &[f64],
    masks: &TopologyMasks,
    scale: f64,
) -> (f64, Vec<f64>) {
    let x_hat = apply_signs(signs, magnitudes);
    let mut d = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let w = masks.axes.iter().filter(|m| m[i]).count() as f64;
        if w == 0.0 {
            continue;
        }
        let e = x_hat[i] - x[i];
        d += w * e * e;
        let s = if signs.outside[i] { 1.0 } else { -1.0 };
        let sgn_b = if magnitudes[i] > 0.0 {
            1.0
        } else if magnitudes[i] < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad[i] = scale * 2.0 * w * e * s * sgn_b;
    }
    (d, grad)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(SIGN_EPS, 1.0 - SIGN_EPS)
}

/// Cross-entropy in bits between the true signs and predicted
/// probabilities of "outside".
pub fn sign_rate_loss(signs: &SignMask, probs: &[f64]) -> f64 {
    signs
        .outside
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let p = clamp_prob(p);
            -if o { p.log2() } else { (1.0 - p).log2() }
        })
        .sum()
}

/// Sign rate in bits from logits, with its gradient per logit scaled by
/// `scale`. Where the probability hits the clamp the gradient is 0.
pub fn sign_rate_grad(signs: &SignMask, logits: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let mut bits = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, (&o, &l)) in signs.outside.iter().zip(logits).enumerate() {
        let raw = crate::prior::sigmoid(l);
        let p = clamp_prob(raw);
        bits -= if o { p.log2() } else { (1.0 - p).log2() };
        if p == raw {
            let t = if o { 1.0 } else { 0.0 };
            grad[i] = scale * (p - t) / LN_2;
        }
    }
    (bits, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_with(k: usize, marks: &[(usize, usize)]) -> TopologyMasks {
        let n = k * k * k;
        let mut axes = [vec![false; n], vec![false; n], vec![false; n]];
        for &(d, i) in marks {
            axes[d][i] = true;
        }
        TopologyMasks { k, axes }
    }

    #[test]
    fn exact_reconstruction_has_zero_distortion() {
        let x: Vec<f64> = (0..512).map(|i| (i as f64 / 100.0).sin()).collect();
        let m = TopologyMasks::isolated(&x.iter().map(|&v| v as f32).collect::<Vec<_>>(), 8);
        assert!(m.marked() > 0);
        assert_eq!(masked_distortion(&x, &x, &m), 0.0);
    }

    #[test]
    fn single_and_double_masked_voxel() {
        let x = vec![0.0; 512];
        let mut xh = x.clone();
        let e = 0.3;
        xh[10] = e;
        let one = mask_with(8, &[(0, 10)]);
        assert!((masked_distortion(&x, &xh, &one) - e * e).abs() < 1e-15);
        let two = mask_with(8, &[(0, 10), (2, 10)]);
        assert!((masked_distortion(&x, &xh, &two) - 2.0 * e * e).abs() < 1e-15);
        let b = 4.0;
        let empty = mask_with(8, &[]);
        let batch: Vec<(&[f64], &[f64], &TopologyMasks)> = vec![
            (&x, &xh, &one),
            (&x, &x, &one),
            (&x, &xh, &empty),
            (&x, &x, &empty),
        ];
        assert!((batch_masked_distortion(&batch) - e * e / b).abs() < 1e-15);
        let batch2: Vec<(&[f64], &[f64], &TopologyMasks)> =
            vec![(&x, &xh, &two), (&x, &x, &one), (&x, &x, &one), (&x, &x, &one)];
        assert!((batch_masked_distortion(&batch2) - 2.0 * e * e / b).abs() < 1e-15);
    }

    #[test]
    fn unmasked_errors_are_ignored() {
        let x = vec![0.0; 512];
        let mut xh = x.clone();
        xh[3] = 5.0;
        assert_eq!(masked_distortion(&x, &xh, &mask_with(8, &[(1, 4)])), 0.0);
    }

    #[test]
    fn crossing_marks_both_endpoints() {
        let mut v = vec![1.0f32; 512];
        v[5 + 8 * (3 + 8 * 2)] = -1.0;
        let m = TopologyMasks::isolated(&v, 8);
        let i = 5 + 8 * (3 + 8 * 2);
        assert!(m.axes[0][i] && m.axes[1][i] && m.axes[2][i]);
        assert!(m.axes[0][i - 1] && m.axes[0][i + 1]);
        assert!(m.axes[1][i - 8] && m.axes[1][i + 8]);
        assert!(m.axes[2][i - 64] && m.axes[2][i + 64]);
        assert!(!m.axes[1][i - 1]);
        assert_eq!(m.marked(), 3 * 3);
    }

    #[test]
    fn halo_crossing_marks_only_inner_voxel() {
        let k = 4;
        let mut vol = crate::volume::TsdfVolume::empty([8, 4, 4], 5.0, [0.0; 3], 10.0).unwrap();
        vol.set(4, 1, 1, -3.0);
        let left = Block::from_volume(&vol, [0, 0, 0], k);
        let right = Block::from_volume(&vol, [1, 0, 0], k);
        let ml = TopologyMasks::from_block(&left);
        let mr = TopologyMasks::from_block(&right);
        let li = 3 + k * (1 + k);
        assert!(ml.axes[0][li]);
        assert_eq!(ml.marked(), 1);
        let ri = k * (1 + k);
        assert!(mr.axes[0][ri] && mr.axes[1][ri] && mr.axes[2][ri]);
        assert!(mr.axes[0][ri + 1]);
    }

    #[test]
    fn uniform_probs_cost_one_bit_per_voxel() {
        let s = SignMask { outside: (0..512).map(|i| i % 3 == 0).collect() };
        assert!((sign_rate_loss(&s, &[0.5; 512]) - 512.0).abs() < 1e-9);
    }

    #[test]
    fn confident_probs_cost_almost_nothing() {
        let s = SignMask { outside: (0..512).map(|i| i % 3 == 0).collect() };
        let p: Vec<f64> =
            s.outside.iter().map(|&o| if o { 1.0 - SIGN_EPS } else { SIGN_EPS }).collect();
        let bits = sign_rate_loss(&s, &p);
        assert!(bits < 512.0 * 2e-6, "{bits}");
        // Exact 0/1 predictions are clamped rather than producing infinities.
        let wrong: Vec<f64> = s.outside.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
        assert!((sign_rate_loss(&s, &wrong) - 512.0 * 20.0).abs() < 1e-3);
    }

    #[test]
    fn sign_rate_matches_scalar_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = SignMask { outside: (0..512).map(|_| rng.gen_bool(0.5)).collect() };
        let p: Vec<f64> = (0..512).map(|_| rng.gen_range(0.01..0.99)).collect();
        let mut oracle = 0.0;
        for i in 0..512 {
            let sp = if s.outside[i] { 1.0 } else { 0.0 };
            oracle -= sp * p[i].ln() / 2f64.ln() + (1.0 - sp) * (1.0 - p[i]).ln() / 2f64.ln();
        }
        assert!((sign_rate_loss(&s, &p) - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn sign_rate_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SignMask { outside: (0..64).map(|_| rng.gen_bool(0.5)).collect() };
        let l: Vec<f64> = (0..64).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let (_, g) = sign_rate_grad(&s, &l, 1.0);
        let h = 1e-5;
        for i in 0..64 {
            let mut a = l.clone();
            let mut b = l.clone();
            a[i] += h;
            b[i] -= h;
            let n = (sign_rate_grad(&s, &a, 1.0).0 - sign_rate_grad(&s, &b, 1.0).0) / (2.0 * h);
            assert!((n - g[i]).abs() < 1e-6 * n.abs().max(1.0), "{i}: {n} vs {}", g[i]);
        }
    }

    #[test]
    fn distortion_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = SignMask::from_values(&x);
        let m = TopologyMasks::isolated(&x.iter().map(|&v| v as f32).collect::<Vec<_>>(), 8);
        let b: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (d, g) = masked_distortion_grad(&x, &s, &b, &m, 1.0);
        assert!((d - masked_distortion(&x, &apply_signs(&s, &b), &m)).abs() < 1e-12);
        let h = 1e-6;
        for i in (0..512).step_by(7) {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let n = (masked_distortion_grad(&x, &s, &bp, &m, 1.0).0
                - masked_distortion_grad(&x, &s, &bm, &m, 1.0).0)
                / (2.0 * h);
            assert!((n - g[i]).abs() < 1e-6 * n.abs().max(1.0));
        }
        // Subgradient at zero.
        let mut z = b.clone();
        z[0] = 0.0;
        assert_eq!(masked_distortion_grad(&x, &s, &z, &m, 1.0).1[0], 0.0);
    }

    proptest! {
        #[test]
        fn masks_are_symmetric_inside_the_block(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let v: Vec<f32> = bits.iter().map(|&b| if b { -1.0 } else { 1.0 }).collect();
            let m = TopologyMasks::isolated(&v, 4);
            for z in 0..4usize {
                for y in 0..4usize {
                    for x in 0..3usize {
                        let i = x + 4 * (y + 4 * z);
                        let crossing = bits[i] != bits[i + 1];
                        if crossing {
                            prop_assert!(m.axes[0][i] && m.axes[0][i + 1]);
                        }
                    }
                }
            }
            // A mark on axis d always comes from an in-block crossing here.
            for i in 0..64 {
                let (x, y, z) = (i % 4, (i / 4) % 4, i / 16);
                let c = [(x, 1), (y, 4), (z, 16)];
                for d in 0..3 {
                    let (p, stride) = c[d];
                    let any = (p > 0 && bits[i - stride] != bits[i]) || (p < 3 && bits[i + stride] != bits[i]);
                    prop_assert_eq!(m.axes[d][i], any);
                }
            }
        }

        #[test]
        fn reconstruction_keeps_signs(vals in proptest::collection::vec(-1.0f64..1.0, 64),
                                      mags in proptest::collection::vec(-2.0f64..2.0, 64)) {
            let s = SignMask::from_values(&vals);
            let xh = apply_signs(&s, &mags);
            for i in 0..64 {
                if mags[i] != 0.0 {
                    prop_assert_eq!(xh[i] >= 0.0, s.outside[i]);
                }
            }
        }
    }
}
