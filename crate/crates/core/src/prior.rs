//! Factorized prior over quantized latents.
//!
//! Each latent channel owns a monotone cumulative `c(x) = σ(f(x))` where `f`
//! chains three positive-weight affine maps of widths 1→3→3→1, the first two
//! followed by `g(v) = v + tanh(a) · tanh(v)`. Softplus keeps the weights
//! positive and `tanh(a) > -1` keeps `g` increasing, so `c` is strictly
//! increasing with limits 0 and 1.
//!
//! The probability of an integer symbol `n` is `c(n + ½) − c(n − ½)`; the same
//! expression evaluated at `z + noise` gives the differentiable rate used in
//! training. All transcendental functions go through `libm` so the tables
//! built on both ends of a channel are bit-identical.

use crate::coder::FrequencyTable;
use crate::{Error, Result};

const HIDDEN: usize = 3;
/// Parameters per channel: H1(3) b1(3) a1(3) H2(9) b2(3) a2(3) H3(3) b3(1).
pub const PARAMS_PER_CHANNEL: usize = 28;

const H1: usize = 0;
const B1: usize = 3;
const A1: usize = 6;
const H2: usize = 9;
const B2: usize = 18;
const A2: usize = 21;
const H3: usize = 24;
const B3: usize = 27;

/// Interval probabilities below this are floored before taking the log.
pub const LIKELIHOOD_FLOOR: f64 = 9.313225746154785e-10; // 2^-30

/// Symbols per channel are confined to `[median - 32, median + 32]`.
pub const SUPPORT_HALF_WIDTH: i32 = 32;
/// Margin added around the latent range observed during training.
pub const SUPPORT_MARGIN: i32 = 8;
/// Tail mass the support must leave out at most.
pub const SUPPORT_TAIL: f64 = 1e-6;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
fn softplus_grad(x: f64) -> f64 {
    sigmoid(x)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Intermediate values of one evaluation of `f`, kept for backprop.
#[derive(Debug, Clone, Copy, Default)]
struct CdfTrace {
    u1: [f64; HIDDEN],
    v1: [f64; HIDDEN],
    u2: [f64; HIDDEN],
    v2: [f64; HIDDEN],
    f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    channels: usize,
}

impl FactorizedPrior {
    pub fn new(channels: usize) -> Self {
        FactorizedPrior { channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_params(&self) -> usize {
        self.channels * PARAMS_PER_CHANNEL
    }

    /// Starting point where each channel's cumulative is roughly a logistic
    /// of scale `init_scale`, offset by a small jitter from `bias_jitter`.
    pub fn init_params(&self, init_scale: f64, mut bias_jitter: impl FnMut() -> f64) -> Vec<f64> {
        let per_layer = init_scale.powf(1.0 / 3.0);
        let mut p = vec![0.0; self.num_params()];
        for c in 0..self.channels {
            let q = &mut p[c * PARAMS_PER_CHANNEL..(c + 1) * PARAMS_PER_CHANNEL];
            let raw = |fan_in: f64| (libm::expm1(1.0 / per_layer / fan_in)).ln();
            for v in &mut q[H1..H1 + 3] {
                *v = raw(1.0);
            }
            for v in &mut q[H2..H2 + 9] {
                *v = raw(3.0);
            }
            for v in &mut q[H3..H3 + 3] {
                *v = raw(3.0);
            }
            for i in (B1..B1 + 3).chain(B2..B2 + 3) {
                q[i] = bias_jitter();
            }
            q[B3] = bias_jitter();
        }
        p
    }

    fn channel<'a>(&self, params: &'a [f64], c: usize) -> &'a [f64] {
        &params[c * PARAMS_PER_CHANNEL..(c + 1) * PARAMS_PER_CHANNEL]
    }

    fn eval(q: &[f64], x: f64) -> CdfTrace {
        let mut t = CdfTrace::default();
        for j in 0..HIDDEN {
            t.u1[j] = softplus(q[H1 + j]) * x + q[B1 + j];
            t.v1[j] = t.u1[j] + libm::tanh(q[A1 + j]) * libm::tanh(t.u1[j]);
        }
        for j in 0..HIDDEN {
            let mut acc = q[B2 + j];
            for i in 0..HIDDEN {
                acc += softplus(q[H2 + j * HIDDEN + i]) * t.v1[i];
            }
            t.u2[j] = acc;
            t.v2[j] = acc + libm::tanh(q[A2 + j]) * libm::tanh(acc);
        }
        let mut f = q[B3];
        for i in 0..HIDDEN {
            f += softplus(q[H3 + i]) * t.v2[i];
        }
        t.f = f;
        t
    }

    /// Backprop `df` through one evaluation; returns `df/dx` and adds the
    /// parameter gradient into `grad` (this channel's slice).
    fn backprop(q: &[f64], x: f64, t: &CdfTrace, df: f64, grad: &mut [f64]) -> f64 {
        grad[B3] += df;
        let mut dv2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            grad[H3 + i] += df * t.v2[i] * softplus_grad(q[H3 + i]);
            dv2[i] = df * softplus(q[H3 + i]);
        }
        let mut dv1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let ta = libm::tanh(q[A2 + j]);
            let tu = libm::tanh(t.u2[j]);
            grad[A2 + j] += dv2[j] * tu * (1.0 - ta * ta);
            let du2 = dv2[j] * (1.0 + ta * (1.0 - tu * tu));
            grad[B2 + j] += du2;
            for i in 0..HIDDEN {
                let h = q[H2 + j * HIDDEN + i];
                grad[H2 + j * HIDDEN + i] += du2 * t.v1[i] * softplus_grad(h);
                dv1[i] += du2 * softplus(h);
            }
        }
        let mut dx = 0.0;
        for j in 0..HIDDEN {
            let ta = libm::tanh(q[A1 + j]);
            let tu = libm::tanh(t.u1[j]);
            grad[A1 + j] += dv1[j] * tu * (1.0 - ta * ta);
            let du1 = dv1[j] * (1.0 + ta * (1.0 - tu * tu));
            grad[B1 + j] += du1;
            grad[H1 + j] += du1 * x * softplus_grad(q[H1 + j]);
            dx += du1 * softplus(q[H1 + j]);
        }
        dx
    }

    /// The cumulative `c(x)` of channel `c`.
    pub fn cdf(&self, params: &[f64], c: usize, x: f64) -> f64 {
        sigmoid(Self::eval(self.channel(params, c), x).f)
    }

    /// The logit `f(x)` of channel `c`.
    pub fn logit(&self, params: &[f64], c: usize, x: f64) -> f64 {
        Self::eval(self.channel(params, c), x).f
    }

    /// `c(x + ½) − c(x − ½)` computed on the side of the median where the
    /// difference does not cancel.
    pub fn interval_probability(&self, params: &[f64], c: usize, x: f64) -> f64 {
        let q = self.channel(params, c);
        let lo = Self::eval(q, x - 0.5).f;
        let hi = Self::eval(q, x + 0.5).f;
        let s = if lo + hi > 0.0 { -1.0 } else { 1.0 };
        (sigmoid(s * hi) - sigmoid(s * lo)).abs()
    }

    /// Rate in bits of latent values `z` (channel-major, `per_channel`
    /// elements each), with the interval probability floored at 2⁻³⁰.
    pub fn rate_bits(&self, params: &[f64], z: &[f64], per_channel: usize) -> Result<f64> {
        self.check_len(z, per_channel)?;
        let mut bits = 0.0;
        for (i, &v) in z.iter().enumerate() {
            let p = self.interval_probability(params, i / per_channel, v);
            bits -= p.max(LIKELIHOOD_FLOOR).log2();
        }
        Ok(bits)
    }

    /// Rate in bits plus its gradient with respect to `z` (returned) and the
    /// prior parameters (accumulated into `grad`, scaled by `scale`).
    pub fn rate_bits_grad(
        &self,
        params: &[f64],
        z: &[f64],
        per_channel: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_len(z, per_channel)?;
        let mut bits = 0.0;
        let mut dz = vec![0.0; z.len()];
        for (i, &v) in z.iter().enumerate() {
            let c = i / per_channel;
            let q = self.channel(params, c);
            let g = &mut grad[c * PARAMS_PER_CHANNEL..(c + 1) * PARAMS_PER_CHANNEL];
            let tl = Self::eval(q, v - 0.5);
            let th = Self::eval(q, v + 0.5);
            let s = if tl.f + th.f > 0.0 { -1.0 } else { 1.0 };
            let sh = sigmoid(s * th.f);
            let sl = sigmoid(s * tl.f);
            let like = (sh - sl).abs();
            if like < LIKELIHOOD_FLOOR {
                bits -= LIKELIHOOD_FLOOR.log2();
                continue;
            }
            bits -= like.log2();
            let dbits_dlike = -1.0 / (like * std::f64::consts::LN_2);
            let d_hi = dbits_dlike * sh * (1.0 - sh) * scale;
            let d_lo = -dbits_dlike * sl * (1.0 - sl) * scale;
            let dx_hi = Self::backprop(q, v + 0.5, &th, d_hi, g);
            let dx_lo = Self::backprop(q, v - 0.5, &tl, d_lo, g);
            dz[i] = dx_hi + dx_lo;
        }
        Ok((bits, dz))
    }

    fn check_len(&self, z: &[f64], per_channel: usize) -> Result<()> {
        if z.len() != self.channels * per_channel {
            return Err(Error::Shape { expected: self.channels * per_channel, actual: z.len() });
        }
        Ok(())
    }

    /// Point where `f(x) = 0`, found by bisection.
    pub fn median(&self, params: &[f64], c: usize) -> f64 {
        self.quantile_logit(params, c, 0.0)
    }

    fn quantile_logit(&self, params: &[f64], c: usize, target: f64) -> f64 {
        let q = self.channel(params, c);
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while Self::eval(q, lo).f > target && lo > -1e6 {
            lo *= 2.0;
        }
        while Self::eval(q, hi).f < target && hi < 1e6 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if Self::eval(q, mid).f < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Integer support of channel `c`: covers all but [`SUPPORT_TAIL`] of the
    /// mass, capped at ±[`SUPPORT_HALF_WIDTH`] around the median and, when a
    /// training range is known, at that range ± [`SUPPORT_MARGIN`].
    pub fn support(&self, params: &[f64], c: usize, observed: Option<(i32, i32)>) -> (i32, i32) {
        let tail = (SUPPORT_TAIL / 2.0).ln() - (1.0 - SUPPORT_TAIL / 2.0).ln();
        let lo_q = self.quantile_logit(params, c, tail);
        let hi_q = self.quantile_logit(params, c, -tail);
        let median = self.median(params, c).round() as i32;
        let mut lo = (lo_q.floor() as i32).max(median - SUPPORT_HALF_WIDTH);
        let mut hi = (hi_q.ceil() as i32).min(median + SUPPORT_HALF_WIDTH);
        if let Some((omin, omax)) = observed {
            lo = lo.max(omin - SUPPORT_MARGIN);
            hi = hi.min(omax + SUPPORT_MARGIN);
        }
        if lo > hi {
            lo = median;
            hi = median;
        }
        (lo, hi)
    }

    /// Per-channel frequency tables; a pure function of `params` and
    /// `observed`.
    pub fn build_coding_tables(
        &self,
        params: &[f64],
        observed: Option<&[(i32, i32)]>,
    ) -> Result<CodingTable> {
        let mut channels = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let (lo, hi) = self.support(params, c, observed.map(|o| o[c]));
            let mut weights: Vec<f64> =
                (lo..=hi).map(|n| self.interval_probability(params, c, f64::from(n))).collect();
            let inside: f64 = weights.iter().sum();
            weights.push((1.0 - inside).max(0.0));
            channels.push(ChannelTable {
                min: lo,
                max: hi,
                table: FrequencyTable::from_weights(&weights)?,
            });
        }
        Ok(CodingTable { channels })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTable {
    pub min: i32,
    pub max: i32,
    /// Symbols `0..=max-min` for values `min..=max`, then the escape symbol.
    pub table: FrequencyTable,
}

impl ChannelTable {
    pub fn escape(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    /// Symbol for `value`, or `None` when it needs the escape path.
    pub fn symbol(&self, value: i32) -> Option<usize> {
        (self.min..=self.max).contains(&value).then(|| (value - self.min) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTable {
    pub channels: Vec<ChannelTable>,
}

impl CodingTable {
    /// Bytes fully describing the tables, for equality checks across runs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for ch in &self.channels {
            out.extend_from_slice(&ch.min.to_le_bytes());
            out.extend_from_slice(&ch.max.to_le_bytes());
            for f in ch.table.frequencies() {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }
}
