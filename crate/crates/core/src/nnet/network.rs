use rand::Rng;

use super::conv::ConvLayer;
use crate::prior::sigmoid;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Extra gain on the latent layer at initialization, so that the unit
/// quantization noise does not swamp the initial latents.
pub const LATENT_INIT_GAIN: f64 = 4.0;
/// Sign probabilities are kept inside `[EPS, 1 - EPS]`, `EPS = 2⁻²⁰`.
pub const SIGN_EPS: f64 = 9.5367431640625e-7;

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Encoder: `widths.len()` stride-2 convolutions with the given output
/// channels, the last one producing the latent. Decoder: the mirror image
/// in transposed convolutions, then two stride-1 heads (magnitude, sign).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub block_size: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub head_kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { block_size: 8, widths: vec![16, 32, 32], kernel: 4, head_kernel: 3 }
    }
}

impl Architecture {
    /// Default widths truncated/extended to `layers` stride-2 stages.
    pub fn with_layers(block_size: usize, layers: usize) -> Self {
        let widths = match layers {
            1 => vec![32],
            2 => vec![16, 32],
            n => {
                let mut w = vec![16, 32];
                w.resize(n, 32);
                w
            }
        };
        Architecture { block_size, widths, ..Default::default() }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn latent_size(&self) -> usize {
        self.block_size >> self.layers()
    }

    /// Elements per latent channel.
    pub fn latent_spatial(&self) -> usize {
        self.latent_size().pow(3)
    }

    pub fn latent_len(&self) -> usize {
        self.latent_channels() * self.latent_spatial()
    }

    pub fn block_len(&self) -> usize {
        self.block_size.pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layers();
        if l == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Architecture("need at least one layer of non-zero width".into()));
        }
        if !self.block_size.is_power_of_two() || self.block_size >> l == 0 {
            return Err(Error::Architecture(format!(
                "block size {} cannot be halved {l} times",
                self.block_size
            )));
        }
        if self.kernel % 2 != 0 || self.kernel < 2 || self.head_kernel % 2 == 0 {
            return Err(Error::Architecture("need an even stage kernel and odd head kernel".into()));
        }
        Ok(())
    }
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    /// Bit pattern of every piecewise branch taken (activation signs). Two
    /// passes with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|p| p.iter().map(|&v| v > 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Raw magnitude-head output, normalized by tau; callers take `|·|`.
    pub magnitudes: Vec<f64>,
    /// Probability that each voxel is outside (sign `+1`).
    pub sign_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    layers: Vec<ConvLayer>,
    offsets: Vec<(usize, usize)>,
    num_params: usize,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (k, s, pad) = (arch.kernel, 2, arch.kernel / 2 - 1);
        let mut layers = Vec::new();
        let mut size = arch.block_size;
        let mut ch = 1;
        for &w in &arch.widths {
            let l = ConvLayer::conv(ch, w, k, s, pad, size)?;
            size = l.out_size;
            ch = w;
            layers.push(l);
        }
        let mut outs: Vec<usize> = arch.widths.iter().rev().skip(1).copied().collect();
        outs.push(arch.widths[0]);
        for &w in &outs {
            let l = ConvLayer::transposed(ch, w, k, s, pad, size)?;
            size = l.out_size;
            ch = w;
            layers.push(l);
        }
        debug_assert_eq!(size, arch.block_size);
        let hp = arch.head_kernel / 2;
        layers.push(ConvLayer::conv(ch, 1, arch.head_kernel, 1, hp, size)?);
        layers.push(ConvLayer::conv(ch, 1, arch.head_kernel, 1, hp, size)?);
        let mut offsets = Vec::with_capacity(layers.len());
        let mut n = 0;
        for l in &layers {
            offsets.push((n, n + l.weight_len()));
            n += l.weight_len() + l.bias_len();
        }
        Ok(Network { arch, layers, offsets, num_params: n })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    fn enc_range(&self) -> std::ops::Range<usize> {
        0..self.arch.layers()
    }

    fn dec_range(&self) -> std::ops::Range<usize> {
        self.arch.layers()..2 * self.arch.layers()
    }

    fn head_mag(&self) -> usize {
        2 * self.arch.layers()
    }

    fn head_sign(&self) -> usize {
        2 * self.arch.layers() + 1
    }

    fn weights<'a>(&self, params: &'a [f64], i: usize) -> (&'a [f64], &'a [f64]) {
        let (w, b) = self.offsets[i];
        let l = &self.layers[i];
        (&params[w..w + l.weight_len()], &params[b..b + l.bias_len()])
    }

    fn grads<'a>(&self, grad: &'a mut [f64], i: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let (w, b) = self.offsets[i];
        let l = &self.layers[i];
        let (head, tail) = grad.split_at_mut(b);
        (&mut head[w..w + l.weight_len()], &mut tail[..l.bias_len()])
    }

    /// Slices of the flat parameter vector for layer `i` (weights, bias).
    pub fn layer_params<'a>(&self, params: &'a [f64], i: usize) -> (&'a [f64], &'a [f64]) {
        self.weights(params, i)
    }

    /// Uniform fan-in scaled initialization for leaky activations, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params];
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let latent_layer = self.arch.layers() - 1;
        for (i, (l, &(w, _))) in self.layers.iter().zip(&self.offsets).enumerate() {
            let fan_in = match l.kind {
                super::conv::LayerKind::Conv => l.in_ch * l.taps(),
                super::conv::LayerKind::Transposed => (l.in_ch * l.taps() / l.stride.pow(3)).max(1),
            } as f64;
            let mut bound = (3.0 * gain / fan_in).sqrt();
            if i == latent_layer {
                bound *= LATENT_INIT_GAIN;
            }
            for v in &mut p[w..w + l.weight_len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    fn run(
        &self,
        params: &[f64],
        range: std::ops::Range<usize>,
        x: Vec<f64>,
        activate_last: bool,
        trace: Option<&mut Trace>,
    ) -> Result<Vec<f64>> {
        let last = range.end - 1;
        let mut h = x;
        let mut tr = trace;
        for i in range {
            let (w, b) = self.weights(params, i);
            let pre = self.layers[i].forward(w, b, &h)?;
            let out = if i < last || activate_last {
                pre.iter().map(|&v| leaky(v)).collect()
            } else {
                pre.clone()
            };
            if let Some(t) = tr.as_deref_mut() {
                t.inputs.push(std::mem::take(&mut h));
                t.pre.push(pre);
            }
            h = out;
        }
        Ok(h)
    }

    fn check_block(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.block_len() {
            return Err(Error::Shape { expected: self.arch.block_len(), actual: x.len() });
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.arch.latent_len() {
            return Err(Error::Shape { expected: self.arch.latent_len(), actual: z.len() });
        }
        Ok(())
    }

    /// Latent `z` of a block whose values are already divided by tau.
    pub fn encode(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_block(x)?;
        self.run(params, self.enc_range(), x.to_vec(), false, None)
    }

    pub fn encode_traced(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, Trace)> {
        self.check_block(x)?;
        let mut t = Trace::default();
        let z = self.run(params, self.enc_range(), x.to_vec(), false, Some(&mut t))?;
        Ok((z, t))
    }

    /// Both heads; `sign_probs` are clamped to `[SIGN_EPS, 1 - SIGN_EPS]`.
    pub fn decode(&self, params: &[f64], z_hat: &[f64]) -> Result<Decoded> {
        let (mags, logits, _) = self.decode_inner(params, z_hat, false)?;
        Ok(Decoded { magnitudes: mags, sign_probs: probs_from_logits(&logits) })
    }

    /// Returns (magnitude head, sign logits, trace).
    pub fn decode_traced(&self, params: &[f64], z_hat: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Trace)> {
        self.decode_inner(params, z_hat, true)
    }

    fn decode_inner(
        &self,
        params: &[f64],
        z_hat: &[f64],
        keep: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, Trace)> {
        self.check_latent(z_hat)?;
        let mut t = Trace::default();
        let feat = self.run(
            params,
            self.dec_range(),
            z_hat.to_vec(),
            true,
            keep.then_some(&mut t),
        )?;
        let (wm, bm) = self.weights(params, self.head_mag());
        let mags = self.layers[self.head_mag()].forward(wm, bm, &feat)?;
        let (ws, bs) = self.weights(params, self.head_sign());
        let logits = self.layers[self.head_sign()].forward(ws, bs, &feat)?;
        if keep {
            t.inputs.push(feat);
        }
        Ok((mags, logits, t))
    }

    /// Backprop through the decoder given gradients on the magnitude head and
    /// the sign logits; returns the gradient on the latent.
    pub fn backward_decoder(
        &self,
        params: &[f64],
        trace: &Trace,
        d_mag: &[f64],
        d_logits: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let nd = self.arch.layers();
        let feat = &trace.inputs[nd];
        let (hm, hs) = (self.head_mag(), self.head_sign());
        let mut d_feat = {
            let (w, _) = self.weights(params, hm);
            let (gw, gb) = self.grads(grad, hm);
            self.layers[hm].backward(w, feat, d_mag, gw, gb)
        };
        {
            let (w, _) = self.weights(params, hs);
            let (gw, gb) = self.grads(grad, hs);
            let ds = self.layers[hs].backward(w, feat, d_logits, gw, gb);
            for (a, b) in d_feat.iter_mut().zip(ds) {
                *a += b;
            }
        }
        self.backward_run(params, trace, self.dec_range(), d_feat, true, grad)
    }

    pub fn backward_encoder(&self, params: &[f64], trace: &Trace, dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
        self.backward_run(params, trace, self.enc_range(), dz.to_vec(), false, grad)
    }

    fn backward_run(
        &self,
        params: &[f64],
        trace: &Trace,
        range: std::ops::Range<usize>,
        dy: Vec<f64>,
        activate_last: bool,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let start = range.start;
        let last = range.end - 1;
        let mut d = dy;
        for i in range.rev() {
            let j = i - start;
            if i < last || activate_last {
                for (g, &p) in d.iter_mut().zip(&trace.pre[j]) {
                    *g *= leaky_grad(p);
                }
            }
            let (w, _) = self.weights(params, i);
            let (gw, gb) = self.grads(grad, i);
            d = self.layers[i].backward(w, &trace.inputs[j], &d, gw, gb);
        }
        d
    }

    /// Product of per-layer operator-norm bounds over the encoder; leaky
    /// activations are 1-Lipschitz.
    pub fn encoder_lipschitz_bound(&self, params: &[f64]) -> f64 {
        self.enc_range()
            .map(|i| self.layers[i].operator_norm_bound(self.weights(params, i).0))
            .product()
    }
}

pub fn probs_from_logits(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l).clamp(SIGN_EPS, 1.0 - SIGN_EPS)).collect()
}

/// Inference-time quantizer: nearest integer, ties away from zero.
pub fn quantize_latent(z: &[f64]) -> Vec<i32> {
    z.iter().map(|&v| v.round().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32).collect()
}
