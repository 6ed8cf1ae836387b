//! Rate-distortion objective over a batch and the momentum-SGD loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{apply_signs, masked_distortion, masked_distortion_grad, sign_rate_grad, sign_rate_loss, SignMask, TopologyMasks};
use super::model::Model;
use super::network::quantize_latent;
use crate::volume::Block;
use crate::{Error, Result};

/// Number of points in the λ sweep.
pub const LAMBDA_POINTS: usize = 12;

/// `λ_i = 10^(−μ_i)` with `μ_i = i · log10(200000) / 11`, `i = 0..12`.
pub fn lambda_schedule() -> [f64; LAMBDA_POINTS] {
    let top = 200_000f64.log10();
    std::array::from_fn(|i| 10f64.powf(-(i as f64) * top / 11.0))
}

/// A block prepared for training: normalized values, signs and masks.
#[derive(Debug, Clone)]
pub struct TrainingBlock {
    pub x: Vec<f64>,
    pub signs: SignMask,
    pub masks: TopologyMasks,
}

impl TrainingBlock {
    pub fn new(block: &Block, tau: f32) -> Self {
        let x: Vec<f64> = block.values.iter().map(|&v| f64::from(v) / f64::from(tau)).collect();
        TrainingBlock { signs: SignMask::from_values(&block.values), masks: TopologyMasks::from_block(block), x }
    }
}

/// Batch means of the objective's terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub distortion: f64,
    pub latent_bits: f64,
    pub sign_bits: f64,
    pub total: f64,
}

impl LossTerms {
    fn from_sums(d: f64, rz: f64, rs: f64, n: usize, lambda: f64) -> Self {
        let n = n as f64;
        let (distortion, latent_bits, sign_bits) = (d / n, rz / n, rs / n);
        LossTerms { distortion, latent_bits, sign_bits, total: distortion + lambda * (latent_bits + sign_bits) }
    }
}

/// How latents are quantized when evaluating the objective.
#[derive(Debug, Clone, Copy)]
pub enum Quantizer<'a> {
    /// Additive noise, one vector per block (training surrogate).
    Noise(&'a [Vec<f64>]),
    /// Round to nearest (inference).
    Round,
}

fn quantized(z: &[f64], q: Quantizer<'_>, n: usize) -> Vec<f64> {
    match q {
        Quantizer::Noise(noise) => z.iter().zip(&noise[n]).map(|(a, b)| a + b).collect(),
        Quantizer::Round => quantize_latent(z).into_iter().map(f64::from).collect(),
    }
}

fn check_batch(blocks: &[TrainingBlock], q: Quantizer<'_>) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Quantizer::Noise(noise) = q {
        if noise.len() != blocks.len() {
            return Err(Error::Shape { expected: blocks.len(), actual: noise.len() });
        }
    }
    Ok(())
}

/// `D + λ (R_ẑ + R_s)`, each term averaged over the batch.
pub fn total_loss(model: &Model, blocks: &[TrainingBlock], q: Quantizer<'_>, lambda: f64) -> Result<LossTerms> {
    check_batch(blocks, q)?;
    let net = model.network();
    let per = net.arch().latent_spatial();
    let mut sums = (0.0, 0.0, 0.0);
    for (n, b) in blocks.iter().enumerate() {
        let z = quantized(&net.encode(model.net_params(), &b.x)?, q, n);
        let dec = net.decode(model.net_params(), &z)?;
        sums.0 += masked_distortion(&b.x, &apply_signs(&b.signs, &dec.magnitudes), &b.masks);
        sums.1 += model.prior().rate_bits(model.prior_params(), &z, per)?;
        sums.2 += sign_rate_loss(&b.signs, &dec.sign_probs);
    }
    Ok(LossTerms::from_sums(sums.0, sums.1, sums.2, blocks.len(), lambda))
}

/// Objective and its gradient with respect to all model parameters. Blocks
/// run in parallel; their gradients are summed in block order.
pub fn loss_and_grad(
    model: &Model,
    blocks: &[TrainingBlock],
    noise: &[Vec<f64>],
    lambda: f64,
) -> Result<(LossTerms, Vec<f64>)> {
    check_batch(blocks, Quantizer::Noise(noise))?;
    let scale = 1.0 / blocks.len() as f64;
    let per_block: Vec<Result<([f64; 3], Vec<f64>)>> = blocks
        .par_iter()
        .zip(noise.par_iter())
        .map(|(b, eps)| block_grad(model, b, eps, lambda, scale))
        .collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut sums = [0.0; 3];
    for r in per_block {
        let (s, g) = r?;
        for (a, b) in sums.iter_mut().zip(s) {
            *a += b;
        }
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((LossTerms::from_sums(sums[0], sums[1], sums[2], blocks.len(), lambda), grad))
}

fn block_grad(model: &Model, b: &TrainingBlock, eps: &[f64], lambda: f64, scale: f64) -> Result<([f64; 3], Vec<f64>)> {
    let net = model.network();
    let np = net.num_params();
    let per = net.arch().latent_spatial();
    let mut grad = vec![0.0; model.num_params()];
    let (z, enc_trace) = net.encode_traced(model.net_params(), &b.x)?;
    if eps.len() != z.len() {
        return Err(Error::Shape { expected: z.len(), actual: eps.len() });
    }
    let zt: Vec<f64> = z.iter().zip(eps).map(|(a, e)| a + e).collect();
    let (mags, logits, dec_trace) = net.decode_traced(model.net_params(), &zt)?;
    let (d, d_mag) = masked_distortion_grad(&b.x, &b.signs, &mags, &b.masks, scale);
    let (rs, d_logits) = sign_rate_grad(&b.signs, &logits, lambda * scale);
    let (net_grad, prior_grad) = grad.split_at_mut(np);
    let (rz, dz_prior) = model.prior().rate_bits_grad(model.prior_params(), &zt, per, lambda * scale, prior_grad)?;
    let mut dz = net.backward_decoder(model.net_params(), &dec_trace, &d_mag, &d_logits, net_grad);
    for (a, b) in dz.iter_mut().zip(dz_prior) {
        *a += b;
    }
    net.backward_encoder(model.net_params(), &enc_trace, &dz, net_grad);
    Ok(([d, rz, rs], grad))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Step size for the encoder and decoder.
    pub learning_rate: f64,
    /// Step size for the prior parameters.
    pub prior_learning_rate: f64,
    pub momentum: f64,
    /// The network and prior gradients are each rescaled to at most this
    /// L2 norm.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: lambda_schedule()[5],
            steps: 500,
            batch_size: 8,
            learning_rate: 0.01,
            prior_learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Objective of each step's batch, evaluated before that step's update.
    pub history: Vec<LossTerms>,
    pub model_hash: u64,
}

/// Trains `model` in place. Batches, noise and the reduction order are all
/// fixed by `cfg.seed`, so equal inputs give bit-identical parameters.
pub fn train(model: &mut Model, data: &[TrainingBlock], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let latent_len = model.arch().latent_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut velocity = vec![0.0; model.num_params()];
    let mut history = Vec::with_capacity(cfg.steps);
    let bs = cfg.batch_size.max(1);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let noise: Vec<Vec<f64>> =
            (0..batch.len()).map(|_| (0..latent_len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        let (terms, mut grad) = loss_and_grad(model, &batch, &noise, cfg.lambda)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !terms.total.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged { step });
        }
        let np = model.network().num_params();
        let groups = [(0..np, cfg.learning_rate), (np..grad.len(), cfg.prior_learning_rate)];
        for (range, lr) in groups {
            let g = &mut grad[range.clone()];
            let norm = g.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                g.iter_mut().for_each(|g| *g *= s);
            }
            for ((p, v), g) in model.params[range.clone()].iter_mut().zip(&mut velocity[range]).zip(g.iter()) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
        }
        history.push(terms);
    }
    model.round_to_f32();
    model.observed = Some(observed_ranges(model, data)?);
    Ok(TrainReport { history, model_hash: model.hash() })
}

/// Per-channel min/max of the rounded latents over `data`.
pub fn observed_ranges(model: &Model, data: &[TrainingBlock]) -> Result<Vec<(i32, i32)>> {
    let net = model.network();
    let per = net.arch().latent_spatial();
    let channels = net.arch().latent_channels();
    let latents: Vec<Result<Vec<i32>>> =
        data.par_iter().map(|b| Ok(quantize_latent(&net.encode(model.net_params(), &b.x)?))).collect();
    let mut ranges = vec![(i32::MAX, i32::MIN); channels];
    for z in latents {
        for (i, v) in z?.into_iter().enumerate() {
            let r = &mut ranges[i / per];
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    for r in &mut ranges {
        if r.0 > r.1 {
            *r = (0, 0);
        }
    }
    Ok(ranges)
}

/// Bits of the signs under the decoder's conditional model, for the
/// rounded latent of each block.
pub fn conditional_sign_bits(model: &Model, data: &[TrainingBlock]) -> Result<f64> {
    let net = model.network();
    let bits: Vec<Result<f64>> = data
        .par_iter()
        .map(|b| {
            let z = quantized(&net.encode(model.net_params(), &b.x)?, Quantizer::Round, 0);
            Ok(sign_rate_loss(&b.signs, &net.decode(model.net_params(), &z)?.sign_probs))
        })
        .collect();
    bits.into_iter().sum()
}
