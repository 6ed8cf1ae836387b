//! Shared building blocks for the subcommands: synthetic data, training and
//! per-volume evaluation.

use rayon::prelude::*;
use serde::Serialize;

use divc::container::{compress_volume, decompress_volume, rate_report, CompressedVolume, RateReport};
use divc::hash::fnv1a64;
use divc::nnet::{train, Model, TrainReport, TrainingBlock};
use divc::surface::{error_bound_check, mesh_volume, surface_distance, topology_equal};
use divc::volume::{extract_occupied_blocks, synth_volume, SceneSpec, TsdfVolume};

use crate::config::Settings;
use crate::error::{CliError, Result};

/// Independent seed for item `i` of a named stream.
pub fn derive_seed(seed: u64, label: &str, i: u64) -> u64 {
    let mut bytes = label.as_bytes().to_vec();
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&i.to_le_bytes());
    fnv1a64(&bytes)
}

/// Synthetic scene `name` filling the configured grid.
pub fn scene_volume(s: &Settings, name: &str, seed: u64) -> Result<TsdfVolume> {
    let extent = s.dims as f64 * f64::from(s.voxel_size);
    let scene = SceneSpec::named(name, extent, seed)
        .ok_or_else(|| CliError::Value { key: "scene".into(), value: name.into() })?;
    Ok(synth_volume(&scene, s.dims3(), s.voxel_size, s.tau, s.k)?)
}

/// `count` random scenes from the stream `label`.
pub fn random_volumes(s: &Settings, label: &str, count: usize) -> Result<Vec<TsdfVolume>> {
    (0..count as u64).map(|i| scene_volume(s, "random", derive_seed(s.seed, label, i))).collect()
}

pub fn training_blocks(volumes: &[TsdfVolume], k: usize) -> Result<Vec<TrainingBlock>> {
    let mut out = Vec::new();
    for v in volumes {
        let (blocks, _) = extract_occupied_blocks(v, k)?;
        out.extend(blocks.iter().map(|b| TrainingBlock::new(b, v.tau())));
    }
    Ok(out)
}

/// Fresh model trained on the configured random training scenes, with the
/// number of training blocks.
pub fn train_model(s: &Settings) -> Result<(Model, TrainReport, usize)> {
    let data = training_blocks(&random_volumes(s, "train", s.train_volumes)?, s.k)?;
    let mut model = Model::new(s.arch(), derive_seed(s.seed, "init", 0))?;
    let report = train(&mut model, &data, &s.train_config(s.lambda, s.steps, derive_seed(s.seed, "batches", 0)))?;
    Ok((model, report, data.len()))
}

/// Everything measured on one compress/decompress round trip.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VolumeEval {
    pub blocks: usize,
    pub rate_kb: f64,
    pub header_bits: u64,
    pub index_bits: u64,
    pub latent_bits: u64,
    pub sign_bits: u64,
    pub chamfer_mm: f64,
    pub hausdorff_mm: f64,
    pub max_vertex_shift_mm: f64,
    pub topology_equal: bool,
    pub signs_equal: bool,
    pub within_voxel: bool,
}

/// Metrics between an original volume and its reconstruction.
pub fn compare_volumes(
    original: &TsdfVolume,
    decoded: &TsdfVolume,
    rate: &RateReport,
    per_triangle: usize,
    seed: u64,
) -> Result<VolumeEval> {
    let a = mesh_volume(original)?;
    let b = mesh_volume(decoded)?;
    let topo = topology_equal(&a, &b);
    let shift = if topo { error_bound_check(&a, &b, f64::from(original.voxel_size()))? } else { f64::INFINITY };
    let d = surface_distance(&a, &b, per_triangle, seed);
    Ok(VolumeEval {
        blocks: rate.blocks,
        rate_kb: rate.kb_per_volume,
        header_bits: rate.header_bits,
        index_bits: rate.index_bits,
        latent_bits: rate.latent_bits,
        sign_bits: rate.sign_bits,
        chamfer_mm: d.chamfer,
        hausdorff_mm: d.hausdorff,
        max_vertex_shift_mm: shift,
        topology_equal: topo,
        signs_equal: original.inside_mask() == decoded.inside_mask(),
        within_voxel: shift <= f64::from(original.voxel_size()),
    })
}

/// Compresses, decompresses and measures one volume.
pub fn round_trip(
    model: &Model,
    volume: &TsdfVolume,
    per_triangle: usize,
    seed: u64,
) -> Result<(CompressedVolume, TsdfVolume, VolumeEval)> {
    let c = compress_volume(volume, model)?;
    let parsed = CompressedVolume::from_bytes(&c.to_bytes())?;
    let decoded = decompress_volume(&parsed, model)?.volume;
    let eval = compare_volumes(volume, &decoded, &rate_report(&c), per_triangle, seed)?;
    Ok((c, decoded, eval))
}

/// Means of the round-trip metrics over several volumes.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MeanEval {
    pub volumes: usize,
    pub rate_kb: f64,
    pub chamfer_mm: f64,
    pub hausdorff_mm: f64,
    pub sign_bits: f64,
    pub latent_bits: f64,
    /// Coded sign bits per voxel of the occupied blocks.
    pub sign_bits_per_voxel: f64,
    pub all_topology_equal: bool,
}

pub fn evaluate_many(model: &Model, volumes: &[TsdfVolume], per_triangle: usize, seed: u64) -> Result<MeanEval> {
    let evals: Vec<VolumeEval> = volumes
        .par_iter()
        .map(|v| round_trip(model, v, per_triangle, seed).map(|r| r.2))
        .collect::<Result<_>>()?;
    let n = evals.len().max(1) as f64;
    let mean = |f: fn(&VolumeEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let voxels: usize = evals.iter().map(|e| e.blocks).sum::<usize>() * model.arch().block_len();
    Ok(MeanEval {
        volumes: evals.len(),
        rate_kb: mean(|e| e.rate_kb),
        chamfer_mm: mean(|e| e.chamfer_mm),
        hausdorff_mm: mean(|e| e.hausdorff_mm),
        sign_bits: mean(|e| e.sign_bits as f64),
        latent_bits: mean(|e| e.latent_bits as f64),
        sign_bits_per_voxel: evals.iter().map(|e| e.sign_bits as f64).sum::<f64>() / voxels.max(1) as f64,
        all_topology_equal: evals.iter().all(|e| e.topology_equal),
    })
}

/// Inside fraction over all voxels of `blocks`.
pub fn inside_fraction(blocks: &[TrainingBlock]) -> f64 {
    let (mut inside, mut total) = (0usize, 0usize);
    for b in blocks {
        inside += b.signs.outside.iter().filter(|&&o| !o).count();
        total += b.signs.outside.len();
    }
    inside as f64 / total.max(1) as f64
}

/// Bits per voxel of the signs of `test` under a single Bernoulli
/// probability `p_inside`.
pub fn bernoulli_bits_per_voxel(p_inside: f64, test: &[TrainingBlock]) -> f64 {
    let p = p_inside.clamp(1e-12, 1.0 - 1e-12);
    let (mut bits, mut total) = (0.0, 0usize);
    for b in test {
        for &o in &b.signs.outside {
            bits -= if o { (1.0 - p).log2() } else { p.log2() };
        }
        total += b.signs.outside.len();
    }
    bits / total.max(1) as f64
}
