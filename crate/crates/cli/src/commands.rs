//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::Serialize;

use divc::container::{compress_volume, decompress_volume, rate_report, CompressedVolume, RateReport};
use divc::nnet::{train, Model};
use divc::surface::mesh_volume;
use divc::texture::{recompute_uvs, ColorField};
use divc::volume::TsdfVolume;

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::experiment::{compare_volumes, derive_seed, random_volumes, scene_volume, train_model, training_blocks, VolumeEval};
use crate::sweep::{self, ModelSource};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RateStats {
    pub blocks: usize,
    pub header_bits: u64,
    pub index_bits: u64,
    pub latent_bits: u64,
    pub sign_bits: u64,
    pub total_bits: u64,
    pub kb_per_volume: f64,
}

impl From<&RateReport> for RateStats {
    fn from(r: &RateReport) -> Self {
        RateStats {
            blocks: r.blocks,
            header_bits: r.header_bits,
            index_bits: r.index_bits,
            latent_bits: r.latent_bits,
            sign_bits: r.sign_bits,
            total_bits: r.total_bits,
            kb_per_volume: r.kb_per_volume,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainStats {
    pub lambda: f64,
    pub steps: usize,
    pub blocks: usize,
    pub model_hash: String,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn make_volume(s: &Settings, out: &Path) -> Result<()> {
    scene_volume(s, &s.scene, derive_seed(s.seed, "scene", 0))?.save(out)?;
    Ok(())
}

pub fn train_cmd(s: &Settings, init: Option<&Path>, out: &Path, stats: Option<&Path>) -> Result<()> {
    let data = training_blocks(&random_volumes(s, "train", s.train_volumes)?, s.k)?;
    let (model, report) = match init {
        Some(p) => {
            let mut m = Model::load(p)?;
            let r = train(&mut m, &data, &s.train_config(s.lambda, s.steps, derive_seed(s.seed, "batches", 0)))?;
            (m, r)
        }
        None => {
            let (m, r, _) = train_model(s)?;
            (m, r)
        }
    };
    model.save(out)?;
    let st = TrainStats {
        lambda: s.lambda,
        steps: s.steps,
        blocks: data.len(),
        model_hash: format!("{:016x}", report.model_hash),
        first_loss: report.history.first().map(|h| h.total),
        last_loss: report.history.last().map(|h| h.total),
    };
    write_json(stats, &st)
}

pub fn compress(model: &Path, input: &Path, out: &Path, stats: Option<&Path>) -> Result<()> {
    let model = Model::load(model)?;
    let c = compress_volume(&TsdfVolume::load(input)?, &model)?;
    c.save(out)?;
    write_json(stats, &RateStats::from(&rate_report(&c)))
}

pub fn decompress(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = Model::load(model)?;
    decompress_volume(&CompressedVolume::load(input)?, &model)?.volume.save(out)?;
    Ok(())
}

/// Writes the marching-cubes mesh, with atlas UVs when `uv_res` is given.
pub fn mesh(input: &Path, out: &Path, k: usize, uv_res: Option<u32>) -> Result<()> {
    let v = TsdfVolume::load(input)?;
    match uv_res {
        Some(res) => {
            let (m, atlas) = recompute_uvs(&v, k, res)?;
            m.save_obj(out, Some(&atlas.obj_uvs()))?;
        }
        None => mesh_volume(&v)?.save_obj(out, None)?,
    }
    Ok(())
}

/// Expands `%0Nd` (or `%d`) in `pattern` with `frame`.
pub fn frame_path(pattern: &str, frame: usize) -> PathBuf {
    if let Some(start) = pattern.find('%') {
        if let Some(len) = pattern[start..].find('d') {
            let spec = &pattern[start + 1..start + len];
            if spec.chars().all(|c| c.is_ascii_digit()) {
                let width: usize = spec.parse().unwrap_or(0);
                let num = format!("{frame:0width$}");
                return PathBuf::from(format!("{}{}{}", &pattern[..start], num, &pattern[start + len + 1..]));
            }
        }
    }
    PathBuf::from(pattern)
}

/// Decodes each container, recomputes its UVs and writes the atlas image
/// (and optionally a textured OBJ) for every frame.
pub fn atlas(s: &Settings, model: &Path, inputs: &[PathBuf], out: &str, obj: Option<&str>) -> Result<()> {
    if inputs.len() > 1 && !out.contains('%') {
        return Err(CliError::Usage("several inputs need a %d frame pattern in -o".into()));
    }
    let field = ColorField::named(&s.color)
        .ok_or_else(|| CliError::Value { key: "color".into(), value: s.color.clone() })?;
    let model = Model::load(model)?;
    for (frame, input) in inputs.iter().enumerate() {
        let c = CompressedVolume::load(input)?;
        let decoded = decompress_volume(&c, &model)?.volume;
        let (m, atlas) = recompute_uvs(&decoded, c.header.k, s.res)?;
        atlas.rasterize(&m, &|p| field.color(p)).save(frame_path(out, frame))?;
        if let Some(pattern) = obj {
            m.save_obj(frame_path(pattern, frame), Some(&atlas.obj_uvs()))?;
        }
    }
    Ok(())
}

pub fn eval(s: &Settings, model: &Path, original: &Path, container: &Path, out: Option<&Path>) -> Result<VolumeEval> {
    let model = Model::load(model)?;
    let c = CompressedVolume::load(container)?;
    let decoded = decompress_volume(&c, &model)?.volume;
    let e = compare_volumes(&TsdfVolume::load(original)?, &decoded, &rate_report(&c), s.per_triangle, derive_seed(s.seed, "metric", 0))?;
    write_json(out, &e)?;
    Ok(e)
}

pub fn sweep_cmd(s: &Settings, models: Option<&Path>, out: &Path) -> Result<()> {
    let source = match models {
        Some(dir) => ModelSource::Load(dir),
        None => ModelSource::Train(Some(&out.join("models"))),
    };
    let points = sweep::run_sweep(s, source)?;
    sweep::write_outputs(out, &points)?;
    for (a, b) in sweep::dominated_pairs(&points, 0.05) {
        eprintln!("warning: lambda {} is dominated by lambda {}", points[a].lambda, points[b].lambda);
    }
    Ok(())
}

pub const METRICS_HEADER: &str =
    "rate_kb,header_bits,index_bits,latent_bits,sign_bits,chamfer_mm,hausdorff_mm,max_vertex_shift_mm,topology_equal,within_voxel";

pub fn metrics_csv(e: &VolumeEval) -> String {
    format!(
        "{METRICS_HEADER}\n{:.6},{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
        e.rate_kb,
        e.header_bits,
        e.index_bits,
        e.latent_bits,
        e.sign_bits,
        e.chamfer_mm,
        e.hausdorff_mm,
        e.max_vertex_shift_mm,
        e.topology_equal,
        e.within_voxel
    )
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PipelineStats {
    pub seed: u64,
    pub scene: String,
    pub train: TrainStats,
    pub rate: RateStats,
    pub eval: VolumeEval,
    pub atlas_size: u32,
    pub charts: usize,
    /// Receiver UVs, recomputed from a fresh decode, equal the sender's.
    pub uv_identical: bool,
}

/// make-volume, train, compress, decompress, mesh, atlas and eval in one go.
/// Fails with [`CliError::Gate`] unless topology and the voxel bound hold.
pub fn pipeline(s: &Settings, out: &Path) -> Result<PipelineStats> {
    std::fs::create_dir_all(out)?;
    let volume = scene_volume(s, &s.scene, derive_seed(s.seed, "scene", 0))?;
    volume.save(out.join("volume.tsdf"))?;

    let (model, report, blocks) = train_model(s)?;
    model.save(out.join("model.divm"))?;

    let c = compress_volume(&volume, &model)?;
    c.save(out.join("volume.divc"))?;
    let rate = rate_report(&c);

    // Sender side: decode its own container.
    let decoded = decompress_volume(&c, &model)?.volume;
    decoded.save(out.join("decoded.tsdf"))?;
    mesh_volume(&volume)?.save_obj(out.join("original.obj"), None)?;
    let (m, atlas) = recompute_uvs(&decoded, s.k, s.res)?;
    m.save_obj(out.join("decoded.obj"), Some(&atlas.obj_uvs()))?;
    let field = ColorField::named(&s.color)
        .ok_or_else(|| CliError::Value { key: "color".into(), value: s.color.clone() })?;
    atlas.rasterize(&m, &|p| field.color(p)).save(out.join("atlas.png"))?;

    // Receiver side: only the files on disk.
    let rx_model = Model::load(out.join("model.divm"))?;
    let rx = decompress_volume(&CompressedVolume::load(out.join("volume.divc"))?, &rx_model)?.volume;
    let (_, rx_atlas) = recompute_uvs(&rx, s.k, s.res)?;

    let e = compare_volumes(&volume, &decoded, &rate, s.per_triangle, derive_seed(s.seed, "metric", 0))?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(&e))?;
    let stats = PipelineStats {
        seed: s.seed,
        scene: s.scene.clone(),
        train: TrainStats {
            lambda: s.lambda,
            steps: s.steps,
            blocks,
            model_hash: format!("{:016x}", report.model_hash),
            first_loss: report.history.first().map(|h| h.total),
            last_loss: report.history.last().map(|h| h.total),
        },
        rate: RateStats::from(&rate),
        eval: e.clone(),
        atlas_size: atlas.size,
        charts: atlas.charts.len(),
        uv_identical: atlas.uv_bytes() == rx_atlas.uv_bytes(),
    };
    write_json(Some(&out.join("stats.json")), &stats)?;
    if !e.topology_equal {
        return Err(CliError::Gate("decoded topology differs".into()));
    }
    if !e.within_voxel {
        return Err(CliError::Gate(format!("vertex moved {:.4} mm, more than a voxel", e.max_vertex_shift_mm)));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_patterns() {
        assert_eq!(frame_path("f_%04d.png", 7), PathBuf::from("f_0007.png"));
        assert_eq!(frame_path("f%d.ppm", 12), PathBuf::from("f12.ppm"));
        assert_eq!(frame_path("atlas.png", 3), PathBuf::from("atlas.png"));
    }

    #[test]
    fn metrics_csv_has_one_row() {
        let e = VolumeEval {
            blocks: 1,
            rate_kb: 0.5,
            header_bits: 1,
            index_bits: 2,
            latent_bits: 3,
            sign_bits: 4,
            chamfer_mm: 0.1,
            hausdorff_mm: 0.2,
            max_vertex_shift_mm: 0.3,
            topology_equal: true,
            signs_equal: true,
            within_voxel: true,
        };
        let csv = metrics_csv(&e);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}
