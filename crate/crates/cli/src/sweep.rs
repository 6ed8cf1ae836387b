//! Rate-distortion sweep over the lambda schedule.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use divc::nnet::{lambda_schedule, train, Model};

use crate::config::Settings;
use crate::error::Result;
use crate::experiment::{derive_seed, evaluate_many, random_volumes, train_model, training_blocks, MeanEval};

pub const CSV_HEADER: &str = "lambda,rate_kb,chamfer_mm,hausdorff_mm,sign_bits,latent_bits";

/// One point of the rate-distortion curve, averaged over the held-out volumes.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    /// Container size in KB (1024 bytes) per volume.
    pub rate_kb: f64,
    pub chamfer_mm: f64,
    pub hausdorff_mm: f64,
    /// Coded sign bits per volume.
    pub sign_bits: f64,
    /// Coded latent bits per volume.
    pub latent_bits: f64,
}

impl RdPoint {
    pub fn from_eval(lambda: f64, e: &MeanEval) -> RdPoint {
        RdPoint {
            lambda,
            rate_kb: e.rate_kb,
            chamfer_mm: e.chamfer_mm,
            hausdorff_mm: e.hausdorff_mm,
            sign_bits: e.sign_bits,
            latent_bits: e.latent_bits,
        }
    }
}

pub fn model_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("lambda_{index:02}.divm"))
}

/// Where the models of a sweep come from.
pub enum ModelSource<'a> {
    /// Train a shared model at the configured lambda, then fine-tune a copy
    /// per schedule point. Models are written to the directory if given.
    Train(Option<&'a Path>),
    /// Fine-tune copies of an already trained model.
    FineTune(&'a Model, Option<&'a Path>),
    /// Load `lambda_XX.divm` files; missing ones are skipped with a warning.
    Load(&'a Path),
}

/// Runs the sweep with at most `s.jobs` points in flight. Results are in
/// schedule order (largest lambda first).
pub fn run_sweep(s: &Settings, source: ModelSource<'_>) -> Result<Vec<RdPoint>> {
    let schedule = lambda_schedule();
    let eval = random_volumes(s, "eval", s.eval_volumes)?;
    let models: Vec<(usize, Model)> = match source {
        ModelSource::Load(dir) => {
            let mut out = Vec::new();
            for i in 0..schedule.len() {
                let path = model_path(dir, i);
                match Model::load(&path) {
                    Ok(m) => out.push((i, m)),
                    Err(e) => eprintln!("warning: skipping lambda {}: {}: {e}", schedule[i], path.display()),
                }
            }
            out
        }
        ModelSource::Train(dir) => {
            let (base, ..) = train_model(s)?;
            fine_tune_all(s, &base, dir)?
        }
        ModelSource::FineTune(base, dir) => fine_tune_all(s, base, dir)?,
    };
    let seed = derive_seed(s.seed, "metric", 0);
    models
        .par_iter()
        .map(|(i, m)| Ok(RdPoint::from_eval(schedule[*i], &evaluate_many(m, &eval, s.per_triangle, seed)?)))
        .collect()
}

/// One fine-tuned copy of `base` per schedule point, in schedule order.
/// Every point sees the same batches and noise draws, so the points differ
/// only through lambda.
pub fn fine_tune_all(s: &Settings, base: &Model, dir: Option<&Path>) -> Result<Vec<(usize, Model)>> {
    let schedule = lambda_schedule();
    let data = training_blocks(&random_volumes(s, "train", s.train_volumes)?, s.k)?;
    let tuned: Vec<Result<(usize, Model)>> = (0..schedule.len())
        .into_par_iter()
        .map(|i| {
            let mut m = base.clone();
            let cfg = s.train_config(schedule[i], s.finetune_steps, derive_seed(s.seed, "finetune", 0));
            train(&mut m, &data, &cfg)?;
            Ok((i, m))
        })
        .collect();
    let tuned: Vec<(usize, Model)> = tuned.into_iter().collect::<Result<_>>()?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        for (i, m) in &tuned {
            m.save(model_path(dir, *i))?;
        }
    }
    Ok(tuned)
}

pub fn to_csv(points: &[RdPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{:.9e},{:.6},{:.6},{:.6},{:.3},{:.3}",
            p.lambda, p.rate_kb, p.chamfer_mm, p.hausdorff_mm, p.sign_bits, p.latent_bits
        );
    }
    out
}

/// Pairs `(a, b)` where point `b` beats point `a` by more than `margin`
/// (relative) in both rate and chamfer distance.
pub fn dominated_pairs(points: &[RdPoint], margin: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (a, p) in points.iter().enumerate() {
        for (b, q) in points.iter().enumerate() {
            if a != b && q.rate_kb < p.rate_kb * (1.0 - margin) && q.chamfer_mm < p.chamfer_mm * (1.0 - margin) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Two-panel polyline plot: chamfer and Hausdorff distance against rate.
pub fn to_svg(points: &[RdPoint]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 260.0;
    const M: f64 = 48.0;
    let mut pts: Vec<&RdPoint> = points.iter().collect();
    pts.sort_by(|a, b| a.rate_kb.total_cmp(&b.rate_kb));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * W,
        H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let panels: [(&str, fn(&RdPoint) -> f64, &str); 2] =
        [("Chamfer (mm)", |p| p.chamfer_mm, "#1f5fa8"), ("Hausdorff (mm)", |p| p.hausdorff_mm, "#b8452a")];
    let (x_lo, x_hi) = range(pts.iter().map(|p| p.rate_kb));
    for (panel, (label, f, color)) in panels.into_iter().enumerate() {
        let ox = panel as f64 * W;
        let (y_lo, y_hi) = range(pts.iter().map(|p| f(p)));
        let sx = |x: f64| ox + M + (x - x_lo) / (x_hi - x_lo) * (W - 1.5 * M);
        let sy = |y: f64| H - M - (y - y_lo) / (y_hi - y_lo) * (H - 1.5 * M);
        let _ = writeln!(
            svg,
            r#"<path d="M{:.1} {:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
            ox + M,
            0.5 * M,
            H - M,
            ox + W - 0.5 * M
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Rate (KB/volume)</text>"#, ox + 0.5 * W, H - 12.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{label}</text>"#,
            ox + 14.0,
            0.5 * H,
            ox + 14.0,
            0.5 * H
        );
        for (v, anchor, x, y) in [
            (x_lo, "middle", sx(x_lo), H - M + 14.0),
            (x_hi, "middle", sx(x_hi), H - M + 14.0),
            (y_lo, "end", ox + M - 4.0, sy(y_lo)),
            (y_hi, "end", ox + M - 4.0, sy(y_hi)),
        ] {
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        let line: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.rate_kb), sy(f(p)))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        for p in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#, sx(p.rate_kb), sy(f(p)));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn write_outputs(dir: &Path, points: &[RdPoint]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rd_curve.csv"), to_csv(points))?;
    std::fs::write(dir.join("rd_curve.svg"), to_svg(points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lambda: f64, rate: f64, ch: f64) -> RdPoint {
        RdPoint { lambda, rate_kb: rate, chamfer_mm: ch, hausdorff_mm: 2.0 * ch, sign_bits: 1.0, latent_bits: 2.0 }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let csv = to_csv(&[pt(0.5, 1.25, 0.75)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 6);
        assert_eq!(row[0].parse::<f64>().unwrap(), 0.5);
        assert_eq!(row[1].parse::<f64>().unwrap(), 1.25);
    }

    #[test]
    fn dominance_respects_margin() {
        let pts = [pt(1.0, 10.0, 1.0), pt(0.5, 9.0, 0.9), pt(0.1, 9.6, 0.93)];
        assert_eq!(dominated_pairs(&pts, 0.05), vec![(0, 1)]);
        assert!(dominated_pairs(&pts, 0.2).is_empty());
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = to_svg(&[pt(1.0, 1.0, 2.0), pt(0.1, 3.0, 1.0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(!svg.contains("NaN"));
        assert!(!to_svg(&[pt(1.0, 1.0, 1.0)]).contains("NaN"));
    }
}
