//! Run settings: defaults, a flat `key = value` file, then flag overrides.

use std::path::Path;
use std::str::FromStr;

use divc::nnet::{lambda_schedule, Architecture, TrainConfig};

use crate::error::{CliError, Result};

/// Every tunable of the command-line tools.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,
    pub dims: usize,
    pub voxel_size: f32,
    pub tau: f32,
    pub k: usize,
    pub scene: String,
    pub lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub prior_learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Synthetic volumes used for training.
    pub train_volumes: usize,
    /// Held-out volumes used by `eval` style measurements in the sweep.
    pub eval_volumes: usize,
    /// Fine-tuning steps per sweep point, starting from the shared model.
    pub finetune_steps: usize,
    pub res: u32,
    pub color: String,
    /// Area-weighted surface samples per triangle for the distance metrics.
    pub per_triangle: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            jobs: 0,
            dims: 32,
            voxel_size: 5.0,
            tau: 10.0,
            k: 8,
            scene: "random".into(),
            lambda: lambda_schedule()[5],
            steps: 300,
            batch_size: 8,
            learning_rate: 0.03,
            prior_learning_rate: 1.0,
            momentum: 0.9,
            clip_norm: 1.0,
            train_volumes: 6,
            eval_volumes: 4,
            finetune_steps: 150,
            res: 512,
            color: "checker".into(),
            per_triangle: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Value { key: key.into(), value: value.into() })
}

impl Settings {
    pub const KEYS: [&'static str; 20] = [
        "seed",
        "jobs",
        "dims",
        "voxel_size",
        "tau",
        "k",
        "scene",
        "lambda",
        "steps",
        "batch_size",
        "learning_rate",
        "prior_learning_rate",
        "momentum",
        "clip_norm",
        "train_volumes",
        "eval_volumes",
        "finetune_steps",
        "res",
        "color",
        "per_triangle",
    ];

    /// Sets one key. `lambda` also accepts `i<n>` for schedule point `n`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "dims" => self.dims = parse(key, value)?,
            "voxel_size" => self.voxel_size = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "scene" => self.scene = value.into(),
            "lambda" => {
                self.lambda = match value.strip_prefix('i') {
                    Some(i) => {
                        let i: usize = parse(key, i)?;
                        *lambda_schedule()
                            .get(i)
                            .ok_or_else(|| CliError::Value { key: key.into(), value: value.into() })?
                    }
                    None => parse(key, value)?,
                }
            }
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "prior_learning_rate" => self.prior_learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "train_volumes" => self.train_volumes = parse(key, value)?,
            "eval_volumes" => self.eval_volumes = parse(key, value)?,
            "finetune_steps" => self.finetune_steps = parse(key, value)?,
            "res" => self.res = parse(key, value)?,
            "color" => self.color = value.into(),
            "per_triangle" => self.per_triangle = parse(key, value)?,
            _ => return Err(CliError::Value { key: "key".into(), value: key.into() }),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config { line: n + 1, message: "expected key = value".into() })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config { line: n + 1, message: e.to_string() })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// `DIVC_SEED` wins over both the file and `--seed`.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("DIVC_SEED") {
            self.seed = parse("DIVC_SEED", v.trim())?;
        }
        Ok(())
    }

    pub fn train_config(&self, lambda: f64, steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda,
            steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            prior_learning_rate: self.prior_learning_rate,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            seed,
        }
    }

    pub fn arch(&self) -> Architecture {
        Architecture { block_size: self.k, ..Architecture::default() }
    }

    pub fn dims3(&self) -> [usize; 3] {
        [self.dims; 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut s = Settings::default();
        s.apply_text("# sweep\nsteps = 42\nlambda = i0  # largest\ncolor=bands\n\n").unwrap();
        assert_eq!(s.steps, 42);
        assert_eq!(s.lambda, 1.0);
        assert_eq!(s.color, "bands");
    }

    #[test]
    fn bad_lines_name_their_line() {
        let mut s = Settings::default();
        let e = s.apply_text("steps = 1\nnonsense\n").unwrap_err();
        assert!(matches!(e, CliError::Config { line: 2, .. }));
        assert!(s.apply_text("steps = many").is_err());
        assert!(s.apply_text("wat = 1").is_err());
        assert!(s.apply_text("lambda = i12").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut s = Settings::default();
        let d = Settings::default();
        for key in Settings::KEYS {
            let v = match key {
                "scene" | "color" => "sphere".to_string(),
                "voxel_size" | "tau" | "lambda" | "learning_rate" | "prior_learning_rate" | "momentum"
                | "clip_norm" => "0.5".to_string(),
                _ => "3".to_string(),
            };
            s.set(key, &v).unwrap();
        }
        assert_ne!(s, d);
    }
}
