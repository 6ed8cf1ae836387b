//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::Settings;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "divc", version, about = "Block-based TSDF volume codec with lossless topology")]
pub struct Cli {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (DIVC_SEED overrides it).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Rate weight, or `i<n>` for point n of the schedule.
    #[arg(long, global = true)]
    pub lambda: Option<String>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Grid side in voxels.
    #[arg(long, global = true)]
    pub dims: Option<usize>,
    #[arg(long, global = true)]
    pub scene: Option<String>,
    /// Nominal atlas side in pixels.
    #[arg(long, global = true)]
    pub res: Option<u32>,
    /// Colour field: constant, checker or bands.
    #[arg(long, global = true)]
    pub color: Option<String>,
    /// Any other setting, as `key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a TSDF volume from a named scene.
    MakeVolume {
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a model on random synthetic scenes.
    Train {
        #[arg(short, long)]
        output: PathBuf,
        /// Continue from an existing model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Write training statistics here instead of stdout.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Compress a volume into a container.
    Compress {
        #[arg(short, long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Decompress a container into a volume.
    Decompress {
        #[arg(short, long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Extract a marching-cubes mesh as OBJ.
    Mesh {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Add atlas UVs computed at this resolution.
        #[arg(long)]
        uv: bool,
    },
    /// Decode containers and write one texture atlas per frame.
    Atlas {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output image, PNG or PPM; `%04d` expands to the frame number.
        #[arg(short, long)]
        output: String,
        /// Also write textured OBJ meshes (same pattern rules).
        #[arg(long)]
        obj: Option<String>,
    },
    /// Compare a volume with its compressed version.
    Eval {
        #[arg(short, long)]
        model: PathBuf,
        original: PathBuf,
        container: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rate-distortion sweep over the lambda schedule.
    Sweep {
        /// Directory with lambda_XX.divm models; trains inline if absent.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(short, long, default_value = "pipeline_out")]
        output: PathBuf,
    },
}

impl Cli {
    /// Defaults, then the config file, then flags, then `DIVC_SEED`.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(p) = &self.config {
            s.apply_file(p)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set {kv}: expected key=value")))?;
            s.set(k.trim(), v.trim())?;
        }
        let flags: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
            ("lambda", self.lambda.clone()),
            ("steps", self.steps.map(|v| v.to_string())),
            ("dims", self.dims.map(|v| v.to_string())),
            ("scene", self.scene.clone()),
            ("res", self.res.map(|v| v.to_string())),
            ("color", self.color.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        s.apply_env()?;
        Ok(s)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let s = cli.settings()?;
    if s.jobs > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(s.jobs).build_global();
    }
    match &cli.command {
        Command::MakeVolume { output } => commands::make_volume(&s, output),
        Command::Train { output, init, stats } => commands::train_cmd(&s, init.as_deref(), output, stats.as_deref()),
        Command::Compress { model, input, output, stats } => commands::compress(model, input, output, stats.as_deref()),
        Command::Decompress { model, input, output } => commands::decompress(model, input, output),
        Command::Mesh { input, output, uv } => commands::mesh(input, output, s.k, uv.then_some(s.res)),
        Command::Atlas { model, inputs, output, obj } => commands::atlas(&s, model, inputs, output, obj.as_deref()),
        Command::Eval { model, original, container, output } => {
            commands::eval(&s, model, original, container, output.as_deref()).map(|_| ())
        }
        Command::Sweep { models, output } => commands::sweep_cmd(&s, models.as_deref(), output),
        Command::Pipeline { output } => commands::pipeline(&s, output).map(|_| ()),
    }
}
