//! The `dcs` command line.

pub mod checkpoint;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_idx, save_idx, synth_labeled_clusters, synth_sparse, Dataset};
use crate::error::{Error, Result};
use crate::latent::sample_latents;
use crate::tensor::Matrix;
use crate::trainer::{
    evaluate, reconstruct, seeds, train_loop, DataKind, EvalSummary, Family, MetricRow, Observer, Reconstruction, RunConfig,
    TrainState, METRICS_HEADER,
};

/// Environment variable that overrides every seed a command would use.
pub const SEED_ENV: &str = "DCS_SEED";

#[derive(Debug, Parser)]
#[command(name = "dcs", version, about = "Deep compressed sensing: train generators and measurements, reconstruct signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a `key = value` config file.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct every signal of an IDX file; writes CSV rows
    /// `index,sq_error,x̂...`.
    Reconstruct {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Latent optimisation steps (default: the trained T).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Output file (default: stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Summarise reconstruction error on a dataset.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write the optimised latents of a dataset as CSV rows `label,z...`.
    ExportLatents {
        checkpoint: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write a synthetic dataset as IDX files.
    Synth {
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        /// Sparsity (sparse) or number of classes (clusters).
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Signals are written as an f64 IDX matrix.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Sparse,
    Clusters,
}

pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}: not an integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref()),
        Command::Reconstruct { checkpoint, data, steps, labels, out } => {
            let text = cmd_reconstruct(&checkpoint, &data, labels.as_deref(), steps)?;
            match out {
                Some(p) => fs::write(&p, text).map_err(|e| Error::io(&p, e)),
                None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
            }
        }
        Command::Eval { checkpoint, data, steps, labels } => {
            print!("{}", format_summary(&cmd_eval(&checkpoint, &data, labels.as_deref(), steps)?));
            Ok(())
        }
        Command::ExportLatents { checkpoint, data, out, steps, labels } => cmd_export_latents(&checkpoint, &data, labels.as_deref(), &out, steps),
        Command::Synth { kind, n, dim, k, spread, seed, out, labels_out } => {
            let ds = match kind {
                SynthKind::Sparse => synth_sparse(n, dim, k, seed)?,
                SynthKind::Clusters => synth_labeled_clusters(n, dim, k, spread, seed)?,
            };
            save_idx(&ds, &out, labels_out.as_deref())
        }
    }
}

/// Reads a config file; relative paths inside it are taken relative to
/// the file's directory and unset output paths default to siblings of it.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    for p in [&mut cfg.data_images, &mut cfg.data_labels, &mut cfg.metrics_path, &mut cfg.checkpoint_path] {
        if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
            *p = Some(dir.join(rel));
        }
    }
    cfg.metrics_path.get_or_insert_with(|| dir.join(format!("{stem}.metrics.csv")));
    cfg.checkpoint_path.get_or_insert_with(|| dir.join(format!("{stem}.ckpt")));
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// The dataset a config describes, before any probe split.
pub fn load_training_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match cfg.data {
        DataKind::SynthSparse => synth_sparse(cfg.data_n, cfg.signal_dim, cfg.data_k, cfg.data_seed)?,
        DataKind::SynthClusters => synth_labeled_clusters(cfg.data_n, cfg.signal_dim, cfg.num_classes, cfg.data_spread, cfg.data_seed)?,
        DataKind::Idx => load_idx(cfg.data_images.as_ref().expect("validated"), cfg.data_labels.as_deref())?,
    };
    if ds.dim() != cfg.signal_dim {
        return Err(Error::Config(format!("signal_dim: config says {}, data has {}", cfg.signal_dim, ds.dim())));
    }
    Ok(ds)
}

/// Splits off the probe rows used to track reconstruction error (dcs only).
pub fn split_probe(cfg: &RunConfig, ds: Dataset) -> Result<(Dataset, Option<Dataset>)> {
    if cfg.family != Family::Dcs || cfg.probe_size == 0 {
        return Ok((ds, None));
    }
    if cfg.probe_size >= ds.len() {
        return Err(Error::Config(format!("probe_size {} leaves no training data out of {}", cfg.probe_size, ds.len())));
    }
    let (train, probe) = ds.split_tail(cfg.probe_size);
    Ok((train, Some(probe)))
}

/// Appends metric rows and writes checkpoints as training goes.
struct FileObserver {
    metrics: BufWriter<File>,
    checkpoint: PathBuf,
}

impl Observer for FileObserver {
    fn on_metrics(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.to_csv()).and_then(|_| self.metrics.flush()).map_err(|e| Error::io("metrics", e))
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<()> {
        checkpoint::save(state, &self.checkpoint)
    }
}

/// The config a resumed run continues with: the stored one, with the run
/// length, reporting intervals and output paths taken from `requested`.
/// Anything else that differs is an error.
pub fn resume_config(stored: &RunConfig, requested: &RunConfig) -> Result<RunConfig> {
    let merged = RunConfig {
        total_steps: requested.total_steps,
        metrics_interval: requested.metrics_interval,
        checkpoint_interval: requested.checkpoint_interval,
        metrics_path: requested.metrics_path.clone(),
        checkpoint_path: requested.checkpoint_path.clone(),
        ..stored.clone()
    };
    if let Some(((key, was), (_, now))) = merged.entries().into_iter().zip(requested.entries()).find(|(a, b)| a != b) {
        return Err(Error::Config(format!("{key}: checkpoint was trained with {was:?}, config says {now:?}")));
    }
    Ok(merged)
}

pub fn cmd_train(config_path: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let (train, probe) = split_probe(&cfg, load_training_data(&cfg)?)?;
    let metrics_path = cfg.metrics_path.clone().expect("set by load_config");
    let mut state = match resume {
        Some(p) => {
            let mut st = checkpoint::load(p)?;
            if st.batches.num_rows() != train.len() {
                return Err(Error::Checkpoint(format!("checkpoint was trained on {} rows, data has {}", st.batches.num_rows(), train.len())));
            }
            st.config = resume_config(&st.config, &cfg)?;
            st
        }
        None => TrainState::new(cfg.clone(), train.len())?,
    };
    let fresh = resume.is_none() || !metrics_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut observer = FileObserver { metrics: BufWriter::new(file), checkpoint: cfg.checkpoint_path.clone().expect("set by load_config") };
    if fresh {
        writeln!(observer.metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    }
    let rows = train_loop(&mut state, &train, probe.as_ref().map(|p| &p.signals), &mut observer)?;
    let summary = match rows.last() {
        Some(r) => format!(
            "loss_G={} loss_F={} alpha={} z_move={}{}",
            r.loss_g,
            r.loss_f,
            r.alpha,
            r.z_move,
            r.recon_error.map(|e| format!(" recon_error={e}")).unwrap_or_default()
        ),
        None => format!("alpha={}", state.alpha()),
    };
    println!("trained {} for {} steps: {summary}", state.config.family, state.step);
    Ok(())
}

fn load_signals(data: &Path, labels: Option<&Path>) -> Result<Dataset> {
    load_idx(data, labels)
}

/// Starting latents for evaluation commands: one per row, seeded by the
/// checkpoint's run seed unless overridden.
fn eval_latents(state: &TrainState, rows: usize) -> Result<Matrix> {
    let seed = seed_override()?.unwrap_or(state.config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::RECONSTRUCT));
    Ok(sample_latents(&mut rng, rows, state.model.gen.latent_dim))
}

fn run_reconstruction(checkpoint: &Path, data: &Path, labels: Option<&Path>, steps: Option<usize>) -> Result<(Dataset, Reconstruction)> {
    let state = checkpoint::load(checkpoint)?;
    let ds = load_signals(data, labels)?;
    let z0 = eval_latents(&state, ds.len())?;
    let steps = steps.unwrap_or(state.config.latent_steps);
    let r = reconstruct(&state.model, &state.theta, &state.phi, &ds.signals, ds.labels.as_deref(), &z0, steps)?;
    Ok((ds, r))
}

pub fn cmd_reconstruct(checkpoint: &Path, data: &Path, labels: Option<&Path>, steps: Option<usize>) -> Result<String> {
    let (_, r) = run_reconstruction(checkpoint, data, labels, steps)?;
    let mut out = String::from("index,sq_error");
    for j in 0..r.x_hat.cols() {
        out += &format!(",x{j}");
    }
    out.push('\n');
    for (i, e) in r.sq_errors.iter().enumerate() {
        out += &format!("{i},{e}");
        for v in r.x_hat.row(i) {
            out += &format!(",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, labels: Option<&Path>, steps: Option<usize>) -> Result<EvalSummary> {
    let state = checkpoint::load(checkpoint)?;
    let ds = load_signals(data, labels)?;
    let z0 = eval_latents(&state, ds.len())?;
    let steps = steps.unwrap_or(state.config.latent_steps);
    evaluate(&state.model, &state.theta, &state.phi, &ds.signals, ds.labels.as_deref(), &z0, steps)
}

pub fn format_summary(s: &EvalSummary) -> String {
    let mut out = format!(
        "count={}\nmean={}\nstd={}\nalpha={}\nz_move_mean={}\nz_move_std={}\n",
        s.count, s.mean, s.std, s.alpha, s.z_move_mean, s.z_move_std
    );
    if let Some(a) = s.accuracy {
        out += &format!("accuracy={a}\n");
    }
    out
}

pub fn cmd_export_latents(checkpoint: &Path, data: &Path, labels: Option<&Path>, out: &Path, steps: Option<usize>) -> Result<()> {
    let (ds, r) = run_reconstruction(checkpoint, data, labels, steps)?;
    let mut text = String::from("label");
    for j in 0..r.z_hat.cols() {
        text += &format!(",z{j}");
    }
    text.push('\n');
    for i in 0..r.z_hat.rows() {
        if let Some(l) = &ds.labels {
            text += &l[i].to_string();
        }
        for v in r.z_hat.row(i) {
            text += &format!(",{v}");
        }
        text.push('\n');
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))
}
