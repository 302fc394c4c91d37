//! Command-line front end: `simulate`, `train`, `predict`, `eval` and `plot`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::events::DetectionSegment;
use crate::io::{self, ParamContainer};
use crate::metrics::{evaluate, GtSegment, DEFAULT_THRESHOLDS};
use crate::model::{self, ModelConfig, ModelParams, Streams, TrialFeatures};
use crate::sim::{generate_dataset, DatasetManifest, SimConfig, Split, TrialRecording};

#[derive(Debug, Parser)]
#[command(name = "safeor", version, about = "Digital-twin event detection toolkit")]
pub struct Cli {
    /// Overrides the seed in the simulation or model config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn matches(self, s: Split) -> bool {
        match self {
            SplitArg::Train => s == Split::Train,
            SplitArg::Val => s == Split::Val,
            SplitArg::Test => s == Split::Test,
            SplitArg::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamsArg {
    Mask,
    Depth,
    Both,
}

impl From<StreamsArg> for Streams {
    fn from(s: StreamsArg) -> Self {
        match s {
            StreamsArg::Mask => Streams::Mask,
            StreamsArg::Depth => Streams::Depth,
            StreamsArg::Both => Streams::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of simulated trials.
    Simulate {
        /// Simulation config JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split, selecting weights on the val split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model config JSON; defaults apply to omitted fields.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        streams: StreamsArg,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the per-epoch training log (JSON).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Detect events in every trial of a split.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score predictions against the ground truth of a split.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Draw ground truth and predictions of one trial as an SVG timeline.
    Plot {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        trial: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 for usage and validation errors, 2 for
/// I/O errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.quiet {
        log::set_max_level(log::LevelFilter::Warn);
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { config, out } => simulate(config.as_deref(), out, cli.seed),
        Command::Train {
            data,
            model,
            streams,
            out,
            log,
        } => train(data, model.as_deref(), (*streams).into(), out, log.as_deref(), cli.seed),
        Command::Predict {
            data,
            params,
            out,
            split,
        } => predict(data, params, out, *split),
        Command::Eval {
            gt,
            preds,
            thresholds,
            out,
            split,
        } => eval(gt, preds, thresholds, out, *split),
        Command::Plot { gt, preds, trial, out } => plot(gt, preds, *trial, out),
    }
}

fn simulate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimConfig = match config {
        Some(p) => io::read_json(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    let m = generate_dataset(&cfg, out)?;
    println!("wrote {} trials to {}", m.trials.len(), out.display());
    Ok(())
}

fn load_split(data: &Path, manifest: &DatasetManifest, split: SplitArg) -> Result<Vec<TrialRecording>> {
    manifest
        .trials
        .iter()
        .filter(|t| split.matches(t.split))
        .map(|t| io::read_trial(&data.join(&t.dir)))
        .collect()
}

fn train(
    data: &Path,
    model: Option<&Path>,
    streams: Streams,
    out: &Path,
    log_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg: ModelConfig = match model {
        Some(p) => io::read_json(p)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = io::read_manifest(data)?;
    let tr = load_split(data, &manifest, SplitArg::Train)?;
    let va = load_split(data, &manifest, SplitArg::Val)?;
    let (params, log) = model::train(&tr, &va, &cfg, streams)?;
    params.to_container()?.write(out)?;
    if let Some(p) = log_path {
        io::write_json(p, &log)?;
    }
    println!(
        "trained {} model ({} parameters), kept epoch {}",
        streams.name(),
        log.param_count,
        log.best_epoch
    );
    Ok(())
}

fn predict(data: &Path, params: &Path, out: &Path, split: SplitArg) -> Result<()> {
    let params = ModelParams::from_container(&ParamContainer::read(params)?)?;
    let manifest = io::read_manifest(data)?;
    let mut dets = Vec::new();
    for t in manifest.trials.iter().filter(|t| split.matches(t.split)) {
        let rec = io::read_trial(&data.join(&t.dir))?;
        let feats = TrialFeatures::new(&rec, &params.arch, &params.norm)?;
        dets.extend(model::detect_trial(&feats, &params)?);
    }
    io::write_predictions(out, &dets)?;
    println!("wrote {} detections to {}", dets.len(), out.display());
    Ok(())
}

fn eval(gt: &Path, preds: &Path, thresholds: &[f64], out: &Path, split: SplitArg) -> Result<()> {
    let manifest = io::read_manifest(gt)?;
    let mut trials = Vec::new();
    let mut gts = Vec::new();
    for t in manifest.trials.iter().filter(|t| split.matches(t.split)) {
        let events = io::read_events(&gt.join(&t.dir).join(io::EVENTS_FILE))?;
        gts.extend(GtSegment::from_events(t.trial_id, &events));
        trials.push(t.trial_id);
    }
    let all = io::read_predictions(preds)?;
    let dets: Vec<DetectionSegment> = all.iter().filter(|d| trials.contains(&d.trial_id)).copied().collect();
    if dets.len() < all.len() {
        log::warn!(
            "ignoring {} detections outside the evaluated trials",
            all.len() - dets.len()
        );
    }
    let report = evaluate(&dets, &gts, thresholds, &trials)?;
    io::write_json(out, &report)?;
    for (t, m) in thresholds.iter().zip(&report.map_pct) {
        println!("mAP@{t}: {m}");
    }
    println!("avg mAP: {}", report.avg_map_pct);
    Ok(())
}

fn plot(gt: &Path, preds: &Path, trial: u32, out: &Path) -> Result<()> {
    let manifest = io::read_manifest(gt)?;
    let entry = manifest
        .trials
        .iter()
        .find(|t| t.trial_id == trial)
        .ok_or_else(|| Error::Validation(format!("trial {trial} is not in {}", gt.display())))?;
    let dir = gt.join(&entry.dir);
    let meta = io::read_meta(&dir)?;
    let events = io::read_events(&dir.join(io::EVENTS_FILE))?;
    let dets: Vec<DetectionSegment> = io::read_predictions(preds)?
        .into_iter()
        .filter(|d| d.trial_id == trial)
        .collect();
    let svg = io::render_timeline_svg(trial, meta.n_frames as f64 / meta.fps, &events, &dets);
    io::write_atomic(out, svg.as_bytes())
}
