//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence. `SCHEDGEN_THREADS` sets the worker thread count.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::encoding::{encode_continuous, encode_discrete};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::experiment::{resolve_model, run_experiment, step_size_sweep, RunConfig, SWEEP_STEPS};
use crate::ingest::{clean, ingest, read_diaries, split_train_val, LabelMap};
use crate::oracle::{draw_sample, null_sample, GrammarSpec};
use crate::pipeline::{generate, train, TrainOptions};
use crate::sample_io::{load_real, load_sample, save_sample};
use crate::schedule::ScheduleSample;
use crate::vae::{EncodingKind, ModelConfig, VaeModel};

pub const THREADS_ENV: &str = "SCHEDGEN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "schedgen", version, about = "Learn, generate and evaluate 24-hour activity schedules")]
pub struct Cli {
    /// Log debug output.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert travel diaries into a cleaned sample file.
    Ingest {
        #[arg(long)]
        diaries: PathBuf,
        /// CSV with columns `label,activity`; omit if labels are canonical.
        #[arg(long)]
        labelmap: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a sample from a template grammar.
    Oracle {
        /// Grammar file; the bundled grammar when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short = 'n', long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw the uniform-template reference sample instead.
        #[arg(long)]
        null: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Sample schedules from a checkpoint.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(short = 'n', long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a synthetic sample against a real one.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        syn: PathBuf,
        /// Schedules the model was trained on, for creativity; defaults to `--real`.
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated train, generate and evaluate runs with a summary.
    Experiment(ExperimentArgs),
    /// Run an experiment per discrete step size and rank them.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_STEPS)]
        steps: Vec<u32>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model config file or preset name.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training share of the train/validation split.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write each schedule's encoding, one per line.
    #[arg(long)]
    pub dump_encodings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the data file named in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<(RunConfig, ScheduleSample)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(r) = self.runs {
            if r == 0 {
                return Err(Error::Config("`--runs` must be at least 1".into()));
            }
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let data = cfg.data.clone().ok_or_else(|| Error::Config("no data file: set `data` or pass --data".into()))?;
        let real = load_real(&data)?;
        Ok((cfg, real))
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Divergence { .. } => 3,
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn writer(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufWriter::new(f))
}

/// One line per schedule: `id;token,token,...`.
pub fn dump_encodings(sample: &ScheduleSample, config: &ModelConfig, w: impl Write) -> Result<()> {
    let mut w = w;
    for (i, s) in sample.iter().enumerate() {
        let line = match config.encoding {
            EncodingKind::Discrete => encode_discrete(s, config.step)?.to_string(),
            EncodingKind::Continuous => encode_continuous(s, config.max_len)?.to_string(),
        };
        writeln!(w, "{};{line}", sample.id(i))?;
    }
    w.flush()?;
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let config = resolve_model(&a.config, Path::new("."))?;
    let data = load_real(&a.data)?;
    if let Some(path) = &a.dump_encodings {
        dump_encodings(&data, &config, writer(path)?)?;
    }
    let (tr, val) = split_train_val(&data, a.split, a.seed)?;
    let opts = TrainOptions {
        max_epochs: a.max_epochs,
        patience: a.patience,
        ..TrainOptions::default()
    };
    let (model, report) = train(&config, &tr.schedules, &val.schedules, a.seed, &opts)?;
    info!(
        "{}: best epoch {} of {}, validation loss {:.6}",
        config.name,
        report.best_epoch,
        report.epochs.len(),
        report.best_val
    );
    if let Some(path) = &a.log {
        report.write_csv(writer(path)?)?;
    }
    model.save(&a.out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { diaries, labelmap, out } => {
            let labels = match &labelmap {
                Some(p) => LabelMap::load(p)?,
                None => LabelMap::identity(),
            };
            let f = fs::File::open(&diaries).map_err(|e| Error::from(e).context(diaries.display().to_string()))?;
            let rows = read_diaries(f).map_err(|e| e.context(diaries.display().to_string()))?;
            let (sample, tiling) = ingest(&rows, &labels)?;
            let (cleaned, report) = clean(&sample);
            info!(
                "{} person-days: {} failed tiling, {} not home-based, {} merged, {} kept",
                tiling.days,
                tiling.tiling_dropped,
                report.dropped,
                report.merged,
                cleaned.len()
            );
            save_sample(&out, &cleaned)
        }
        Command::Oracle {
            spec,
            count,
            seed,
            null,
            out,
        } => {
            let spec = match &spec {
                Some(p) => GrammarSpec::load(p)?,
                None => GrammarSpec::default(),
            };
            let sample = if null {
                null_sample(&spec, count, seed)
            } else {
                draw_sample(&spec, count, seed)
            };
            save_sample(&out, &sample)
        }
        Command::Train(a) => run_train(&a),
        Command::Generate { ckpt, count, seed, out } => {
            let model = VaeModel::load(&ckpt)?;
            let sample = generate(&model, count, seed)?;
            if sample.degenerate > 0 {
                info!("{} of {count} outputs were degenerate", sample.degenerate);
            }
            save_sample(&out, &sample)
        }
        Command::Evaluate {
            real,
            syn,
            training,
            out,
        } => {
            let real = load_real(&real)?;
            let syn = load_sample(&syn)?;
            let training = match &training {
                Some(p) => load_real(p)?.schedules,
                None => real.schedules.clone(),
            };
            let report = evaluate(&real, &syn, &training);
            crate::experiment::write_eval(&report, &real, &syn, &out)
        }
        Command::Experiment(a) => {
            let (cfg, real) = a.load()?;
            run_experiment(&cfg, &real, &a.out).map(|_| ())
        }
        Command::Sweep { experiment, steps } => {
            let (cfg, real) = experiment.load()?;
            step_size_sweep(&cfg, &steps, &real, &experiment.out).map(|_| ())
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = init_threads().and_then(|_| run(cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
