//! Multi-run experiments and the discrete step-size sweep.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! [experiment]
//! model = "ContRNN-Small"   # preset name or path to a model config
//! data = "real.sample"
//! seed = 7
//! runs = 5
//!
//! [train]                   # optional
//! max_epochs = 200
//! patience = 10
//! min_delta = 1e-4
//!
//! [model]                   # optional field overrides
//! blocks = 1
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Deserialize;

use crate::encoding::check_step;
use crate::error::{Error, Result};
use crate::eval::{activity_frequency_svg, evaluate, sequence_frequency_svg, Domain, EvalReport};
use crate::ingest::split_train_val;
use crate::pipeline::{generate, train, TrainOptions};
use crate::rng;
use crate::sample_io::save_sample;
use crate::schedule::ScheduleSample;
use crate::vae::{EncodingKind, ModelConfig};

/// Step sizes of the sweep, in minutes.
pub const SWEEP_STEPS: [u32; 7] = [5, 10, 15, 20, 30, 60, 120];

fn default_runs() -> usize {
    5
}

fn default_split() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    model: String,
    data: Option<PathBuf>,
    seed: u64,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default = "default_split")]
    split: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    max_epochs: Option<usize>,
    patience: Option<usize>,
    min_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    experiment: ExperimentSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    model: toml::Table,
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub runs: usize,
    /// Training share of the train/validation split.
    pub split: f64,
    pub train: TrainOptions,
}

/// Resolves a preset name or a model config file.
pub fn resolve_model(name: &str, base: &Path) -> Result<ModelConfig> {
    let path = base.join(name);
    if path.is_file() {
        return fs::read_to_string(&path)?
            .parse()
            .map_err(|e: Error| e.context(path.display().to_string()));
    }
    ModelConfig::preset(name)
}

/// Applies field overrides on top of a model config.
pub fn override_model(model: &ModelConfig, overrides: &toml::Table) -> Result<ModelConfig> {
    if overrides.is_empty() {
        return Ok(model.clone());
    }
    let mut table: toml::Table = toml::from_str(&model.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?.parse()
}

impl RunConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            model,
            data: None,
            seed,
            runs: default_runs(),
            split: default_split(),
            train: TrainOptions::default(),
        }
    }

    /// Parses an experiment file; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let model = override_model(&resolve_model(&file.experiment.model, base)?, &file.model)?;
        let defaults = TrainOptions::default();
        let cfg = Self {
            model,
            data: file.experiment.data.map(|p| base.join(p)),
            seed: file.experiment.seed,
            runs: file.experiment.runs,
            split: file.experiment.split,
            train: TrainOptions {
                max_epochs: file.train.max_epochs.unwrap_or(defaults.max_epochs),
                patience: file.train.patience.unwrap_or(defaults.patience),
                min_delta: file.train.min_delta.unwrap_or(defaults.min_delta),
            },
        };
        if cfg.runs == 0 {
            return Err(Error::Config("`runs` must be at least 1".into()));
        }
        if !(cfg.split > 0.0 && cfg.split < 1.0) {
            return Err(Error::Config(format!("`split` must be in (0, 1), got {}", cfg.split)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&fs::read_to_string(path)?, base).map_err(|e| e.context(path.display().to_string()))
    }

    /// Master seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        rng::derive_seed(self.seed, "run", r as u64)
    }
}

/// One summary metric across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStat {
    pub section: &'static str,
    pub metric: String,
    pub unit: &'static str,
    pub values: Vec<f64>,
}

impl SummaryStat {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation; `None` for a single run.
    pub fn std(&self) -> Option<f64> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let m = self.mean();
        Some((self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
    }
}

/// Mean and spread of each summary metric over the runs of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub model: String,
    pub stats: Vec<SummaryStat>,
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

impl ExperimentSummary {
    pub fn from_reports(model: &str, reports: &[EvalReport]) -> Self {
        let mut stats: Vec<SummaryStat> = Vec::new();
        for (r, report) in reports.iter().enumerate() {
            for (i, row) in report.summary_rows().into_iter().enumerate() {
                if r == 0 {
                    stats.push(SummaryStat {
                        section: row.section,
                        metric: row.metric,
                        unit: row.unit,
                        values: Vec::with_capacity(reports.len()),
                    });
                }
                stats[i].values.push(row.value);
            }
        }
        Self {
            model: model.to_string(),
            stats,
        }
    }

    pub fn get(&self, section: &str, metric: &str) -> Option<&SummaryStat> {
        self.stats.iter().find(|s| s.section == section && s.metric == metric)
    }

    /// Columns `section, metric, unit, mean, std`; `std` is empty for one run.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["section", "metric", "unit", "mean", "std"])?;
        for s in &self.stats {
            out.write_record([s.section, &s.metric, s.unit, &fmt(s.mean()), &s.std().map_or(String::new(), fmt)])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Trains, generates `real.len()` schedules and evaluates once per run.
/// Each run writes `run{r}/` under `out`; the cross-run summary goes to
/// `out/summary.csv`.
pub fn run_experiment(cfg: &RunConfig, real: &ScheduleSample, out: &Path) -> Result<ExperimentSummary> {
    fs::create_dir_all(out)?;
    fs::write(out.join("model.toml"), cfg.model.to_toml())?;
    let mut reports = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let ctx = |e: Error| e.context(format!("run {r}"));
        let seed = cfg.run_seed(r);
        info!("{}: run {} of {} (seed {seed})", cfg.model.name, r + 1, cfg.runs);
        let dir = out.join(format!("run{r}"));
        fs::create_dir_all(&dir)?;
        let (tr, val) = split_train_val(real, cfg.split, seed).map_err(ctx)?;
        let (model, report) = train(&cfg.model, &tr.schedules, &val.schedules, seed, &cfg.train).map_err(ctx)?;
        report.write_csv(create(&dir.join("train.csv"))?)?;
        let mut synthetic = generate(&model, real.len(), seed).map_err(ctx)?;
        synthetic.source = cfg.model.name.clone();
        save_sample(&dir.join("synthetic.sample"), &synthetic)?;
        let eval = evaluate(real, &synthetic, &tr.schedules);
        write_eval(&eval, real, &synthetic, &dir)?;
        reports.push(eval);
    }
    let summary = ExperimentSummary::from_reports(&cfg.model.name, &reports);
    summary.write_csv(create(&out.join("summary.csv"))?)?;
    Ok(summary)
}

/// Writes `report.csv`, `summary.csv` and the two plots into `dir`.
pub fn write_eval(report: &EvalReport, real: &ScheduleSample, synthetic: &ScheduleSample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.write_report_csv(create(&dir.join("report.csv"))?)?;
    report.write_summary_csv(create(&dir.join("summary.csv"))?)?;
    let samples = [("real", real.schedules.as_slice()), ("synthetic", synthetic.schedules.as_slice())];
    fs::write(dir.join("activity_frequencies.svg"), activity_frequency_svg(&samples))?;
    fs::write(dir.join("sequence_frequencies.svg"), sequence_frequency_svg(&samples, 10))?;
    Ok(())
}

/// Ranks of each sweep entry on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub metric: &'static str,
    pub ranks: Vec<usize>,
}

/// Competition ranks (ties share the lowest rank). Values are compared at
/// the six decimals written to the reports.
pub fn rank(values: &[f64], lower_is_better: bool) -> Vec<usize> {
    let key = |v: f64| {
        let r = (v * 1e6).round();
        if lower_is_better {
            r
        } else {
            -r
        }
    };
    values
        .iter()
        .map(|&v| 1 + values.iter().filter(|&&w| key(w) < key(v)).count())
        .collect()
}

/// Ranking rows: the three density domains, combined invalidity and
/// creativity.
pub fn rank_table(summaries: &[ExperimentSummary]) -> Vec<RankRow> {
    let mean = |s: &ExperimentSummary, section: &str, metric: &str| s.get(section, metric).map_or(f64::NAN, SummaryStat::mean);
    let mut rows: Vec<RankRow> = Domain::ALL
        .iter()
        .map(|d| RankRow {
            metric: d.name(),
            ranks: rank(&summaries.iter().map(|s| mean(s, "density", d.name())).collect::<Vec<_>>(), true),
        })
        .collect();
    rows.push(RankRow {
        metric: "validity",
        ranks: rank(&summaries.iter().map(|s| mean(s, "validity", "invalid")).collect::<Vec<_>>(), true),
    });
    rows.push(RankRow {
        metric: "creativity",
        ranks: rank(&summaries.iter().map(|s| mean(s, "creativity", "creativity")).collect::<Vec<_>>(), false),
    });
    rows
}

pub fn write_rank_csv(steps: &[u32], rows: &[RankRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["metric".to_string()];
    header.extend(steps.iter().map(|s| format!("{s}min")));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.metric.to_string()];
        rec.extend(r.ranks.iter().map(usize::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Runs the experiment once per step size and ranks the results. Each step
/// writes `step{s}/` under `out`; the ranks go to `out/ranks.csv`.
pub fn step_size_sweep(cfg: &RunConfig, steps: &[u32], real: &ScheduleSample, out: &Path) -> Result<Vec<RankRow>> {
    if cfg.model.encoding != EncodingKind::Discrete {
        return Err(Error::Config(format!("step sweep needs a discrete model, `{}` is continuous", cfg.model.name)));
    }
    if steps.is_empty() {
        return Err(Error::Config("step sweep needs at least one step".into()));
    }
    for &s in steps {
        check_step(s).map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut summaries = Vec::with_capacity(steps.len());
    for &s in steps {
        let mut c = cfg.clone();
        c.model.step = s;
        c.model.name = format!("{}-{s}min", cfg.model.name);
        summaries.push(run_experiment(&c, real, &out.join(format!("step{s}"))).map_err(|e| e.context(format!("step {s}")))?);
    }
    let rows = rank_table(&summaries);
    write_rank_csv(steps, &rows, create(&out.join("ranks.csv"))?)?;
    Ok(rows)
}
