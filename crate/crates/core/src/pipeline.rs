//! Training loop with plateau stopping, and synthetic sample generation.

use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{SampleKind, Schedule, ScheduleSample};
use crate::tensor::{Adam, Graph, Mode, ParamStore, Tensor};
use crate::vae::{Batch, EncodedSet, LossParts, ModelConfig, VaeModel};

/// Stopping rule and limits for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    /// Epochs without a validation improvement of at least `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
    pub best_val: f64,
    pub steps: usize,
    pub seconds: f64,
}

impl TrainReport {
    /// Per-epoch losses as CSV.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch", "train_total", "train_ce", "train_mse", "train_kl", "val_total", "val_ce", "val_mse", "val_kl",
            "seconds",
        ])?;
        for e in &self.epochs {
            let row = [
                e.train.total,
                e.train.ce,
                e.train.mse,
                e.train.kl,
                e.val.total,
                e.val.ce,
                e.val.mse,
                e.val.kl,
                e.seconds,
            ];
            let mut rec = vec![e.epoch.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn accumulate(acc: &mut LossParts, parts: &LossParts, weight: f64) {
    acc.total += parts.total * weight;
    acc.ce += parts.ce * weight;
    acc.mse += parts.mse * weight;
    acc.kl += parts.kl * weight;
}

fn scaled(acc: LossParts, n: f64) -> LossParts {
    LossParts {
        total: acc.total / n,
        ce: acc.ce / n,
        mse: acc.mse / n,
        kl: acc.kl / n,
    }
}

fn standard_normal(shape: &[usize], r: &mut impl rand::Rng) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(r))
}

/// Owns a model and its optimiser; one call to [`Trainer::step`] is one
/// gradient update. Every random draw is keyed by the step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: VaeModel,
    adam: Adam,
    seed: u64,
    steps: usize,
}

/// Keeps freed heap pages mapped between training steps.
fn retain_heap() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator thresholds.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            }
        });
    }
}

impl Trainer {
    pub fn new(model: VaeModel, seed: u64) -> Self {
        retain_heap();
        let adam = Adam::new(model.config().learning_rate);
        Self {
            model,
            adam,
            seed,
            steps: 0,
        }
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn into_model(self) -> VaeModel {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One optimisation step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<LossParts> {
        let k = self.steps as u64;
        let cfg = self.model.config();
        let mut g = Graph::new(Mode::Train, rng::stream(self.seed, "dropout", k));
        let mut tf = rng::stream(self.seed, "teacher-forcing", k);
        let eps = standard_normal(&[batch.size, cfg.latent], &mut rng::stream(self.seed, "train-latent", k));
        let fwd = self.model.forward(&mut g, batch, eps, &mut tf)?;
        let (loss, parts) = self.model.loss(&mut g, &fwd, batch)?;
        if !parts.total.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
        let clip = cfg.clip();
        let mut grads = g.backward(loss)?;
        if let Some(c) = clip {
            grads.clip_global_norm(c);
        }
        self.adam.step(self.model.store_mut(), &grads)?;
        g.apply_updates(self.model.store_mut());
        self.steps += 1;
        Ok(parts)
    }

    /// Mean loss over `set` in evaluation mode with fixed latent noise.
    pub fn evaluate(&self, set: &EncodedSet) -> Result<LossParts> {
        evaluate(&self.model, set, self.seed)
    }
}

/// Mean loss of `model` over `set` (evaluation mode, seeded noise).
pub fn evaluate(model: &VaeModel, set: &EncodedSet, seed: u64) -> Result<LossParts> {
    let n = set.rows();
    let bs = model.config().batch_size;
    let mut acc = LossParts::default();
    let rows: Vec<usize> = (0..n).collect();
    for (i, chunk) in rows.chunks(bs).enumerate() {
        let batch = set.batch(chunk);
        let mut g = Graph::new(Mode::Eval, rng::stream(seed, "val-dropout", i as u64));
        let eps = standard_normal(&[batch.size, model.config().latent], &mut rng::stream(seed, "val-latent", i as u64));
        let mut tf = rng::stream(seed, "val-teacher-forcing", i as u64);
        let fwd = model.forward(&mut g, &batch, eps, &mut tf)?;
        let (_, parts) = model.loss(&mut g, &fwd, &batch)?;
        accumulate(&mut acc, &parts, batch.size as f64);
    }
    Ok(scaled(acc, n.max(1) as f64))
}

/// Trains a fresh model until the validation loss plateaus and returns the
/// weights from the best validation epoch.
pub fn train(
    config: &ModelConfig,
    train: &[Schedule],
    val: &[Schedule],
    seed: u64,
    options: &TrainOptions,
) -> Result<(VaeModel, TrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation samples must be non-empty".into()));
    }
    let start = Instant::now();
    let train_set = EncodedSet::new(train, config)?;
    let val_set = EncodedSet::new(val, config)?;
    let model = VaeModel::new(config.clone(), seed)?;
    info!(
        "training {} ({} parameters) on {} schedules, validating on {}",
        config.name,
        model.param_count(),
        train.len(),
        val.len()
    );
    let mut trainer = Trainer::new(model, seed);
    let mut report = TrainReport {
        best_val: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best: Option<ParamStore> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.rows()).collect();
    for epoch in 1..=options.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng::stream(seed, "shuffle", epoch as u64));
        let mut acc = LossParts::default();
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // batch statistics need at least two rows
            if chunk.len() < 2 && seen > 0 {
                continue;
            }
            let parts = trainer.step(&train_set.batch(chunk)).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { epoch },
                other => other,
            })?;
            accumulate(&mut acc, &parts, chunk.len() as f64);
            seen += chunk.len();
        }
        let train_loss = scaled(acc, seen as f64);
        let val_loss = trainer.evaluate(&val_set)?;
        if !train_loss.total.is_finite() || !val_loss.total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let seconds = t0.elapsed().as_secs_f64();
        debug!(
            "epoch {epoch}: train {:.4} (ce {:.4} mse {:.5} kl {:.3}) val {:.4} [{seconds:.1}s]",
            train_loss.total, train_loss.ce, train_loss.mse, train_loss.kl, val_loss.total
        );
        report.epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val_loss,
            seconds,
        });
        if val_loss.total < report.best_val - options.min_delta {
            report.best_val = val_loss.total;
            report.best_epoch = epoch;
            best = Some(trainer.model().store().clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= options.patience {
                break;
            }
        }
    }
    report.steps = trainer.steps();
    report.seconds = start.elapsed().as_secs_f64();
    let mut model = trainer.into_model();
    if let Some(store) = best {
        model.store_mut().copy_from(&store);
    }
    info!(
        "best epoch {} of {} (val {:.4}) in {:.1}s",
        report.best_epoch,
        report.epochs.len(),
        report.best_val,
        report.seconds
    );
    Ok((model, report))
}

const GENERATE_CHUNK: usize = 1024;

/// Latent vector for draw `index`; independent of every other draw.
pub fn latent_draw(seed: u64, index: u64, latent: usize) -> Vec<f32> {
    let mut r = rng::stream(seed, "latent", index);
    (0..latent).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Samples `n` latent vectors from the prior and decodes each. Outputs the
/// decoder cannot turn into a schedule are counted in `degenerate` and not
/// replaced. The result does not depend on the thread count.
pub fn generate(model: &VaeModel, n: usize, seed: u64) -> Result<ScheduleSample> {
    if n == 0 {
        return Err(Error::Data("requested sample size must be at least 1".into()));
    }
    let latent = model.config().latent;
    let step = model.config().step;
    let starts: Vec<usize> = (0..n).step_by(GENERATE_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&s| {
            let e = (s + GENERATE_CHUNK).min(n);
            let mut z = Vec::with_capacity((e - s) * latent);
            for i in s..e {
                z.extend(latent_draw(seed, i as u64, latent));
            }
            let raw = model.decode_latent(&Tensor::new(vec![e - s, latent], z)?)?;
            Ok((0..raw.size).map(|i| raw.schedule(i, step).ok()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut schedules = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut degenerate = 0;
    for (i, s) in chunks.into_iter().flatten().enumerate() {
        match s {
            Some(s) => {
                schedules.push(s);
                ids.push(format!("syn{i}"));
            }
            None => degenerate += 1,
        }
    }
    let mut sample = ScheduleSample::new(SampleKind::Synthetic, model.config().name.clone(), schedules).with_seed(seed);
    sample.ids = ids;
    sample.degenerate = degenerate;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ActivityType::*;

    fn data() -> Vec<Schedule> {
        let mut out = Vec::new();
        for i in 0..24u32 {
            let w = 420 + 10 * (i % 6);
            out.push(Schedule::from_pairs(&[(Home, w), (Work, 480), (Home, 960 - w)]).unwrap());
            out.push(Schedule::from_pairs(&[(Home, 600 + i), (Shop, 60), (Home, 780 - i)]).unwrap());
        }
        out
    }

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::preset("ContRNN").unwrap();
        c.blocks = 1;
        c.block_size = 16;
        c.batch_size = 16;
        c.learning_rate = 0.01;
        c
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_epoch() {
        let d = data();
        let opts = TrainOptions {
            max_epochs: 4,
            ..TrainOptions::default()
        };
        let (m1, r1) = train(&tiny(), &d[..40], &d[40..], 5, &opts).unwrap();
        let (m2, r2) = train(&tiny(), &d[..40], &d[40..], 5, &opts).unwrap();
        let losses = |r: &TrainReport| r.epochs.iter().map(|e| (e.train, e.val)).collect::<Vec<_>>();
        assert_eq!(losses(&r1), losses(&r2));
        assert_eq!(m1.store(), m2.store());
        assert_eq!(r1.epochs.len(), 4);
        let best = r1.epochs.iter().map(|e| e.val.total).fold(f64::INFINITY, f64::min);
        assert_eq!(r1.best_val, best);
        assert!(r1.epochs[3].train.total < r1.epochs[0].train.total);
        let mut csv = Vec::new();
        r1.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn plateau_stops_early() {
        let d = data();
        let mut c = tiny();
        c.learning_rate = 1e-9;
        let opts = TrainOptions {
            max_epochs: 50,
            patience: 2,
            min_delta: 1.0,
        };
        let (_, r) = train(&c, &d, &d, 1, &opts).unwrap();
        assert_eq!(r.epochs.len(), 3);
        assert_eq!(r.best_epoch, 1);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(train(&tiny(), &[], &data(), 0, &TrainOptions::default()).is_err());
    }

    #[test]
    fn generation_is_seeded() {
        let model = VaeModel::new(tiny(), 3).unwrap();
        let a = generate(&model, 1500, 9).unwrap();
        let b = generate(&model, 1500, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len() + a.degenerate, 1500);
        assert_ne!(generate(&model, 50, 10).unwrap().schedules, a.schedules[..50].to_vec());
        assert!(generate(&model, 0, 1).is_err());
    }
}
