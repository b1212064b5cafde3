//! Synthetic ground truth: a weighted grammar of whole-day templates, plus
//! brute-force references used to check the evaluation code.

use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::rng;
use crate::schedule::{round_to_minutes, ActivityType, SampleKind, Schedule, ScheduleSample, ZeroDuration};

const DEFAULT_GRAMMAR: &str = include_str!("../grammars/default.toml");

fn default_min() -> f64 {
    5.0
}

fn default_max() -> f64 {
    1440.0
}

/// Duration distribution of one template slot, in minutes.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub activity: ActivityType,
    pub mean: f64,
    pub sd: f64,
    #[serde(default = "default_min")]
    pub min: f64,
    #[serde(default = "default_max")]
    pub max: f64,
}

impl Slot {
    /// Truncated normal draw by rejection; falls back to clamping.
    fn draw(&self, r: &mut impl Rng) -> f64 {
        if self.sd <= 0.0 {
            return self.mean.clamp(self.min, self.max);
        }
        let normal = Normal::new(self.mean, self.sd).expect("validated sd");
        for _ in 0..1000 {
            let x = normal.sample(r);
            if (self.min..=self.max).contains(&x) {
                return x;
            }
        }
        self.mean.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    pub weight: f64,
    pub slots: Vec<Slot>,
}

/// Weighted whole-day templates.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSpec {
    #[serde(rename = "template")]
    pub templates: Vec<Template>,
}

impl FromStr for GrammarSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec: GrammarSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for GrammarSpec {
    fn default() -> Self {
        DEFAULT_GRAMMAR.parse().expect("shipped grammar is valid")
    }
}

impl GrammarSpec {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?
            .parse()
            .map_err(|e: Error| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.templates.is_empty() {
            return bad("grammar has no templates".into());
        }
        let total: f64 = self.templates.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.templates.iter().any(|t| !(t.weight >= 0.0)) {
            return bad(format!("template weights must be non-negative and sum to 1 (got {total})"));
        }
        for t in &self.templates {
            let kinds: Vec<ActivityType> = t.slots.iter().map(|s| s.activity).collect();
            if kinds.first() != Some(&ActivityType::Home) || kinds.last() != Some(&ActivityType::Home) {
                return bad(format!("template {} must start and end at home", t.name));
            }
            if kinds.windows(2).any(|w| w[0] == w[1] && w[0].is_restricted()) {
                return bad(format!("template {} repeats a home, work or education slot", t.name));
            }
            for s in &t.slots {
                if !(s.min >= 1.0 && s.min <= s.mean && s.mean <= s.max && s.sd >= 0.0) {
                    return bad(format!("template {}: slot needs 1 ≤ min ≤ mean ≤ max and sd ≥ 0", t.name));
                }
            }
        }
        Ok(())
    }

    fn template_index(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(self.templates.iter().map(|t| t.weight)).expect("validated weights")
    }

    fn realise(kinds: &[ActivityType], minutes: &[f64]) -> Schedule {
        let total: f64 = minutes.iter().sum();
        let fractions: Vec<(ActivityType, f64)> = kinds.iter().zip(minutes).map(|(&k, &m)| (k, m / total)).collect();
        round_to_minutes(&fractions, ZeroDuration::Drop).expect("positive fractions summing to one")
    }

    /// Draw `i` of the sample with master `seed`.
    pub fn draw(&self, seed: u64, i: u64) -> (usize, Schedule) {
        let mut r = rng::stream(seed, "oracle", i);
        let t = self.template_index().sample(&mut r);
        let template = &self.templates[t];
        let kinds: Vec<ActivityType> = template.slots.iter().map(|s| s.activity).collect();
        let minutes: Vec<f64> = template.slots.iter().map(|s| s.draw(&mut r)).collect();
        (t, Self::realise(&kinds, &minutes))
    }

    /// Mean minutes of each slot before rescaling.
    pub fn slot_means(&self) -> Vec<Vec<f64>> {
        self.templates.iter().map(|t| t.slots.iter().map(|s| s.mean).collect()).collect()
    }
}

/// `n` i.i.d. schedules from the grammar; identical for a given seed
/// whatever the thread count.
pub fn draw_sample(spec: &GrammarSpec, n: usize, seed: u64) -> ScheduleSample {
    let schedules: Vec<Schedule> = (0..n as u64).into_par_iter().map(|i| spec.draw(seed, i).1).collect();
    let mut s = ScheduleSample::new(SampleKind::Real, "oracle", schedules).with_seed(seed);
    s.ids = (0..n).map(|i| format!("o{i}")).collect();
    s
}

/// Uninformed reference: templates chosen uniformly, durations from a flat
/// Dirichlet.
pub fn null_sample(spec: &GrammarSpec, n: usize, seed: u64) -> ScheduleSample {
    let schedules: Vec<Schedule> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "null", i);
            let t = &spec.templates[r.random_range(0..spec.templates.len())];
            let kinds: Vec<ActivityType> = t.slots.iter().map(|s| s.activity).collect();
            // normalised unit exponentials are flat-Dirichlet distributed
            let minutes: Vec<f64> = kinds.iter().map(|_| Exp1.sample(&mut r)).map(|x: f64| x.max(1e-9)).collect();
            GrammarSpec::realise(&kinds, &minutes)
        })
        .collect();
    let mut s = ScheduleSample::new(SampleKind::Synthetic, "null", schedules).with_seed(seed);
    s.ids = (0..n).map(|i| format!("n{i}")).collect();
    s
}

/// Exact 1-D optimal transport cost between two histograms by walking the
/// supply and demand bins and moving mass greedily.
pub fn brute_force_emd(p: &[f64], q: &[f64], spacing: f64) -> f64 {
    let mut supply: Vec<(usize, f64)> = p.iter().copied().enumerate().filter(|x| x.1 > 0.0).collect();
    let mut demand: Vec<(usize, f64)> = q.iter().copied().enumerate().filter(|x| x.1 > 0.0).collect();
    let (mut i, mut j, mut cost) = (0, 0, 0.0);
    while i < supply.len() && j < demand.len() {
        let m = supply[i].1.min(demand[j].1);
        cost += m * (supply[i].0 as f64 - demand[j].0 as f64).abs();
        supply[i].1 -= m;
        demand[j].1 -= m;
        if supply[i].1 <= 0.0 {
            i += 1;
        }
        if demand[j].1 <= 0.0 {
            j += 1;
        }
    }
    cost * spacing
}

/// Splits `real` into two random halves and evaluates one against the
/// other: the sampling noise floor for a sample of this size.
pub fn resample_baseline(real: &ScheduleSample, seed: u64) -> Result<EvalReport> {
    if real.len() < 1000 {
        return Err(Error::Data(format!("resample baseline needs at least 1000 schedules, got {}", real.len())));
    }
    let mut order: Vec<usize> = (0..real.len()).collect();
    order.shuffle(&mut rng::stream(seed, "baseline", 0));
    let half = real.len() / 2;
    let a = real.select(&order[..half]);
    let mut b = real.select(&order[half..2 * half]);
    b.kind = SampleKind::Synthetic;
    Ok(evaluate(&a, &b, &a.schedules))
}
