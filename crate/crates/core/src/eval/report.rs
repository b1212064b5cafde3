//! Segment distances, frequency-weighted aggregation and report files.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use crate::error::Result;
use crate::schedule::{ActivityType, Schedule, ScheduleSample, DAY_MINUTES};

use super::distance::{l1_bivariate, rate_emd, time_emd};
use super::marginals::{
    ngram_counts, pair_counts, timing_observations, BivariateTimeDistribution, RateDistribution, TimeDistribution,
};
use super::quality::{creativity, invalidity, Creativity, Validity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Participations,
    Transitions,
    Timing,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Participations, Domain::Transitions, Domain::Timing];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Participations => "participations",
            Domain::Transitions => "transitions",
            Domain::Timing => "timing",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Domain::Timing => "days EMD",
            _ => "rate EMD",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distribution {
    Lengths,
    Participation,
    PairParticipation,
    Bigram,
    Trigram,
    Quadgram,
    StartTimes,
    Durations,
    StartDurations,
    ConsecutiveDurations,
}

impl Distribution {
    pub const ALL: [Distribution; 10] = [
        Distribution::Lengths,
        Distribution::Participation,
        Distribution::PairParticipation,
        Distribution::Bigram,
        Distribution::Trigram,
        Distribution::Quadgram,
        Distribution::StartTimes,
        Distribution::Durations,
        Distribution::StartDurations,
        Distribution::ConsecutiveDurations,
    ];

    pub fn domain(self) -> Domain {
        use Distribution::*;
        match self {
            Lengths | Participation | PairParticipation => Domain::Participations,
            Bigram | Trigram | Quadgram => Domain::Transitions,
            StartTimes | Durations | StartDurations | ConsecutiveDurations => Domain::Timing,
        }
    }

    pub fn name(self) -> &'static str {
        use Distribution::*;
        match self {
            Lengths => "lengths",
            Participation => "participation",
            PairParticipation => "pair participation",
            Bigram => "2-gram",
            Trigram => "3-gram",
            Quadgram => "4-gram",
            StartTimes => "start times",
            Durations => "durations",
            StartDurations => "start-durations",
            ConsecutiveDurations => "consecutive durations",
        }
    }

    pub fn unit(self) -> &'static str {
        use Distribution::*;
        match self {
            StartDurations | ConsecutiveDurations => "days L1",
            StartTimes | Durations => "days EMD",
            _ => "rate EMD",
        }
    }

    /// Unit of the descriptive metric.
    pub fn description_unit(self) -> &'static str {
        match self.domain() {
            Domain::Timing => "days",
            _ => "rate",
        }
    }

    fn is_rate(self) -> bool {
        self.domain() != Domain::Timing
    }

    /// Distance used when one sample has no observation of a timing segment.
    fn max_distance(self) -> f64 {
        match self {
            Distribution::StartDurations | Distribution::ConsecutiveDurations => 2.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Rate(RateDistribution),
    Time(TimeDistribution),
    Joint(BivariateTimeDistribution),
}

/// One segment of one distribution in one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub marginal: Marginal,
    /// Occurrence total in the sample.
    pub frequency: f64,
    /// Mean rate, or mean time (coordinate sum for joints) in days.
    pub description: f64,
}

/// All segmented marginals of a sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Marginals {
    pub n: usize,
    pub segments: BTreeMap<Distribution, BTreeMap<String, Segment>>,
}

fn gram_key(g: &[ActivityType]) -> String {
    g.iter().map(|a| a.label()).collect::<Vec<_>>().join("-")
}

fn rate_segments<K: Ord>(
    n: usize,
    per_schedule: impl Iterator<Item = BTreeMap<K, u32>>,
    key: impl Fn(&K) -> String,
) -> BTreeMap<String, Segment> {
    let mut hists: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for counts in per_schedule {
        for (k, c) in counts {
            let h = hists.entry(k).or_default();
            if h.len() <= c as usize {
                h.resize(c as usize + 1, 0);
            }
            h[c as usize] += 1;
        }
    }
    hists
        .into_iter()
        .map(|(k, mut h)| {
            h[0] = n - h[1..].iter().sum::<usize>();
            let total: usize = h.iter().enumerate().map(|(c, m)| c * m).sum();
            let masses = h.iter().map(|&m| m as f64 / n as f64).collect();
            let seg = Segment {
                marginal: Marginal::Rate(RateDistribution::from_masses(masses)),
                frequency: total as f64,
                description: total as f64 / n as f64,
            };
            (key(&k), seg)
        })
        .collect()
}

fn days(m: u32) -> f64 {
    f64::from(m) / f64::from(DAY_MINUTES)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

impl Marginals {
    pub fn extract(sample: &[Schedule]) -> Self {
        let n = sample.len();
        let mut segments = BTreeMap::new();
        if n == 0 {
            return Self { n, segments };
        }
        let one = |s: &Schedule| BTreeMap::from([((), s.len() as u32)]);
        let mut lengths = rate_segments(n, sample.iter().map(one), |_| "all".to_string());
        if let Some(seg) = lengths.get_mut("all") {
            seg.frequency = n as f64;
        }
        segments.insert(Distribution::Lengths, lengths);
        let singles = sample.iter().map(|s| {
            let mut m = BTreeMap::new();
            for k in s.kinds() {
                *m.entry(k).or_insert(0u32) += 1;
            }
            m
        });
        segments.insert(Distribution::Participation, rate_segments(n, singles, |k| k.label().to_string()));
        segments.insert(
            Distribution::PairParticipation,
            rate_segments(n, sample.iter().map(pair_counts), |(a, b)| format!("{a}+{b}")),
        );
        for (d, k) in [(Distribution::Bigram, 2), (Distribution::Trigram, 3), (Distribution::Quadgram, 4)] {
            segments.insert(d, rate_segments(n, sample.iter().map(|s| ngram_counts(s, k)), |g| gram_key(g)));
        }
        let obs = timing_observations(sample);
        let time = |v: &Vec<u32>| Segment {
            marginal: Marginal::Time(TimeDistribution::from_minutes(v)),
            frequency: v.len() as f64,
            description: mean(v.iter().map(|&m| days(m))),
        };
        let joint = |v: &Vec<(u32, u32)>| Segment {
            marginal: Marginal::Joint(BivariateTimeDistribution::from_minutes(v)),
            frequency: v.len() as f64,
            description: mean(v.iter().map(|&(a, b)| days(a) + days(b))),
        };
        segments.insert(Distribution::StartTimes, obs.starts.iter().map(|(k, v)| (k.to_string(), time(v))).collect());
        segments.insert(Distribution::Durations, obs.durations.iter().map(|(k, v)| (k.to_string(), time(v))).collect());
        segments.insert(
            Distribution::StartDurations,
            obs.start_durations.iter().map(|(k, v)| (k.to_string(), joint(v))).collect(),
        );
        segments.insert(
            Distribution::ConsecutiveDurations,
            obs.consecutive_durations.iter().map(|(k, v)| (format!("{k}-"), joint(v))).collect(),
        );
        Self { n, segments }
    }

    pub fn get(&self, d: Distribution, segment: &str) -> Option<&Segment> {
        self.segments.get(&d).and_then(|m| m.get(segment))
    }
}

fn segment_distance(d: Distribution, real: Option<&Segment>, syn: Option<&Segment>) -> f64 {
    let zero = Marginal::Rate(RateDistribution::zero());
    let (a, b) = match (real, syn) {
        (Some(a), Some(b)) => (&a.marginal, &b.marginal),
        (Some(a), None) if d.is_rate() => (&a.marginal, &zero),
        (None, Some(b)) if d.is_rate() => (&zero, &b.marginal),
        _ => return d.max_distance(),
    };
    match (a, b) {
        (Marginal::Rate(p), Marginal::Rate(q)) => rate_emd(p, q),
        (Marginal::Time(p), Marginal::Time(q)) => time_emd(p, q),
        (Marginal::Joint(p), Marginal::Joint(q)) => l1_bivariate(p, q),
        _ => d.max_distance(),
    }
}

/// Distance of one segment plus its aggregation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub distribution: Distribution,
    pub segment: String,
    pub real: Option<f64>,
    pub synthetic: Option<f64>,
    pub distance: f64,
    pub weight: f64,
}

/// Per-segment distances over the union of both samples' segments. Weights
/// are real-sample occurrence totals; segments only the synthetic sample
/// has are weighted by their synthetic frequency, rescaled to the real
/// sample size.
pub fn compare(real: &Marginals, syn: &Marginals) -> Vec<SegmentResult> {
    let scale = if syn.n == 0 { 0.0 } else { real.n as f64 / syn.n as f64 };
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for d in Distribution::ALL {
        let r = real.segments.get(&d).unwrap_or(&empty);
        let s = syn.segments.get(&d).unwrap_or(&empty);
        let mut names: Vec<&String> = r.keys().chain(s.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            let (a, b) = (r.get(name), s.get(name));
            let weight = match (a, b) {
                (Some(a), _) => a.frequency,
                (None, Some(b)) => b.frequency * scale,
                (None, None) => 0.0,
            };
            out.push(SegmentResult {
                distribution: d,
                segment: name.clone(),
                real: a.map(|x| x.description),
                synthetic: b.map(|x| x.description),
                distance: segment_distance(d, a, b),
                weight,
            });
        }
    }
    out
}

/// Frequency-weighted distance of every distribution; a distribution
/// without segments in either sample scores zero.
pub fn aggregate(segments: &[SegmentResult]) -> Vec<(Distribution, f64)> {
    Distribution::ALL
        .iter()
        .map(|&d| {
            let (num, den) = segments
                .iter()
                .filter(|s| s.distribution == d)
                .fold((0.0, 0.0), |(n, w), s| (n + s.weight * s.distance, w + s.weight));
            (d, if den > 0.0 { num / den } else { 0.0 })
        })
        .collect()
}

/// Unweighted mean of each domain's distribution distances.
pub fn domain_summaries(distributions: &[(Distribution, f64)]) -> Vec<(Domain, f64)> {
    Domain::ALL
        .iter()
        .map(|&dom| {
            let v: Vec<f64> = distributions.iter().filter(|(d, _)| d.domain() == dom).map(|(_, x)| *x).collect();
            (dom, if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 })
        })
        .collect()
}

/// Full comparison of a synthetic sample against a real one.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_real: usize,
    pub n_synthetic: usize,
    pub degenerate: usize,
    pub segments: Vec<SegmentResult>,
    pub distributions: Vec<(Distribution, f64)>,
    pub domains: Vec<(Domain, f64)>,
    pub validity: Validity,
    pub creativity: Creativity,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub section: &'static str,
    pub metric: String,
    pub value: f64,
    pub unit: &'static str,
}

pub(crate) fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

impl EvalReport {
    pub fn domain(&self, d: Domain) -> f64 {
        self.domains.iter().find(|x| x.0 == d).map_or(f64::NAN, |x| x.1)
    }

    pub fn distribution(&self, d: Distribution) -> f64 {
        self.distributions.iter().find(|x| x.0 == d).map_or(f64::NAN, |x| x.1)
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        let row = |section, metric: &str, value, unit| SummaryRow {
            section,
            metric: metric.to_string(),
            value,
            unit,
        };
        for &(d, v) in &self.domains {
            rows.push(row("density", d.name(), v, d.unit()));
        }
        for &(d, v) in &self.distributions {
            rows.push(row("distribution", d.name(), v, d.unit()));
        }
        let v = &self.validity;
        rows.push(row("validity", "not home-based", v.not_home_based, "prob."));
        rows.push(row("validity", "consecutive", v.consecutive, "prob."));
        rows.push(row("validity", "invalid", v.invalid, "prob."));
        let c = &self.creativity;
        rows.push(row("creativity", "homogeneity", c.homogeneity, "prob."));
        rows.push(row("creativity", "conservatism", c.conservatism, "prob."));
        rows.push(row("creativity", "creativity", c.creativity, "prob."));
        rows.push(row("sample", "real", self.n_real as f64, "count"));
        rows.push(row("sample", "synthetic", self.n_synthetic as f64, "count"));
        rows.push(row("sample", "degenerate", self.degenerate as f64, "count"));
        rows
    }

    /// Long-format per-segment table.
    pub fn write_report_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "domain",
            "distribution",
            "segment",
            "description_real",
            "description_syn",
            "distance",
            "unit",
        ])?;
        for s in &self.segments {
            let d = s.distribution;
            out.write_record([
                d.domain().name(),
                d.name(),
                &s.segment,
                &s.real.map_or(String::new(), fmt_value),
                &s.synthetic.map_or(String::new(), fmt_value),
                &fmt_value(s.distance),
                d.unit(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["section", "metric", "value", "unit"])?;
        for r in self.summary_rows() {
            out.write_record([r.section, &r.metric, &fmt_value(r.value), r.unit])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates `synthetic` against `real`; validity and creativity are
/// measured against `training`, the schedules the model saw.
pub fn evaluate(real: &ScheduleSample, synthetic: &ScheduleSample, training: &[Schedule]) -> EvalReport {
    let (mr, ms) = rayon::join(
        || Marginals::extract(&real.schedules),
        || Marginals::extract(&synthetic.schedules),
    );
    let segments = compare(&mr, &ms);
    let distributions = aggregate(&segments);
    let domains = domain_summaries(&distributions);
    EvalReport {
        n_real: real.len(),
        n_synthetic: synthetic.len(),
        degenerate: synthetic.degenerate,
        segments,
        distributions,
        domains,
        validity: invalidity(synthetic, training),
        creativity: creativity(&synthetic.schedules, training),
    }
}
