//! Marginal distributions of a schedule sample, segmented by activity.

use std::collections::BTreeMap;
use std::fmt;

use crate::schedule::{ActivityType, Schedule, DAY_MINUTES};

/// Width of a timing histogram bin in minutes.
pub const TIME_BIN_MINUTES: u32 = 5;
/// Number of timing bins covering one day.
pub const TIME_BINS: usize = (DAY_MINUTES / TIME_BIN_MINUTES) as usize;
/// Bin width in days.
pub const TIME_BIN_DAYS: f64 = TIME_BIN_MINUTES as f64 / DAY_MINUTES as f64;

/// Histogram bin of a time or duration in minutes; a full-day duration
/// lands in the last bin.
pub fn time_bin(minutes: u32) -> usize {
    ((minutes / TIME_BIN_MINUTES) as usize).min(TIME_BINS - 1)
}

/// Distribution of per-schedule occurrence counts; `masses[k]` is the
/// probability of exactly `k` occurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDistribution {
    masses: Vec<f64>,
}

impl RateDistribution {
    pub fn from_masses(masses: Vec<f64>) -> Self {
        Self { masses }
    }

    /// From one count per schedule.
    pub fn from_counts(counts: impl IntoIterator<Item = u32>) -> Self {
        let mut hist: Vec<usize> = Vec::new();
        for c in counts {
            let c = c as usize;
            if hist.len() <= c {
                hist.resize(c + 1, 0);
            }
            hist[c] += 1;
        }
        let n: usize = hist.iter().sum();
        Self::from_histogram(&hist, n)
    }

    fn from_histogram(hist: &[usize], n: usize) -> Self {
        let n = n.max(1) as f64;
        let mut masses: Vec<f64> = hist.iter().map(|&h| h as f64 / n).collect();
        while masses.len() > 1 && masses.last() == Some(&0.0) {
            masses.pop();
        }
        if masses.is_empty() {
            masses.push(1.0);
        }
        Self { masses }
    }

    /// Every schedule has zero occurrences.
    pub fn zero() -> Self {
        Self { masses: vec![1.0] }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> f64 {
        self.masses.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }
}

/// Histogram over one day in [`TIME_BINS`] bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDistribution {
    masses: Vec<f64>,
}

impl TimeDistribution {
    pub fn from_minutes(values: &[u32]) -> Self {
        let mut masses = vec![0.0; TIME_BINS];
        let w = 1.0 / values.len().max(1) as f64;
        for &m in values {
            masses[time_bin(m)] += w;
        }
        Self { masses }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Sparse `TIME_BINS × TIME_BINS` histogram.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BivariateTimeDistribution {
    cells: BTreeMap<(usize, usize), f64>,
}

impl BivariateTimeDistribution {
    pub fn from_minutes(values: &[(u32, u32)]) -> Self {
        let mut cells = BTreeMap::new();
        let w = 1.0 / values.len().max(1) as f64;
        for &(a, b) in values {
            *cells.entry((time_bin(a), time_bin(b))).or_insert(0.0) += w;
        }
        Self { cells }
    }

    pub fn cells(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.cells
    }

    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }
}

/// Activity type tagged with its occurrence index, e.g. `home1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EnumeratedActivity {
    pub kind: ActivityType,
    pub index: usize,
}

impl fmt::Display for EnumeratedActivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.index)
    }
}

/// Enumerates a schedule's activities by prior same-type occurrences.
pub fn enumerate(schedule: &Schedule) -> Vec<EnumeratedActivity> {
    let mut seen = [0usize; ActivityType::COUNT];
    schedule
        .kinds()
        .map(|kind| {
            let index = seen[kind.id()];
            seen[kind.id()] += 1;
            EnumeratedActivity { kind, index }
        })
        .collect()
}

fn type_counts(schedule: &Schedule) -> [u32; ActivityType::COUNT] {
    let mut n = [0u32; ActivityType::COUNT];
    for k in schedule.kinds() {
        n[k.id()] += 1;
    }
    n
}

/// Unordered pair counts of one schedule: `n_a·n_b` for distinct types and
/// `C(n_a, 2)` for a type paired with itself. Pairs are ordered `a ≤ b`.
pub fn pair_counts(schedule: &Schedule) -> BTreeMap<(ActivityType, ActivityType), u32> {
    let n = type_counts(schedule);
    let mut out = BTreeMap::new();
    for a in ActivityType::ALL {
        for b in ActivityType::ALL.into_iter().filter(|b| *b >= a) {
            let c = if a == b { n[a.id()] * n[a.id()].saturating_sub(1) / 2 } else { n[a.id()] * n[b.id()] };
            if c > 0 {
                out.insert((a, b), c);
            }
        }
    }
    out
}

/// Sliding-window counts of consecutive `n`-grams of one schedule.
pub fn ngram_counts(schedule: &Schedule, n: usize) -> BTreeMap<Vec<ActivityType>, u32> {
    let kinds: Vec<ActivityType> = schedule.kinds().collect();
    let mut out = BTreeMap::new();
    if n > 0 {
        for w in kinds.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Distribution of schedule lengths (activity counts).
pub fn sequence_lengths(sample: &[Schedule]) -> RateDistribution {
    RateDistribution::from_counts(sample.iter().map(|s| s.len() as u32))
}

/// Per-type distribution of occurrence counts.
pub fn participation_rates(sample: &[Schedule]) -> BTreeMap<ActivityType, RateDistribution> {
    let counts: Vec<_> = sample.iter().map(type_counts).collect();
    ActivityType::ALL
        .into_iter()
        .filter(|a| counts.iter().any(|n| n[a.id()] > 0))
        .map(|a| (a, RateDistribution::from_counts(counts.iter().map(|n| n[a.id()]))))
        .collect()
}

fn keyed_rates<K: Ord + Clone>(per_schedule: Vec<BTreeMap<K, u32>>) -> BTreeMap<K, RateDistribution> {
    let n = per_schedule.len();
    let mut hists: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for counts in &per_schedule {
        for (k, &c) in counts {
            let h = hists.entry(k.clone()).or_default();
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
            (k, RateDistribution::from_histogram(&h, n))
        })
        .collect()
}

/// Per-pair distribution of unordered pair counts; see [`pair_counts`].
pub fn pair_participation_rates(sample: &[Schedule]) -> BTreeMap<(ActivityType, ActivityType), RateDistribution> {
    keyed_rates(sample.iter().map(pair_counts).collect())
}

/// Per-gram distribution of consecutive `n`-gram counts.
pub fn ngram_rates(sample: &[Schedule], n: usize) -> BTreeMap<Vec<ActivityType>, RateDistribution> {
    keyed_rates(sample.iter().map(|s| ngram_counts(s, n)).collect())
}

/// Timing marginals of a sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timings {
    pub starts: BTreeMap<EnumeratedActivity, TimeDistribution>,
    pub durations: BTreeMap<EnumeratedActivity, TimeDistribution>,
    pub start_durations: BTreeMap<ActivityType, BivariateTimeDistribution>,
    /// Keyed by the first activity of each consecutive pair.
    pub consecutive_durations: BTreeMap<ActivityType, BivariateTimeDistribution>,
}

/// Raw timing observations in minutes, before binning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingObservations {
    pub starts: BTreeMap<EnumeratedActivity, Vec<u32>>,
    pub durations: BTreeMap<EnumeratedActivity, Vec<u32>>,
    pub start_durations: BTreeMap<ActivityType, Vec<(u32, u32)>>,
    pub consecutive_durations: BTreeMap<ActivityType, Vec<(u32, u32)>>,
}

pub fn timing_observations(sample: &[Schedule]) -> TimingObservations {
    let mut obs = TimingObservations::default();
    for s in sample {
        let tags = enumerate(s);
        let entries = s.entries();
        for ((start, a), tag) in s.timed().zip(&tags) {
            obs.starts.entry(*tag).or_default().push(start);
            obs.durations.entry(*tag).or_default().push(a.duration);
            obs.start_durations.entry(a.kind).or_default().push((start, a.duration));
        }
        for w in entries.windows(2) {
            obs.consecutive_durations.entry(w[0].kind).or_default().push((w[0].duration, w[1].duration));
        }
    }
    obs
}

pub fn timing_distributions(sample: &[Schedule]) -> Timings {
    let obs = timing_observations(sample);
    Timings {
        starts: obs.starts.iter().map(|(k, v)| (*k, TimeDistribution::from_minutes(v))).collect(),
        durations: obs.durations.iter().map(|(k, v)| (*k, TimeDistribution::from_minutes(v))).collect(),
        start_durations: obs
            .start_durations
            .iter()
            .map(|(k, v)| (*k, BivariateTimeDistribution::from_minutes(v)))
            .collect(),
        consecutive_durations: obs
            .consecutive_durations
            .iter()
            .map(|(k, v)| (*k, BivariateTimeDistribution::from_minutes(v)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ActivityType::*;

    fn hwh() -> Schedule {
        Schedule::from_pairs(&[(Home, 480), (Work, 540), (Home, 420)]).unwrap()
    }

    #[test]
    fn home_work_home_pairs_and_grams() {
        let p = pair_counts(&hwh());
        assert_eq!(p, BTreeMap::from([((Home, Home), 1), ((Home, Work), 2)]));
        let g2 = ngram_counts(&hwh(), 2);
        assert_eq!(g2, BTreeMap::from([(vec![Home, Work], 1), (vec![Work, Home], 1)]));
        assert_eq!(ngram_counts(&hwh(), 3), BTreeMap::from([(vec![Home, Work, Home], 1)]));
        assert!(ngram_counts(&hwh(), 4).is_empty());
    }

    #[test]
    fn triple_home_pairs() {
        let s = Schedule::from_pairs(&[(Home, 400), (Shop, 100), (Home, 400), (Shop, 100), (Home, 440)]).unwrap();
        let p = pair_counts(&s);
        assert_eq!(p[&(Home, Home)], 3);
        assert_eq!(p[&(Home, Shop)], 6);
        assert_eq!(p[&(Shop, Shop)], 1);
        assert!(pair_counts(&Schedule::single(Home)).is_empty());
    }

    #[test]
    fn rates_include_zero_counts() {
        let sample = vec![hwh(), Schedule::single(Home)];
        let r = participation_rates(&sample);
        assert_eq!(r[&Home].masses(), &[0.0, 0.5, 0.5]);
        assert_eq!(r[&Work].masses(), &[0.5, 0.5]);
        assert!(!r.contains_key(&Education));
        assert_eq!(sequence_lengths(&sample).masses(), &[0.0, 0.5, 0.0, 0.5]);
        let pairs = pair_participation_rates(&sample);
        assert_eq!(pairs[&(Home, Work)].masses(), &[0.5, 0.0, 0.5]);
        assert!((pairs[&(Home, Work)].mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn timings_are_enumerated() {
        let t = timing_distributions(&[hwh()]);
        let home0 = EnumeratedActivity { kind: Home, index: 0 };
        let home1 = EnumeratedActivity { kind: Home, index: 1 };
        assert_eq!(t.starts[&home0].masses()[0], 1.0);
        assert_eq!(t.starts[&home1].masses()[1020 / 5], 1.0);
        assert_eq!(home1.to_string(), "home1");
        let obs = timing_observations(&[hwh()]);
        assert_eq!(obs.consecutive_durations[&Home], vec![(480, 540)]);
        assert_eq!(obs.consecutive_durations[&Work], vec![(540, 420)]);
        let day = timing_distributions(&[Schedule::single(Home)]);
        assert_eq!(day.durations[&home0].masses()[TIME_BINS - 1], 1.0);
    }
}
