//! Canonical 24-hour activity schedules.
//!
//! A [`Schedule`] is an ordered list of `(activity, duration)` pairs whose
//! durations are integer minutes summing to exactly [`DAY_MINUTES`]. Days
//! (fractions of [`DAY_MINUTES`]) only appear at the encoding and reporting
//! boundaries.

use std::fmt;
use std::str::FromStr;

use crate::error::ScheduleError;

/// Length of the modelled period in minutes.
pub const DAY_MINUTES: u32 = 1440;

/// Activity types whose consecutive repetition is structurally invalid.
pub const RESTRICTED: [ActivityType; 3] =
    [ActivityType::Home, ActivityType::Work, ActivityType::Education];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityType {
    Home = 0,
    Work = 1,
    Education = 2,
    Medical = 3,
    Escort = 4,
    Other = 5,
    Visit = 6,
    Shop = 7,
}

impl ActivityType {
    pub const COUNT: usize = 8;

    pub const ALL: [ActivityType; 8] = [
        ActivityType::Home,
        ActivityType::Work,
        ActivityType::Education,
        ActivityType::Medical,
        ActivityType::Escort,
        ActivityType::Other,
        ActivityType::Visit,
        ActivityType::Shop,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ActivityType::Home => "home",
            ActivityType::Work => "work",
            ActivityType::Education => "education",
            ActivityType::Medical => "medical",
            ActivityType::Escort => "escort",
            ActivityType::Other => "other",
            ActivityType::Visit => "visit",
            ActivityType::Shop => "shop",
        }
    }

    pub fn is_restricted(self) -> bool {
        RESTRICTED.contains(&self)
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActivityType {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScheduleError::UnknownActivity(s.to_string()))
    }
}

/// One schedule entry: an activity type held for `duration` minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Activity {
    pub kind: ActivityType,
    pub duration: u32,
}

impl Activity {
    pub fn new(kind: ActivityType, duration: u32) -> Self {
        Self { kind, duration }
    }
}

/// First structural rule a candidate schedule breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DurationSum { total: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => f.write_str("empty schedule"),
            Violation::DurationSum { total } => {
                write!(f, "duration-sum {total} ≠ {DAY_MINUTES}")
            }
        }
    }
}

/// Checks the schedule invariants on raw entries.
pub fn validate(entries: &[Activity]) -> Result<(), Violation> {
    if entries.is_empty() {
        return Err(Violation::Empty);
    }
    let total: u64 = entries.iter().map(|a| u64::from(a.duration)).sum();
    if total != u64::from(DAY_MINUTES) {
        return Err(Violation::DurationSum { total });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    entries: Vec<Activity>,
}

impl Schedule {
    pub fn new(entries: Vec<Activity>) -> Result<Self, ScheduleError> {
        validate(&entries).map_err(ScheduleError::Invalid)?;
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: &[(ActivityType, u32)]) -> Result<Self, ScheduleError> {
        Self::new(pairs.iter().map(|&(k, d)| Activity::new(k, d)).collect())
    }

    /// A whole day spent in one activity.
    pub fn single(kind: ActivityType) -> Self {
        Self {
            entries: vec![Activity::new(kind, DAY_MINUTES)],
        }
    }

    pub fn entries(&self) -> &[Activity] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kinds(&self) -> impl Iterator<Item = ActivityType> + '_ {
        self.entries.iter().map(|a| a.kind)
    }

    /// Start times in minutes from midnight (prefix sums of durations).
    pub fn starts(&self) -> Vec<u32> {
        let mut t = 0;
        self.entries
            .iter()
            .map(|a| {
                let s = t;
                t += a.duration;
                s
            })
            .collect()
    }

    /// Entries paired with their start minute.
    pub fn timed(&self) -> impl Iterator<Item = (u32, Activity)> + '_ {
        self.starts().into_iter().zip(self.entries.iter().copied())
    }

    pub fn validate(&self) -> Result<(), Violation> {
        validate(&self.entries)
    }

    pub fn is_home_based(&self) -> bool {
        matches!(
            (self.entries.first(), self.entries.last()),
            (Some(a), Some(b)) if a.kind == ActivityType::Home && b.kind == ActivityType::Home
        )
    }

    /// True if two adjacent entries share a type from [`RESTRICTED`].
    pub fn has_forbidden_consecutive(&self) -> bool {
        self.entries
            .windows(2)
            .any(|w| w[0].kind == w[1].kind && w[0].kind.is_restricted())
    }

    /// Collapses adjacent runs of the same type (for types in `types`) into
    /// one entry carrying the summed duration.
    pub fn merge_consecutive(&self, types: &[ActivityType]) -> Schedule {
        let mut out: Vec<Activity> = Vec::with_capacity(self.entries.len());
        for &a in &self.entries {
            match out.last_mut() {
                Some(prev) if prev.kind == a.kind && types.contains(&a.kind) => {
                    prev.duration += a.duration;
                }
                _ => out.push(a),
            }
        }
        Schedule { entries: out }
    }

    /// Activity types plus minute durations as a compact text key,
    /// e.g. `home:480,work:540,home:420`.
    pub fn to_key(&self) -> String {
        let mut s = String::with_capacity(self.entries.len() * 10);
        for (i, a) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(a.kind.label());
            s.push(':');
            s.push_str(&a.duration.to_string());
        }
        s
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_key())
    }
}

impl FromStr for Schedule {
    type Err = ScheduleError;

    /// Parses `act:minutes,act:minutes,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (act, dur) = part
                .split_once(':')
                .ok_or_else(|| ScheduleError::Parse(format!("missing ':' in `{part}`")))?;
            let duration = dur
                .trim()
                .parse::<u32>()
                .map_err(|e| ScheduleError::Parse(format!("bad duration `{dur}`: {e}")))?;
            entries.push(Activity::new(act.parse()?, duration));
        }
        Schedule::new(entries)
    }
}

impl<'de> serde::Deserialize<'de> for ActivityType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to do with entries that round to zero minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDuration {
    #[default]
    Drop,
    Strict,
}

/// Converts fractional-day durations to whole minutes summing to exactly
/// [`DAY_MINUTES`] by largest-remainder apportionment (ties go to the
/// earliest entry).
pub fn round_to_minutes(
    entries: &[(ActivityType, f64)],
    mode: ZeroDuration,
) -> Result<Schedule, ScheduleError> {
    if entries.is_empty() {
        return Err(ScheduleError::Invalid(Violation::Empty));
    }
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if entries.iter().any(|e| !e.1.is_finite() || e.1 < 0.0) || (total - 1.0).abs() > 1e-6 {
        return Err(ScheduleError::FractionSum(total));
    }
    let exact: Vec<f64> = entries.iter().map(|e| e.1 * f64::from(DAY_MINUTES)).collect();
    let mut minutes: Vec<u32> = exact.iter().map(|x| x.floor() as u32).collect();
    let assigned: i64 = minutes.iter().map(|&m| i64::from(m)).sum();
    let mut remaining = i64::from(DAY_MINUTES) - assigned;

    let mut order: Vec<usize> = (0..entries.len()).collect();
    // stable sort keeps earliest entry first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut i = 0;
    while remaining > 0 {
        minutes[order[i % order.len()]] += 1;
        remaining -= 1;
        i += 1;
    }
    // floor of values summing to 1 ± 1e-6 can overshoot by at most a minute
    while remaining < 0 {
        let idx = order
            .iter()
            .rev()
            .copied()
            .find(|&j| minutes[j] > 0)
            .expect("positive total");
        minutes[idx] -= 1;
        remaining += 1;
    }

    if mode == ZeroDuration::Strict && minutes.iter().any(|&m| m == 0) {
        return Err(ScheduleError::ZeroDuration);
    }
    let kept: Vec<Activity> = entries
        .iter()
        .zip(&minutes)
        .filter(|(_, &m)| m > 0)
        .map(|(e, &m)| Activity::new(e.0, m))
        .collect();
    if kept.is_empty() {
        return Err(ScheduleError::Invalid(Violation::Empty));
    }
    Schedule::new(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleKind {
    #[default]
    Real,
    Synthetic,
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleKind::Real => "real",
            SampleKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for SampleKind {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(SampleKind::Real),
            "synthetic" => Ok(SampleKind::Synthetic),
            other => Err(ScheduleError::Parse(format!("unknown sample kind `{other}`"))),
        }
    }
}

/// A collection of schedules plus provenance.
///
/// `ids` is either empty (records are identified by index) or parallel to
/// `schedules`. `degenerate` counts decoder outputs that could not be turned
/// into a schedule; they are part of a synthetic sample's provenance and feed
/// the validity statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleSample {
    pub schedules: Vec<Schedule>,
    pub ids: Vec<String>,
    pub kind: SampleKind,
    pub seed: Option<u64>,
    pub source: String,
    pub degenerate: usize,
}

impl ScheduleSample {
    pub fn new(kind: SampleKind, source: impl Into<String>, schedules: Vec<Schedule>) -> Self {
        Self {
            schedules,
            ids: Vec::new(),
            kind,
            seed: None,
            source: source.into(),
            degenerate: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.schedules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedules.is_empty()
    }

    pub fn id(&self, i: usize) -> String {
        self.ids.get(i).cloned().unwrap_or_else(|| i.to_string())
    }

    /// Sub-sample by index, carrying ids along.
    pub fn select(&self, indices: &[usize]) -> ScheduleSample {
        ScheduleSample {
            schedules: indices.iter().map(|&i| self.schedules[i].clone()).collect(),
            ids: if self.ids.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.ids[i].clone()).collect()
            },
            kind: self.kind,
            seed: self.seed,
            source: self.source.clone(),
            degenerate: 0,
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Schedule> {
        self.schedules.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::ActivityType::*;
    use super::*;

    fn s(pairs: &[(ActivityType, u32)]) -> Schedule {
        Schedule::from_pairs(pairs).unwrap()
    }

    fn raw(pairs: &[(ActivityType, u32)]) -> Vec<Activity> {
        pairs.iter().map(|&(k, d)| Activity::new(k, d)).collect()
    }

    #[test]
    fn ids_are_a_stable_bijection() {
        for (i, a) in ActivityType::ALL.iter().enumerate() {
            assert_eq!(a.id(), i);
            assert_eq!(ActivityType::from_id(i), Some(*a));
            assert_eq!(a.label().parse::<ActivityType>().unwrap(), *a);
        }
        assert_eq!(ActivityType::from_id(8), None);
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate(&raw(&[(Home, 1440)])), Ok(()));
        assert_eq!(validate(&raw(&[(Home, 480), (Work, 540), (Home, 420)])), Ok(()));
        let v = validate(&raw(&[(Home, 480), (Work, 480)])).unwrap_err();
        assert_eq!(v, Violation::DurationSum { total: 960 });
        assert_eq!(v.to_string(), "duration-sum 960 ≠ 1440");
        assert_eq!(validate(&[]), Err(Violation::Empty));
    }

    #[test]
    fn home_based() {
        assert!(s(&[(Home, 480), (Work, 540), (Home, 420)]).is_home_based());
        assert!(!s(&[(Work, 480), (Home, 540), (Work, 420)]).is_home_based());
        assert!(Schedule::single(Home).is_home_based());
    }

    #[test]
    fn forbidden_consecutive() {
        assert!(s(&[(Home, 100), (Home, 100), (Shop, 100), (Home, 1140)]).has_forbidden_consecutive());
        assert!(!s(&[(Home, 100), (Shop, 100), (Shop, 100), (Home, 1140)]).has_forbidden_consecutive());
        assert!(!s(&[(Home, 480), (Work, 540), (Home, 420)]).has_forbidden_consecutive());
    }

    #[test]
    fn merge_examples() {
        let hwe = RESTRICTED;
        assert_eq!(
            s(&[(Home, 100), (Home, 200), (Shop, 1140)]).merge_consecutive(&hwe),
            s(&[(Home, 300), (Shop, 1140)])
        );
        let shops = s(&[(Home, 700), (Shop, 40), (Shop, 700)]);
        assert_eq!(shops.merge_consecutive(&hwe), shops);
        assert_eq!(Schedule::single(Home).merge_consecutive(&ActivityType::ALL), Schedule::single(Home));
    }

    #[test]
    fn rounding_examples() {
        let r = round_to_minutes(&[(Home, 0.5), (Work, 0.5)], ZeroDuration::Drop).unwrap();
        assert_eq!(r, s(&[(Home, 720), (Work, 720)]));

        let third = 1.0 / 3.0;
        let r = round_to_minutes(&[(Home, third), (Work, third), (Home, third)], ZeroDuration::Drop)
            .unwrap();
        assert!(r.entries().iter().all(|a| a.duration == 480));

        // 0.9999 * 1440 = 1439.856, 0.0001 * 1440 = 0.144: the spare minute
        // goes to home (remainder .856), leaving shop at zero.
        let r = round_to_minutes(&[(Home, 0.9999), (Shop, 0.0001)], ZeroDuration::Drop).unwrap();
        assert_eq!(r, Schedule::single(Home));
        assert_eq!(
            round_to_minutes(&[(Home, 0.9999), (Shop, 0.0001)], ZeroDuration::Strict),
            Err(ScheduleError::ZeroDuration)
        );
    }

    #[test]
    fn rounding_rejects_bad_totals() {
        assert!(matches!(
            round_to_minutes(&[(Home, 0.5)], ZeroDuration::Drop),
            Err(ScheduleError::FractionSum(_))
        ));
        assert!(round_to_minutes(&[], ZeroDuration::Drop).is_err());
    }

    #[test]
    fn rounding_tie_goes_to_earliest() {
        // 1440 / 7 = 205.714..., each remainder .714; 1440 - 7*205 = 5 spare
        let f = 1.0 / 7.0;
        let pairs: Vec<_> = (0..7).map(|i| (ActivityType::ALL[i], f)).collect();
        let r = round_to_minutes(&pairs, ZeroDuration::Drop).unwrap();
        let d: Vec<u32> = r.entries().iter().map(|a| a.duration).collect();
        assert_eq!(d, vec![206, 206, 206, 206, 206, 205, 205]);
    }

    #[test]
    fn text_round_trip() {
        let sch = s(&[(Home, 480), (Work, 540), (Home, 420)]);
        assert_eq!(sch.to_key(), "home:480,work:540,home:420");
        assert_eq!(sch.to_key().parse::<Schedule>().unwrap(), sch);
        assert!("home:10".parse::<Schedule>().is_err());
        assert!("gym:1440".parse::<Schedule>().is_err());
    }

    #[test]
    fn starts_are_prefix_sums() {
        let sch = s(&[(Home, 480), (Work, 540), (Home, 420)]);
        assert_eq!(sch.starts(), vec![0, 480, 1020]);
    }
}
