//! Travel-diary rows to cleaned schedule samples.
//!
//! Diaries are a CSV with header `pid,day,act,start_min,end_min,trip_min`;
//! the label map is a CSV with header `label,activity` mapping every raw
//! activity label to one of the canonical types.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{Activity, ActivityType, SampleKind, Schedule, ScheduleSample, DAY_MINUTES, RESTRICTED};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DiaryRow {
    pub pid: String,
    pub day: String,
    pub act: String,
    pub start_min: u32,
    pub end_min: u32,
    #[serde(default)]
    pub trip_min: u32,
}

/// Raw label to canonical activity type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelMap {
    map: HashMap<String, ActivityType>,
}

#[derive(Deserialize)]
struct LabelRow {
    label: String,
    activity: ActivityType,
}

impl LabelMap {
    /// Maps each canonical label to itself.
    pub fn identity() -> Self {
        Self {
            map: ActivityType::ALL.iter().map(|a| (a.label().to_string(), *a)).collect(),
        }
    }

    pub fn from_csv(r: impl Read) -> Result<Self> {
        let mut map = HashMap::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: LabelRow = row?;
            map.insert(row.label.trim().to_string(), row.activity);
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::from_csv(f).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn insert(&mut self, label: impl Into<String>, activity: ActivityType) {
        self.map.insert(label.into(), activity);
    }

    pub fn get(&self, label: &str) -> Result<ActivityType> {
        self.map
            .get(label.trim())
            .copied()
            .ok_or_else(|| Error::Data(format!("activity label `{label}` is missing from the label map")))
    }
}

pub fn read_diaries(r: impl Read) -> Result<Vec<DiaryRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<DiaryRow>, _>>()?;
    Ok(rows)
}

/// Why a person-day could not be turned into a schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TilingError {
    Empty,
    /// Row with `start > end` or `end > 1440`.
    BadRow { start: u32, end: u32 },
    /// The day does not begin at midnight.
    LateStart(u32),
    Gap { expected: u32, found: u32 },
    Overlap { expected: u32, found: u32 },
    /// Activities and trips end before or after midnight.
    Coverage(u32),
    ZeroDuration,
}

impl fmt::Display for TilingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TilingError::Empty => f.write_str("no rows"),
            TilingError::BadRow { start, end } => write!(f, "row [{start}, {end}) is out of range"),
            TilingError::LateStart(s) => write!(f, "first activity starts at minute {s}, not midnight"),
            TilingError::Gap { expected, found } => write!(f, "gap: next activity at {found}, expected {expected}"),
            TilingError::Overlap { expected, found } => {
                write!(f, "overlap: next activity at {found}, expected {expected}")
            }
            TilingError::Coverage(end) => write!(f, "day ends at minute {end}, expected 1440"),
            TilingError::ZeroDuration => f.write_str("zero-length activity"),
        }
    }
}

/// Extends each activity by its following trip. Rows must be ordered by
/// start and tile the day exactly once trips are included.
pub fn absorb_trips(rows: &[(ActivityType, u32, u32, u32)]) -> std::result::Result<Schedule, TilingError> {
    let Some(first) = rows.first() else {
        return Err(TilingError::Empty);
    };
    if first.1 != 0 {
        return Err(TilingError::LateStart(first.1));
    }
    let mut entries = Vec::with_capacity(rows.len());
    let mut cursor = 0;
    for &(kind, start, end, trip) in rows {
        if start > end || end > DAY_MINUTES {
            return Err(TilingError::BadRow { start, end });
        }
        if start > cursor {
            return Err(TilingError::Gap {
                expected: cursor,
                found: start,
            });
        }
        if start < cursor {
            return Err(TilingError::Overlap {
                expected: cursor,
                found: start,
            });
        }
        let duration = end - start + trip;
        if duration == 0 {
            return Err(TilingError::ZeroDuration);
        }
        entries.push(Activity::new(kind, duration));
        cursor = end + trip;
    }
    if cursor != DAY_MINUTES {
        return Err(TilingError::Coverage(cursor));
    }
    Schedule::new(entries).map_err(|_| TilingError::Coverage(cursor))
}

/// Counts from [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub days: usize,
    pub tiling_dropped: usize,
}

/// Groups rows by `(pid, day)` and converts each day; days that fail to
/// tile are dropped and counted.
pub fn ingest(rows: &[DiaryRow], labels: &LabelMap) -> Result<(ScheduleSample, IngestReport)> {
    let mut days: BTreeMap<(&str, &str), Vec<(ActivityType, u32, u32, u32)>> = BTreeMap::new();
    for r in rows {
        let kind = labels.get(&r.act)?;
        days.entry((&r.pid, &r.day)).or_default().push((kind, r.start_min, r.end_min, r.trip_min));
    }
    let mut report = IngestReport {
        days: days.len(),
        ..IngestReport::default()
    };
    let mut sample = ScheduleSample::new(SampleKind::Real, "diaries", Vec::new());
    for ((pid, day), mut acts) in days {
        acts.sort_by_key(|a| (a.1, a.2));
        match absorb_trips(&acts) {
            Ok(s) => {
                sample.schedules.push(s);
                sample.ids.push(format!("{pid}_{day}"));
            }
            Err(e) => {
                report.tiling_dropped += 1;
                warn!("dropping {pid}/{day}: {e}");
            }
        }
    }
    info!("{} person-days, {} dropped for tiling", report.days, report.tiling_dropped);
    Ok((sample, report))
}

/// Counts from [`clean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanReport {
    /// Non-home-based schedules removed.
    pub dropped: usize,
    /// Schedules in which consecutive home, work or education merged.
    pub merged: usize,
}

/// Removes non-home-based schedules and merges consecutive home, work and
/// education activities.
pub fn clean(sample: &ScheduleSample) -> (ScheduleSample, CleanReport) {
    let mut report = CleanReport::default();
    let mut out = ScheduleSample {
        schedules: Vec::with_capacity(sample.len()),
        ids: Vec::new(),
        ..sample.clone()
    };
    for (i, s) in sample.iter().enumerate() {
        if !s.is_home_based() {
            report.dropped += 1;
            continue;
        }
        let merged = s.merge_consecutive(&RESTRICTED);
        if merged.len() != s.len() {
            report.merged += 1;
        }
        out.schedules.push(merged);
        if !sample.ids.is_empty() {
            out.ids.push(sample.ids[i].clone());
        }
    }
    (out, report)
}

/// Seeded train/validation partition with `⌊fraction·n⌋` training rows.
pub fn split_train_val(sample: &ScheduleSample, fraction: f64, seed: u64) -> Result<(ScheduleSample, ScheduleSample)> {
    if sample.len() < 10 {
        return Err(Error::Data(format!("need at least 10 schedules to split, got {}", sample.len())));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Data(format!("split fraction {fraction} is outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split", 0));
    let k = (fraction * sample.len() as f64).floor() as usize;
    Ok((sample.select(&order[..k]), sample.select(&order[k..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ActivityType::*;

    fn s(p: &[(ActivityType, u32)]) -> Schedule {
        Schedule::from_pairs(p).unwrap()
    }

    #[test]
    fn trips_extend_the_prior_activity() {
        let rows = [(Home, 0, 470, 10), (Work, 480, 1010, 10), (Home, 1020, 1440, 0)];
        assert_eq!(absorb_trips(&rows).unwrap(), s(&[(Home, 480), (Work, 540), (Home, 420)]));
        assert_eq!(absorb_trips(&[(Home, 0, 1440, 0)]).unwrap(), Schedule::single(Home));
        let err = absorb_trips(&[(Home, 0, 500, 0), (Work, 480, 1440, 0)]).unwrap_err();
        assert_eq!(err, TilingError::Overlap { expected: 500, found: 480 });
        assert!(matches!(absorb_trips(&[(Home, 0, 400, 0), (Work, 480, 1440, 0)]), Err(TilingError::Gap { .. })));
        assert!(matches!(absorb_trips(&[(Home, 30, 1440, 0)]), Err(TilingError::LateStart(30))));
        // trailing trip joins the last activity
        assert_eq!(absorb_trips(&[(Home, 0, 1430, 10)]).unwrap(), Schedule::single(Home));
    }

    #[test]
    fn ingest_groups_and_drops() {
        let csv = "pid,day,act,start_min,end_min,trip_min\n\
                   1,1,Home,0,470,10\n1,1,Work,480,1010,10\n1,1,Home,1020,1440,0\n\
                   2,1,Home,0,500,0\n2,1,Work,480,1440,0\n";
        let rows = read_diaries(csv.as_bytes()).unwrap();
        let mut labels = LabelMap::identity();
        labels.insert("Home", Home);
        labels.insert("Work", Work);
        let (sample, report) = ingest(&rows, &labels).unwrap();
        assert_eq!(report, IngestReport { days: 2, tiling_dropped: 1 });
        assert_eq!(sample.ids, vec!["1_1"]);
        assert!(ingest(&rows, &LabelMap::identity()).is_err());
        let map = LabelMap::from_csv("label,activity\nHome,home\nPaid work,work\n".as_bytes()).unwrap();
        assert_eq!(map.get("Paid work").unwrap(), Work);
    }

    #[test]
    fn clean_examples() {
        let hwh = s(&[(Home, 480), (Work, 540), (Home, 420)]);
        let whw = s(&[(Work, 480), (Home, 540), (Work, 420)]);
        let sample = ScheduleSample::new(SampleKind::Real, "t", vec![hwh.clone(), whw]);
        let (out, r) = clean(&sample);
        assert_eq!((out.schedules, r), (vec![hwh], CleanReport { dropped: 1, merged: 0 }));
        let hhsh = s(&[(Home, 100), (Home, 200), (Shop, 100), (Home, 1040)]);
        let (out, r) = clean(&ScheduleSample::new(SampleKind::Real, "t", vec![hhsh]));
        assert_eq!(out.schedules, vec![s(&[(Home, 300), (Shop, 100), (Home, 1040)])]);
        assert_eq!(r.merged, 1);
        let (out, r) = clean(&ScheduleSample::default());
        assert!(out.is_empty() && r == CleanReport::default());
    }

    #[test]
    fn split_sizes() {
        let sample = ScheduleSample::new(SampleKind::Real, "t", vec![Schedule::single(Home); 100]);
        let (a, b) = split_train_val(&sample, 0.9, 1).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        assert!(split_train_val(&ScheduleSample::default(), 0.9, 1).is_err());
        assert_eq!((59265f64 * 0.9).floor() as usize, 53338);
    }
}
