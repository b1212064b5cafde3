//! Fixed-length model encodings of schedules.
//!
//! * Discrete: one activity token per time bin of `step` minutes.
//! * Continuous: `[SOS, (activity, duration in days)..., EOS...]`, padded to a
//!   fixed length.

use std::fmt;

use crate::error::EncodingError;
use crate::schedule::{round_to_minutes, Activity, ActivityType, Schedule, ZeroDuration, DAY_MINUTES};

pub const DEFAULT_STEP: u32 = 10;
pub const DEFAULT_MAX_LEN: usize = 16;

/// Token ids: activities `0..8`, then the two framing symbols.
pub mod vocab {
    pub const ACTIVITIES: usize = 8;
    pub const SOS: usize = 8;
    pub const EOS: usize = 9;
    /// Size of the continuous vocabulary.
    pub const SIZE: usize = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Act(ActivityType),
    Sos,
    Eos,
}

impl Symbol {
    pub fn id(self) -> usize {
        match self {
            Symbol::Act(a) => a.id(),
            Symbol::Sos => vocab::SOS,
            Symbol::Eos => vocab::EOS,
        }
    }

    pub fn from_id(id: usize) -> Result<Self, EncodingError> {
        match id {
            vocab::SOS => Ok(Symbol::Sos),
            vocab::EOS => Ok(Symbol::Eos),
            _ => ActivityType::from_id(id)
                .map(Symbol::Act)
                .ok_or(EncodingError::UnknownToken(id)),
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Act(a) => write!(f, "{a}"),
            Symbol::Sos => f.write_str("SOS"),
            Symbol::Eos => f.write_str("EOS"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteEncoding {
    pub tokens: Vec<ActivityType>,
    pub step: u32,
}

impl DiscreteEncoding {
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().map(|t| t.id())
    }
}

impl fmt::Display for DiscreteEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

pub fn check_step(step: u32) -> Result<usize, EncodingError> {
    if step == 0 || DAY_MINUTES % step != 0 {
        return Err(EncodingError::BadStep(step));
    }
    Ok((DAY_MINUTES / step) as usize)
}

/// Each bin takes the entry that occupies most of its minutes; on a tie the
/// entry that starts earliest in the bin wins.
pub fn encode_discrete(schedule: &Schedule, step: u32) -> Result<DiscreteEncoding, EncodingError> {
    let bins = check_step(step)?;
    let timed: Vec<(u32, Activity)> = schedule.timed().collect();
    let mut tokens = Vec::with_capacity(bins);
    let mut first = 0;
    for b in 0..bins as u32 {
        let (lo, hi) = (b * step, (b + 1) * step);
        while first < timed.len() && timed[first].0 + timed[first].1.duration <= lo {
            first += 1;
        }
        let mut best: Option<(u32, ActivityType)> = None;
        for &(start, act) in &timed[first..] {
            if start >= hi {
                break;
            }
            let overlap = (start + act.duration).min(hi).saturating_sub(start.max(lo));
            if overlap > 0 && best.is_none_or(|(m, _)| overlap > m) {
                best = Some((overlap, act.kind));
            }
        }
        tokens.push(best.expect("schedule tiles the day").1);
    }
    Ok(DiscreteEncoding { tokens, step })
}

/// Runs of equal tokens become one activity of `run * step` minutes.
pub fn decode_discrete(encoding: &DiscreteEncoding) -> Result<Schedule, EncodingError> {
    check_step(encoding.step)?;
    if encoding.tokens.len() as u32 * encoding.step != DAY_MINUTES {
        return Err(EncodingError::BadStep(encoding.step));
    }
    let mut entries: Vec<Activity> = Vec::new();
    for &t in &encoding.tokens {
        match entries.last_mut() {
            Some(last) if last.kind == t => last.duration += encoding.step,
            _ => entries.push(Activity::new(t, encoding.step)),
        }
    }
    Ok(Schedule::new(entries)?)
}

/// Decodes raw activity ids (e.g. argmax model output).
pub fn decode_discrete_ids(ids: &[usize], step: u32) -> Result<Schedule, EncodingError> {
    let tokens = ids
        .iter()
        .map(|&i| ActivityType::from_id(i).ok_or(EncodingError::UnknownToken(i)))
        .collect::<Result<Vec<_>, _>>()?;
    decode_discrete(&DiscreteEncoding { tokens, step })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousToken {
    pub symbol: Symbol,
    /// Duration as a fraction of the day.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousEncoding {
    pub tokens: Vec<ContinuousToken>,
}

impl ContinuousEncoding {
    pub fn symbol_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().map(|t| t.symbol.id())
    }

    pub fn durations(&self) -> impl Iterator<Item = f64> + '_ {
        self.tokens.iter().map(|t| t.duration)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for ContinuousEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{:.6}", t.symbol, t.duration)?;
        }
        Ok(())
    }
}

pub fn encode_continuous(schedule: &Schedule, max_len: usize) -> Result<ContinuousEncoding, EncodingError> {
    let capacity = max_len.saturating_sub(1);
    if schedule.len() > capacity {
        return Err(EncodingError::TooManyActivities {
            got: schedule.len(),
            capacity,
        });
    }
    let day = f64::from(DAY_MINUTES);
    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(ContinuousToken {
        symbol: Symbol::Sos,
        duration: 0.0,
    });
    tokens.extend(schedule.entries().iter().map(|a| ContinuousToken {
        symbol: Symbol::Act(a.kind),
        duration: f64::from(a.duration) / day,
    }));
    tokens.resize(
        max_len,
        ContinuousToken {
            symbol: Symbol::Eos,
            duration: 0.0,
        },
    );
    Ok(ContinuousEncoding { tokens })
}

/// Turns (possibly malformed) model output into a valid schedule: start
/// tokens are skipped, everything from the first end token on is ignored,
/// and the remaining durations are renormalised to one day before rounding
/// to minutes.
pub fn decode_continuous(raw: &[(usize, f64)]) -> Result<Schedule, EncodingError> {
    let mut acts: Vec<(ActivityType, f64)> = Vec::new();
    for &(id, duration) in raw {
        match Symbol::from_id(id)? {
            Symbol::Sos => continue,
            Symbol::Eos => break,
            Symbol::Act(a) => acts.push((a, duration.max(0.0))),
        }
    }
    let total: f64 = acts.iter().map(|a| a.1).sum();
    if acts.is_empty() || !(total > 0.0 && total.is_finite()) {
        return Err(EncodingError::Degenerate);
    }
    for a in &mut acts {
        a.1 /= total;
    }
    Ok(round_to_minutes(&acts, ZeroDuration::Drop)?)
}
