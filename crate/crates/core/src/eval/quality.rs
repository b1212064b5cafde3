//! Structural validity and creativity of a synthetic sample.

use std::collections::{HashMap, HashSet};

use crate::schedule::{Schedule, ScheduleSample};

/// Probabilities of a novel synthetic schedule being invalid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Validity {
    pub not_home_based: f64,
    pub consecutive: f64,
    /// Either condition (union, not sum).
    pub invalid: f64,
    /// Novel schedules plus degenerate outputs the probabilities cover.
    pub novel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Creativity {
    /// Share of synthetic schedules that are not unique in the sample.
    pub homogeneity: f64,
    /// Share of synthetic schedules that occur in the training sample.
    pub conservatism: f64,
    pub creativity: f64,
}

fn keys(sample: &[Schedule]) -> HashSet<String> {
    sample.iter().map(Schedule::to_key).collect()
}

/// Validity over synthetic schedules absent from `training` (one-minute
/// precision). Degenerate decoder outputs count as novel, not home-based and
/// invalid.
pub fn invalidity(synthetic: &ScheduleSample, training: &[Schedule]) -> Validity {
    let seen = keys(training);
    let (mut novel, mut nhb, mut cons, mut either) = (synthetic.degenerate, 0usize, 0usize, 0usize);
    nhb += synthetic.degenerate;
    either += synthetic.degenerate;
    for s in synthetic.iter().filter(|s| !seen.contains(&s.to_key())) {
        novel += 1;
        let a = !s.is_home_based();
        let b = s.has_forbidden_consecutive();
        nhb += a as usize;
        cons += b as usize;
        either += (a || b) as usize;
    }
    let p = |k: usize| if novel == 0 { 0.0 } else { k as f64 / novel as f64 };
    Validity {
        not_home_based: p(nhb),
        consecutive: p(cons),
        invalid: p(either),
        novel,
    }
}

/// Mean of homogeneity and conservatism.
pub fn combine_creativity(homogeneity: f64, conservatism: f64) -> f64 {
    (homogeneity + conservatism) / 2.0
}

pub fn creativity(synthetic: &[Schedule], training: &[Schedule]) -> Creativity {
    let seen = keys(training);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in synthetic {
        *counts.entry(s.to_key()).or_insert(0) += 1;
    }
    let n = synthetic.len();
    let (homogeneity, conservatism) = if n == 0 {
        (0.0, 0.0)
    } else {
        let dup: usize = counts.values().filter(|&&c| c > 1).sum();
        let old: usize = counts.iter().filter(|(k, _)| seen.contains(*k)).map(|(_, c)| c).sum();
        (dup as f64 / n as f64, old as f64 / n as f64)
    };
    Creativity {
        homogeneity,
        conservatism,
        creativity: combine_creativity(homogeneity, conservatism),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{ActivityType::*, SampleKind};

    fn s(p: &[(crate::schedule::ActivityType, u32)]) -> Schedule {
        Schedule::from_pairs(p).unwrap()
    }

    #[test]
    fn invalidity_examples() {
        let hwh = s(&[(Home, 480), (Work, 540), (Home, 420)]);
        let whw = s(&[(Work, 480), (Home, 540), (Work, 420)]);
        let syn = ScheduleSample::new(SampleKind::Synthetic, "t", vec![whw.clone(), hwh.clone()]);
        let v = invalidity(&syn, &[]);
        assert_eq!((v.not_home_based, v.consecutive, v.invalid, v.novel), (0.5, 0.0, 0.5, 2));
        let v = invalidity(&syn, &[whw]);
        assert_eq!((v.invalid, v.novel), (0.0, 1));
        let hhw = s(&[(Home, 100), (Home, 100), (Work, 1240)]);
        let mut syn = ScheduleSample::new(SampleKind::Synthetic, "t", vec![hhw, hwh]);
        syn.degenerate = 2;
        let v = invalidity(&syn, &[]);
        assert_eq!((v.not_home_based, v.consecutive, v.invalid), (0.75, 0.25, 0.75));
    }

    #[test]
    fn creativity_examples() {
        let a = s(&[(Home, 480), (Work, 540), (Home, 420)]);
        let b = Schedule::single(Home);
        let c = s(&[(Home, 600), (Shop, 60), (Home, 780)]);
        let syn = vec![a.clone(), a.clone(), b.clone(), c.clone()];
        let r = creativity(&syn, &[]);
        assert_eq!((r.homogeneity, r.conservatism), (0.5, 0.0));
        let r = creativity(&syn, &[b]);
        assert_eq!((r.homogeneity, r.conservatism, r.creativity), (0.5, 0.25, 0.375));
        assert!((combine_creativity(0.022, 0.012) - 0.017).abs() < 1e-12);
    }
}
