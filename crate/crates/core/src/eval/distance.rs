//! Distances between marginal distributions.

use super::marginals::{BivariateTimeDistribution, RateDistribution, TimeDistribution, TIME_BIN_DAYS};

/// One-dimensional earth mover's distance between histograms on a common
/// grid with bin `spacing`: `Σ |CDF_p − CDF_q| · spacing`. The shorter
/// histogram is padded with empty bins.
pub fn emd(p: &[f64], q: &[f64], spacing: f64) -> f64 {
    let n = p.len().max(q.len());
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for i in 0..n.saturating_sub(1) {
        cp += p.get(i).copied().unwrap_or(0.0);
        cq += q.get(i).copied().unwrap_or(0.0);
        total += (cp - cq).abs();
    }
    total * spacing
}

/// EMD in counts between rate distributions.
pub fn rate_emd(p: &RateDistribution, q: &RateDistribution) -> f64 {
    emd(p.masses(), q.masses(), 1.0)
}

/// EMD in days between timing histograms.
pub fn time_emd(p: &TimeDistribution, q: &TimeDistribution) -> f64 {
    emd(p.masses(), q.masses(), TIME_BIN_DAYS)
}

/// `Σ |p_ij − q_ij|` over the joint grid.
pub fn l1_bivariate(p: &BivariateTimeDistribution, q: &BivariateTimeDistribution) -> f64 {
    let mut total = 0.0;
    for (cell, &a) in p.cells() {
        total += (a - q.cells().get(cell).copied().unwrap_or(0.0)).abs();
    }
    for (cell, &b) in q.cells() {
        if !p.cells().contains_key(cell) {
            total += b.abs();
        }
    }
    total
}
