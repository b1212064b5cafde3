//! Small SVG charts comparing samples.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::schedule::{ActivityType, Schedule, DAY_MINUTES};

/// Width of an aggregate-frequency bin in minutes.
pub const FREQUENCY_BIN_MINUTES: u32 = 10;

const COLOURS: [&str; ActivityType::COUNT] =
    ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

/// Share of schedules doing each activity in each 10-minute bin, sampled at
/// the bin midpoint. Indexed `[bin][activity id]`.
pub fn activity_frequencies(sample: &[Schedule]) -> Vec<[f64; ActivityType::COUNT]> {
    let bins = (DAY_MINUTES / FREQUENCY_BIN_MINUTES) as usize;
    let mut out = vec![[0.0; ActivityType::COUNT]; bins];
    let w = 1.0 / sample.len().max(1) as f64;
    for s in sample {
        for (start, a) in s.timed() {
            let end = start + a.duration;
            let first = (start / FREQUENCY_BIN_MINUTES) as usize;
            for (b, row) in out.iter_mut().enumerate().skip(first) {
                let mid = b as u32 * FREQUENCY_BIN_MINUTES + FREQUENCY_BIN_MINUTES / 2;
                if mid >= end {
                    break;
                }
                if mid >= start {
                    row[a.kind.id()] += w;
                }
            }
        }
    }
    out
}

/// The `k` most frequent activity-type sequences with their shares.
pub fn top_sequences(sample: &[Schedule], k: usize) -> Vec<(String, f64)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sample {
        let key = s.kinds().map(|a| a.label()).collect::<Vec<_>>().join("-");
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let n = sample.len().max(1) as f64;
    v.into_iter().take(k).map(|(s, c)| (s, c as f64 / n)).collect()
}

fn legend(svg: &mut String, x: f64, y: f64) {
    for (i, a) in ActivityType::ALL.iter().enumerate() {
        let yy = y + i as f64 * 16.0;
        let _ = write!(
            svg,
            r#"<rect x="{x}" y="{yy}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            COLOURS[i],
            x + 14.0,
            yy + 9.0,
            a.label()
        );
    }
}

/// Stacked activity shares over the day, one panel per sample.
pub fn activity_frequency_svg(samples: &[(&str, &[Schedule])]) -> String {
    let (pw, ph, pad) = (360.0, 200.0, 30.0);
    let width = pad + samples.len() as f64 * (pw + pad) + 100.0;
    let height = ph + 2.0 * pad + 20.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#
    );
    for (p, (name, sample)) in samples.iter().enumerate() {
        let x0 = pad + p as f64 * (pw + pad);
        let y0 = pad;
        let freq = activity_frequencies(sample);
        let bins = freq.len() as f64;
        let _ = write!(svg, r#"<text x="{x0}" y="{}" font-size="13">{name}</text>"#, y0 - 8.0);
        let mut below = vec![0.0; freq.len()];
        for a in 0..ActivityType::COUNT {
            let mut top = String::new();
            let mut bottom = String::new();
            for (b, row) in freq.iter().enumerate() {
                let x = x0 + pw * (b as f64 + 0.5) / bins;
                let lo = below[b];
                let hi = lo + row[a];
                let _ = write!(top, "{x:.1},{:.1} ", y0 + ph * (1.0 - hi));
                bottom.insert_str(0, &format!("{x:.1},{:.1} ", y0 + ph * (1.0 - lo)));
                below[b] = hi;
            }
            let _ = write!(svg, r#"<polygon points="{top}{bottom}" fill="{}" stroke="none"/>"#, COLOURS[a]);
        }
        let _ = write!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for h in (0..=24).step_by(6) {
            let x = x0 + pw * f64::from(h) / 24.0;
            let _ = write!(svg, r#"<text x="{x:.1}" y="{}" font-size="10" text-anchor="middle">{h:02}:00</text>"#, y0 + ph + 14.0);
        }
    }
    legend(&mut svg, width - 90.0, pad);
    svg.push_str("</svg>\n");
    svg
}

/// Horizontal bars of the most frequent sequences, one group per sample.
pub fn sequence_frequency_svg(samples: &[(&str, &[Schedule])], k: usize) -> String {
    let (bar, gap, label_w, chart_w, pad) = (12.0, 4.0, 260.0, 300.0, 20.0);
    let tops: Vec<_> = samples.iter().map(|(n, s)| (*n, top_sequences(s, k))).collect();
    let max = tops.iter().flat_map(|(_, v)| v.iter().map(|x| x.1)).fold(0.0_f64, f64::max).max(1e-12);
    let rows: usize = tops.iter().map(|(_, v)| v.len() + 2).sum();
    let height = 2.0 * pad + rows as f64 * (bar + gap);
    let width = label_w + chart_w + 3.0 * pad + 60.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#
    );
    let mut y = pad;
    for (name, v) in &tops {
        let _ = write!(svg, r#"<text x="{pad}" y="{:.1}" font-size="13">{name}</text>"#, y + bar);
        y += bar + gap;
        for (seq, share) in v {
            let w = chart_w * share / max;
            let _ = write!(
                svg,
                r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{seq}</text><rect x="{:.1}" y="{y:.1}" width="{w:.1}" height="{bar}" fill="#4c72b0"/><text x="{:.1}" y="{:.1}" font-size="10">{:.1}%</text>"##,
                pad + label_w,
                y + bar - 2.0,
                pad * 1.5 + label_w,
                pad * 1.5 + label_w + w + 4.0,
                y + bar - 2.0,
                share * 100.0
            );
            y += bar + gap;
        }
        y += bar + gap;
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ActivityType::*;

    #[test]
    fn frequencies_cover_the_day() {
        let s = Schedule::from_pairs(&[(Home, 480), (Work, 540), (Home, 420)]).unwrap();
        let f = activity_frequencies(&[s.clone(), Schedule::single(Home)]);
        assert_eq!(f.len(), 144);
        for row in &f {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(f[47][Work.id()], 0.0);
        assert_eq!(f[48][Work.id()], 0.5);
        assert_eq!(f[101][Work.id()], 0.5);
        assert_eq!(f[102][Work.id()], 0.0);
        let top = top_sequences(&[s.clone(), s, Schedule::single(Home)], 5);
        assert_eq!(top[0], ("home-work-home".to_string(), 2.0 / 3.0));
    }

    #[test]
    fn svgs_are_well_formed() {
        let s = vec![Schedule::single(Home)];
        let a = activity_frequency_svg(&[("real", &s), ("synthetic", &s)]);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        let b = sequence_frequency_svg(&[("real", &s)], 10);
        assert!(b.contains("home") && b.trim_end().ends_with("</svg>"));
    }
}
