//! Line-oriented sample files.
//!
//! ```text
//! # kind=real seed=7 source=oracle degenerate=0
//! p0;home:480,work:540,home:420
//! p1;home:1440
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schedule::{SampleKind, ScheduleSample};

fn header(sample: &ScheduleSample) -> String {
    let source: String = sample
        .source
        .chars()
        .map(|c| if c.is_whitespace() || c == '=' { '_' } else { c })
        .collect();
    let mut h = format!("# kind={}", sample.kind);
    if let Some(seed) = sample.seed {
        h.push_str(&format!(" seed={seed}"));
    }
    if !source.is_empty() {
        h.push_str(&format!(" source={source}"));
    }
    h.push_str(&format!(" degenerate={}", sample.degenerate));
    h
}

pub fn write_sample(w: impl Write, sample: &ScheduleSample) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{}", header(sample))?;
    for (i, s) in sample.iter().enumerate() {
        writeln!(w, "{};{}", sample.id(i), s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sample(r: impl BufRead) -> Result<ScheduleSample> {
    let mut sample = ScheduleSample::default();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let bad = |msg: String| Error::Data(format!("line {}: {msg}", n + 1));
        if let Some(meta) = line.strip_prefix('#') {
            for field in meta.split_whitespace() {
                let Some((k, v)) = field.split_once('=') else { continue };
                match k {
                    "kind" => sample.kind = v.parse().map_err(|e| bad(format!("{e}")))?,
                    "seed" => sample.seed = Some(v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?),
                    "source" => sample.source = v.to_string(),
                    "degenerate" => sample.degenerate = v.parse().map_err(|_| bad(format!("bad count `{v}`")))?,
                    _ => {}
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (id, body) = line.split_once(';').ok_or_else(|| bad("expected `id;act:minutes,...`".into()))?;
        let schedule = body.parse().map_err(|e| bad(format!("{e}")))?;
        sample.ids.push(id.trim().to_string());
        sample.schedules.push(schedule);
    }
    Ok(sample)
}

pub fn save_sample(path: &Path, sample: &ScheduleSample) -> Result<()> {
    write_sample(File::create(path)?, sample).map_err(|e| e.context(path.display().to_string()))
}

pub fn load_sample(path: &Path) -> Result<ScheduleSample> {
    let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    read_sample(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
}

/// Loads a sample and labels it as real data regardless of its header.
pub fn load_real(path: &Path) -> Result<ScheduleSample> {
    let mut s = load_sample(path)?;
    s.kind = SampleKind::Real;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{ActivityType::*, Schedule};

    #[test]
    fn round_trip() {
        let mut s = ScheduleSample::new(
            SampleKind::Synthetic,
            "ContRNN small",
            vec![
                Schedule::from_pairs(&[(Home, 480), (Work, 540), (Home, 420)]).unwrap(),
                Schedule::single(Home),
            ],
        )
        .with_seed(3);
        s.degenerate = 2;
        let mut buf = Vec::new();
        write_sample(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "# kind=synthetic seed=3 source=ContRNN_small degenerate=2\n0;home:480,work:540,home:420\n1;home:1440\n"
        );
        let back = read_sample(&buf[..]).unwrap();
        assert_eq!(back.schedules, s.schedules);
        assert_eq!((back.kind, back.seed, back.degenerate), (s.kind, s.seed, 2));
        assert_eq!(back.ids, vec!["0", "1"]);
    }

    #[test]
    fn errors_name_the_line() {
        let err = read_sample(&b"a;home:1440\nb;home:1000\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(read_sample(&b"home:1440\n"[..]).is_err());
    }
}
