use crate::encoding::{encode_continuous, encode_discrete};
use crate::error::{Error, Result};
use crate::schedule::Schedule;

use super::{EncodingKind, ModelConfig};

/// A sample pre-encoded into flat token and duration arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub kind: EncodingKind,
    pub len: usize,
    /// `n × len` token ids.
    pub ids: Vec<usize>,
    /// `n × len` duration fractions (continuous only, empty otherwise).
    pub durations: Vec<f32>,
}

/// Rows of an [`EncodedSet`] gathered for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    pub durations: Vec<f32>,
}

impl EncodedSet {
    pub fn new(schedules: &[Schedule], config: &ModelConfig) -> Result<Self> {
        let len = config.seq_len();
        let mut ids = Vec::with_capacity(schedules.len() * len);
        let mut durations = Vec::new();
        for (i, s) in schedules.iter().enumerate() {
            let ctx = |e: crate::error::EncodingError| Error::from(e).context(format!("schedule {i}"));
            match config.encoding {
                EncodingKind::Discrete => ids.extend(encode_discrete(s, config.step).map_err(ctx)?.ids()),
                EncodingKind::Continuous => {
                    let enc = encode_continuous(s, config.max_len).map_err(ctx)?;
                    ids.extend(enc.symbol_ids());
                    durations.extend(enc.durations().map(|d| d as f32));
                }
            }
        }
        Ok(Self {
            kind: config.encoding,
            len,
            ids,
            durations,
        })
    }

    pub fn rows(&self) -> usize {
        if self.len == 0 {
            0
        } else {
            self.ids.len() / self.len
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        let l = self.len;
        let mut ids = Vec::with_capacity(rows.len() * l);
        let mut durations = Vec::new();
        for &r in rows {
            ids.extend_from_slice(&self.ids[r * l..(r + 1) * l]);
            if !self.durations.is_empty() {
                durations.extend_from_slice(&self.durations[r * l..(r + 1) * l]);
            }
        }
        Batch {
            size: rows.len(),
            len: l,
            ids,
            durations,
        }
    }
}
