use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::{check_step, DEFAULT_MAX_LEN, DEFAULT_STEP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Ff,
    Cnn,
    Rnn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Ff => "FF",
            Architecture::Cnn => "CNN",
            Architecture::Rnn => "RNN",
        })
    }
}

fn default_latent() -> usize {
    6
}
fn default_teacher_forcing() -> f64 {
    0.5
}
fn default_slope() -> f64 {
    0.01
}
fn default_step() -> u32 {
    DEFAULT_STEP
}
fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

/// Hyperparameters of one VAE variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub encoding: EncodingKind,
    pub architecture: Architecture,
    /// Number of encoder/decoder blocks (N).
    pub blocks: usize,
    /// Width of every block (S).
    pub block_size: usize,
    #[serde(default = "default_latent")]
    pub latent: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta: f64,
    /// Duration-loss weight; continuous encoding only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub dropout: f64,
    #[serde(default = "default_teacher_forcing")]
    pub teacher_forcing: f64,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Bin width in minutes (discrete encoding).
    #[serde(default = "default_step")]
    pub step: u32,
    /// Sequence length including the start token (continuous encoding).
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Global gradient-norm clip; defaults to 5 for recurrent models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

const PRESETS: &[(&str, &str)] = &[
    ("DiscFF", include_str!("../../presets/DiscFF.toml")),
    ("DiscCNN", include_str!("../../presets/DiscCNN.toml")),
    ("DiscRNN", include_str!("../../presets/DiscRNN.toml")),
    ("ContFF", include_str!("../../presets/ContFF.toml")),
    ("ContCNN", include_str!("../../presets/ContCNN.toml")),
    ("ContRNN", include_str!("../../presets/ContRNN.toml")),
    ("ContRNN-Mid", include_str!("../../presets/ContRNN-Mid.toml")),
    ("ContRNN-Small", include_str!("../../presets/ContRNN-Small.toml")),
    ("ContRNN-Tiny", include_str!("../../presets/ContRNN-Tiny.toml")),
];

impl ModelConfig {
    /// Names of the shipped presets.
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|p| p.0)
    }

    /// Looks up a shipped preset by name (case-insensitive).
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<_> = Self::preset_names().collect();
                Error::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
            })?;
        text.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Length of the token sequence the model reads and writes.
    pub fn seq_len(&self) -> usize {
        match self.encoding {
            EncodingKind::Discrete => (crate::schedule::DAY_MINUTES / self.step) as usize,
            EncodingKind::Continuous => self.max_len,
        }
    }

    /// Number of output classes per step.
    pub fn classes(&self) -> usize {
        match self.encoding {
            EncodingKind::Discrete => crate::encoding::vocab::ACTIVITIES,
            EncodingKind::Continuous => crate::encoding::vocab::SIZE,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.0)
    }

    pub fn clip(&self) -> Option<f64> {
        match (self.clip_norm, self.architecture) {
            (Some(c), _) => Some(c),
            (None, Architecture::Rnn) => Some(5.0),
            (None, _) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name)));
        match (self.encoding, self.alpha) {
            (EncodingKind::Continuous, None) => return bad("continuous models need `alpha`".into()),
            (EncodingKind::Discrete, Some(_)) => return bad("`alpha` only applies to continuous models".into()),
            _ => {}
        }
        if self.blocks == 0 {
            return bad("`blocks` must be at least 1".into());
        }
        if self.block_size < 2 {
            return bad("`block_size` must be at least 2".into());
        }
        if self.latent == 0 || self.batch_size == 0 {
            return bad("`latent` and `batch_size` must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad("`dropout` must be in [0, 1) and `teacher_forcing` in [0, 1]".into());
        }
        if !(self.learning_rate > 0.0) || self.beta < 0.0 || self.alpha() < 0.0 {
            return bad("learning rate must be positive and loss weights non-negative".into());
        }
        if self.encoding == EncodingKind::Discrete {
            check_step(self.step).map_err(|e| Error::Config(format!("{}: {e}", self.name)))?;
        } else if self.max_len < 2 {
            return bad("`max_len` must be at least 2".into());
        }
        Ok(())
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in ModelConfig::preset_names() {
            let cfg = ModelConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
            assert_eq!(cfg.latent, 6);
            assert_eq!(cfg.batch_size, 1024);
            assert_eq!(cfg.dropout, 0.1);
        }
    }

    #[test]
    fn preset_values() {
        let c = ModelConfig::preset("contrnn-small").unwrap();
        assert_eq!((c.blocks, c.block_size, c.learning_rate, c.beta, c.alpha), (2, 128, 0.004, 0.0025, Some(200.0)));
        let c = ModelConfig::preset("DiscCNN").unwrap();
        assert_eq!((c.blocks, c.block_size, c.learning_rate, c.beta, c.alpha), (6, 512, 0.01, 0.005, None));
        assert_eq!(c.seq_len(), 144);
        assert!(ModelConfig::preset("nope").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::preset("ContRNN").unwrap();
        let back: ModelConfig = c.to_toml().parse().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.clip(), Some(5.0));
    }

    #[test]
    fn alpha_must_match_encoding() {
        let mut c = ModelConfig::preset("DiscFF").unwrap();
        c.alpha = Some(1.0);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::preset("ContFF").unwrap();
        c.alpha = None;
        assert!(c.validate().is_err());
    }
}
