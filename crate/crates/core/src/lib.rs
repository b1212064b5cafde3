//! Generative models of 24-hour activity schedules.
//!
//! Schedules are tokenised ([`encoding`]), learned with variational
//! auto-encoders ([`vae`], built on the small autodiff engine in
//! [`tensor`]), sampled ([`pipeline`]) and compared against real data with
//! interpretable distances ([`eval`]). [`oracle`] draws ground-truth
//! samples from a template grammar, and [`cli`] ties it together.

pub mod cli;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod sample_io;
pub mod schedule;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use schedule::{Activity, ActivityType, Schedule, ScheduleSample};
