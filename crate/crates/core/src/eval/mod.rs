//! Synthetic-versus-real evaluation: marginal distances aggregated into
//! participation, transition and timing domains, plus validity and
//! creativity.

pub mod distance;
pub mod marginals;
pub mod plots;
pub mod quality;
pub mod report;
pub mod welch;

pub use distance::{emd, l1_bivariate, rate_emd, time_emd};
pub use quality::{combine_creativity, creativity, invalidity, Creativity, Validity};
pub use report::{
    aggregate, compare, domain_summaries, evaluate, Distribution, Domain, EvalReport, Marginals, SegmentResult,
    SummaryRow,
};
pub use plots::{activity_frequency_svg, sequence_frequency_svg};
pub use welch::{welch_t_test, WelchTest};
