//! Matched observational study design: propensity scores, Mahalanobis
//! matching within a PS caliper, balance diagnostics and the pair bootstrap.

mod balance;
mod bootstrap;
mod matching;
mod propensity;

pub use balance::{smd, smd_table, SmdRow};
pub use bootstrap::{pair_bootstrap, pair_bootstrap_around, BootstrapResult};
pub use matching::{mahalanobis_match, MatchMode, MatchedPair, MatchedSet};
pub use propensity::{fit_logistic, fit_propensity, PropensityModel};
