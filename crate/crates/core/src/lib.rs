//! Causal inference for semi-competing risks.
//!
//! The crate covers the full pipeline: cross-world simulation, exact oracles,
//! Gamma-frailty illness-death fitting, partial-identification bounds,
//! frailty-based sensitivity analysis and matched study designs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bounds;
pub mod design;
pub mod domain;
pub mod error;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod sensitivity;
pub mod simulate;
pub mod step;
pub mod survfit;

pub use domain::{
    classify_patient_type, excluded_by, indicators_from_profile, observe, stratum_flags, Arm, Assumption, IndicatorQuadruple,
    ObservedRecord, PatientType, PotentialOutcomeProfile, StratumFlags,
};
pub use error::{Error, Result};
pub use step::StepFunction;
