//! Gamma-frailty illness-death model: three Cox components per arm fitted by EM.

mod cox;
mod em;
mod laplace;

pub use cox::{breslow, cox_newton, CoxData, CoxFit, CoxOptions, CoxRow};
pub use em::{compute_k, em_fit, fit_both, marginal_loglik, ArmFit, EmOptions, FrailtyIllnessDeathFit, FrailtySubjectState};
pub use laplace::{gamma_laplace_deriv, log_abs_laplace_deriv, posterior_frailty_moments};

use serde::{Deserialize, Serialize};

use crate::domain::Arm;
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    #[serde(rename = "01")]
    T01,
    #[serde(rename = "02")]
    T02,
    #[serde(rename = "12")]
    T12,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::T01, Transition::T02, Transition::T12];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Transition::T01 => "01",
            Transition::T02 => "02",
            Transition::T12 => "12",
        }
    }
}

/// Coefficients and Breslow baseline for one (arm, transition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxComponent {
    pub transition: Transition,
    pub arm: Arm,
    pub beta: Vec<f64>,
    pub baseline: StepFunction,
    /// Columns held at zero (no variation, or no events at all).
    pub pinned: Vec<bool>,
}

impl CoxComponent {
    pub fn empty(transition: Transition, arm: Arm, p: usize) -> Self {
        CoxComponent { transition, arm, beta: vec![0.0; p], baseline: StepFunction::zero(), pinned: vec![true; p] }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, x)| b * x).sum()
    }
}

/// Everything needed to evaluate one arm's frailty-conditional event law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub arm: Arm,
    /// Gamma frailty variance; 0 means no frailty.
    pub theta: f64,
    /// Indexed by [`Transition::index`].
    pub components: [CoxComponent; 3],
}

impl ArmModel {
    pub fn component(&self, tr: Transition) -> &CoxComponent {
        &self.components[tr.index()]
    }

    pub fn dim(&self) -> usize {
        self.components[0].beta.len()
    }
}
