//! Cross-world cohorts from treatment-specific illness-death models with
//! correlated Gamma frailties.
//!
//! Baseline hazards are Weibull with `Λ⁰(t) = (t/μ)^α`. Event times come from
//! inverse transforms of unit exponentials. The illness-to-death transition
//! runs on the calendar clock, left-truncated at the infection time.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{observe, Arm, ObservedRecord, PotentialOutcomeProfile};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::step::StepFunction;
use crate::survfit::{ArmModel, CoxComponent, Transition};

/// Weibull cause-specific hazard for one (arm, transition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionHazardSpec {
    pub shape: f64,
    /// `+inf` switches the transition off.
    pub scale: f64,
    pub beta: Vec<f64>,
}

impl TransitionHazardSpec {
    pub fn new(shape: f64, scale: f64, beta: Vec<f64>) -> Result<Self> {
        let s = TransitionHazardSpec { shape, scale, beta };
        s.validate(None)?;
        Ok(s)
    }

    /// A transition that never fires.
    pub fn off(p: usize) -> Self {
        TransitionHazardSpec { shape: 1.0, scale: f64::INFINITY, beta: vec![0.0; p] }
    }

    pub fn validate(&self, p: Option<usize>) -> Result<()> {
        if !(self.shape > 0.0 && self.shape.is_finite()) || !(self.scale > 0.0) {
            return Err(Error::parameter(format!("Weibull shape and scale must be positive (shape={}, scale={})", self.shape, self.scale)));
        }
        if let Some(p) = p {
            if self.beta.len() != p {
                return Err(Error::parameter(format!("coefficient vector has length {}, covariates have {p}", self.beta.len())));
            }
        }
        Ok(())
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        if self.scale.is_infinite() || t <= 0.0 {
            0.0
        } else {
            (t / self.scale).powf(self.shape)
        }
    }

    /// Time at which the baseline cumulative hazard reaches `v`.
    pub fn inverse_cumulative(&self, v: f64) -> f64 {
        if self.scale.is_infinite() || v.is_infinite() {
            f64::INFINITY
        } else {
            self.scale * v.powf(1.0 / self.shape)
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, x)| b * x).sum()
    }
}

/// The three transition hazards of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmHazards {
    pub h01: TransitionHazardSpec,
    pub h02: TransitionHazardSpec,
    pub h12: TransitionHazardSpec,
}

impl ArmHazards {
    pub fn get(&self, tr: Transition) -> &TransitionHazardSpec {
        match tr {
            Transition::T01 => &self.h01,
            Transition::T02 => &self.h02,
            Transition::T12 => &self.h12,
        }
    }

    /// Step-function model at these parameters for evaluating identification
    /// formulas at the truth. Infection increments sit at interval midpoints so
    /// they never tie with the death increments at the grid nodes.
    pub fn discretized(&self, arm: Arm, theta: f64, horizon: f64, steps: usize) -> ArmModel {
        let comp = |tr: Transition, offset: f64| {
            let spec = self.get(tr);
            CoxComponent {
                transition: tr,
                arm,
                beta: spec.beta.clone(),
                baseline: StepFunction::discretize(|t| spec.cumulative(t), horizon, steps, offset),
                pinned: vec![false; spec.beta.len()],
            }
        };
        ArmModel { arm, theta, components: [comp(Transition::T01, 0.5), comp(Transition::T02, 1.0), comp(Transition::T12, 1.0)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpecs {
    pub arms: [ArmHazards; 2],
}

impl HazardSpecs {
    pub fn arm(&self, a: Arm) -> &ArmHazards {
        &self.arms[a.index()]
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for a in &self.arms {
            for tr in Transition::ALL {
                a.get(tr).validate(Some(p))?;
            }
        }
        Ok(())
    }
}

fn w(shape: f64, scale: f64, b0: f64, b1: f64) -> TransitionHazardSpec {
    TransitionHazardSpec { shape, scale, beta: vec![b0, b1] }
}

/// Built-in scenario with rare always-infected and common always-survivors.
pub fn scenario_a() -> HazardSpecs {
    HazardSpecs {
        arms: [
            ArmHazards { h01: w(2.50, 2.50, 0.0, -0.69), h02: w(2.10, 2.25, 0.0, 0.69), h12: w(2.10, 2.75, -0.69, 0.69) },
            ArmHazards { h01: w(2.50, 2.00, -1.39, 1.10), h02: w(2.10, 2.75, -0.29, 0.41), h12: w(2.10, 2.25, 0.0, 0.0) },
        ],
    }
}

/// Built-in scenario where the survivor effect vanishes but infection effects do not.
pub fn scenario_b() -> HazardSpecs {
    HazardSpecs {
        arms: [
            ArmHazards { h01: w(1.00, 0.10, 0.0, -0.69), h02: w(0.50, 1.00, 0.0, -0.69), h12: w(0.50, 1.00, 0.0, -0.69) },
            ArmHazards { h01: w(1.00, 0.10, 0.0, 0.69), h02: w(3.00, 1.00, 0.0, 0.69), h12: w(3.00, 1.00, 0.0, 0.69) },
        ],
    }
}

pub fn scenario(name: &str) -> Result<HazardSpecs> {
    match name {
        "scenario-a" => Ok(scenario_a()),
        "scenario-b" => Ok(scenario_b()),
        other => Err(Error::validation(format!("unknown scenario '{other}' (expected scenario-a or scenario-b)"))),
    }
}

/// Frailty variances and cross-world correlation. A variance of 0 means `γ ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrailtyConfig {
    pub theta0: f64,
    pub theta1: f64,
    pub rho: f64,
}

impl FrailtyConfig {
    pub fn new(theta0: f64, theta1: f64, rho: f64) -> Result<Self> {
        let c = FrailtyConfig { theta0, theta1, rho };
        c.validate()?;
        Ok(c)
    }

    pub fn theta(&self, a: Arm) -> f64 {
        match a {
            Arm::Zero => self.theta0,
            Arm::One => self.theta1,
        }
    }

    /// Largest correlation the shared-component construction can reach.
    pub fn rho_max(theta0: f64, theta1: f64) -> f64 {
        match (theta0 > 0.0, theta1 > 0.0) {
            (true, true) => (theta0 / theta1).sqrt().min((theta1 / theta0).sqrt()),
            (false, false) => 1.0,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.theta0, self.theta1] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::parameter(format!("frailty variance must be finite and >= 0, got {t}")));
            }
        }
        let max = Self::rho_max(self.theta0, self.theta1);
        if !(self.rho >= 0.0 && self.rho <= max + 1e-12) {
            return Err(Error::parameter(format!(
                "rho = {} outside the admissible interval [0, {max}] for theta0 = {}, theta1 = {}",
                self.rho, self.theta0, self.theta1
            )));
        }
        Ok(())
    }

    /// Draw `(γ0, γ1)` by trivariate reduction: `γ_a = θ_a (G_c + G_a)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (t0, t1) = (self.theta0, self.theta1);
        let s = if t0 > 0.0 && t1 > 0.0 { (self.rho / (t0 * t1).sqrt()).min(1.0 / t0).min(1.0 / t1) } else { 0.0 };
        let gc = gamma_unit(s, rng);
        let g0 = if t0 > 0.0 { t0 * (gc + gamma_unit(1.0 / t0 - s, rng)) } else { 1.0 };
        let g1 = if t1 > 0.0 { t1 * (gc + gamma_unit(1.0 / t1 - s, rng)) } else { 1.0 };
        (g0, g1)
    }
}

/// Gamma(shape, 1); shape 0 is the point mass at zero.
fn gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape <= 1e-14 {
        0.0
    } else {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    }
}

pub fn draw_bivariate_gamma(cfg: &FrailtyConfig, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    Ok((0..n as u64).into_par_iter().map(|i| cfg.draw(&mut stream(seed, Domain::Frailty, i))).collect())
}

/// Unit-exponential draws driving one world's three latent times.
#[derive(Debug, Clone, Copy)]
pub struct WorldUniforms {
    pub e01: f64,
    pub e02: f64,
    pub e12: f64,
}

impl WorldUniforms {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        WorldUniforms { e01: Exp1.sample(rng), e02: Exp1.sample(rng), e12: Exp1.sample(rng) }
    }
}

/// Event times `(t1, t2)` of one world given covariates and frailty.
pub fn simulate_world(x: &[f64], gamma: f64, hazards: &ArmHazards, u: WorldUniforms) -> (f64, f64) {
    let latent = |spec: &TransitionHazardSpec, e: f64| {
        let rate = gamma * spec.linear_predictor(x).exp();
        spec.inverse_cumulative(e / rate)
    };
    let l01 = latent(&hazards.h01, u.e01);
    let l02 = latent(&hazards.h02, u.e02);
    if l01 < l02 {
        let h = &hazards.h12;
        let rate = gamma * h.linear_predictor(x).exp();
        let t2 = h.inverse_cumulative(h.cumulative(l01) + u.e12 / rate).max(l01);
        (l01, t2)
    } else {
        (f64::INFINITY, l02)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateLaw {
    /// `X = (Bernoulli(0.5), Uniform(0, 1))`.
    BinaryUniform,
    /// `X = (Bernoulli(0.5), N(0, 1))`.
    BinaryNormal,
    /// Independent standard normals.
    Gaussian { dim: usize },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::BinaryUniform | CovariateLaw::BinaryNormal => 2,
            CovariateLaw::Gaussian { dim } => *dim,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            CovariateLaw::BinaryUniform => {
                let b = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                vec![b, rng.random::<f64>()]
            }
            CovariateLaw::BinaryNormal => {
                let b = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                vec![b, rand_distr::StandardNormal.sample(rng)]
            }
            CovariateLaw::Gaussian { dim } => (0..*dim).map(|_| rand_distr::StandardNormal.sample(rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreatmentMechanism {
    Randomized {
        p: f64,
    },
    /// `Pr(A = 1 | X) = logistic(intercept + xᵀ coefficients)`.
    Logistic {
        intercept: f64,
        coefficients: Vec<f64>,
    },
}

impl TreatmentMechanism {
    pub fn probability(&self, x: &[f64]) -> f64 {
        match self {
            TreatmentMechanism::Randomized { p } => *p,
            TreatmentMechanism::Logistic { intercept, coefficients } => {
                let eta = intercept + coefficients.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
                1.0 / (1.0 + (-eta).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub covariates: CovariateLaw,
    pub hazards: HazardSpecs,
    pub frailty: FrailtyConfig,
    pub treatment: TreatmentMechanism,
    /// Exponential censoring rate; 0 disables censoring before the horizon.
    pub censoring_rate: f64,
    /// Share the exponential draws across worlds (pathwise coupling).
    pub common_randomness: bool,
    pub seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("cohort size n must be at least 1"));
        }
        self.hazards.validate(self.covariates.dim())?;
        self.frailty.validate()?;
        match &self.treatment {
            TreatmentMechanism::Randomized { p } if !(*p > 0.0 && *p < 1.0) => {
                return Err(Error::validation(format!("randomization probability must be in (0,1), got {p}")));
            }
            TreatmentMechanism::Logistic { coefficients, .. } if coefficients.len() != self.covariates.dim() => {
                return Err(Error::validation("treatment coefficients do not match covariate dimension"));
            }
            _ => {}
        }
        if !(self.censoring_rate >= 0.0 && self.censoring_rate.is_finite()) {
            return Err(Error::validation("censoring rate must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One simulated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub profile: PotentialOutcomeProfile,
    pub gamma: (f64, f64),
    pub record: ObservedRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub subjects: Vec<SimulatedSubject>,
}

impl Cohort {
    pub fn profiles(&self) -> Vec<PotentialOutcomeProfile> {
        self.subjects.iter().map(|s| s.profile).collect()
    }

    pub fn records(&self) -> Vec<ObservedRecord> {
        self.subjects.iter().map(|s| s.record.clone()).collect()
    }
}

fn simulate_subject(spec: &CohortSpec, i: u64) -> SimulatedSubject {
    let seed = spec.seed;
    let x = spec.covariates.draw(&mut stream(seed, Domain::Covariates, i));
    let gamma = spec.frailty.draw(&mut stream(seed, Domain::Frailty, i));
    let (u0, u1) = if spec.common_randomness {
        let u = WorldUniforms::draw(&mut stream(seed, Domain::Shared, i));
        (u, u)
    } else {
        (WorldUniforms::draw(&mut stream(seed, Domain::World0, i)), WorldUniforms::draw(&mut stream(seed, Domain::World1, i)))
    };
    let (t1_0, t2_0) = simulate_world(&x, gamma.0, spec.hazards.arm(Arm::Zero), u0);
    let (t1_1, t2_1) = simulate_world(&x, gamma.1, spec.hazards.arm(Arm::One), u1);
    let profile = PotentialOutcomeProfile { t1_0, t2_0, t1_1, t2_1 };

    let mut trng = stream(seed, Domain::Treatment, i);
    let treat = if trng.random::<f64>() < spec.treatment.probability(&x) { Arm::One } else { Arm::Zero };
    let censor = (spec.censoring_rate > 0.0).then(|| {
        let e: f64 = Exp1.sample(&mut stream(seed, Domain::Censoring, i));
        e / spec.censoring_rate
    });
    let o = observe(&profile, treat, censor);
    SimulatedSubject {
        profile,
        gamma,
        record: ObservedRecord { id: (i + 1).to_string(), treat, y1: o.y1, d1: o.d1, y2: o.y2, d2: o.d2, covariates: x },
    }
}

pub fn simulate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let subjects = (0..spec.n as u64).into_par_iter().map(|i| simulate_subject(spec, i)).collect();
    Ok(Cohort { subjects })
}
