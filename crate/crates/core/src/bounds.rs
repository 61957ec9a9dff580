//! Nonparametric bounds on the FICE from observed-data functionals.
//!
//! All bounds are functions of covariate-averaged arm-specific quantities:
//! the infection cdf `EF1_a(t)`, the `ios` indicator `EPsi_a`, and the
//! probability `EBoth_0` of being infected and dead by the horizon under
//! control. They can be computed exactly from an oracle population or from a
//! fitted frailty model.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::domain::Arm;
use crate::error::{Error, Result};
use crate::oracle::validate_grid;
use crate::rng::{stream, Domain};
use crate::sensitivity::{ArmKernel, Cells};
use crate::survfit::{ArmFit, ArmModel};

/// Slack for checking that functionals are probabilities.
const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedFunctionals {
    pub grid: Vec<f64>,
    pub horizon: f64,
    /// `EF1_a(t)` on the grid, indexed by arm.
    pub ef1: [Vec<f64>; 2],
    /// `EF1_a(r)`.
    pub ef1_r: [f64; 2],
    /// `EPsi_a(r)`.
    pub epsi: [f64; 2],
    /// `EBoth_0(r)`.
    pub eboth0: f64,
}

impl ObservedFunctionals {
    pub fn new(grid: Vec<f64>, horizon: f64, ef1: [Vec<f64>; 2], ef1_r: [f64; 2], epsi: [f64; 2], eboth0: f64) -> Result<Self> {
        validate_grid(&grid, horizon)?;
        let check = |name: &str, v: f64| {
            if v.is_finite() && (-PROB_TOL..=1.0 + PROB_TOL).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} = {v} is not a probability")))
            }
        };
        for a in Arm::BOTH {
            let i = a.index();
            if ef1[i].len() != grid.len() {
                return Err(Error::validation(format!("EF1 for arm {i} has {} values for {} grid times", ef1[i].len(), grid.len())));
            }
            for &v in &ef1[i] {
                check("EF1", v)?;
            }
            check("EF1(r)", ef1_r[i])?;
            check("EPsi", epsi[i])?;
        }
        check("EBoth0", eboth0)?;
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        Ok(ObservedFunctionals {
            grid,
            horizon,
            ef1: ef1.map(|v| v.into_iter().map(clamp).collect()),
            ef1_r: ef1_r.map(clamp),
            epsi: epsi.map(clamp),
            eboth0: clamp(eboth0),
        })
    }

    /// `ES1_a(t) = 1 − EF1_a(t)` at grid index `k`.
    pub fn es1(&self, a: Arm, k: usize) -> f64 {
        1.0 - self.ef1[a.index()][k]
    }

    /// Scalars entering the bounds at grid index `k`.
    pub fn point(&self, k: usize) -> FunctionalPoint {
        FunctionalPoint {
            ef1_0: self.ef1[0][k],
            ef1_1: self.ef1[1][k],
            ef1_0_r: self.ef1_r[0],
            epsi0: self.epsi[0],
            epsi1: self.epsi[1],
            eboth0: self.eboth0,
        }
    }
}

/// Observed functionals at a single time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalPoint {
    pub ef1_0: f64,
    pub ef1_1: f64,
    pub ef1_0_r: f64,
    pub epsi0: f64,
    pub epsi1: f64,
    pub eboth0: f64,
}

impl FunctionalPoint {
    pub fn es1_1(&self) -> f64 {
        1.0 - self.ef1_1
    }

    pub fn es1_0(&self) -> f64 {
        1.0 - self.ef1_0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundAssumption {
    None,
    WeakOrp,
    IosOrp,
}

impl BoundAssumption {
    pub const ALL: [BoundAssumption; 3] = [BoundAssumption::None, BoundAssumption::WeakOrp, BoundAssumption::IosOrp];

    pub fn label(self) -> &'static str {
        match self {
            BoundAssumption::None => "none",
            BoundAssumption::WeakOrp => "weak-orp",
            BoundAssumption::IosOrp => "ios-orp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Risk-ratio bounds; `None` marks an end with a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioInterval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Bounds on `π_ios`.
pub fn pi_ios_bounds_point(p: &FunctionalPoint, a: BoundAssumption) -> Interval {
    match a {
        BoundAssumption::IosOrp => Interval { lower: p.epsi0, upper: p.epsi0 },
        BoundAssumption::WeakOrp => Interval { lower: p.ef1_0_r.max(p.epsi0 + p.epsi1 - 1.0), upper: p.epsi0.min(p.epsi1 + p.eboth0) },
        BoundAssumption::None => Interval { lower: (p.epsi0 + p.epsi1 - 1.0).max(0.0), upper: p.epsi0.min(p.epsi1) },
    }
}

pub fn pi_ios_bounds(f: &ObservedFunctionals, a: BoundAssumption) -> Interval {
    pi_ios_bounds_point(&f.point(0), a)
}

/// Upper and lower numerators, before division by a `π_ios` bound.
pub fn numerators(p: &FunctionalPoint, a: BoundAssumption) -> (f64, f64) {
    match a {
        BoundAssumption::IosOrp | BoundAssumption::WeakOrp => (p.ef1_1.min(p.epsi0) - p.ef1_0, (p.epsi0 - p.es1_1()).max(0.0) - p.ef1_0),
        BoundAssumption::None => {
            (p.ef1_1.min(p.epsi0) - (p.epsi1 - p.es1_0()).max(0.0), (p.epsi0 - p.es1_1()).max(0.0) - p.ef1_0.min(p.epsi1))
        }
    }
}

fn divide(num: f64, den: f64) -> f64 {
    let v = if den > 0.0 {
        num / den
    } else if num > 0.0 {
        1.0
    } else if num < 0.0 {
        -1.0
    } else {
        0.0
    };
    v.clamp(-1.0, 1.0)
}

/// FICE difference bounds at a single time.
///
/// A nonnegative upper numerator is divided by the smallest admissible
/// `π_ios`, a negative one by the largest, and the reverse for the lower
/// numerator. Under ios-ORP both ends share the point `π_ios = EPsi_0`.
pub fn fice_bounds_point(p: &FunctionalPoint, a: BoundAssumption) -> Interval {
    let pi = pi_ios_bounds_point(p, a);
    let (u, l) = numerators(p, a);
    let upper = divide(u, if u >= 0.0 { pi.lower } else { pi.upper });
    let lower = divide(l, if l >= 0.0 { pi.upper } else { pi.lower });
    Interval { lower, upper }
}

pub fn fice_bounds(f: &ObservedFunctionals, a: BoundAssumption, k: usize) -> Interval {
    fice_bounds_point(&f.point(k), a)
}

pub fn fice_bounds_curve(f: &ObservedFunctionals, a: BoundAssumption) -> Vec<Interval> {
    (0..f.grid.len()).map(|k| fice_bounds(f, a, k)).collect()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// FICE risk-ratio bounds at a single time. The weak-ORP and ios-ORP bounds coincide.
pub fn fice_bounds_rr_point(p: &FunctionalPoint, a: BoundAssumption) -> RatioInterval {
    let lower_num = (p.epsi0 - p.es1_1()).max(0.0);
    let upper_num = p.ef1_1.min(p.epsi0);
    match a {
        BoundAssumption::IosOrp | BoundAssumption::WeakOrp => {
            RatioInterval { lower: ratio(lower_num, p.ef1_0), upper: ratio(upper_num, p.ef1_0) }
        }
        BoundAssumption::None => {
            RatioInterval { lower: ratio(lower_num, p.epsi1.min(p.ef1_0)), upper: ratio(upper_num, (p.epsi1 - p.es1_0()).max(0.0)) }
        }
    }
}

pub fn fice_bounds_rr(f: &ObservedFunctionals, a: BoundAssumption, k: usize) -> RatioInterval {
    fice_bounds_rr_point(&f.point(k), a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Falsification {
    NotFalsified,
    Falsified,
}

/// ios-ORP implies `EPsi_0 ≤ EPsi_1`; a violation falsifies it.
pub fn falsify_ios_orp(f: &ObservedFunctionals) -> Falsification {
    if f.epsi[0] <= f.epsi[1] {
        Falsification::NotFalsified
    } else {
        Falsification::Falsified
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionBounds {
    pub assumption: BoundAssumption,
    pub pi_ios: Interval,
    pub difference: Vec<Interval>,
    pub risk_ratio: Vec<RatioInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub functionals: ObservedFunctionals,
    pub ios_orp_check: Falsification,
    pub bounds: Vec<AssumptionBounds>,
}

pub fn bounds_report(f: &ObservedFunctionals) -> BoundsReport {
    let bounds = BoundAssumption::ALL
        .iter()
        .map(|&a| AssumptionBounds {
            assumption: a,
            pi_ios: pi_ios_bounds(f, a),
            difference: fice_bounds_curve(f, a),
            risk_ratio: (0..f.grid.len()).map(|k| fice_bounds_rr(f, a, k)).collect(),
        })
        .collect();
    BoundsReport { functionals: f.clone(), ios_orp_check: falsify_ios_orp(f), bounds }
}

/// Observed functionals implied by fitted arm models, averaged over `rows`.
/// Both fits must have converged.
pub fn functionals_from_fit(
    fit0: &ArmFit,
    fit1: &ArmFit,
    rows: &[Vec<f64>],
    grid: &[f64],
    r: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<ObservedFunctionals> {
    for fit in [fit0, fit1] {
        if !fit.converged {
            return Err(Error::Structural(format!(
                "refusing to compute functionals from a non-converged fit for arm {}",
                fit.model.arm.index()
            )));
        }
    }
    functionals_from_models(&fit0.model, &fit1.model, rows, grid, r, mc_draws, seed)
}

/// As [`functionals_from_fit`] for arbitrary models. With `mc_draws = 0` the
/// frailty is integrated exactly through its Laplace transform; otherwise
/// `mc_draws` antithetic Gamma draws are used per row.
pub fn functionals_from_models(
    model0: &ArmModel,
    model1: &ArmModel,
    rows: &[Vec<f64>],
    grid: &[f64],
    r: f64,
    mc_draws: usize,
    seed: u64,
) -> Result<ObservedFunctionals> {
    validate_grid(grid, r)?;
    if rows.is_empty() {
        return Err(Error::validation("no covariate rows supplied"));
    }
    let models = [model0, model1];
    let g = grid.len();
    let kernels = models.map(|m| ArmKernel::new(m, grid, r));
    let gammas = models
        .iter()
        .map(|m| {
            if m.theta > 0.0 {
                Gamma::new(1.0 / m.theta, 1.0 / m.theta).map(Some).map_err(|e| Error::parameter(e.to_string()))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    #[derive(Clone)]
    struct Acc {
        ef1: [Vec<f64>; 2],
        ef1_r: [f64; 2],
        psi: [f64; 2],
        both0: f64,
    }
    let zero = Acc { ef1: [vec![0.0; g], vec![0.0; g]], ef1_r: [0.0; 2], psi: [0.0; 2], both0: 0.0 };
    let per_row: Vec<Acc> = rows
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut acc = zero.clone();
            let (mut f1, mut joint) = (vec![0.0; g], vec![0.0; g]);
            for a in 0..2 {
                let kernel = &kernels[a];
                let rates = kernel.rates(x);
                let mut add = |cells: Cells, f1: &[f64], w: f64| {
                    for (s, v) in acc.ef1[a].iter_mut().zip(f1) {
                        *s += w * v;
                    }
                    acc.ef1_r[a] += w * cells.f1();
                    acc.psi[a] += w * cells.psi();
                    if a == 0 {
                        acc.both0 += w * cells.c10;
                    }
                };
                match (&gammas[a], mc_draws) {
                    (Some(_), 0) => {
                        let cells = kernel.eval_marginal(rates, models[a].theta, &mut f1, &mut joint);
                        add(cells, &f1, 1.0);
                    }
                    (Some(dist), m) => {
                        let mut rng = stream(seed, Domain::Functionals, (i as u64) << 1 | a as u64);
                        let pairs = m.div_ceil(2);
                        let w = 1.0 / (2 * pairs) as f64;
                        for _ in 0..pairs {
                            let u: f64 = rng.random();
                            for q in [u, 1.0 - u] {
                                let gamma = dist.inverse_cdf(q.clamp(1e-300, 1.0 - 1e-16));
                                let cells = kernel.eval(rates, gamma, &mut f1, &mut joint);
                                add(cells, &f1, w);
                            }
                        }
                    }
                    (None, _) => {
                        let cells = kernel.eval(rates, 1.0, &mut f1, &mut joint);
                        add(cells, &f1, 1.0);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = zero;
    for acc in &per_row {
        for a in 0..2 {
            for (s, v) in total.ef1[a].iter_mut().zip(&acc.ef1[a]) {
                *s += v;
            }
            total.ef1_r[a] += acc.ef1_r[a];
            total.psi[a] += acc.psi[a];
        }
        total.both0 += acc.both0;
    }
    let n = rows.len() as f64;
    ObservedFunctionals::new(
        grid.to_vec(),
        r,
        total.ef1.map(|v| v.into_iter().map(|x| x / n).collect()),
        total.ef1_r.map(|x| x / n),
        total.psi.map(|x| x / n),
        total.both0 / n,
    )
}
