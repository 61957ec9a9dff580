//! Frailty-based point identification as a function of the cross-world
//! frailty correlation `ρ`.
//!
//! Conditional on covariates and frailty, each world is an illness-death
//! process with step baselines, so infection and joint-cell probabilities are
//! exact finite sums over the infection jump times. The frailty pair is then
//! integrated out by Monte Carlo, with the same draws shared by every grid
//! time and every estimand of a report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Arm, PatientType};
use crate::error::{Error, Result};
use crate::oracle::validate_grid;
use crate::rng::{stream, Domain};
use crate::simulate::FrailtyConfig;
use crate::survfit::{ArmModel, Transition};

/// Frailty-conditional law of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCurves {
    pub grid: Vec<f64>,
    /// `Pr(T1 ≤ t)`.
    pub f1: Vec<f64>,
    /// `Pr(T1 > t, T2 > t)`.
    pub s00: Vec<f64>,
    /// `Pr(T1 ≤ t, T2 > r)`.
    pub joint: Vec<f64>,
    pub c11: f64,
    pub c10: f64,
    pub c01: f64,
    pub c00: f64,
    pub psi: f64,
}

/// Per-arm precomputation for repeated evaluation at many `(x, γ)`.
#[derive(Debug, Clone)]
pub(crate) struct ArmKernel {
    beta: [Vec<f64>; 3],
    /// `Λ01(u−)`, `Λ02(u−)`, `ΔΛ01(u)` and `Λ12(r) − Λ12(u)` at infection jumps `u ≤ r`.
    a_left: Vec<f64>,
    b_left: Vec<f64>,
    d01: Vec<f64>,
    c12: Vec<f64>,
    /// Number of infection jumps at or before each grid time.
    upto: Vec<usize>,
    a_r: f64,
    b_r: f64,
}

/// Exponentiated linear predictors of one covariate row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowRates {
    pub r01: f64,
    pub r02: f64,
    pub r12: f64,
}

/// Cells at the horizon; the grid curves are written into caller buffers.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Cells {
    pub c11: f64,
    pub c10: f64,
    pub c01: f64,
    pub c00: f64,
}

impl Cells {
    pub fn f1(&self) -> f64 {
        self.c11 + self.c10
    }

    pub fn psi(&self) -> f64 {
        self.c11 + self.c10 + self.c01
    }

    /// `Pr(T2 > r)`.
    pub fn alive(&self) -> f64 {
        self.c11 + self.c01
    }

    /// Cell for `(infected by r, alive at r)`.
    pub fn get(&self, infected: bool, alive: bool) -> f64 {
        match (infected, alive) {
            (true, true) => self.c11,
            (true, false) => self.c10,
            (false, true) => self.c01,
            (false, false) => self.c00,
        }
    }
}

impl ArmKernel {
    pub fn new(model: &ArmModel, grid: &[f64], r: f64) -> Self {
        let l01 = &model.component(Transition::T01).baseline;
        let l02 = &model.component(Transition::T02).baseline;
        let l12 = &model.component(Transition::T12).baseline;
        let n = l01.times().partition_point(|&u| u <= r);
        let times = &l01.times()[..n];
        let l12_r = l12.eval(r);
        ArmKernel {
            beta: [0, 1, 2].map(|i| model.components[i].beta.clone()),
            a_left: times.iter().map(|&u| l01.eval_left(u)).collect(),
            b_left: times.iter().map(|&u| l02.eval_left(u)).collect(),
            d01: l01.jumps()[..n].to_vec(),
            c12: times.iter().map(|&u| l12_r - l12.eval(u)).collect(),
            upto: grid.iter().map(|&t| times.partition_point(|&u| u <= t)).collect(),
            a_r: l01.eval(r),
            b_r: l02.eval(r),
        }
    }

    pub fn rates(&self, x: &[f64]) -> RowRates {
        let lp = |b: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>().exp();
        RowRates { r01: lp(&self.beta[0]), r02: lp(&self.beta[1]), r12: lp(&self.beta[2]) }
    }

    /// Conditional curves at frailty `gamma`; `f1` and `joint` receive grid values.
    pub fn eval(&self, rates: RowRates, gamma: f64, f1: &mut [f64], joint: &mut [f64]) -> Cells {
        let (e1, e2, e3) = (gamma * rates.r01, gamma * rates.r02, gamma * rates.r12);
        let (mut acc_f, mut acc_j) = (0.0, 0.0);
        let mut k = 0;
        for (g, &stop) in self.upto.iter().enumerate() {
            while k < stop {
                let s = (-(e1 * self.a_left[k] + e2 * self.b_left[k])).exp();
                let p = -s * (-e1 * self.d01[k]).exp_m1();
                acc_f += p;
                acc_j += p * (-e3 * self.c12[k]).exp();
                k += 1;
            }
            f1[g] = acc_f;
            joint[g] = acc_j;
        }
        while k < self.a_left.len() {
            let s = (-(e1 * self.a_left[k] + e2 * self.b_left[k])).exp();
            let p = -s * (-e1 * self.d01[k]).exp_m1();
            acc_f += p;
            acc_j += p * (-e3 * self.c12[k]).exp();
            k += 1;
        }
        let c01 = (-(e1 * self.a_r + e2 * self.b_r)).exp();
        Cells { c11: acc_j, c10: acc_f - acc_j, c01, c00: 1.0 - acc_f - c01 }
    }

    /// The same quantities integrated over `γ ~ Gamma(1/θ, θ)` in closed form
    /// through the Laplace transform `φ(s) = (1 + θ s)^(-1/θ)`.
    pub fn eval_marginal(&self, rates: RowRates, theta: f64, f1: &mut [f64], joint: &mut [f64]) -> Cells {
        let phi = |s: f64| {
            if theta <= 0.0 {
                (-s).exp()
            } else {
                (-(theta * s).ln_1p() / theta).exp()
            }
        };
        let (e1, e2, e3) = (rates.r01, rates.r02, rates.r12);
        let (mut acc_f, mut acc_j) = (0.0, 0.0);
        let mut k = 0;
        let step = |k: usize, acc_f: &mut f64, acc_j: &mut f64| {
            let s = e1 * self.a_left[k] + e2 * self.b_left[k];
            let a = e1 * self.d01[k];
            let c = e3 * self.c12[k];
            *acc_f += phi(s) - phi(s + a);
            *acc_j += phi(s + c) - phi(s + a + c);
        };
        for (g, &stop) in self.upto.iter().enumerate() {
            while k < stop {
                step(k, &mut acc_f, &mut acc_j);
                k += 1;
            }
            f1[g] = acc_f;
            joint[g] = acc_j;
        }
        while k < self.a_left.len() {
            step(k, &mut acc_f, &mut acc_j);
            k += 1;
        }
        let c01 = phi(e1 * self.a_r + e2 * self.b_r);
        Cells { c11: acc_j, c10: acc_f - acc_j, c01, c00: 1.0 - acc_f - c01 }
    }
}

pub fn conditional_curves(model: &ArmModel, x: &[f64], gamma: f64, grid: &[f64], r: f64) -> Result<ConditionalCurves> {
    validate_grid(grid, r)?;
    if !(gamma > 0.0) {
        return Err(Error::parameter(format!("frailty must be positive, got {gamma}")));
    }
    let kernel = ArmKernel::new(model, grid, r);
    let rates = kernel.rates(x);
    let mut f1 = vec![0.0; grid.len()];
    let mut joint = vec![0.0; grid.len()];
    let cells = kernel.eval(rates, gamma, &mut f1, &mut joint);
    let l01 = &model.component(Transition::T01).baseline;
    let l02 = &model.component(Transition::T02).baseline;
    let s00 = grid.iter().map(|&t| (-gamma * (l01.eval(t) * rates.r01 + l02.eval(t) * rates.r02)).exp()).collect();
    Ok(ConditionalCurves {
        grid: grid.to_vec(),
        f1,
        s00,
        joint,
        c11: cells.c11,
        c10: cells.c10,
        c01: cells.c01,
        c00: cells.c00,
        psi: cells.psi(),
    })
}

/// Monte Carlo estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCurves {
    pub difference: Vec<Option<Estimate>>,
    pub risk_ratio: Vec<Option<Estimate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rho: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub grid: Vec<f64>,
    pub horizon: f64,
    pub mc_draws: usize,
    pub pi_ios: Estimate,
    pub pi_as: Estimate,
    pub pi_ai: Estimate,
    /// Patient types 1..=16.
    pub pt_probs: Vec<Estimate>,
    pub fice: ScaleCurves,
    pub sace: ScaleCurves,
    pub aice: ScaleCurves,
    pub total: ScaleCurves,
    pub effect_pt89: ScaleCurves,
    /// Number needed to harm from the FICE difference at the last grid time.
    pub nnh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySettings {
    pub grid: Vec<f64>,
    pub horizon: f64,
    pub mc_draws: usize,
    pub seed: u64,
}

/// Strata below this probability are reported as undefined.
pub const MIN_STRATUM: f64 = 1e-6;
const MAX_BATCHES: usize = 25;

/// Running sums for one batch of draws.
#[derive(Debug, Clone)]
struct Sums {
    count: f64,
    psi01: f64,
    as_: f64,
    ai: f64,
    pt: [f64; 16],
    /// Per grid time, per arm: FICE, SACE, AICE, total and pt8/9 numerators.
    fice: [Vec<f64>; 2],
    sace: [Vec<f64>; 2],
    aice: [Vec<f64>; 2],
    total: [Vec<f64>; 2],
    pt89: [Vec<f64>; 2],
}

impl Sums {
    fn new(g: usize) -> Self {
        let z = || [vec![0.0; g], vec![0.0; g]];
        Sums { count: 0.0, psi01: 0.0, as_: 0.0, ai: 0.0, pt: [0.0; 16], fice: z(), sace: z(), aice: z(), total: z(), pt89: z() }
    }

    fn add(&mut self, o: &Sums) {
        self.count += o.count;
        self.psi01 += o.psi01;
        self.as_ += o.as_;
        self.ai += o.ai;
        for (a, b) in self.pt.iter_mut().zip(&o.pt) {
            *a += b;
        }
        for (dst, src) in [
            (&mut self.fice, &o.fice),
            (&mut self.sace, &o.sace),
            (&mut self.aice, &o.aice),
            (&mut self.total, &o.total),
            (&mut self.pt89, &o.pt89),
        ] {
            for a in 0..2 {
                for (x, y) in dst[a].iter_mut().zip(&src[a]) {
                    *x += y;
                }
            }
        }
    }
}

struct Scratch {
    f1: [Vec<f64>; 2],
    joint: [Vec<f64>; 2],
}

fn accumulate(sums: &mut Sums, s: &Scratch, cells: [Cells; 2], grid_len: usize, aice_cap: &[usize], w: f64) {
    let [c0, c1] = cells;
    sums.count += w;
    let (psi0, psi1) = (c0.psi(), c1.psi());
    sums.psi01 += w * psi0 * psi1;
    sums.as_ += w * c0.alive() * c1.alive();
    let (f0r, f1r) = (c0.f1(), c1.f1());
    sums.ai += w * f0r * f1r;
    for pt in PatientType::all() {
        let q = pt.quadruple();
        sums.pt[pt.index()] += w * c0.get(q.i0, q.s0) * c1.get(q.i1, q.s1);
    }
    let other_psi = [w * psi1, w * psi0];
    let other_alive = [w * c1.alive(), w * c0.alive()];
    let other_f1r = [w * f1r, w * f0r];
    let other_c01 = [w * c1.c01, w * c0.c01];
    for a in 0..2 {
        let (f1, joint) = (&s.f1[a], &s.joint[a]);
        for g in 0..grid_len {
            sums.fice[a][g] += f1[g] * other_psi[a];
            sums.sace[a][g] += joint[g] * other_alive[a];
            sums.aice[a][g] += f1[aice_cap[g]] * other_f1r[a];
            sums.total[a][g] += w * f1[g];
            sums.pt89[a][g] += (f1[g] - joint[g]) * other_c01[a];
        }
    }
}

fn ratio_estimate(batches: &[Sums], num: impl Fn(&Sums) -> f64, den: impl Fn(&Sums) -> f64, total: &Sums) -> Option<Estimate> {
    let d = den(total);
    if !(d.abs() > 0.0) {
        return None;
    }
    let value = num(total) / d;
    let vals: Vec<f64> = batches.iter().filter(|b| den(b).abs() > 0.0).map(|b| num(b) / den(b)).collect();
    let mc_se = (vals.len() >= 2).then(|| {
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
    });
    Some(Estimate { value, mc_se })
}

/// All frailty-identified estimands for one `ρ`, averaging over `rows`.
pub fn sensitivity_report(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    settings: &SensitivitySettings,
) -> Result<SensitivityReport> {
    sensitivity_report_weighted(model0, model1, rho, rows, None, settings)
}

/// As [`sensitivity_report`] with a weighted average over `rows`, for example
/// quadrature nodes of a known covariate law.
pub fn sensitivity_report_weighted(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    weights: Option<&[f64]>,
    settings: &SensitivitySettings,
) -> Result<SensitivityReport> {
    let grid = &settings.grid;
    let r = settings.horizon;
    validate_grid(grid, r)?;
    if rows.is_empty() {
        return Err(Error::validation("no covariate rows supplied"));
    }
    if let Some(w) = weights {
        if w.len() != rows.len() || w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("row weights must be finite, nonnegative, one per row and not all zero"));
        }
    }
    if settings.mc_draws < 2 {
        return Err(Error::validation("mc_draws must be at least 2"));
    }
    let frailty = FrailtyConfig { theta0: model0.theta, theta1: model1.theta, rho };
    frailty.validate()?;
    let kernels = [ArmKernel::new(model0, grid, r), ArmKernel::new(model1, grid, r)];
    let g = grid.len();
    let n_batches = settings.mc_draws.min(MAX_BATCHES);
    // AICE uses F1 at min(t, r); grid times never exceed r.
    let aice_cap: Vec<usize> = (0..g).collect();

    const CHUNK: usize = 32;
    let chunk_sums: Vec<Vec<Sums>> = rows
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut batches = vec![Sums::new(g); n_batches];
            let mut scratch = Scratch { f1: [vec![0.0; g], vec![0.0; g]], joint: [vec![0.0; g], vec![0.0; g]] };
            for (j, x) in chunk.iter().enumerate() {
                let row = (ci * CHUNK + j) as u64;
                let w = weights.map_or(1.0, |w| w[row as usize]);
                let rates = [kernels[0].rates(x), kernels[1].rates(x)];
                let mut rng = stream(settings.seed, Domain::Sensitivity, row);
                for d in 0..settings.mc_draws {
                    let (g0, g1) = frailty.draw(&mut rng);
                    let [sf0, sf1] = &mut scratch.f1;
                    let [sj0, sj1] = &mut scratch.joint;
                    let c0 = kernels[0].eval(rates[0], g0, sf0, sj0);
                    let c1 = kernels[1].eval(rates[1], g1, sf1, sj1);
                    accumulate(&mut batches[d % n_batches], &scratch, [c0, c1], g, &aice_cap, w);
                }
            }
            batches
        })
        .collect();
    let mut batches = vec![Sums::new(g); n_batches];
    for cs in &chunk_sums {
        for (b, s) in batches.iter_mut().zip(cs) {
            b.add(s);
        }
    }
    let mut total = Sums::new(g);
    for b in &batches {
        total.add(b);
    }

    let est = |num: &dyn Fn(&Sums) -> f64, den: &dyn Fn(&Sums) -> f64| ratio_estimate(&batches, num, den, &total);
    let prop = |f: &dyn Fn(&Sums) -> f64| est(f, &|s: &Sums| s.count).expect("positive draw count");
    let pi_ios = prop(&|s| s.psi01);
    let pi_as = prop(&|s| s.as_);
    let pi_ai = prop(&|s| s.ai);
    let pt_probs: Vec<Estimate> = (0..16).map(|i| prop(&|s: &Sums| s.pt[i])).collect();
    let pt89_mass = pt_probs[7].value + pt_probs[8].value;

    let contrast = |field: &dyn Fn(&Sums) -> &[Vec<f64>; 2], den: Option<&dyn Fn(&Sums) -> f64>, defined: bool| {
        let difference = (0..g)
            .map(|k| {
                if !defined {
                    return None;
                }
                let num = |s: &Sums| field(s)[1][k] - field(s)[0][k];
                match den {
                    Some(d) => est(&num, d),
                    None => est(&num, &|s: &Sums| s.count),
                }
            })
            .collect();
        let risk_ratio = (0..g)
            .map(|k| {
                if !defined || field(&total)[0][k] / total.count < 1e-12 {
                    return None;
                }
                est(&|s: &Sums| field(s)[1][k], &|s: &Sums| field(s)[0][k])
            })
            .collect();
        ScaleCurves { difference, risk_ratio }
    };

    let fice = contrast(&|s| &s.fice, Some(&|s: &Sums| s.psi01), pi_ios.value >= MIN_STRATUM);
    let sace = contrast(&|s| &s.sace, Some(&|s: &Sums| s.as_), pi_as.value >= MIN_STRATUM);
    let aice = contrast(&|s| &s.aice, Some(&|s: &Sums| s.ai), pi_ai.value >= MIN_STRATUM);
    let total_effect = contrast(&|s| &s.total, None, true);
    let pt89_den = |s: &Sums| s.pt[7] + s.pt[8];
    let effect_pt89 = contrast(&|s| &s.pt89, Some(&pt89_den), pt89_mass >= MIN_STRATUM);
    let nnh = fice.difference.last().copied().flatten().and_then(|e| nnh(e.value));

    Ok(SensitivityReport {
        rho,
        theta0: model0.theta,
        theta1: model1.theta,
        grid: grid.clone(),
        horizon: r,
        mc_draws: settings.mc_draws,
        pi_ios,
        pi_as,
        pi_ai,
        pt_probs,
        fice,
        sace,
        aice,
        total: total_effect,
        effect_pt89,
        nnh,
    })
}

/// FICE curve and `π_ios`.
pub fn identify_fice(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    settings: &SensitivitySettings,
) -> Result<(ScaleCurves, Estimate)> {
    let rep = sensitivity_report(model0, model1, rho, rows, settings)?;
    Ok((rep.fice, rep.pi_ios))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataIdentification {
    pub pt_probs: Vec<Estimate>,
    pub pi_as: Estimate,
    pub pi_ai: Estimate,
    pub pi_ios: Estimate,
}

pub fn identify_strata(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    settings: &SensitivitySettings,
) -> Result<StrataIdentification> {
    let rep = sensitivity_report(model0, model1, rho, rows, settings)?;
    Ok(StrataIdentification { pt_probs: rep.pt_probs, pi_as: rep.pi_as, pi_ai: rep.pi_ai, pi_ios: rep.pi_ios })
}

/// SACE, AICE and total-effect curves.
pub fn identify_sace_aice_total(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    settings: &SensitivitySettings,
) -> Result<[ScaleCurves; 3]> {
    let rep = sensitivity_report(model0, model1, rho, rows, settings)?;
    Ok([rep.sace, rep.aice, rep.total])
}

/// Infection-risk contrast among patient types 8 and 9.
pub fn effect_pt89(
    model0: &ArmModel,
    model1: &ArmModel,
    rho: f64,
    rows: &[Vec<f64>],
    settings: &SensitivitySettings,
) -> Result<ScaleCurves> {
    Ok(sensitivity_report(model0, model1, rho, rows, settings)?.effect_pt89)
}

/// Number needed to harm: `1 / |d|`, undefined at zero.
pub fn nnh(risk_difference: f64) -> Option<f64> {
    (risk_difference != 0.0 && risk_difference.is_finite()).then(|| 1.0 / risk_difference.abs())
}

/// Arm lookup helper for callers holding both models.
pub fn model_for(models: &[ArmModel; 2], a: Arm) -> &ArmModel {
    &models[a.index()]
}
