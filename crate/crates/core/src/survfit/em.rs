//! EM for the per-arm Gamma-frailty illness-death model.
//!
//! The E-step uses the conjugate Gamma posterior of each subject's frailty.
//! The M-step refits the three Cox components with offsets `log E[γ|D]` and
//! updates `θ` by a golden-section search on `log θ`. Iterations of the EM map
//! are accelerated by SQUAREM with a likelihood safeguard.

use serde::{Deserialize, Serialize};

use super::cox::{CoxData, CoxOptions, CoxRow};
use super::laplace::{log_abs_laplace_deriv, posterior_frailty_moments};
use super::{ArmModel, CoxComponent, Transition};
use crate::domain::{Arm, ObservedRecord};
use crate::error::{Error, Result};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Relative change threshold on `(β, θ)` and absolute threshold on the
    /// marginal log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub cox: CoxOptions,
    pub theta_init: f64,
    /// Hold `θ` fixed (bootstrap fast mode).
    pub fixed_theta: Option<f64>,
    /// Search interval for `log θ`.
    pub log_theta_bounds: (f64, f64),
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 500,
            cox: CoxOptions::default(),
            theta_init: 1.0,
            fixed_theta: None,
            log_theta_bounds: (-10.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrailtySubjectState {
    pub k: f64,
    pub delta_prime: u8,
    pub posterior_mean: f64,
    pub posterior_log_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFit {
    pub model: ArmModel,
    pub subjects: Vec<FrailtySubjectState>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative parameter change in the final iteration.
    pub final_change: f64,
    pub loglik_trace: Vec<f64>,
    pub theta_fixed: bool,
    pub warnings: Vec<String>,
}

impl ArmFit {
    pub fn theta(&self) -> f64 {
        self.model.theta
    }

    pub fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyIllnessDeathFit {
    pub arms: [ArmFit; 2],
}

impl FrailtyIllnessDeathFit {
    pub fn arm(&self, a: Arm) -> &ArmFit {
        &self.arms[a.index()]
    }
}

/// Largest float below `x`, for positive finite `x`.
fn prev_float(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// Entry time of the illness-to-death risk interval. A zero-length interval
/// (infection and death recorded at the same instant) starts just before the exit.
fn entry12(r: &ObservedRecord) -> f64 {
    if r.y2 > r.y1 {
        r.y1
    } else {
        prev_float(r.y2)
    }
}

/// Frailty-scaled cumulative exposure of one subject.
pub fn compute_k(record: &ObservedRecord, components: &[CoxComponent; 3]) -> f64 {
    let x = &record.covariates;
    let [c01, c02, c12] = components;
    let mut k = c01.baseline.eval(record.y1) * c01.linear_predictor(x).exp() + c02.baseline.eval(record.y1) * c02.linear_predictor(x).exp();
    if record.d1 {
        let exposure = c12.baseline.eval(record.y2) - c12.baseline.eval(entry12(record));
        k += exposure * c12.linear_predictor(x).exp();
    }
    k
}

/// Log-likelihood with the frailty integrated out.
pub fn marginal_loglik(records: &[ObservedRecord], model: &ArmModel) -> Result<f64> {
    let [c01, c02, c12] = &model.components;
    let mut total = 0.0;
    for r in records {
        let x = &r.covariates;
        let event_term = |c: &CoxComponent, t: f64| -> Result<f64> {
            let jump = c.baseline.jump_at(t);
            if jump <= 0.0 {
                return Err(Error::Structural(format!(
                    "record {}: zero baseline jump for transition {} at its event time {t}",
                    r.id,
                    c.transition.label()
                )));
            }
            Ok(jump.ln() + c.linear_predictor(x))
        };
        let mut ll = 0.0;
        if r.d1 {
            ll += event_term(c01, r.y1)?;
            if r.d2 {
                ll += event_term(c12, r.y2)?;
            }
        } else if r.d2 {
            ll += event_term(c02, r.y1)?;
        }
        let k = compute_k(r, &model.components);
        ll += log_abs_laplace_deriv(model.theta, k, r.delta_prime());
        total += ll;
    }
    Ok(total)
}

struct ArmData {
    /// Row `i` of each transition maps to this subject index.
    subject: [Vec<usize>; 3],
    data: [CoxData; 3],
}

fn build_rows(records: &[ObservedRecord]) -> Result<ArmData> {
    let mut rows: [Vec<CoxRow>; 3] = Default::default();
    let mut subject: [Vec<usize>; 3] = Default::default();
    for (i, r) in records.iter().enumerate() {
        let base = |event| CoxRow { entry: 0.0, exit: r.y1, event, x: r.covariates.clone(), offset: 0.0 };
        rows[0].push(base(r.d1));
        rows[1].push(base(!r.d1 && r.d2));
        subject[0].push(i);
        subject[1].push(i);
        if r.d1 {
            rows[2].push(CoxRow { entry: entry12(r), exit: r.y2, event: r.d2, x: r.covariates.clone(), offset: 0.0 });
            subject[2].push(i);
        }
    }
    let data = [CoxData::new(&rows[0])?, CoxData::new(&rows[1])?, CoxData::new(&rows[2])?];
    Ok(ArmData { subject, data })
}

/// Observed-data log-likelihood as a function of `θ` alone, with the
/// exposures `k_i` held fixed. Terms not involving `θ` are dropped.
fn theta_profile(theta: f64, k: &[f64], dp: &[u8]) -> f64 {
    k.iter().zip(dp).map(|(&k, &d)| log_abs_laplace_deriv(theta, k, d)).sum()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    // Compare against the endpoints so boundary maxima are found exactly.
    let mid = 0.5 * (a + b);
    [a, mid, b].into_iter().map(|v| (v, f(v))).fold((mid, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best }).0
}

fn rel_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

/// Fit one arm. `records` must all belong to `arm`.
pub fn em_fit(records: &[ObservedRecord], arm: Arm, opts: &EmOptions) -> Result<ArmFit> {
    if records.is_empty() {
        return Err(Error::validation(format!("arm {} has no records", arm.index())));
    }
    let p = records[0].covariates.len();
    for r in records {
        r.validate()?;
        if r.treat != arm {
            return Err(Error::validation(format!("record {} is not in arm {}", r.id, arm.index())));
        }
        if r.covariates.len() != p {
            return Err(Error::validation("records have inconsistent covariate lengths"));
        }
    }
    let arm_data = build_rows(records)?;
    let n = records.len();
    let mut warnings = Vec::new();
    for tr in Transition::ALL {
        if arm_data.data[tr.index()].n_events() == 0 {
            warnings.push(format!("arm {}: transition {} has no events; component pinned at zero", arm.index(), tr.label()));
        }
    }

    let log_mean = vec![0.0; n];
    let fit_components = |log_mean: &[f64], prev: Option<&[CoxComponent; 3]>| -> Result<[CoxComponent; 3]> {
        let mut out: Vec<CoxComponent> = Vec::with_capacity(3);
        for tr in Transition::ALL {
            let t = tr.index();
            let data = &arm_data.data[t];
            if data.n_events() == 0 {
                out.push(CoxComponent::empty(tr, arm, p));
                continue;
            }
            let offset: Vec<f64> = arm_data.subject[t].iter().map(|&i| log_mean[i]).collect();
            let init = prev.map(|c| c[t].beta.as_slice());
            let fit = data.fit(&offset, init, &opts.cox)?;
            let baseline = data.breslow(&fit.beta, &offset);
            out.push(CoxComponent { transition: tr, arm, beta: fit.beta, baseline, pinned: fit.pinned });
        }
        Ok(out.try_into().expect("three transitions"))
    };

    let theta_fixed = opts.fixed_theta.is_some();
    let (lo, hi) = opts.log_theta_bounds;
    let dp: Vec<u8> = records.iter().map(ObservedRecord::delta_prime).collect();

    // One EM map: E-step at `m`, Cox M-step, then θ maximizing the
    // observed-data likelihood given the new components (an ECME step).
    let em_map = |m: &ArmModel| -> Result<ArmModel> {
        let log_mean: Vec<f64> =
            records.iter().zip(&dp).map(|(r, &d)| posterior_frailty_moments(m.theta, compute_k(r, &m.components), d).0.ln()).collect();
        let components = fit_components(&log_mean, Some(&m.components))?;
        let theta = match opts.fixed_theta {
            Some(t) => t,
            None => {
                let k: Vec<f64> = records.iter().map(|r| compute_k(r, &components)).collect();
                golden_max(|u| theta_profile(u.exp(), &k, &dp), lo, hi, 1e-10).exp()
            }
        };
        Ok(ArmModel { arm, theta, components })
    };

    let mut model = ArmModel { arm, theta: opts.fixed_theta.unwrap_or(opts.theta_init), components: fit_components(&log_mean, None)? };
    let mut ll = marginal_loglik(records, &model)?;
    let mut loglik_trace = vec![ll];
    let mut iterations = 0;
    let mut final_change = f64::INFINITY;
    let mut step_max = SQUAREM_STEP_MAX0;
    loop {
        if iterations >= opts.max_iter {
            let fit = finish(records, model, iterations, false, final_change, loglik_trace, theta_fixed, warnings);
            return Err(Error::NotConverged { iterations, last_change: final_change, last: Box::new(fit) });
        }
        // SQUAREM cycle: two EM maps, a squared extrapolation, one stabilizing map.
        let m1 = em_map(&model)?;
        let m2 = em_map(&m1)?;
        iterations += 2;
        let ll2 = marginal_loglik(records, &m2)?;
        let (x0, x1, x2) = (pack(&model), pack(&m1), pack(&m2));
        let r: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = x2.iter().zip(&x1).zip(&r).map(|((a, b), r)| a - b - r).collect();
        let (rr, vv) = (norm2(&r), norm2(&v));
        let mut accepted = (m2, ll2);
        if vv > 0.0 && rr > 0.0 && iterations < opts.max_iter {
            let alpha = (rr / vv).sqrt().clamp(1.0, step_max);
            let x: Vec<f64> = x0.iter().zip(&r).zip(&v).map(|((x, r), v)| x + 2.0 * alpha * r + alpha * alpha * v).collect();
            let jumped = unpack(&model, &x, (lo, hi));
            iterations += 1;
            let stabilized = em_map(&jumped).and_then(|m| marginal_loglik(records, &m).map(|l| (m, l)));
            match stabilized {
                Ok((m, l)) if l.is_finite() && l >= accepted.1 => {
                    accepted = (m, l);
                    if alpha == step_max {
                        step_max *= SQUAREM_STEP_FACTOR;
                    }
                }
                _ => {
                    if alpha == step_max {
                        step_max = (step_max / SQUAREM_STEP_FACTOR).max(SQUAREM_STEP_MAX0);
                    }
                }
            }
        }
        let (new_model, new_ll) = accepted;

        let mut change = rel_change(new_model.theta, model.theta);
        for (new, old) in new_model.components.iter().zip(&model.components) {
            for (b, b0) in new.beta.iter().zip(&old.beta) {
                change = change.max(rel_change(*b, *b0));
            }
        }
        let dll = (new_ll - ll).abs();
        model = new_model;
        ll = new_ll;
        loglik_trace.push(ll);
        final_change = change;
        if change < opts.tol && dll < opts.tol {
            break;
        }
    }
    Ok(finish(records, model, iterations, true, final_change, loglik_trace, theta_fixed, warnings))
}

const SQUAREM_STEP_MAX0: f64 = 1.0;
const SQUAREM_STEP_FACTOR: f64 = 4.0;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `(log θ, β of each component, log baseline jumps of each component)`.
fn pack(m: &ArmModel) -> Vec<f64> {
    let mut x = vec![if m.theta > 0.0 { m.theta.ln() } else { 0.0 }];
    for c in &m.components {
        x.extend_from_slice(&c.beta);
    }
    for c in &m.components {
        x.extend(c.baseline.jumps().iter().map(|j| j.ln()));
    }
    x
}

/// Inverse of [`pack`], reusing the jump times and pinning of `template`.
fn unpack(template: &ArmModel, x: &[f64], log_theta_bounds: (f64, f64)) -> ArmModel {
    let mut it = x.iter().copied();
    let theta = it.next().expect("packed θ").clamp(log_theta_bounds.0, log_theta_bounds.1).exp();
    let mut components = template.components.clone();
    for c in components.iter_mut() {
        for (b, &pinned) in c.beta.iter_mut().zip(&c.pinned) {
            let v = it.next().expect("packed β");
            *b = if pinned { 0.0 } else { v };
        }
    }
    for c in components.iter_mut() {
        let jumps: Vec<f64> = c.baseline.jumps().iter().map(|_| it.next().expect("packed jump").exp()).collect();
        c.baseline = StepFunction::new(c.baseline.times().to_vec(), jumps).expect("positive jumps on the same support");
    }
    ArmModel { arm: template.arm, theta: if template.theta == 0.0 { 0.0 } else { theta }, components }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    records: &[ObservedRecord],
    model: ArmModel,
    iterations: usize,
    converged: bool,
    final_change: f64,
    loglik_trace: Vec<f64>,
    theta_fixed: bool,
    warnings: Vec<String>,
) -> ArmFit {
    let subjects = records
        .iter()
        .map(|r| {
            let k = compute_k(r, &model.components);
            let delta_prime = r.delta_prime();
            let (posterior_mean, posterior_log_mean) = posterior_frailty_moments(model.theta, k, delta_prime);
            FrailtySubjectState { k, delta_prime, posterior_mean, posterior_log_mean }
        })
        .collect();
    ArmFit { model, subjects, iterations, converged, final_change, loglik_trace, theta_fixed, warnings }
}

/// Split records by arm and fit both arms (concurrently).
pub fn fit_both(records: &[ObservedRecord], opts: &EmOptions) -> Result<FrailtyIllnessDeathFit> {
    let split = |a: Arm| records.iter().filter(|r| r.treat == a).cloned().collect::<Vec<_>>();
    let (r0, r1) = (split(Arm::Zero), split(Arm::One));
    let (f0, f1) = rayon::join(|| em_fit(&r0, Arm::Zero, opts), || em_fit(&r1, Arm::One, opts));
    Ok(FrailtyIllnessDeathFit { arms: [f0?, f1?] })
}
