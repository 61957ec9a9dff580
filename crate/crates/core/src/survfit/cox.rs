//! Offset Cox partial likelihood with left truncation and Breslow ties.
//!
//! Risk sets are `(entry, exit]` intervals. One descending sweep over the
//! distinct event times adds rows whose exit is at or after the current time
//! and removes rows whose entry is at or after it, so every evaluation costs
//! `O(n p²)` after a single sort.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::step::StepFunction;

/// One risk interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxRow {
    pub entry: f64,
    pub exit: f64,
    pub event: bool,
    pub x: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    /// Convergence threshold on the largest absolute score component.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude count as divergence. Under monotone
    /// likelihood the score decays like `exp(-|β|)`, so the cap must sit below
    /// the point where the score test alone would declare convergence.
    pub beta_cap: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { tol: 1e-8, max_iter: 100, beta_cap: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub score: Vec<f64>,
    pub iterations: usize,
    pub pinned: Vec<bool>,
}

/// Sorted, reusable representation of a set of risk intervals. Offsets are
/// supplied per fit so EM iterations reuse the sort.
#[derive(Debug, Clone)]
pub struct CoxData {
    n: usize,
    p: usize,
    entry: Vec<f64>,
    x: Vec<f64>,
    by_exit_desc: Vec<usize>,
    by_entry_desc: Vec<usize>,
    exit: Vec<f64>,
    /// Distinct event times, descending, with event count and summed covariates.
    times: Vec<f64>,
    counts: Vec<f64>,
    event_rows: Vec<usize>,
    event_x_sum: Vec<f64>,
    zero_variance: Vec<bool>,
}

struct Eval {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

impl CoxData {
    pub fn new(rows: &[CoxRow]) -> Result<CoxData> {
        let p = rows.first().map_or(0, |r| r.x.len());
        let mut x = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.x.len() != p {
                return Err(Error::validation("Cox rows have inconsistent covariate lengths"));
            }
            if !(r.entry < r.exit) || !r.entry.is_finite() || !r.exit.is_finite() {
                return Err(Error::validation(format!(
                    "Cox row needs a finite interval with entry < exit (entry={}, exit={})",
                    r.entry, r.exit
                )));
            }
            x.extend_from_slice(&r.x);
        }
        let n = rows.len();
        let entry: Vec<f64> = rows.iter().map(|r| r.entry).collect();
        let exit: Vec<f64> = rows.iter().map(|r| r.exit).collect();
        let mut by_exit_desc: Vec<usize> = (0..n).collect();
        by_exit_desc.sort_by(|&a, &b| exit[b].total_cmp(&exit[a]).then(a.cmp(&b)));
        let mut by_entry_desc: Vec<usize> = (0..n).collect();
        by_entry_desc.sort_by(|&a, &b| entry[b].total_cmp(&entry[a]).then(a.cmp(&b)));

        let mut times = Vec::new();
        let mut counts = Vec::new();
        let mut event_x_sum = Vec::new();
        let event_rows: Vec<usize> = by_exit_desc.iter().copied().filter(|&i| rows[i].event).collect();
        for &i in &event_rows {
            if times.last() != Some(&exit[i]) {
                times.push(exit[i]);
                counts.push(0.0);
                event_x_sum.extend(std::iter::repeat_n(0.0, p));
            }
            *counts.last_mut().unwrap() += 1.0;
            let off = event_x_sum.len() - p;
            for j in 0..p {
                event_x_sum[off + j] += x[i * p + j];
            }
        }
        let zero_variance = (0..p)
            .map(|j| {
                let mut it = (0..n).map(|i| x[i * p + j]);
                match it.next() {
                    Some(first) => it.all(|v| v == first),
                    None => true,
                }
            })
            .collect();
        Ok(CoxData { n, p, entry, x, by_exit_desc, by_entry_desc, exit, times, counts, event_rows, event_x_sum, zero_variance })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_events(&self) -> usize {
        self.event_rows.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn etas(&self, beta: &[f64], offset: &[f64]) -> (Vec<f64>, f64) {
        let eta: Vec<f64> = (0..self.n).map(|i| offset[i] + self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()).collect();
        let c = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (eta, if c.is_finite() { c } else { 0.0 })
    }

    /// Visits each distinct event time (descending) with its risk-set sums
    /// `(S0, S1, S2)` of `exp(η - c)` weights over the active columns.
    fn sweep(&self, eta: &[f64], c: f64, active: &[usize], mut visit: impl FnMut(usize, f64, &[f64], &[f64])) {
        let q = active.len();
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; q];
        let mut s2 = vec![0.0; q * q];
        let (mut ie, mut ien) = (0, 0);
        let accumulate = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
            let w = sign * (eta[i] - c).exp();
            *s0 += w;
            let xi = self.row(i);
            for (a, &ja) in active.iter().enumerate() {
                let wx = w * xi[ja];
                s1[a] += wx;
                for (b, &jb) in active.iter().enumerate().take(a + 1) {
                    s2[a * q + b] += wx * xi[jb];
                }
            }
        };
        for (k, &u) in self.times.iter().enumerate() {
            while ie < self.n && self.exit[self.by_exit_desc[ie]] >= u {
                accumulate(self.by_exit_desc[ie], 1.0, &mut s0, &mut s1, &mut s2);
                ie += 1;
            }
            while ien < self.n && self.entry[self.by_entry_desc[ien]] >= u {
                accumulate(self.by_entry_desc[ien], -1.0, &mut s0, &mut s1, &mut s2);
                ien += 1;
            }
            visit(k, s0, &s1, &s2);
        }
    }

    fn evaluate(&self, beta: &[f64], offset: &[f64], active: &[usize]) -> Eval {
        let q = active.len();
        let (eta, c) = self.etas(beta, offset);
        let mut loglik: f64 = self.event_rows.iter().map(|&i| eta[i]).sum();
        let mut score = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for (a, &j) in active.iter().enumerate() {
            score[a] = (0..self.times.len()).map(|k| self.event_x_sum[k * self.p + j]).sum();
        }
        self.sweep(&eta, c, active, |k, s0, s1, s2| {
            let d = self.counts[k];
            loglik -= d * (s0.ln() + c);
            for a in 0..q {
                let ma = s1[a] / s0;
                score[a] -= d * ma;
                for b in 0..=a {
                    let v = d * (s2[a * q + b] / s0 - ma * s1[b] / s0);
                    info[(a, b)] += v;
                    if a != b {
                        info[(b, a)] += v;
                    }
                }
            }
        });
        Eval { loglik, score, info }
    }

    /// Maximize the partial likelihood by Newton's method with step halving.
    pub fn fit(&self, offset: &[f64], init: Option<&[f64]>, opts: &CoxOptions) -> Result<CoxFit> {
        assert_eq!(offset.len(), self.n, "one offset per row");
        let p = self.p;
        let pinned: Vec<bool> = if self.event_rows.is_empty() { vec![true; p] } else { self.zero_variance.clone() };
        let active: Vec<usize> = (0..p).filter(|&j| !pinned[j]).collect();
        let mut beta = vec![0.0; p];
        if let Some(init) = init {
            for &j in &active {
                beta[j] = if init[j].is_finite() { init[j] } else { 0.0 };
            }
        }
        let mut cur = self.evaluate(&beta, offset, &active);
        let mut iterations = 0;
        loop {
            let max_score = cur.score.amax();
            if active.is_empty() || max_score < opts.tol {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(self.divergence_or_stall(&beta, &cur, &active, opts, true));
            }
            iterations += 1;
            let step = solve_spd(&cur.info, &cur.score).ok_or_else(|| Error::Structural("singular Cox information matrix".to_string()))?;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut trial = beta.clone();
                for (a, &j) in active.iter().enumerate() {
                    trial[j] += scale * step[a];
                }
                let ev = self.evaluate(&trial, offset, &active);
                if ev.loglik.is_finite() && ev.loglik >= cur.loglik - 1e-12 * (1.0 + cur.loglik.abs()) {
                    accepted = Some((trial, ev));
                    break;
                }
                scale *= 0.5;
            }
            let Some((trial, ev)) = accepted else {
                // No ascent possible at machine precision: treat as converged.
                break;
            };
            let moved = active.iter().map(|&j| (trial[j] - beta[j]).abs()).fold(0.0, f64::max);
            beta = trial;
            cur = ev;
            if beta.iter().any(|b| b.abs() > opts.beta_cap) {
                return Err(self.divergence_or_stall(&beta, &cur, &active, opts, false));
            }
            if moved < 1e-13 * (1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()))) {
                break;
            }
        }
        if beta.iter().any(|b| b.abs() > opts.beta_cap) {
            return Err(self.divergence_or_stall(&beta, &cur, &active, opts, false));
        }
        let mut score = vec![0.0; p];
        for (a, &j) in active.iter().enumerate() {
            score[j] = cur.score[a];
        }
        Ok(CoxFit { beta, loglik: cur.loglik, score, iterations, pinned })
    }

    fn divergence_or_stall(&self, beta: &[f64], cur: &Eval, active: &[usize], opts: &CoxOptions, stalled: bool) -> Error {
        let (col, mag) = beta.iter().enumerate().map(|(j, b)| (j, b.abs())).fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let pos = active.iter().position(|&j| j == col);
        let score = pos.map_or(0.0, |a| cur.score[a]);
        if stalled && mag <= opts.beta_cap {
            Error::Structural(format!("Cox Newton did not converge in {} iterations (max score {:.3e})", opts.max_iter, cur.score.amax()))
        } else {
            Error::Diverged { column: col, magnitude: mag, score }
        }
    }

    /// Breslow estimator: jump `d(u) / Σ_{risk set} exp(xᵀβ + offset)` at each event time.
    pub fn breslow(&self, beta: &[f64], offset: &[f64]) -> StepFunction {
        let (eta, c) = self.etas(beta, offset);
        let k = self.times.len();
        let mut jumps = vec![0.0; k];
        self.sweep(&eta, c, &[], |i, s0, _, _| {
            jumps[i] = self.counts[i] / s0 * (-c).exp();
        });
        let mut times = self.times.clone();
        times.reverse();
        jumps.reverse();
        StepFunction::new(times, jumps).expect("event times are distinct and jumps positive")
    }
}

fn solve_spd(info: &DMatrix<f64>, score: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = info.clone().cholesky() {
        return Some(ch.solve(score));
    }
    info.clone().lu().solve(score)
}

/// Fit a Cox model to `rows` (offsets taken from the rows).
pub fn cox_newton(rows: &[CoxRow], tol: f64, max_iter: usize) -> Result<CoxFit> {
    let data = CoxData::new(rows)?;
    let offset: Vec<f64> = rows.iter().map(|r| r.offset).collect();
    data.fit(&offset, None, &CoxOptions { tol, max_iter, ..CoxOptions::default() })
}

/// Breslow baseline cumulative hazard for `rows` at coefficients `beta`.
pub fn breslow(rows: &[CoxRow], beta: &[f64]) -> Result<StepFunction> {
    let data = CoxData::new(rows)?;
    let offset: Vec<f64> = rows.iter().map(|r| r.offset).collect();
    Ok(data.breslow(beta, &offset))
}
