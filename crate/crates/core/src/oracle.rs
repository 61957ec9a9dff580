//! Exact estimands from enumerated potential outcomes.
//!
//! Every quantity is a weighted empirical proportion over the supplied
//! profiles. Conditioning on an empty stratum yields `None`, never NaN.

use serde::{Deserialize, Serialize};

use crate::bounds::ObservedFunctionals;
use crate::domain::{classify_patient_type, indicators_from_profile, stratum_flags, validate_horizon, Arm, PotentialOutcomeProfile};
use crate::error::{Error, Result};

/// A curve on the time grid; `None` marks an undefined value.
pub type Curve = Vec<Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandCurves {
    pub difference: Curve,
    pub risk_ratio: Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub grid: Vec<f64>,
    pub horizon: f64,
    pub fice: EstimandCurves,
    pub sace: EstimandCurves,
    pub aice: EstimandCurves,
    pub total: EstimandCurves,
    pub effect_pt89: EstimandCurves,
    pub pi_as: f64,
    pub pi_ai: f64,
    pub pi_ios: f64,
    /// Probabilities of patient types 1..=16.
    pub pt_probs: [f64; 16],
    pub total_weight: f64,
}

pub fn validate_grid(grid: &[f64], r: f64) -> Result<()> {
    validate_horizon(r)?;
    if grid.is_empty() {
        return Err(Error::validation("time grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::validation("time grid must be strictly increasing"));
    }
    if !(grid[0] > 0.0) || grid[grid.len() - 1] > r {
        return Err(Error::validation(format!("time grid must lie in (0, {r}]")));
    }
    Ok(())
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<()> {
    if n == 0 {
        return Err(Error::validation("no profiles supplied"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::validation("one weight per profile is required"));
        }
        if w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::validation("weights must be finite and nonnegative"));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("weights sum to zero"));
        }
    }
    Ok(())
}

/// Weighted infection-time distribution of both worlds inside one subpopulation.
struct Accumulator {
    mass: f64,
    /// `hist[a][g]`: mass whose arm-`a` infection time falls in `(grid[g-1], grid[g]]`.
    hist: [Vec<f64>; 2],
}

impl Accumulator {
    fn new(g: usize) -> Self {
        Accumulator { mass: 0.0, hist: [vec![0.0; g + 1], vec![0.0; g + 1]] }
    }

    fn add(&mut self, grid: &[f64], p: &PotentialOutcomeProfile, w: f64) {
        self.mass += w;
        for a in Arm::BOTH {
            let k = grid.partition_point(|&g| g < p.t1(a));
            self.hist[a.index()][k] += w;
        }
    }

    fn curves(&self) -> EstimandCurves {
        let g = self.hist[0].len() - 1;
        if self.mass <= 0.0 {
            return EstimandCurves { difference: vec![None; g], risk_ratio: vec![None; g] };
        }
        let (mut c0, mut c1) = (0.0, 0.0);
        let mut difference = Vec::with_capacity(g);
        let mut risk_ratio = Vec::with_capacity(g);
        for k in 0..g {
            c0 += self.hist[0][k];
            c1 += self.hist[1][k];
            difference.push(Some(c1 / self.mass - c0 / self.mass));
            risk_ratio.push((c0 > 0.0).then(|| c1 / c0));
        }
        EstimandCurves { difference, risk_ratio }
    }
}

pub fn oracle_estimands(profiles: &[PotentialOutcomeProfile], weights: Option<&[f64]>, grid: &[f64], r: f64) -> Result<OracleReport> {
    validate_grid(grid, r)?;
    check_weights(profiles.len(), weights)?;
    let g = grid.len();
    let (mut ios, mut as_, mut ai, mut all, mut pt89) =
        (Accumulator::new(g), Accumulator::new(g), Accumulator::new(g), Accumulator::new(g), Accumulator::new(g));
    let mut pt_mass = [0.0; 16];
    for (i, p) in profiles.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let pt = classify_patient_type(indicators_from_profile(p, r)?);
        let f = stratum_flags(pt);
        pt_mass[pt.index()] += w;
        all.add(grid, p, w);
        if f.is_ios {
            ios.add(grid, p, w);
        }
        if f.is_as {
            as_.add(grid, p, w);
        }
        if f.is_ai {
            ai.add(grid, p, w);
        }
        if matches!(pt.get(), 8 | 9) {
            pt89.add(grid, p, w);
        }
    }
    let total = all.mass;
    Ok(OracleReport {
        grid: grid.to_vec(),
        horizon: r,
        fice: ios.curves(),
        sace: as_.curves(),
        aice: ai.curves(),
        total: all.curves(),
        effect_pt89: pt89.curves(),
        pi_as: as_.mass / total,
        pi_ai: ai.mass / total,
        pi_ios: ios.mass / total,
        pt_probs: pt_mass.map(|m| m / total),
        total_weight: total,
    })
}

/// Observed-data functionals evaluated exactly on the profiles, as if treatment
/// were randomized with probability `p` (so the functionals do not depend on `p`).
pub fn oracle_observed_functionals(
    profiles: &[PotentialOutcomeProfile],
    weights: Option<&[f64]>,
    p: f64,
    grid: &[f64],
    r: f64,
) -> Result<ObservedFunctionals> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::validation(format!("randomization probability must be in (0,1), got {p}")));
    }
    validate_grid(grid, r)?;
    check_weights(profiles.len(), weights)?;
    let g = grid.len();
    let mut hist = [vec![0.0; g + 1], vec![0.0; g + 1]];
    let (mut psi, mut f1r) = ([0.0; 2], [0.0; 2]);
    let mut both0 = 0.0;
    let mut total = 0.0;
    for (i, prof) in profiles.iter().enumerate() {
        prof.validate()?;
        let w = weights.map_or(1.0, |w| w[i]);
        total += w;
        for a in Arm::BOTH {
            let (t1, t2) = (prof.t1(a), prof.t2(a));
            hist[a.index()][grid.partition_point(|&s| s < t1)] += w;
            if t1 <= r || t2 > r {
                psi[a.index()] += w;
            }
            if t1 <= r {
                f1r[a.index()] += w;
            }
        }
        if prof.t1_0 <= r && prof.t2_0 <= r {
            both0 += w;
        }
    }
    let ef1 = hist.map(|h| {
        let mut acc = 0.0;
        h[..g]
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect::<Vec<_>>()
    });
    ObservedFunctionals::new(grid.to_vec(), r, ef1, [f1r[0] / total, f1r[1] / total], [psi[0] / total, psi[1] / total], both0 / total)
}
