use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Arm, ObservedRecord};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-10;
/// A coefficient this large means fitted probabilities have saturated.
const SEPARATION_CAP: f64 = 25.0;
/// Relative residual norm below which a design column counts as redundant.
const RANK_TOL: f64 = 1e-9;

/// Logistic model for `Pr(A = 1 | X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Columns dropped as linearly redundant; their coefficients are 0.
    pub pinned: Vec<bool>,
    pub max_abs_score: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl PropensityModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        let eta = self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        sigmoid(eta)
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Columns that are linear combinations of earlier columns, by sequential
/// Gram-Schmidt in column order (the intercept is column 0).
fn redundant_columns(design: &DMatrix<f64>) -> Vec<bool> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    (0..design.ncols())
        .map(|j| {
            let col = design.column(j).into_owned();
            let norm = col.norm();
            let mut r = col;
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
            let rn = r.norm();
            if norm == 0.0 || rn <= RANK_TOL * norm {
                true
            } else {
                basis.push(r / rn);
                false
            }
        })
        .collect()
}

/// Newton-Raphson logistic regression with an intercept.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool]) -> Result<PropensityModel> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::validation("logistic regression needs matching nonempty X and y"));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::validation("covariate rows must share a dimension and be finite"));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let pinned = redundant_columns(&design);
    let mut warnings = Vec::new();
    for (j, _) in pinned.iter().enumerate().filter(|(_, &b)| b) {
        warnings.push(format!("design column {j} is linearly redundant; coefficient pinned to 0"));
    }
    let active: Vec<usize> = (0..=p).filter(|&j| !pinned[j]).collect();
    let xa = design.select_columns(&active);
    let yv = DVector::from_iterator(n, y.iter().map(|&b| b as u8 as f64));

    let mut beta = DVector::<f64>::zeros(active.len());
    let mut iterations = 0;
    let mut score;
    loop {
        let eta = &xa * &beta;
        let mu = eta.map(sigmoid);
        score = xa.transpose() * (&yv - &mu);
        let w = mu.map(|m| m * (1.0 - m));
        let mut info = DMatrix::zeros(active.len(), active.len());
        for i in 0..n {
            let row = xa.row(i);
            info += row.transpose() * row * w[i];
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => info.lu().solve(&score).ok_or(Error::Separation { column: 0 })?,
        };
        beta += &step;
        iterations += 1;
        if let Some((k, _)) = beta.iter().enumerate().find(|(_, b)| b.abs() > SEPARATION_CAP) {
            return Err(Error::Separation { column: active[k] });
        }
        if step.amax() < STEP_TOL {
            break;
        }
        if iterations >= MAX_ITER {
            return Err(Error::Structural(format!("logistic regression did not converge in {MAX_ITER} iterations")));
        }
    }
    let mut coefficients = vec![0.0; p + 1];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = beta[k];
    }
    let mut model = PropensityModel { coefficients, probabilities: Vec::new(), pinned, max_abs_score: score.amax(), iterations, warnings };
    model.probabilities = x.iter().map(|r| model.probability(r)).collect();
    Ok(model)
}

/// Propensity of assignment to arm 1 given covariates.
pub fn fit_propensity(records: &[ObservedRecord]) -> Result<PropensityModel> {
    for a in Arm::BOTH {
        if !records.iter().any(|r| r.treat == a) {
            return Err(Error::validation(format!("no records in arm {}", a.index())));
        }
    }
    let x: Vec<Vec<f64>> = records.iter().map(|r| r.covariates.clone()).collect();
    let y: Vec<bool> = records.iter().map(|r| r.treat == Arm::One).collect();
    fit_logistic(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binary_covariate_gives_log_odds_ratio() {
        // 2x2 table: x=0 has 30 treated / 70 control, x=1 has 60 / 40.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (xv, t, c) in [(0.0, 30, 70), (1.0, 60, 40)] {
            x.extend(std::iter::repeat_n(vec![xv], t + c));
            y.extend(std::iter::repeat_n(true, t));
            y.extend(std::iter::repeat_n(false, c));
        }
        let m = fit_logistic(&x, &y).unwrap();
        let lor = ((60.0f64 / 40.0) / (30.0 / 70.0)).ln();
        assert!((m.coefficients[1] - lor).abs() < 1e-10);
        assert!((m.coefficients[0] - (30.0f64 / 70.0).ln()).abs() < 1e-10);
        assert!(m.max_abs_score < 1e-8);
    }

    #[test]
    fn identical_rows_give_intercept_only() {
        let x = vec![vec![0.5, 1.0]; 30];
        let y: Vec<bool> = (0..30).map(|i| i < 10).collect();
        let m = fit_logistic(&x, &y).unwrap();
        assert!((m.coefficients[0] - (10.0f64 / 20.0).ln()).abs() < 1e-10);
        assert_eq!(&m.coefficients[1..], &[0.0, 0.0]);
        assert_eq!(m.pinned, vec![false, true, true]);
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn independent_covariates_give_null_slopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.random::<f64>(), (rng.random::<f64>() < 0.5) as u8 as f64]).collect();
        let y: Vec<bool> = (0..20_000).map(|_| rng.random::<f64>() < 0.4).collect();
        let m = fit_logistic(&x, &y).unwrap();
        assert!(m.coefficients[1..].iter().all(|b| b.abs() < 0.1), "{:?}", m.coefficients);
        assert!(m.probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn separation_is_reported() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        assert!(matches!(fit_logistic(&x, &y), Err(Error::Separation { column: _ })));
    }

    #[test]
    fn collinear_column_is_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let a: f64 = rng.random();
                vec![a, 2.0 * a]
            })
            .collect();
        let y: Vec<bool> = x.iter().map(|r| rng.random::<f64>() < r[0]).collect();
        let m = fit_logistic(&x, &y).unwrap();
        assert_eq!(m.pinned, vec![false, false, true]);
        assert_eq!(m.coefficients[2], 0.0);
    }
}
