use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::propensity::PropensityModel;
use crate::domain::{Arm, ObservedRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Mahalanobis distance on covariates within the PS caliper.
    #[default]
    Mahalanobis,
    /// Absolute PS difference within the caliper.
    PropensityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Record indices into the matched input.
    pub i0: usize,
    pub i1: usize,
    pub ps0: f64,
    pub ps1: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub pairs: Vec<MatchedPair>,
    pub caliper_sd: f64,
    /// Caliper on the PS scale, `caliper_sd × sd(PS)`.
    pub caliper: f64,
    pub mode: MatchMode,
    /// Unmatched subjects per arm.
    pub unmatched: [usize; 2],
    pub ridge: f64,
}

impl MatchedSet {
    /// Record indices of the matched sample, arm 0 members then arm 1 members per pair.
    pub fn indices(&self) -> Vec<usize> {
        self.pairs.iter().flat_map(|p| [p.i0, p.i1]).collect()
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Whitening map `x ↦ W x` with `WᵀW = Σ⁻¹`, ridge-regularized when `Σ` is singular.
fn whitening(x: &[Vec<f64>]) -> (DMatrix<f64>, f64) {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    if p == 0 {
        return (DMatrix::zeros(0, 0), 0.0);
    }
    let mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::zeros(p, p);
    for r in x {
        let d = DVector::from_iterator(p, r.iter().zip(&mean).map(|(a, m)| a - m));
        cov += &d * d.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    let trace = cov.trace();
    let eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.min();
    let ridge = if min_eig <= 1e-12 * trace.max(f64::MIN_POSITIVE) {
        let r = 1e-8 * trace / p as f64;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    } else {
        0.0
    };
    let eig = if ridge > 0.0 { SymmetricEigen::new(cov + DMatrix::identity(p, p) * ridge) } else { eig };
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    (inv_sqrt * eig.eigenvectors.transpose(), ridge)
}

/// Greedy 1:1 nearest-neighbour matching without replacement.
///
/// Arm-0 subjects are processed in ascending PS order (ties by index). Each
/// takes the closest unmatched arm-1 subject whose PS lies within the caliper,
/// with ties going to the smaller index; subjects with no candidate stay
/// unmatched.
pub fn mahalanobis_match(records: &[ObservedRecord], ps: &PropensityModel, caliper_sd: f64, mode: MatchMode) -> Result<MatchedSet> {
    if !(caliper_sd >= 0.0 && caliper_sd.is_finite()) {
        return Err(Error::validation(format!("caliper must be a nonnegative number, got {caliper_sd}")));
    }
    if ps.probabilities.len() != records.len() {
        return Err(Error::validation("propensity scores do not match the records"));
    }
    let score = &ps.probabilities;
    let caliper = caliper_sd * sample_sd(score);
    let x: Vec<Vec<f64>> = records.iter().map(|r| r.covariates.clone()).collect();
    let (w, ridge) = match mode {
        MatchMode::Mahalanobis => whitening(&x),
        MatchMode::PropensityOnly => (DMatrix::zeros(0, 0), 0.0),
    };
    let z: Vec<DVector<f64>> = match mode {
        MatchMode::Mahalanobis => x.iter().map(|r| &w * DVector::from_column_slice(r)).collect(),
        MatchMode::PropensityOnly => Vec::new(),
    };

    let by_ps = |arm: Arm| {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].treat == arm).collect();
        idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
        idx
    };
    let treated = by_ps(Arm::Zero);
    let controls = by_ps(Arm::One);
    let control_ps: Vec<f64> = controls.iter().map(|&j| score[j]).collect();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    for &i in &treated {
        let lo = control_ps.partition_point(|&s| s < score[i] - caliper);
        let hi = control_ps.partition_point(|&s| s <= score[i] + caliper);
        let mut best: Option<(f64, usize, usize)> = None;
        for k in lo..hi {
            if used[k] {
                continue;
            }
            let j = controls[k];
            if (score[i] - score[j]).abs() > caliper {
                continue;
            }
            let d = match mode {
                MatchMode::Mahalanobis => (&z[i] - &z[j]).norm(),
                MatchMode::PropensityOnly => (score[i] - score[j]).abs(),
            };
            let better = match best {
                None => true,
                Some((bd, bj, _)) => d < bd || (d == bd && j < bj),
            };
            if better {
                best = Some((d, j, k));
            }
        }
        if let Some((d, j, k)) = best {
            used[k] = true;
            pairs.push(MatchedPair { i0: i, i1: j, ps0: score[i], ps1: score[j], distance: d });
        }
    }
    Ok(MatchedSet { unmatched: [treated.len() - pairs.len(), controls.len() - pairs.len()], pairs, caliper_sd, caliper, mode, ridge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::propensity::fit_propensity;
    use proptest::prelude::*;

    fn rec(i: usize, treat: Arm, x: Vec<f64>) -> ObservedRecord {
        ObservedRecord { id: i.to_string(), treat, y1: 1.0, d1: false, y2: 1.0, d2: false, covariates: x }
    }

    fn fixed_ps(records: &[ObservedRecord], ps: Vec<f64>) -> PropensityModel {
        PropensityModel {
            coefficients: vec![0.0; records[0].covariates.len() + 1],
            probabilities: ps,
            pinned: vec![],
            max_abs_score: 0.0,
            iterations: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn identical_arms_match_at_zero_distance() {
        let mut records = Vec::new();
        for i in 0..10 {
            let x = vec![i as f64, (i % 3) as f64];
            records.push(rec(2 * i, Arm::Zero, x.clone()));
            records.push(rec(2 * i + 1, Arm::One, x));
        }
        let ps = fit_propensity(&records).unwrap();
        let m = mahalanobis_match(&records, &ps, 0.3, MatchMode::Mahalanobis).unwrap();
        assert_eq!(m.pairs.len(), 10);
        assert!(m.pairs.iter().all(|p| p.distance == 0.0 && p.i1 == p.i0 + 1));
        assert_eq!(m.unmatched, [0, 0]);
    }

    #[test]
    fn hand_instance_three_by_three() {
        // Distances from the 2x2 sample covariance of all six rows:
        //   subject 1 → (3: 2.053, 4: 1.780, 5: 1.172)
        //   subject 0 → (3: 0.297, 4: 2.716, 5: 1.183)
        //   subject 2 → (3: 2.076, 4: 2.113, 5: 2.041)
        // Subject 2 would prefer 5 but comes last and gets 4.
        let x = [[0.0, 0.0], [1.0, 1.0], [4.0, 0.0], [0.5, 0.0], [4.0, 1.0], [1.5, 0.5]];
        let treat = [Arm::Zero, Arm::Zero, Arm::Zero, Arm::One, Arm::One, Arm::One];
        let records: Vec<_> = (0..6).map(|i| rec(i, treat[i], x[i].to_vec())).collect();
        let ps = fixed_ps(&records, vec![0.2, 0.1, 0.3, 0.25, 0.3, 0.15]);
        let m = mahalanobis_match(&records, &ps, 100.0, MatchMode::Mahalanobis).unwrap();
        // Order by PS: subject 1 (0.1), 0 (0.2), 2 (0.3).
        let got: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.i0, p.i1)).collect();
        assert_eq!(got, vec![(1, 5), (0, 3), (2, 4)]);
        let cov = |a: usize, b: usize| {
            let mean = |j: usize| x.iter().map(|r| r[j]).sum::<f64>() / 6.0;
            x.iter().map(|r| (r[a] - mean(a)) * (r[b] - mean(b))).sum::<f64>() / 5.0
        };
        let (s00, s01, s11) = (cov(0, 0), cov(0, 1), cov(1, 1));
        let det = s00 * s11 - s01 * s01;
        let d = |i: usize, j: usize| {
            let (a, b) = (x[i][0] - x[j][0], x[i][1] - x[j][1]);
            ((a * a * s11 - 2.0 * a * b * s01 + b * b * s00) / det).sqrt()
        };
        assert!((m.pairs[0].distance - d(1, 5)).abs() < 1e-10);
        assert!((m.pairs[2].distance - d(2, 4)).abs() < 1e-10);
    }

    #[test]
    fn zero_caliper_requires_equal_scores() {
        let records: Vec<_> = (0..4).map(|i| rec(i, if i < 2 { Arm::Zero } else { Arm::One }, vec![i as f64])).collect();
        let ps = fixed_ps(&records, vec![0.3, 0.4, 0.4, 0.5]);
        let m = mahalanobis_match(&records, &ps, 0.0, MatchMode::Mahalanobis).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!((m.pairs[0].i0, m.pairs[0].i1), (1, 2));
        assert_eq!(m.unmatched, [1, 1]);
    }

    #[test]
    fn constant_covariate_is_regularized() {
        let records: Vec<_> = (0..6).map(|i| rec(i, if i % 2 == 0 { Arm::Zero } else { Arm::One }, vec![1.0, i as f64])).collect();
        let ps = fixed_ps(&records, vec![0.5; 6]);
        let m = mahalanobis_match(&records, &ps, 0.3, MatchMode::Mahalanobis).unwrap();
        assert!(m.ridge > 0.0);
        assert_eq!(m.pairs.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matching_is_injective_and_within_caliper(
            rows in prop::collection::vec((any::<bool>(), 0.0f64..1.0, -2.0f64..2.0, 0.01f64..0.99), 2..60),
            cal in 0.0f64..1.0,
            ps_only in any::<bool>(),
        ) {
            let records: Vec<_> = rows.iter().enumerate()
                .map(|(i, r)| rec(i, if r.0 { Arm::One } else { Arm::Zero }, vec![r.1, r.2]))
                .collect();
            let ps = fixed_ps(&records, rows.iter().map(|r| r.3).collect());
            let mode = if ps_only { MatchMode::PropensityOnly } else { MatchMode::Mahalanobis };
            let m = mahalanobis_match(&records, &ps, cal, mode).unwrap();
            let mut seen = std::collections::HashSet::new();
            for p in &m.pairs {
                prop_assert!(seen.insert(p.i0) && seen.insert(p.i1));
                prop_assert_eq!(records[p.i0].treat, Arm::Zero);
                prop_assert_eq!(records[p.i1].treat, Arm::One);
                prop_assert!((p.ps0 - p.ps1).abs() <= m.caliper);
            }
            let n1 = records.iter().filter(|r| r.treat == Arm::One).count();
            prop_assert!(m.pairs.len() <= n1.min(records.len() - n1));
        }
    }
}
