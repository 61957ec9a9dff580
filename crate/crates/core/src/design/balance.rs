use serde::{Deserialize, Serialize};

use super::matching::MatchedSet;
use crate::domain::{Arm, ObservedRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdRow {
    pub covariate: usize,
    pub before: f64,
    pub after: Option<f64>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

/// `(mean₁ − mean₀) / √((var₁ + var₀) / 2)`, or 0 when the pooled variance vanishes.
pub fn smd(x0: &[f64], x1: &[f64]) -> f64 {
    if x0.is_empty() || x1.is_empty() {
        return 0.0;
    }
    let (m0, v0) = mean_var(x0);
    let (m1, v1) = mean_var(x1);
    let pooled = ((v0 + v1) / 2.0).sqrt();
    if pooled > 0.0 {
        (m1 - m0) / pooled
    } else {
        0.0
    }
}

fn column_smd(records: &[ObservedRecord], idx: impl Iterator<Item = usize> + Clone, j: usize) -> f64 {
    let pick = |a: Arm| -> Vec<f64> { idx.clone().filter(|&i| records[i].treat == a).map(|i| records[i].covariates[j]).collect() };
    smd(&pick(Arm::Zero), &pick(Arm::One))
}

/// SMD per covariate on the full sample and, if given, on the matched sample.
pub fn smd_table(records: &[ObservedRecord], matched: Option<&MatchedSet>) -> Vec<SmdRow> {
    let p = records.first().map_or(0, |r| r.covariates.len());
    let matched_idx = matched.map(MatchedSet::indices);
    (0..p)
        .map(|j| SmdRow {
            covariate: j,
            before: column_smd(records, 0..records.len(), j),
            after: matched_idx.as_ref().map(|idx| column_smd(records, idx.iter().copied(), j)),
        })
        .collect()
}
