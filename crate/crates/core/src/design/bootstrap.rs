use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Largest tolerated fraction of failed replicates.
const MAX_FAILURE_RATE: f64 = 0.10;
const Z975: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub replicates: usize,
    pub failures: usize,
}

/// Pair-level bootstrap with Wald intervals.
///
/// `statistic` maps a list of pair indices (with repeats) to a vector of
/// values; undefined values are `None`. It is evaluated once on the identity
/// resample for the point estimate and on `b` resamples drawn with
/// replacement. Failed replicates are skipped, up to 10% of `b`.
pub fn pair_bootstrap<F>(n_pairs: usize, statistic: F, b: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<Vec<Option<f64>>> + Sync,
{
    if b < 2 {
        return Err(Error::validation("bootstrap needs at least 2 replicates"));
    }
    if n_pairs == 0 {
        return Err(Error::validation("bootstrap needs at least one pair"));
    }
    let identity: Vec<usize> = (0..n_pairs).collect();
    let point = statistic(&identity)?;
    pair_bootstrap_around(point, n_pairs, statistic, b, seed)
}

/// As [`pair_bootstrap`] but centred on a point estimate computed elsewhere,
/// for statistics whose full-precision evaluation differs from the
/// per-replicate one.
pub fn pair_bootstrap_around<F>(point: Vec<Option<f64>>, n_pairs: usize, statistic: F, b: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<Vec<Option<f64>>> + Sync,
{
    if b < 2 {
        return Err(Error::validation("bootstrap needs at least 2 replicates"));
    }
    if n_pairs == 0 {
        return Err(Error::validation("bootstrap needs at least one pair"));
    }
    let reps: Vec<Option<Vec<Option<f64>>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, Domain::Bootstrap, rep as u64);
            let idx: Vec<usize> = (0..n_pairs).map(|_| rng.random_range(0..n_pairs)).collect();
            statistic(&idx).ok().filter(|v| v.len() == point.len())
        })
        .collect();
    let failures = reps.iter().filter(|r| r.is_none()).count();
    if failures as f64 > MAX_FAILURE_RATE * b as f64 {
        return Err(Error::BootstrapFailures { failed: failures, total: b });
    }
    let ok: Vec<&Vec<Option<f64>>> = reps.iter().flatten().collect();
    let se: Vec<Option<f64>> = (0..point.len())
        .map(|k| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| r[k]).collect();
            (vals.len() >= 2).then(|| {
                let m = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / m;
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            })
        })
        .collect();
    let ci =
        |sign: f64| -> Vec<Option<f64>> { point.iter().zip(&se).map(|(p, s)| Some(p.as_ref()? + sign * Z975 * s.as_ref()?)).collect() };
    Ok(BootstrapResult { lower: ci(-1.0), upper: ci(1.0), point, se, replicates: b, failures })
}
