//! End-to-end observational analysis: propensity matching, per-arm frailty
//! fits, falsification check, bounds, frailty sensitivity over `ρ` and
//! pair-bootstrap standard errors.

use serde::{Deserialize, Serialize};

use crate::bounds::{bounds_report, functionals_from_fit, functionals_from_models, BoundsReport};
use crate::design::{fit_propensity, mahalanobis_match, pair_bootstrap_around, smd_table, MatchMode, MatchedSet, SmdRow};
use crate::domain::{validate_horizon, Arm, ObservedRecord};
use crate::error::{Error, Result};
use crate::oracle::validate_grid;
use crate::rng::{derive_seed, Domain};
use crate::sensitivity::{sensitivity_report, SensitivityReport, SensitivitySettings};
use crate::simulate::FrailtyConfig;
use crate::survfit::{em_fit, ArmFit, ArmModel, EmOptions, Transition};

/// `count` equally spaced times `r/count, 2r/count, …, r`.
pub fn default_grid(count: usize, r: f64) -> Vec<f64> {
    (1..=count).map(|k| r * k as f64 / count as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub rhos: Vec<f64>,
    /// Frailty pairs per covariate row in the sensitivity analysis.
    pub mc_draws: usize,
    /// Frailty draws per row for the bound functionals; 0 integrates exactly.
    pub functional_draws: usize,
    /// Bootstrap replicates; 0 disables the bootstrap.
    pub bootstrap: usize,
    /// Frailty pairs per row inside each bootstrap replicate.
    pub bootstrap_mc_draws: usize,
    pub caliper: f64,
    pub match_mode: MatchMode,
    pub skip_matching: bool,
    /// Hold each arm's `θ` at its point estimate inside the bootstrap.
    pub fast_bootstrap: bool,
    pub seed: u64,
    pub em: EmOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            horizon: 1.0,
            grid: default_grid(52, 1.0),
            rhos: vec![0.0, 0.5, 1.0],
            mc_draws: 2000,
            functional_draws: 0,
            bootstrap: 200,
            bootstrap_mc_draws: 200,
            caliper: 0.3,
            match_mode: MatchMode::Mahalanobis,
            skip_matching: false,
            fast_bootstrap: false,
            seed: 1,
            em: EmOptions::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        validate_horizon(self.horizon)?;
        validate_grid(&self.grid, self.horizon)?;
        if self.rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::validation("every rho must lie in [0, 1]"));
        }
        if self.mc_draws < 2 {
            return Err(Error::validation("mc_draws must be at least 2"));
        }
        if self.bootstrap == 1 {
            return Err(Error::validation("bootstrap needs 0 (off) or at least 2 replicates"));
        }
        if self.bootstrap > 0 && self.bootstrap_mc_draws < 2 {
            return Err(Error::validation("bootstrap_mc_draws must be at least 2"));
        }
        if !(self.caliper >= 0.0 && self.caliper.is_finite()) {
            return Err(Error::validation("caliper must be a nonnegative number"));
        }
        if !(self.em.tol > 0.0) || self.em.max_iter == 0 {
            return Err(Error::validation("EM tolerance and iteration limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySummary {
    pub coefficients: Vec<f64>,
    pub pinned: Vec<bool>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSummary {
    pub pairs: usize,
    pub caliper_sd: f64,
    pub caliper: f64,
    pub mode: MatchMode,
    pub unmatched: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub arm: Arm,
    pub theta: f64,
    pub beta01: Vec<f64>,
    pub beta02: Vec<f64>,
    pub beta12: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    pub loglik: f64,
    pub theta_fixed: bool,
    pub warnings: Vec<String>,
}

impl FitSummary {
    fn new(fit: &ArmFit) -> Self {
        let beta = |tr| fit.model.component(tr).beta.clone();
        FitSummary {
            arm: fit.model.arm,
            theta: fit.theta(),
            beta01: beta(Transition::T01),
            beta02: beta(Transition::T02),
            beta12: beta(Transition::T12),
            iterations: fit.iterations,
            converged: fit.converged,
            final_change: fit.final_change,
            loglik: fit.loglik(),
            theta_fixed: fit.theta_fixed,
            warnings: fit.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockStatus {
    Ok,
    Inadmissible,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBlock {
    pub rho: f64,
    pub rho_max: f64,
    pub status: BlockStatus,
    pub report: Option<SensitivityReport>,
}

/// One bootstrapped quantity on the grid (or a single value for scalars).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSeries {
    pub name: String,
    pub point: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub failures: usize,
    pub fast: bool,
    pub series: Vec<BootstrapSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config: AnalysisConfig,
    pub n_records: usize,
    /// Analysed subjects per arm.
    pub n_analyzed: [usize; 2],
    pub propensity: Option<PropensitySummary>,
    pub matching: Option<MatchingSummary>,
    pub smd: Vec<SmdRow>,
    pub fits: Vec<FitSummary>,
    /// Arms whose EM fit did not converge; downstream outputs are then omitted.
    pub convergence_failures: Vec<Arm>,
    pub bounds: Option<BoundsReport>,
    pub sensitivity: Vec<SensitivityBlock>,
    pub bootstrap: Option<BootstrapSummary>,
}

impl AnalysisReport {
    pub fn converged(&self) -> bool {
        self.convergence_failures.is_empty()
    }
}

pub struct AnalysisOutput {
    pub report: AnalysisReport,
    pub matched: Option<MatchedSet>,
}

/// Resampling units: matched pairs, or single subjects without matching.
fn units(records: &[ObservedRecord], matched: Option<&MatchedSet>) -> Vec<Vec<usize>> {
    match matched {
        Some(m) => m.pairs.iter().map(|p| vec![p.i0, p.i1]).collect(),
        None => (0..records.len()).map(|i| vec![i]).collect(),
    }
}

fn split_arms(records: &[ObservedRecord], idx: impl Iterator<Item = usize>) -> [Vec<ObservedRecord>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for i in idx {
        out[records[i].treat.index()].push(records[i].clone());
    }
    out
}

fn sensitivity_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, Domain::Sensitivity, k as u64)
}

fn run_sensitivity(models: [&ArmModel; 2], rows: &[Vec<f64>], cfg: &AnalysisConfig, draws: usize) -> Result<Vec<SensitivityBlock>> {
    let rho_max = FrailtyConfig::rho_max(models[0].theta, models[1].theta);
    cfg.rhos
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let settings =
                SensitivitySettings { grid: cfg.grid.clone(), horizon: cfg.horizon, mc_draws: draws, seed: sensitivity_seed(cfg.seed, k) };
            match sensitivity_report(models[0], models[1], rho, rows, &settings) {
                Ok(report) => Ok(SensitivityBlock { rho, rho_max, status: BlockStatus::Ok, report: Some(report) }),
                Err(Error::Parameter(_)) => Ok(SensitivityBlock { rho, rho_max, status: BlockStatus::Inadmissible, report: None }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Flattened quantities carried through the bootstrap, with a fixed layout.
fn series(bounds: &BoundsReport, sensitivity: &[SensitivityBlock], g: usize) -> Vec<(String, Vec<Option<f64>>)> {
    let mut out = Vec::new();
    for b in &bounds.bounds {
        let label = b.assumption.label();
        out.push((format!("bounds/{label}/pi_ios/lower"), vec![Some(b.pi_ios.lower)]));
        out.push((format!("bounds/{label}/pi_ios/upper"), vec![Some(b.pi_ios.upper)]));
        out.push((format!("bounds/{label}/difference/lower"), b.difference.iter().map(|i| Some(i.lower)).collect()));
        out.push((format!("bounds/{label}/difference/upper"), b.difference.iter().map(|i| Some(i.upper)).collect()));
    }
    for block in sensitivity {
        let rho = block.rho;
        let rep = block.report.as_ref();
        for name in ["pi_ios", "pi_as", "pi_ai"] {
            let v = rep.map(|r| match name {
                "pi_ios" => r.pi_ios.value,
                "pi_as" => r.pi_as.value,
                _ => r.pi_ai.value,
            });
            out.push((format!("sensitivity/rho={rho}/{name}"), vec![v]));
        }
        for name in ["fice", "sace", "aice", "total", "pt89"] {
            for scale in ["difference", "risk-ratio"] {
                let vals = match rep {
                    Some(r) => {
                        let c = match name {
                            "fice" => &r.fice,
                            "sace" => &r.sace,
                            "aice" => &r.aice,
                            "total" => &r.total,
                            _ => &r.effect_pt89,
                        };
                        let v = if scale == "difference" { &c.difference } else { &c.risk_ratio };
                        v.iter().map(|e| e.map(|e| e.value)).collect()
                    }
                    None => vec![None; g],
                };
                out.push((format!("sensitivity/rho={rho}/{name}/{scale}"), vals));
            }
        }
    }
    out
}

pub fn run_analysis(records: &[ObservedRecord], cfg: &AnalysisConfig) -> Result<AnalysisOutput> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::validation("no records"));
    }
    let p = records[0].covariates.len();
    for r in records {
        r.validate()?;
        if r.covariates.len() != p {
            return Err(Error::validation(format!("record {} has a different covariate dimension", r.id)));
        }
    }
    for a in Arm::BOTH {
        if !records.iter().any(|r| r.treat == a) {
            return Err(Error::validation(format!("no records in arm {}", a.index())));
        }
    }

    let (propensity, matched) = if cfg.skip_matching {
        (None, None)
    } else {
        let ps = fit_propensity(records)?;
        let m = mahalanobis_match(records, &ps, cfg.caliper, cfg.match_mode)?;
        if m.pairs.is_empty() {
            return Err(Error::validation("matching produced no pairs"));
        }
        (Some(ps), Some(m))
    };
    let smd = smd_table(records, matched.as_ref());
    let units = units(records, matched.as_ref());
    let sample: Vec<usize> = units.iter().flatten().copied().collect();
    let arms = split_arms(records, sample.iter().copied());
    let rows: Vec<Vec<f64>> = sample.iter().map(|&i| records[i].covariates.clone()).collect();

    let fit = |a: Arm| match em_fit(&arms[a.index()], a, &cfg.em) {
        Ok(f) => Ok(f),
        Err(Error::NotConverged { last, .. }) => Ok(*last),
        Err(e) => Err(e),
    };
    let (f0, f1) = rayon::join(|| fit(Arm::Zero), || fit(Arm::One));
    let fits = [f0?, f1?];
    let convergence_failures: Vec<Arm> = fits.iter().filter(|f| !f.converged).map(|f| f.model.arm).collect();

    let mut report = AnalysisReport {
        config: cfg.clone(),
        n_records: records.len(),
        n_analyzed: [arms[0].len(), arms[1].len()],
        propensity: propensity.as_ref().map(|ps| PropensitySummary {
            coefficients: ps.coefficients.clone(),
            pinned: ps.pinned.clone(),
            iterations: ps.iterations,
            warnings: ps.warnings.clone(),
        }),
        matching: matched.as_ref().map(|m| MatchingSummary {
            pairs: m.pairs.len(),
            caliper_sd: m.caliper_sd,
            caliper: m.caliper,
            mode: m.mode,
            unmatched: m.unmatched,
        }),
        smd,
        fits: fits.iter().map(FitSummary::new).collect(),
        convergence_failures,
        bounds: None,
        sensitivity: Vec::new(),
        bootstrap: None,
    };
    if !report.converged() {
        let rho_max = FrailtyConfig::rho_max(fits[0].theta(), fits[1].theta());
        report.sensitivity =
            cfg.rhos.iter().map(|&rho| SensitivityBlock { rho, rho_max, status: BlockStatus::Skipped, report: None }).collect();
        return Ok(AnalysisOutput { report, matched });
    }

    let functionals = functionals_from_fit(
        &fits[0],
        &fits[1],
        &rows,
        &cfg.grid,
        cfg.horizon,
        cfg.functional_draws,
        derive_seed(cfg.seed, Domain::Functionals, 0),
    )?;
    let bounds = bounds_report(&functionals);
    let models = [&fits[0].model, &fits[1].model];
    let sensitivity = run_sensitivity(models, &rows, cfg, cfg.mc_draws)?;

    if cfg.bootstrap > 0 {
        let g = cfg.grid.len();
        let layout = series(&bounds, &sensitivity, g);
        let point: Vec<Option<f64>> = layout.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let thetas = [fits[0].theta(), fits[1].theta()];
        let statistic = |idx: &[usize]| -> Result<Vec<Option<f64>>> {
            let sample: Vec<usize> = idx.iter().flat_map(|&u| units[u].iter().copied()).collect();
            let arms = split_arms(records, sample.iter().copied());
            let rows: Vec<Vec<f64>> = sample.iter().map(|&i| records[i].covariates.clone()).collect();
            let fit = |a: Arm| {
                let mut opts = cfg.em;
                if cfg.fast_bootstrap {
                    opts.fixed_theta = Some(thetas[a.index()]);
                }
                em_fit(&arms[a.index()], a, &opts)
            };
            let f0 = fit(Arm::Zero)?;
            let f1 = fit(Arm::One)?;
            let func = functionals_from_models(&f0.model, &f1.model, &rows, &cfg.grid, cfg.horizon, 0, 0)?;
            let b = bounds_report(&func);
            let s = run_sensitivity([&f0.model, &f1.model], &rows, cfg, cfg.bootstrap_mc_draws)?;
            Ok(series(&b, &s, g).into_iter().flat_map(|(_, v)| v).collect())
        };
        let res = pair_bootstrap_around(point, units.len(), statistic, cfg.bootstrap, derive_seed(cfg.seed, Domain::Bootstrap, 0))?;
        let mut offset = 0;
        let series = layout
            .into_iter()
            .map(|(name, v)| {
                let r = offset..offset + v.len();
                offset += v.len();
                BootstrapSeries {
                    name,
                    point: res.point[r.clone()].to_vec(),
                    se: res.se[r.clone()].to_vec(),
                    lower: res.lower[r.clone()].to_vec(),
                    upper: res.upper[r].to_vec(),
                }
            })
            .collect();
        report.bootstrap = Some(BootstrapSummary { replicates: res.replicates, failures: res.failures, fast: cfg.fast_bootstrap, series });
    }
    report.bounds = Some(bounds);
    report.sensitivity = sensitivity;
    Ok(AnalysisOutput { report, matched })
}
