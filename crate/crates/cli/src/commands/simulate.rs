use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use scr_core::io::{write_observed, write_potential};
use scr_core::simulate::{scenario, simulate_cohort, CohortSpec, CovariateLaw, FrailtyConfig, HazardSpecs, TreatmentMechanism};

use crate::config::{load, parse_covariates, pick};
use crate::error::{CliError, CliResult};
use crate::output::{say, Outputs};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML run file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Built-in hazard scenario: scenario-a or scenario-b.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Frailty variance in both arms.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Frailty variance in arm 0 (overrides --theta).
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Frailty variance in arm 1 (overrides --theta).
    #[arg(long)]
    pub theta1: Option<f64>,
    /// Cross-world frailty correlation.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Cohort size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exponential censoring rate; 0 disables censoring.
    #[arg(long)]
    pub censoring_rate: Option<f64>,
    /// Covariate law: binary-normal, binary-uniform or gaussian:DIM.
    #[arg(long, value_parser = parse_covariates)]
    pub covariates: Option<CovariateLaw>,
    /// Randomization probability for arm 1.
    #[arg(long)]
    pub treatment_p: Option<f64>,
    /// Share the exponential draws across the two worlds.
    #[arg(long)]
    pub common_randomness: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateFile {
    pub scenario: Option<String>,
    /// Custom per-arm Weibull hazards, used instead of a named scenario.
    pub hazards: Option<HazardSpecs>,
    pub theta: Option<f64>,
    pub theta0: Option<f64>,
    pub theta1: Option<f64>,
    pub rho: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub censoring_rate: Option<f64>,
    pub covariates: Option<CovariateLaw>,
    pub treatment: Option<TreatmentMechanism>,
    pub common_randomness: Option<bool>,
}

/// Fully resolved simulation settings, embedded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateConfig {
    pub scenario: Option<String>,
    pub cohort: CohortSpec,
}

pub fn resolve(args: &SimulateArgs) -> CliResult<SimulateConfig> {
    let f = load::<SimulateFile>(args.config.as_deref())?.file;
    let (name, hazards) = match (&args.scenario, f.hazards, f.scenario) {
        (Some(name), _, _) => (Some(name.clone()), scenario(name)?),
        (None, Some(_), Some(_)) => return Err(CliError::config("set either scenario or hazards, not both")),
        (None, Some(h), None) => (None, h),
        (None, None, name) => {
            let name = name.unwrap_or_else(|| "scenario-a".into());
            let h = scenario(&name)?;
            (Some(name), h)
        }
    };
    let theta = pick(args.theta, f.theta, 1.0);
    let theta0 = pick(args.theta0, f.theta0, theta);
    let theta1 = pick(args.theta1, f.theta1, theta);
    let rho = pick(args.rho, f.rho, 0.0);
    let treatment = match args.treatment_p {
        Some(p) => TreatmentMechanism::Randomized { p },
        None => f.treatment.unwrap_or(TreatmentMechanism::Randomized { p: 0.5 }),
    };
    let cohort = CohortSpec {
        n: pick(args.n, f.n, 10_000),
        covariates: pick(args.covariates.clone(), f.covariates, CovariateLaw::BinaryNormal),
        hazards,
        frailty: FrailtyConfig::new(theta0, theta1, rho)?,
        treatment,
        censoring_rate: pick(args.censoring_rate, f.censoring_rate, 0.0),
        common_randomness: args.common_randomness || f.common_randomness.unwrap_or(false),
        seed: pick(args.seed, f.seed, 1),
    };
    cohort.validate()?;
    Ok(SimulateConfig { scenario: name, cohort })
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let cfg = resolve(args)?;
    log::info!("simulating {} subjects (seed {})", cfg.cohort.n, cfg.cohort.seed);
    let cohort = simulate_cohort(&cfg.cohort)?;

    let mut out = Outputs::create(&args.out)?;
    let mut buf = Vec::new();
    write_observed(&mut buf, &cohort.records())?;
    out.bytes("observed.csv", &buf)?;
    buf.clear();
    write_potential(&mut buf, &cohort.subjects)?;
    out.bytes("potential.csv", &buf)?;
    let config = serde_json::to_value(&cfg).map_err(scr_core::Error::from)?;
    out.finish("simulate", &config, &[])?;
    say(&format!("simulated {} subjects into {}", cfg.cohort.n, args.out.display()));
    Ok(())
}
