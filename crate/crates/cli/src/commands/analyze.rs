use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use scr_core::analysis::{run_analysis, AnalysisConfig, AnalysisReport};
use scr_core::bounds::BoundAssumption;
use scr_core::design::MatchMode;
use scr_core::io::{bounds_rows, match_rows, read_observed, sensitivity_rows, smd_rows};
use scr_core::survfit::EmOptions;

use crate::config::{load, parse_assumption, parse_match_mode, pick, resolve_grid};
use crate::error::{CliError, CliResult};
use crate::output::{read_input, say, FileEntry, Outputs};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// TOML run file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Observed-data CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Analysis horizon r.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Number of equally spaced grid points in (0, r].
    #[arg(long, conflicts_with = "grid")]
    pub grid_count: Option<usize>,
    /// Explicit comma-separated grid times.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Comma-separated cross-world correlations for the sensitivity analysis.
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Frailty pairs per covariate row in the sensitivity analysis.
    #[arg(long)]
    pub mc_draws: Option<usize>,
    /// Frailty draws for the bound functionals; 0 integrates exactly.
    #[arg(long)]
    pub functional_draws: Option<usize>,
    /// Bootstrap replicates; 0 disables the bootstrap.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Frailty pairs per row inside each bootstrap replicate.
    #[arg(long)]
    pub bootstrap_mc_draws: Option<usize>,
    /// Caliper in standard deviations of the propensity score.
    #[arg(long)]
    pub caliper: Option<f64>,
    /// Matching distance: mahalanobis or propensity-only.
    #[arg(long, value_parser = parse_match_mode)]
    pub match_mode: Option<MatchMode>,
    /// Shorthand for --match-mode propensity-only.
    #[arg(long, conflicts_with = "match_mode")]
    pub ps_only: bool,
    /// Analyze the whole sample without propensity matching.
    #[arg(long)]
    pub skip_matching: bool,
    /// Hold each arm's frailty variance at its estimate inside the bootstrap.
    #[arg(long)]
    pub fast_bootstrap: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated bound assumptions to report: none, weak-orp, ios-orp.
    #[arg(long, value_delimiter = ',', value_parser = parse_assumption)]
    pub assumptions: Option<Vec<BoundAssumption>>,
    /// EM convergence tolerance.
    #[arg(long)]
    pub em_tol: Option<f64>,
    /// EM iteration limit.
    #[arg(long)]
    pub em_max_iter: Option<usize>,
    /// Print the resolved configuration as JSON and exit without analyzing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeFile {
    pub input: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub grid_count: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub mc_draws: Option<usize>,
    pub functional_draws: Option<usize>,
    pub bootstrap: Option<usize>,
    pub bootstrap_mc_draws: Option<usize>,
    pub caliper: Option<f64>,
    pub match_mode: Option<MatchMode>,
    pub skip_matching: Option<bool>,
    pub fast_bootstrap: Option<bool>,
    pub seed: Option<u64>,
    pub assumptions: Option<Vec<BoundAssumption>>,
    pub em_tol: Option<f64>,
    pub em_max_iter: Option<usize>,
}

/// Fully resolved analysis settings.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeConfig {
    pub input: PathBuf,
    pub assumptions: Vec<BoundAssumption>,
    pub analysis: AnalysisConfig,
}

/// The `report.json` document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub input: FileEntry,
    pub assumptions: Vec<BoundAssumption>,
    pub report: AnalysisReport,
}

pub fn resolve(args: &AnalyzeArgs) -> CliResult<AnalyzeConfig> {
    let loaded = load::<AnalyzeFile>(args.config.as_deref())?;
    let input = match (&args.input, &loaded.file.input) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => return Err(CliError::config("an input CSV is required (--input)")),
    };
    let f = loaded.file;
    let d = AnalysisConfig::default();
    let horizon = pick(args.horizon, f.horizon, d.horizon);
    let grid = resolve_grid(args.grid_count, args.grid.clone(), f.grid_count, f.grid, horizon)?;
    let match_mode = if args.ps_only { Some(MatchMode::PropensityOnly) } else { args.match_mode };
    let em =
        EmOptions { tol: pick(args.em_tol, f.em_tol, d.em.tol), max_iter: pick(args.em_max_iter, f.em_max_iter, d.em.max_iter), ..d.em };
    let analysis = AnalysisConfig {
        horizon,
        grid,
        rhos: pick(args.rho.clone(), f.rho, d.rhos),
        mc_draws: pick(args.mc_draws, f.mc_draws, d.mc_draws),
        functional_draws: pick(args.functional_draws, f.functional_draws, d.functional_draws),
        bootstrap: pick(args.bootstrap, f.bootstrap, d.bootstrap),
        bootstrap_mc_draws: pick(args.bootstrap_mc_draws, f.bootstrap_mc_draws, d.bootstrap_mc_draws),
        caliper: pick(args.caliper, f.caliper, d.caliper),
        match_mode: pick(match_mode, f.match_mode, d.match_mode),
        skip_matching: args.skip_matching || f.skip_matching.unwrap_or(d.skip_matching),
        fast_bootstrap: args.fast_bootstrap || f.fast_bootstrap.unwrap_or(d.fast_bootstrap),
        seed: pick(args.seed, f.seed, d.seed),
        em,
    };
    analysis.validate()?;
    let assumptions = pick(args.assumptions.clone(), f.assumptions, BoundAssumption::ALL.to_vec());
    if assumptions.is_empty() {
        return Err(CliError::config("at least one bound assumption is required"));
    }
    Ok(AnalyzeConfig { input, assumptions, analysis })
}

#[derive(Serialize)]
struct FunctionalRow {
    t: f64,
    ef1_0: f64,
    ef1_1: f64,
}

#[derive(Serialize)]
struct StratumRow {
    rho: f64,
    quantity: String,
    value: f64,
    mc_se: Option<f64>,
}

#[derive(Serialize)]
struct BootstrapRow<'a> {
    series: &'a str,
    index: usize,
    t: Option<f64>,
    point: Option<f64>,
    se: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
}

/// Drops bound variants the run did not ask for, along with their bootstrap
/// series.
fn keep_assumptions(report: &mut AnalysisReport, keep: &[BoundAssumption]) {
    if let Some(b) = report.bounds.as_mut() {
        b.bounds.retain(|x| keep.contains(&x.assumption));
    }
    if let Some(bs) = report.bootstrap.as_mut() {
        bs.series.retain(|s| match s.name.strip_prefix("bounds/") {
            Some(rest) => keep.iter().any(|a| rest.starts_with(&format!("{}/", a.label()))),
            None => true,
        });
    }
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let cfg = resolve(args)?;
    if args.dry_run {
        let text = serde_json::to_string_pretty(&cfg).map_err(scr_core::Error::from)?;
        say(&text);
        return Ok(());
    }
    let input = read_input(&cfg.input)?;
    let records = read_observed(&input.content[..])?;
    log::info!("analyzing {} records", records.len());
    let output = run_analysis(&records, &cfg.analysis)?;
    let mut report = output.report;
    keep_assumptions(&mut report, &cfg.assumptions);

    let mut out = Outputs::create(&args.out)?;
    let doc = RunReport { input: input.entry.clone(), assumptions: cfg.assumptions.clone(), report };
    out.json("report.json", &doc)?;
    let report = &doc.report;

    out.csv("smd.csv", &smd_rows(&report.smd))?;
    if let Some(m) = &output.matched {
        out.csv("matches.csv", &match_rows(m, &records))?;
    }
    if let Some(b) = &report.bounds {
        let f = &b.functionals;
        let rows: Vec<FunctionalRow> =
            f.grid.iter().enumerate().map(|(k, &t)| FunctionalRow { t, ef1_0: f.ef1[0][k], ef1_1: f.ef1[1][k] }).collect();
        out.csv("functionals.csv", &rows)?;
        out.csv("bounds.csv", &bounds_rows(b))?;
    }
    let blocks: Vec<_> = report.sensitivity.iter().filter_map(|b| b.report.as_ref()).collect();
    if !blocks.is_empty() {
        let rows: Vec<_> = blocks.iter().flat_map(|r| sensitivity_rows(r)).collect();
        out.csv("sensitivity.csv", &rows)?;
        let mut strata = Vec::new();
        for r in &blocks {
            for (name, e) in [("pi_ios", r.pi_ios), ("pi_as", r.pi_as), ("pi_ai", r.pi_ai)] {
                strata.push(StratumRow { rho: r.rho, quantity: name.into(), value: e.value, mc_se: e.mc_se });
            }
            for (k, e) in r.pt_probs.iter().enumerate() {
                strata.push(StratumRow { rho: r.rho, quantity: format!("pt{}", k + 1), value: e.value, mc_se: e.mc_se });
            }
        }
        out.csv("strata.csv", &strata)?;
    }
    if let Some(bs) = &report.bootstrap {
        let grid = &report.config.grid;
        let mut rows = Vec::new();
        for s in &bs.series {
            let on_grid = s.point.len() == grid.len();
            for (k, &point) in s.point.iter().enumerate() {
                rows.push(BootstrapRow {
                    series: &s.name,
                    index: k,
                    t: on_grid.then(|| grid[k]),
                    point,
                    se: s.se[k],
                    lower: s.lower[k],
                    upper: s.upper[k],
                });
            }
        }
        out.csv("bootstrap.csv", &rows)?;
    }

    let config = serde_json::to_value(&cfg).map_err(scr_core::Error::from)?;
    out.finish("analyze", &config, std::slice::from_ref(&input.entry))?;

    if !report.converged() {
        let arms: Vec<String> = report.convergence_failures.iter().map(|a| a.index().to_string()).collect();
        return Err(CliError::Unconverged(format!(
            "EM did not converge in arm {}; bounds, sensitivity and bootstrap were skipped",
            arms.join(" and ")
        )));
    }
    say(&format!("analysis written to {}", args.out.display()));
    Ok(())
}
