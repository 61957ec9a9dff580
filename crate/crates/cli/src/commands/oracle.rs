use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use scr_core::bounds::BoundsReport;
use scr_core::io::{oracle_rows, read_potential};
use scr_core::oracle::{oracle_estimands, EstimandCurves, OracleReport};
use scr_core::sensitivity::{ScaleCurves, SensitivityReport};

use crate::commands::analyze::RunReport;
use crate::config::{load, pick, resolve_grid};
use crate::error::{CliError, CliResult};
use crate::output::{read_input, say, FileEntry, Outputs};

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// TOML run file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Potential-outcomes CSV written by `simulate`.
    #[arg(long)]
    pub potential: Option<PathBuf>,
    /// Horizon r; taken from the report in compare mode.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Number of equally spaced grid points in (0, r].
    #[arg(long, conflicts_with = "grid")]
    pub grid_count: Option<usize>,
    /// Explicit comma-separated grid times.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// An analysis `report.json` to compare against; its grid and horizon are used.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OracleFile {
    pub potential: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub grid_count: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub compare: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleConfig {
    pub potential: PathBuf,
    pub compare: Option<PathBuf>,
    pub horizon: f64,
    pub grid: Vec<f64>,
}

#[derive(Serialize)]
struct OracleDoc<'a> {
    input: &'a FileEntry,
    n_subjects: usize,
    oracle: &'a OracleReport,
}

#[derive(Debug, Serialize)]
struct StratumRow {
    quantity: String,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub rho: f64,
    pub estimand: &'static str,
    pub scale: &'static str,
    pub t: f64,
    pub estimate: Option<f64>,
    pub mc_se: Option<f64>,
    pub oracle: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub rho: f64,
    pub estimand: &'static str,
    pub scale: &'static str,
    /// `sup_t |estimate − oracle|` over grid points where both are defined.
    pub sup_gap: Option<f64>,
    pub t_at_sup: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub assumption: &'static str,
    pub scale: &'static str,
    pub t: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub oracle: Option<f64>,
    pub covered: Option<bool>,
}

const ESTIMANDS: [&str; 5] = ["fice", "sace", "aice", "total", "pt89"];

fn oracle_curves<'a>(o: &'a OracleReport, name: &str) -> &'a EstimandCurves {
    match name {
        "fice" => &o.fice,
        "sace" => &o.sace,
        "aice" => &o.aice,
        "total" => &o.total,
        _ => &o.effect_pt89,
    }
}

fn estimate_curves<'a>(s: &'a SensitivityReport, name: &str) -> &'a ScaleCurves {
    match name {
        "fice" => &s.fice,
        "sace" => &s.sace,
        "aice" => &s.aice,
        "total" => &s.total,
        _ => &s.effect_pt89,
    }
}

/// Side-by-side rows for every estimand, scale and grid time of one
/// sensitivity block.
pub fn compare_block(s: &SensitivityReport, o: &OracleReport) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for name in ESTIMANDS {
        let (est, ora) = (estimate_curves(s, name), oracle_curves(o, name));
        for (scale, e, v) in [("difference", &est.difference, &ora.difference), ("risk-ratio", &est.risk_ratio, &ora.risk_ratio)] {
            for (k, &t) in o.grid.iter().enumerate() {
                let estimate = e[k].map(|x| x.value);
                rows.push(ComparisonRow {
                    rho: s.rho,
                    estimand: name,
                    scale,
                    t,
                    estimate,
                    mc_se: e[k].and_then(|x| x.mc_se),
                    oracle: v[k],
                    gap: estimate.zip(v[k]).map(|(a, b)| a - b),
                });
            }
        }
    }
    rows
}

/// Largest absolute gap per (ρ, estimand, scale), in row order.
pub fn sup_gaps(rows: &[ComparisonRow]) -> Vec<GapRow> {
    let mut out: Vec<GapRow> = Vec::new();
    for r in rows {
        let fresh = out.last().is_none_or(|g| g.rho != r.rho || g.estimand != r.estimand || g.scale != r.scale);
        if fresh {
            out.push(GapRow { rho: r.rho, estimand: r.estimand, scale: r.scale, sup_gap: None, t_at_sup: None, points: 0 });
        }
        let g = out.last_mut().expect("pushed above");
        if let Some(gap) = r.gap {
            g.points += 1;
            if g.sup_gap.is_none_or(|s| gap.abs() > s) {
                g.sup_gap = Some(gap.abs());
                g.t_at_sup = Some(r.t);
            }
        }
    }
    out
}

/// Whether the oracle FICE lies inside each reported bound interval.
pub fn bound_coverage(b: &BoundsReport, o: &OracleReport) -> Vec<CoverageRow> {
    let mut rows = Vec::new();
    for a in &b.bounds {
        for (k, &t) in o.grid.iter().enumerate() {
            let iv = a.difference[k];
            let v = o.fice.difference[k];
            rows.push(CoverageRow {
                assumption: a.assumption.label(),
                scale: "difference",
                t,
                lower: Some(iv.lower),
                upper: Some(iv.upper),
                oracle: v,
                covered: v.map(|v| iv.contains(v, 1e-12)),
            });
        }
        for (k, &t) in o.grid.iter().enumerate() {
            let iv = a.risk_ratio[k];
            let v = o.fice.risk_ratio[k];
            let covered = v.map(|v| iv.lower.is_none_or(|l| v >= l - 1e-12) && iv.upper.is_none_or(|u| v <= u + 1e-12));
            rows.push(CoverageRow {
                assumption: a.assumption.label(),
                scale: "risk-ratio",
                t,
                lower: iv.lower,
                upper: iv.upper,
                oracle: v,
                covered,
            });
        }
    }
    rows
}

pub fn resolve(args: &OracleArgs) -> CliResult<(OracleConfig, Option<RunReport>, Option<FileEntry>)> {
    let loaded = load::<OracleFile>(args.config.as_deref())?;
    let potential = match (&args.potential, &loaded.file.potential) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => return Err(CliError::config("a potential-outcomes CSV is required (--potential)")),
    };
    let compare = args.compare.clone().or_else(|| loaded.file.compare.as_deref().map(|p| loaded.resolve(p)));
    let f = loaded.file;
    let (horizon, grid, report, entry) = match &compare {
        Some(path) => {
            let explicit = args.horizon.is_some() || args.grid_count.is_some() || args.grid.is_some();
            if explicit || f.horizon.is_some() || f.grid_count.is_some() || f.grid.is_some() {
                return Err(CliError::config("compare mode takes the horizon and grid from the report; do not set them"));
            }
            let input = read_input(path)?;
            let doc: RunReport = serde_json::from_slice(&input.content).map_err(scr_core::Error::from)?;
            let cfg = &doc.report.config;
            (cfg.horizon, cfg.grid.clone(), Some(doc), Some(input.entry))
        }
        None => {
            let horizon = pick(args.horizon, f.horizon, 1.0);
            let grid = resolve_grid(args.grid_count, args.grid.clone(), f.grid_count, f.grid, horizon)?;
            (horizon, grid, None, None)
        }
    };
    scr_core::oracle::validate_grid(&grid, horizon)?;
    Ok((OracleConfig { potential, compare, horizon, grid }, report, entry))
}

pub fn run(args: &OracleArgs) -> CliResult<()> {
    let (cfg, report, report_entry) = resolve(args)?;
    let input = read_input(&cfg.potential)?;
    let rows = read_potential(&input.content[..])?;
    let profiles: Vec<_> = rows.iter().map(|r| r.profile).collect();
    log::info!("oracle over {} subjects", profiles.len());
    let oracle = oracle_estimands(&profiles, None, &cfg.grid, cfg.horizon)?;

    let mut out = Outputs::create(&args.out)?;
    out.json("oracle.json", &OracleDoc { input: &input.entry, n_subjects: profiles.len(), oracle: &oracle })?;
    out.csv("oracle.csv", &oracle_rows(&oracle))?;
    let mut strata = vec![
        StratumRow { quantity: "pi_ios".into(), value: oracle.pi_ios },
        StratumRow { quantity: "pi_as".into(), value: oracle.pi_as },
        StratumRow { quantity: "pi_ai".into(), value: oracle.pi_ai },
    ];
    strata.extend(oracle.pt_probs.iter().enumerate().map(|(k, &v)| StratumRow { quantity: format!("pt{}", k + 1), value: v }));
    out.csv("strata.csv", &strata)?;

    let mut inputs = vec![input.entry];
    if let (Some(doc), Some(entry)) = (report, report_entry) {
        inputs.push(entry);
        let comparison: Vec<ComparisonRow> =
            doc.report.sensitivity.iter().filter_map(|b| b.report.as_ref()).flat_map(|s| compare_block(s, &oracle)).collect();
        let gaps = sup_gaps(&comparison);
        out.csv("comparison.csv", &comparison)?;
        out.csv("gaps.csv", &gaps)?;
        if let Some(b) = &doc.report.bounds {
            out.csv("bound_coverage.csv", &bound_coverage(b, &oracle))?;
        }
        for g in gaps.iter().filter(|g| g.scale == "difference") {
            if let Some(s) = g.sup_gap {
                say(&format!("rho={} {:<5} sup|gap| = {s:.4}", g.rho, g.estimand));
            }
        }
    }
    let config = serde_json::to_value(&cfg).map_err(scr_core::Error::from)?;
    out.finish("oracle", &config, &inputs)?;
    say(&format!("oracle written to {}", args.out.display()));
    Ok(())
}
