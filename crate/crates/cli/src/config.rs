//! TOML run files. Keys mirror the long flag names; a flag given on the
//! command line replaces the file value. Relative paths in a file are
//! resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use scr_core::analysis::default_grid;
use scr_core::bounds::BoundAssumption;
use scr_core::design::MatchMode;
use scr_core::simulate::CovariateLaw;

use crate::error::{CliError, CliResult};

pub const DEFAULT_GRID_COUNT: usize = 52;

/// A parsed run file plus the directory its relative paths refer to.
pub struct Loaded<T> {
    pub file: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<Loaded<T>> {
    let Some(path) = path else {
        return Ok(Loaded { file: T::default(), base: PathBuf::new() });
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let file = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { file, base })
}

/// Flag value if present, else file value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Resolves the evaluation grid from `--grid-count` or `--grid`, whichever
/// source (flags first, then file) specifies one.
pub fn resolve_grid(
    flag_count: Option<usize>,
    flag_list: Option<Vec<f64>>,
    file_count: Option<usize>,
    file_list: Option<Vec<f64>>,
    horizon: f64,
) -> CliResult<Vec<f64>> {
    if file_count.is_some() && file_list.is_some() {
        return Err(CliError::config("set either grid-count or grid, not both"));
    }
    let grid = match (flag_count, flag_list) {
        (Some(c), _) => default_grid(c, horizon),
        (None, Some(list)) => list,
        (None, None) => match (file_count, file_list) {
            (_, Some(list)) => list,
            (c, None) => default_grid(c.unwrap_or(DEFAULT_GRID_COUNT), horizon),
        },
    };
    Ok(grid)
}

pub fn parse_covariates(s: &str) -> Result<CovariateLaw, String> {
    match s {
        "binary-normal" => Ok(CovariateLaw::BinaryNormal),
        "binary-uniform" => Ok(CovariateLaw::BinaryUniform),
        _ => match s.strip_prefix("gaussian:") {
            Some(d) => d.parse().map(|dim| CovariateLaw::Gaussian { dim }).map_err(|_| format!("bad dimension in '{s}'")),
            None => Err(format!("unknown covariate law '{s}' (binary-normal, binary-uniform, gaussian:DIM)")),
        },
    }
}

pub fn parse_match_mode(s: &str) -> Result<MatchMode, String> {
    match s {
        "mahalanobis" => Ok(MatchMode::Mahalanobis),
        "propensity-only" => Ok(MatchMode::PropensityOnly),
        _ => Err(format!("unknown match mode '{s}' (mahalanobis, propensity-only)")),
    }
}

pub fn parse_assumption(s: &str) -> Result<BoundAssumption, String> {
    BoundAssumption::ALL.into_iter().find(|a| a.label() == s).ok_or_else(|| format!("unknown assumption '{s}' (none, weak-orp, ios-orp)"))
}
