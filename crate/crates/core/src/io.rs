//! CSV ingestion and long-format plot-data emission.
//!
//! Observed data: `id, treat, y1, d1, y2, d2, x1..xp`. Potential outcomes:
//! `id, t1_0, t2_0, t1_1, t2_1, gamma0, gamma1`, where an empty time field
//! means the event never happens.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::bounds::BoundsReport;
use crate::design::{MatchedSet, SmdRow};
use crate::domain::{Arm, ObservedRecord, PotentialOutcomeProfile};
use crate::error::{Error, Result};
use crate::oracle::{EstimandCurves, OracleReport};
use crate::sensitivity::{ScaleCurves, SensitivityReport};
use crate::simulate::SimulatedSubject;

const OBSERVED_FIXED: [&str; 6] = ["id", "treat", "y1", "d1", "y2", "d2"];
const POTENTIAL_HEADER: [&str; 7] = ["id", "t1_0", "t2_0", "t1_1", "t2_1", "gamma0", "gamma1"];

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::validation(format!("line {line}: cannot parse {what} = {field:?}")))
}

fn parse_flag(field: &str, what: &str, line: u64) -> Result<bool> {
    match field.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::validation(format!("line {line}: {what} must be 0 or 1, got {other:?}"))),
    }
}

/// Reads observed records; every record is validated.
pub fn read_observed<R: Read>(reader: R) -> Result<Vec<ObservedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 6 || header.iter().take(6).ne(OBSERVED_FIXED) {
        return Err(Error::validation(format!("observed CSV header must start with {}", OBSERVED_FIXED.join(","))));
    }
    let p = header.len() - 6;
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k as u64 + 2;
        let treat = match row[1].trim() {
            "0" => Arm::Zero,
            "1" => Arm::One,
            other => return Err(Error::validation(format!("line {line}: treat must be 0 or 1, got {other:?}"))),
        };
        let covariates = (0..p).map(|j| parse_f64(&row[6 + j], &header[6 + j], line)).collect::<Result<Vec<_>>>()?;
        let rec = ObservedRecord {
            id: row[0].to_string(),
            treat,
            y1: parse_f64(&row[2], "y1", line)?,
            d1: parse_flag(&row[3], "d1", line)?,
            y2: parse_f64(&row[4], "y2", line)?,
            d2: parse_flag(&row[5], "d2", line)?,
            covariates,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_observed_csv(path: &Path) -> Result<Vec<ObservedRecord>> {
    read_observed(File::open(path)?)
}

pub fn write_observed<W: Write>(writer: W, records: &[ObservedRecord]) -> Result<()> {
    let p = records.first().map_or(0, |r| r.covariates.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = OBSERVED_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in records {
        if r.covariates.len() != p {
            return Err(Error::validation(format!("record {} has a different covariate dimension", r.id)));
        }
        let mut row = vec![
            r.id.clone(),
            r.treat.index().to_string(),
            r.y1.to_string(),
            (r.d1 as u8).to_string(),
            r.y2.to_string(),
            (r.d2 as u8).to_string(),
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observed_csv(path: &Path, records: &[ObservedRecord]) -> Result<()> {
    write_observed(File::create(path)?, records)
}

/// One potential-outcomes row.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialRow {
    pub id: String,
    pub profile: PotentialOutcomeProfile,
    pub gamma: Option<(f64, f64)>,
}

fn time_field(t: f64) -> String {
    if t.is_finite() {
        t.to_string()
    } else {
        String::new()
    }
}

fn parse_time(field: &str, what: &str, line: u64) -> Result<f64> {
    match field.trim() {
        "" | "inf" | "Inf" | "NA" => Ok(f64::INFINITY),
        s => parse_f64(s, what, line),
    }
}

pub fn write_potential<W: Write>(writer: W, subjects: &[SimulatedSubject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(POTENTIAL_HEADER)?;
    for s in subjects {
        let p = &s.profile;
        w.write_record([
            s.record.id.clone(),
            time_field(p.t1_0),
            time_field(p.t2_0),
            time_field(p.t1_1),
            time_field(p.t2_1),
            s.gamma.0.to_string(),
            s.gamma.1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_potential_csv(path: &Path, subjects: &[SimulatedSubject]) -> Result<()> {
    write_potential(File::create(path)?, subjects)
}

pub fn read_potential<R: Read>(reader: R) -> Result<Vec<PotentialRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 5 || header.iter().take(5).ne(POTENTIAL_HEADER[..5].iter().copied()) {
        return Err(Error::validation("potential-outcomes CSV header must start with id,t1_0,t2_0,t1_1,t2_1"));
    }
    let with_gamma = header.len() >= 7;
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k as u64 + 2;
        let profile = PotentialOutcomeProfile::new(
            parse_time(&row[1], "t1_0", line)?,
            parse_time(&row[2], "t2_0", line)?,
            parse_time(&row[3], "t1_1", line)?,
            parse_time(&row[4], "t2_1", line)?,
        )?;
        let gamma = if with_gamma { Some((parse_f64(&row[5], "gamma0", line)?, parse_f64(&row[6], "gamma1", line)?)) } else { None };
        out.push(PotentialRow { id: row[0].to_string(), profile, gamma });
    }
    Ok(out)
}

pub fn read_potential_csv(path: &Path) -> Result<Vec<PotentialRow>> {
    read_potential(File::open(path)?)
}

/// Writes serializable rows with a header.
pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(File::create(path)?, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub t: f64,
    pub estimand: String,
    pub scale: String,
    pub value: Option<f64>,
}

pub fn oracle_rows(report: &OracleReport) -> Vec<OracleRow> {
    let curves: [(&str, &EstimandCurves); 5] =
        [("fice", &report.fice), ("sace", &report.sace), ("aice", &report.aice), ("total", &report.total), ("pt89", &report.effect_pt89)];
    let mut rows = Vec::new();
    for (name, c) in curves {
        for (scale, vals) in [("difference", &c.difference), ("risk-ratio", &c.risk_ratio)] {
            for (t, v) in report.grid.iter().zip(vals) {
                rows.push(OracleRow { t: *t, estimand: name.to_string(), scale: scale.to_string(), value: *v });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsRow {
    pub t: f64,
    pub assumption: String,
    pub scale: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

pub fn bounds_rows(report: &BoundsReport) -> Vec<BoundsRow> {
    let grid = &report.functionals.grid;
    let mut rows = Vec::new();
    for b in &report.bounds {
        let label = b.assumption.label().to_string();
        for (t, iv) in grid.iter().zip(&b.difference) {
            rows.push(BoundsRow {
                t: *t,
                assumption: label.clone(),
                scale: "difference".into(),
                lower: Some(iv.lower),
                upper: Some(iv.upper),
            });
        }
        for (t, iv) in grid.iter().zip(&b.risk_ratio) {
            rows.push(BoundsRow { t: *t, assumption: label.clone(), scale: "risk-ratio".into(), lower: iv.lower, upper: iv.upper });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub rho: f64,
    pub t: f64,
    pub estimand: String,
    pub scale: String,
    pub value: Option<f64>,
    pub mc_se: Option<f64>,
}

pub fn sensitivity_rows(report: &SensitivityReport) -> Vec<SensitivityRow> {
    let curves: [(&str, &ScaleCurves); 5] =
        [("fice", &report.fice), ("sace", &report.sace), ("aice", &report.aice), ("total", &report.total), ("pt89", &report.effect_pt89)];
    let mut rows = Vec::new();
    for (name, c) in curves {
        for (scale, vals) in [("difference", &c.difference), ("risk-ratio", &c.risk_ratio)] {
            for (t, v) in report.grid.iter().zip(vals) {
                rows.push(SensitivityRow {
                    rho: report.rho,
                    t: *t,
                    estimand: name.to_string(),
                    scale: scale.to_string(),
                    value: v.map(|e| e.value),
                    mc_se: v.and_then(|e| e.mc_se),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRow {
    pub pair_id: usize,
    pub id0: String,
    pub id1: String,
    pub ps0: f64,
    pub ps1: f64,
    pub distance: f64,
}

pub fn match_rows(set: &MatchedSet, records: &[ObservedRecord]) -> Vec<MatchRow> {
    set.pairs
        .iter()
        .enumerate()
        .map(|(k, p)| MatchRow {
            pair_id: k + 1,
            id0: records[p.i0].id.clone(),
            id1: records[p.i1].id.clone(),
            ps0: p.ps0,
            ps1: p.ps1,
            distance: p.distance,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmdCsvRow {
    pub covariate: String,
    pub smd_before: f64,
    pub smd_after: Option<f64>,
}

pub fn smd_rows(table: &[SmdRow]) -> Vec<SmdCsvRow> {
    table.iter().map(|r| SmdCsvRow { covariate: format!("x{}", r.covariate + 1), smd_before: r.before, smd_after: r.after }).collect()
}
