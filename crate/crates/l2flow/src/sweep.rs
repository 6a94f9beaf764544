//! Parameter sweeps over a config template.
//!
//! The grid file is a CSV whose header names dotted config keys
//! (`scenario.a0`, `engine.t_end`, `grid`, ...); each row is one run.

use std::path::Path;

use rayon::prelude::*;

use crate::config::{config_from_table, rebase};
use crate::runner::{run_scenario, ExitStatus, RunSummary};
use crate::snapshot::fmt_f64;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("grid file: {0}")]
    Csv(#[from] csv::Error),
    #[error("template: {0}")]
    Template(#[from] toml::de::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub keys: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_grid(text: &str) -> Result<Grid, SweepError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let keys = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(Grid { keys, rows })
}

pub fn parse_template(text: &str) -> Result<toml::Table, SweepError> {
    Ok(toml::from_str(text)?)
}

fn literal(v: &str) -> toml::Value {
    if let Ok(i) = v.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = v.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = v.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(v.to_string())
    }
}

/// The template with `key = value` substituted; dotted keys address tables.
pub fn substitute(template: &toml::Table, keys: &[String], values: &[String]) -> Result<toml::Table, String> {
    if keys.len() != values.len() {
        return Err(format!("row has {} values for {} keys", values.len(), keys.len()));
    }
    let mut t = template.clone();
    for (k, v) in keys.iter().zip(values) {
        let mut path: Vec<&str> = k.split('.').collect();
        let leaf = path.pop().unwrap_or_default();
        let mut table = &mut t;
        for p in path {
            table = table
                .entry(p)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| format!("`{p}` in `{k}` is not a table"))?;
        }
        // Integers stay floats where the template says so.
        let mut value = literal(v);
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(leaf), &value) {
            value = toml::Value::Float(*i as f64);
        }
        table.insert(leaf.to_string(), value);
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub values: Vec<String>,
    pub status: ExitStatus,
    pub detail: String,
    pub summary: Option<RunSummary>,
}

/// Run every grid row concurrently. Rows come back in input order; a failed
/// run is recorded in its row and never stops the others.
pub fn run_sweep(template: &toml::Table, grid: &Grid, config_path: Option<&Path>, out: Option<&Path>) -> Vec<SweepRow> {
    grid.rows
        .par_iter()
        .enumerate()
        .map(|(i, values)| {
            let row = |status, detail: String, summary| SweepRow {
                values: values.clone(),
                status,
                detail,
                summary,
            };
            let cfg = substitute(template, &grid.keys, values)
                .and_then(|t| config_from_table(t).map_err(|e| e.to_string()));
            let mut cfg = match cfg {
                Ok(c) => c,
                Err(e) => return row(ExitStatus::InvalidConfig, e, None),
            };
            if let Some(p) = config_path {
                rebase(&mut cfg, p);
            }
            let dir = out.map(|d| d.join(format!("run_{i:04}")));
            match run_scenario(&cfg, dir.as_deref()) {
                Ok(s) => {
                    let detail = s
                        .get("failure")
                        .map(String::from)
                        .or_else(|| s.violations.first().cloned())
                        .unwrap_or_default();
                    row(s.status, detail, Some(s))
                }
                Err(e) => row(ExitStatus::NumericalFailure, format!("io: {e}"), None),
            }
        })
        .collect()
}

pub const RESULT_COLUMNS: [&str; 13] = [
    "status",
    "exit_code",
    "termination",
    "t_final",
    "t_sing",
    "volume",
    "energy",
    "energy_a2",
    "scale_a",
    "diam_lower",
    "diam_upper",
    "max_riem",
    "detail",
];

/// The aggregated CSV: the grid columns followed by [`RESULT_COLUMNS`].
pub fn sweep_csv(grid: &Grid, rows: &[SweepRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = grid.keys.iter().map(String::as_str).chain(RESULT_COLUMNS).collect();
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.values.clone();
        rec.push(r.status.name().into());
        rec.push(r.status.code().to_string());
        match &r.summary {
            Some(s) => {
                let l = &s.last;
                rec.push(s.termination.clone());
                let a2 = l.energy * l.scale_a * l.scale_a;
                for v in [l.t, s.t_sing.unwrap_or(f64::NAN), l.volume, l.energy, a2, l.scale_a, l.diam_lower, l.diam_upper, l.max_riem] {
                    rec.push(fmt_f64(v));
                }
            }
            None => {
                rec.push("not_run".into());
                rec.extend(std::iter::repeat("nan".to_string()).take(9));
            }
        }
        rec.push(r.detail.clone());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_substitution() {
        let t = parse_template("grid = 32\n[scenario]\nkind = \"product_s2_s1\"\na0 = 1.0\n").unwrap();
        let s = substitute(&t, &["scenario.a0".into(), "seed".into()], &["4".into(), "7".into()]).unwrap();
        assert_eq!(s["scenario"]["a0"].as_float(), Some(4.0));
        assert_eq!(s["seed"].as_integer(), Some(7));
    }

    #[test]
    fn empty_grid_has_header_only() {
        let g = read_grid("scenario.a0\n").unwrap();
        assert!(g.rows.is_empty());
        let csv = sweep_csv(&g, &[]).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("scenario.a0,status,"));
    }
}
