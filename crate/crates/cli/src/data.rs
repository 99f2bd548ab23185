//! Dataset CSV loading and per-row bound output.
//!
//! Input schema: UTF-8, comma-separated, `.` decimal, mandatory header row.
//! The treatment and outcome columns are named by the config; every other
//! column is taken as a covariate (ground-truth potential-outcome columns,
//! when named, are pulled out of the covariate set too). Treatment values
//! parse strictly as 0 or 1.

use std::path::Path;

use ndarray::Array2;

use blearner_core::domain::{BoundPair, Dataset};

use crate::table::{fmt_g17, parse_f64, write_atomic};
use crate::CliError;

pub struct CsvSchema<'a> {
    pub treatment_col: &'a str,
    pub outcome_col: &'a str,
    pub y0_col: Option<&'a str>,
    pub y1_col: Option<&'a str>,
}

/// Loads a dataset, returning it together with the covariate column names
/// (in covariate order).
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<(Dataset, Vec<String>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let col = |name: &str| -> Result<usize, CliError> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!(
                "missing column '{name}' (available: {})",
                headers.join(", ")
            ))
        })
    };
    let treat_idx = col(schema.treatment_col)?;
    let outcome_idx = col(schema.outcome_col)?;
    let y0_idx = schema.y0_col.map(col).transpose()?;
    let y1_idx = schema.y1_col.map(col).transpose()?;
    let special: Vec<usize> = [Some(treat_idx), Some(outcome_idx), y0_idx, y1_idx]
        .into_iter()
        .flatten()
        .collect();
    let covariate_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !special.contains(i))
        .collect();
    if covariate_idx.is_empty() {
        return Err(CliError::Data("no covariate columns left".into()));
    }

    let mut x_rows: Vec<f64> = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", row_no + 2)))?;
        let field = |i: usize| -> Result<f64, CliError> {
            parse_f64(record.get(i).unwrap_or("")).map_err(|e| {
                CliError::Data(format!("row {}, column '{}': {e}", row_no + 2, headers[i]))
            })
        };
        let t = record.get(treat_idx).unwrap_or("");
        match t {
            "0" => a.push(0u8),
            "1" => a.push(1u8),
            other => {
                return Err(CliError::Data(format!(
                    "row {}: treatment must be 0 or 1, got '{other}'",
                    row_no + 2
                )))
            }
        }
        y.push(field(outcome_idx)?);
        if let Some(i) = y0_idx {
            y0.push(field(i)?);
        }
        if let Some(i) = y1_idx {
            y1.push(field(i)?);
        }
        for &i in &covariate_idx {
            x_rows.push(field(i)?);
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    let d = covariate_idx.len();
    let x = Array2::from_shape_vec((n, d), x_rows)
        .map_err(|e| CliError::Data(format!("covariate shape: {e}")))?;
    let mut ds = Dataset::new(x, a, y);
    if let (Some(_), Some(_)) = (y0_idx, y1_idx) {
        ds = ds.with_potential_outcomes(y0, y1);
    }
    let names = covariate_idx
        .iter()
        .map(|&i| headers[i].clone())
        .collect();
    Ok((ds, names))
}

/// Loads a covariate-only query matrix with the given column order. Columns
/// not in `names` are ignored.
pub fn load_query(path: &Path, names: &[String]) -> Result<Array2<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut idx = Vec::with_capacity(names.len());
    for name in names {
        idx.push(headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!("query file missing covariate column '{name}'"))
        })?);
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", row_no + 2)))?;
        for &i in &idx {
            rows.push(parse_f64(record.get(i).unwrap_or("")).map_err(|e| {
                CliError::Data(format!("row {}, column '{}': {e}", row_no + 2, headers[i]))
            })?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    Array2::from_shape_vec((n, names.len()), rows)
        .map_err(|e| CliError::Data(format!("query shape: {e}")))
}

/// Writes per-row bounds: `row,tau_lower,tau_upper,lambda` plus a comment
/// header carrying the config hash.
pub fn write_bounds_csv(
    path: &Path,
    bounds: &[BoundPair],
    lambda: f64,
    config_hash: u64,
) -> Result<(), CliError> {
    let mut out = String::with_capacity(48 * (bounds.len() + 2));
    out.push_str(&format!("# config_hash={config_hash:016x}\n"));
    out.push_str("row,tau_lower,tau_upper,lambda\n");
    let lam = fmt_g17(lambda);
    for (i, b) in bounds.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{lam}\n",
            fmt_g17(b.lower),
            fmt_g17(b.upper)
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a bounds CSV back (comment lines skipped).
pub fn read_bounds_csv(path: &Path) -> Result<Vec<(u64, BoundPair, f64)>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("row,") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Data(format!("bad bounds row: {line}")));
        }
        rows.push((
            fields[0]
                .parse::<u64>()
                .map_err(|e| CliError::Data(e.to_string()))?,
            BoundPair {
                lower: parse_f64(fields[1])?,
                upper: parse_f64(fields[2])?,
            },
            parse_f64(fields[3])?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("blearner_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn loads_basic_csv() {
        let path = temp_file(
            "basic.csv",
            "x1,a,x2,y\n0.5,1,-1.0,2.5\n0.1,0,0.3,-0.5\n",
        );
        let (ds, names) = load_dataset(
            &path,
            &CsvSchema {
                treatment_col: "a",
                outcome_col: "y",
                y0_col: None,
                y1_col: None,
            },
        )
        .unwrap();
        assert_eq!(names, vec!["x1", "x2"]);
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.a, vec![1, 0]);
        assert_eq!(ds.x[[0, 1]], -1.0);
    }

    #[test]
    fn strict_treatment_parse() {
        let path = temp_file("badtreat.csv", "x,a,y\n0.5,2,1.0\n");
        let err = load_dataset(
            &path,
            &CsvSchema {
                treatment_col: "a",
                outcome_col: "y",
                y0_col: None,
                y1_col: None,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("treatment must be 0 or 1"));
        let path = temp_file("badtreat2.csv", "x,a,y\n0.5,1.0,1.0\n");
        assert!(load_dataset(
            &path,
            &CsvSchema {
                treatment_col: "a",
                outcome_col: "y",
                y0_col: None,
                y1_col: None,
            },
        )
        .is_err());
    }

    #[test]
    fn missing_column_named() {
        let path = temp_file("missing.csv", "x,y\n0.5,1.0\n");
        let err = load_dataset(
            &path,
            &CsvSchema {
                treatment_col: "treat",
                outcome_col: "y",
                y0_col: None,
                y1_col: None,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("missing column 'treat'"));
    }

    #[test]
    fn potential_outcomes_extracted() {
        let path = temp_file(
            "po.csv",
            "x,a,y,y0,y1\n0.5,1,2.0,1.0,2.0\n0.2,0,0.5,0.5,1.5\n",
        );
        let (ds, names) = load_dataset(
            &path,
            &CsvSchema {
                treatment_col: "a",
                outcome_col: "y",
                y0_col: Some("y0"),
                y1_col: Some("y1"),
            },
        )
        .unwrap();
        assert_eq!(names, vec!["x"]);
        assert_eq!(ds.y0.as_ref().unwrap(), &vec![1.0, 0.5]);
        blearner_core::validate_dataset(&ds, true).unwrap();
    }

    #[test]
    fn bounds_round_trip() {
        let dir = std::env::temp_dir().join("blearner_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bounds.csv");
        let bounds = vec![
            BoundPair { lower: 0.1, upper: 0.2 },
            BoundPair {
                lower: -1.0 / 3.0,
                upper: 2.775621302687420518,
            },
        ];
        write_bounds_csv(&path, &bounds, 2.0, 0xdead_beef).unwrap();
        let back = read_bounds_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].1.lower.to_bits(), bounds[1].lower.to_bits());
        assert_eq!(back[1].1.upper.to_bits(), bounds[1].upper.to_bits());
        assert_eq!(back[0].2, 2.0);
    }
}
