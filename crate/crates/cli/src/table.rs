//! Long-format results table with byte-stable CSV serialization.
//!
//! Columns: `experiment,estimator,n,lambda,rep,metric,value`. Floats are
//! written with 17 significant digits so write → read → write is an
//! identity, and files are written atomically (temp file + rename).

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// 17-significant-digit float formatting; round-trips any f64 exactly.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(text: &str) -> Result<f64, CliError> {
    match text {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|e| CliError::Data(format!("bad float '{other}': {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub experiment: String,
    pub estimator: String,
    pub n: Option<u64>,
    pub lambda: Option<f64>,
    pub rep: Option<u64>,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    rows: Vec<ResultsRow>,
}

pub const HEADER: &str = "experiment,estimator,n,lambda,rep,metric,value";

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        experiment: &str,
        estimator: &str,
        n: Option<u64>,
        lambda: Option<f64>,
        rep: Option<u64>,
        metric: &str,
        value: f64,
    ) {
        self.rows.push(ResultsRow {
            experiment: experiment.into(),
            estimator: estimator.into(),
            n,
            lambda,
            rep,
            metric: metric.into(),
            value,
        });
    }

    pub fn rows(&self) -> &[ResultsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
    }

    /// Rows matching, with `None` filters accepting anything.
    pub fn select<'a>(
        &'a self,
        experiment: Option<&'a str>,
        estimator: Option<&'a str>,
        metric: Option<&'a str>,
    ) -> impl Iterator<Item = &'a ResultsRow> {
        self.rows.iter().filter(move |r| {
            experiment.is_none_or(|e| r.experiment == e)
                && estimator.is_none_or(|e| r.estimator == e)
                && metric.is_none_or(|m| r.metric == m)
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.experiment);
            out.push(',');
            out.push_str(&r.estimator);
            out.push(',');
            if let Some(n) = r.n {
                out.push_str(&n.to_string());
            }
            out.push(',');
            if let Some(l) = r.lambda {
                out.push_str(&fmt_g17(l));
            }
            out.push(',');
            if let Some(rep) = r.rep {
                out.push_str(&rep.to_string());
            }
            out.push(',');
            out.push_str(&r.metric);
            out.push(',');
            out.push_str(&fmt_g17(r.value));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == HEADER => {}
            other => {
                return Err(CliError::Data(format!(
                    "results header mismatch: {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(CliError::Data(format!(
                    "row {}: expected 7 fields, got {}",
                    no + 2,
                    fields.len()
                )));
            }
            let parse_opt_u64 = |t: &str| -> Result<Option<u64>, CliError> {
                if t.is_empty() {
                    Ok(None)
                } else {
                    t.parse::<u64>()
                        .map(Some)
                        .map_err(|e| CliError::Data(format!("row {}: {e}", no + 2)))
                }
            };
            rows.push(ResultsRow {
                experiment: fields[0].into(),
                estimator: fields[1].into(),
                n: parse_opt_u64(fields[2])?,
                lambda: if fields[3].is_empty() {
                    None
                } else {
                    Some(parse_f64(fields[3])?)
                },
                rep: parse_opt_u64(fields[4])?,
                metric: fields[5].into(),
                value: parse_f64(fields[6])?,
            });
        }
        Ok(Self { rows })
    }

    /// Writes the table atomically: the file appears complete or not at all.
    pub fn write_atomic(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
