//! Plot emission: aggregated plot-ready CSVs plus simple SVG line charts.
//! The CSV is the contract; the SVG is a convenience rendering.

use std::collections::BTreeSet;
use std::path::Path;

use crate::table::{fmt_g17, write_atomic, ResultsTable};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Convergence,
    Defer,
    Sweep,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "convergence" => Ok(PlotKind::Convergence),
            "defer" => Ok(PlotKind::Defer),
            "sweep" => Ok(PlotKind::Sweep),
            other => Err(CliError::Config(format!(
                "unknown plot kind '{other}' (convergence | defer | sweep)"
            ))),
        }
    }
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    band: Option<Vec<(f64, f64, f64)>>, // (x, lo, hi)
}

/// Writes `<kind>_plot.csv` and `<kind>.svg` into `out`. Errors on a results
/// table with no matching rows; no file is written in that case.
pub fn emit_plots(results: &ResultsTable, kind: PlotKind, out: &Path) -> Result<(), CliError> {
    match kind {
        PlotKind::Convergence => emit_convergence(results, out),
        PlotKind::Defer => emit_defer(results, out),
        PlotKind::Sweep => emit_sweep(results, out),
    }
}

fn emit_convergence(results: &ResultsTable, out: &Path) -> Result<(), CliError> {
    let estimators: Vec<String> = {
        let mut set = BTreeSet::new();
        for r in results.select(Some("simulate"), None, Some("mse_upper_mean")) {
            set.insert(r.estimator.clone());
        }
        set.into_iter().collect()
    };
    if estimators.is_empty() {
        return Err(CliError::Data(
            "no convergence rows (simulate / mse_upper_mean) in results".into(),
        ));
    }
    let mut csv = String::from("estimator,n,mse_upper_mean,mse_upper_se,mse_lower_mean,mse_lower_se\n");
    let mut series = Vec::new();
    for est in &estimators {
        let mut ns: Vec<u64> = results
            .select(Some("simulate"), Some(est), Some("mse_upper_mean"))
            .filter_map(|r| r.n)
            .collect();
        ns.sort_unstable();
        ns.dedup();
        let metric_at = |metric: &str, n: u64| -> f64 {
            results
                .select(Some("simulate"), Some(est), Some(metric))
                .find(|r| r.n == Some(n))
                .map_or(f64::NAN, |r| r.value)
        };
        let mut points = Vec::new();
        let mut band = Vec::new();
        for &n in &ns {
            let (mu, su) = (metric_at("mse_upper_mean", n), metric_at("mse_upper_se", n));
            let (ml, sl) = (metric_at("mse_lower_mean", n), metric_at("mse_lower_se", n));
            csv.push_str(&format!(
                "{est},{n},{},{},{},{}\n",
                fmt_g17(mu),
                fmt_g17(su),
                fmt_g17(ml),
                fmt_g17(sl)
            ));
            let x = (n as f64).log10();
            points.push((x, mu.max(1e-12).log10()));
            band.push((
                x,
                (mu - su).max(1e-12).log10(),
                (mu + su).max(1e-12).log10(),
            ));
        }
        series.push(Series {
            name: est.clone(),
            points,
            band: Some(band),
        });
    }
    write_atomic(&out.join("convergence_plot.csv"), csv.as_bytes())?;
    let svg = render_chart(
        &series,
        "log10 n",
        "log10 MSE (upper bound)",
        "MSE vs sample size",
    );
    write_atomic(&out.join("convergence.svg"), svg.as_bytes())
}

fn emit_defer(results: &ResultsTable, out: &Path) -> Result<(), CliError> {
    let mut ks: Vec<usize> = Vec::new();
    for r in results.select(Some("defer"), None, None) {
        if let Some(k) = r
            .metric
            .strip_prefix("error_rate_mean[")
            .and_then(|t| t.strip_suffix(']'))
        {
            ks.push(k.parse::<usize>().map_err(|e| CliError::Data(e.to_string()))?);
        }
    }
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(CliError::Data(
            "no deferral rows (defer / error_rate_mean[k]) in results".into(),
        ));
    }
    let value_of = |metric: &str| -> f64 {
        results
            .select(Some("defer"), None, Some(metric))
            .next()
            .map_or(f64::NAN, |r| r.value)
    };
    let mut csv = String::from("k,deferral_rate,error_rate_mean,error_rate_se\n");
    let mut points = Vec::new();
    let mut band = Vec::new();
    for &k in &ks {
        let rate = value_of(&format!("deferral_rate_mean[{k:02}]"));
        let err = value_of(&format!("error_rate_mean[{k:02}]"));
        let se = value_of(&format!("error_rate_se[{k:02}]"));
        csv.push_str(&format!(
            "{k},{},{},{}\n",
            fmt_g17(rate),
            fmt_g17(err),
            fmt_g17(se)
        ));
        if err.is_finite() {
            points.push((rate, err));
            band.push((rate, err - se, err + se));
        }
    }
    write_atomic(&out.join("defer_plot.csv"), csv.as_bytes())?;
    let svg = render_chart(
        &[Series {
            name: "blearner".into(),
            points,
            band: Some(band),
        }],
        "deferral rate",
        "error rate",
        "Recommendation error vs deferral",
    );
    write_atomic(&out.join("defer.svg"), svg.as_bytes())
}

fn emit_sweep(results: &ResultsTable, out: &Path) -> Result<(), CliError> {
    let mut rows: Vec<(f64, f64)> = results
        .select(Some("sweep"), None, Some("fraction_negative_lower"))
        .filter_map(|r| r.lambda.map(|l| (l.ln(), r.value)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if rows.is_empty() {
        return Err(CliError::Data(
            "no sweep rows (sweep / fraction_negative_lower) in results".into(),
        ));
    }
    let mut csv = String::from("log_lambda,fraction_negative_lower\n");
    for (ll, frac) in &rows {
        csv.push_str(&format!("{},{}\n", fmt_g17(*ll), fmt_g17(*frac)));
    }
    write_atomic(&out.join("sweep_plot.csv"), csv.as_bytes())?;
    let svg = render_chart(
        &[Series {
            name: "blearner".into(),
            points: rows,
            band: None,
        }],
        "log lambda",
        "fraction of negative lower bounds",
        "Lower-bound sign flips vs sensitivity level",
    );
    write_atomic(&out.join("sweep.svg"), svg.as_bytes())
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 20.0;
const MT: f64 = 36.0;
const MB: f64 = 48.0;

fn render_chart(series: &[Series], x_label: &str, y_label: &str, title: &str) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
        if let Some(band) = &s.band {
            for &(_, lo, hi) in band {
                if lo.is_finite() {
                    ys.push(lo);
                }
                if hi.is_finite() {
                    ys.push(hi);
                }
            }
        }
    }
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        H - MB,
        W - MR,
        H - MB
    ));
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{:.2}</text>\n",
            px(fx),
            H - MB + 16.0,
            fx
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.2}</text>\n",
            ML - 6.0,
            py(fy) + 3.0,
            fy
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\n",
        (ML + W - MR) / 2.0,
        H - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{y_label}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some(band) = &s.band {
            let mut d = String::new();
            for &(x, lo, _) in band.iter() {
                d.push_str(&format!("{:.1},{:.1} ", px(x), py(lo)));
            }
            for &(x, _, hi) in band.iter().rev() {
                d.push_str(&format!("{:.1},{:.1} ", px(x), py(hi)));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
                d.trim_end()
            ));
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            W - MR - 110.0,
            MT + 16.0 * (i as f64 + 1.0),
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_error_no_files() {
        let dir = std::env::temp_dir().join("blearner_plot_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let empty = ResultsTable::new();
        for kind in [PlotKind::Convergence, PlotKind::Defer, PlotKind::Sweep] {
            assert!(emit_plots(&empty, kind, &dir).is_err());
        }
        assert!(!dir.join("convergence_plot.csv").exists());
        assert!(!dir.join("sweep.svg").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sweep_plot_written() {
        let dir = std::env::temp_dir().join("blearner_plot_sweep");
        std::fs::create_dir_all(&dir).unwrap();
        let mut t = ResultsTable::new();
        for k in 1..=10 {
            let ll = k as f64 / 10.0;
            t.push("sweep", "blearner", Some(100), Some(ll.exp()), None,
                "fraction_negative_lower", 0.05 * k as f64);
        }
        emit_plots(&t, PlotKind::Sweep, &dir).unwrap();
        let csv = std::fs::read_to_string(dir.join("sweep_plot.csv")).unwrap();
        assert_eq!(csv.lines().count(), 11);
        let svg = std::fs::read_to_string(dir.join("sweep.svg")).unwrap();
        assert!(svg.contains("<polyline"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
