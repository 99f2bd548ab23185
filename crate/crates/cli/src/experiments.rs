//! Experiment drivers: convergence study, deferral curve, Λ sweep, and
//! estimation on user data.
//!
//! Every driver derives one seed per work unit (replication, grid point) and
//! assembles its rows in configuration order after the parallel section, so
//! a given config produces byte-identical results tables at any thread
//! count.

use std::path::Path;

use blearner_core::blearner::{
    fit_blearner, fit_oracle, fit_plugin, mse_against, BoundFunction,
};
use blearner_core::dgp::{self, ConfoundedConfig, SyntheticOracle};
use blearner_core::domain::{make_sensitivity, BoundPair, BoundSide, Dataset};
use blearner_core::exec;

use crate::config::RunConfig;
use crate::data::{load_dataset, load_query, CsvSchema};
use crate::table::ResultsTable;
use crate::CliError;

// seed stream tags
const TAG_TEST_SET: u64 = 0x7e57;
const TAG_SIM_REP: u64 = 1;
const TAG_DEFER_TRAIN: u64 = 5;
const TAG_DEFER_EVAL: u64 = 6;
const TAG_DEFER_SPLIT: u64 = 7;
const TAG_SWEEP_DATA: u64 = 8;
const TAG_SWEEP_FIT: u64 = 9;
const TAG_ESTIMATE: u64 = 12;

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Convergence study: for each replication and sample size, fit the
/// configured estimator variants and score squared error against the true
/// bounds on a fixed test draw.
pub fn run_simulate(cfg: &RunConfig) -> Result<ResultsTable, CliError> {
    let sim = &cfg.simulate;
    let lambda = cfg.model.resolve_lambda()?;
    let s = make_sensitivity(lambda)?;
    for est in &sim.estimators {
        if !["blearner", "oracle", "plugin"].contains(&est.as_str()) {
            return Err(CliError::Config(format!(
                "unknown estimator '{est}' (blearner | oracle | plugin)"
            )));
        }
    }
    if sim.n_grid.is_empty() || sim.reps == 0 || sim.test_size == 0 {
        return Err(CliError::Config(
            "simulate needs a nonempty n_grid, reps >= 1, test_size >= 1".into(),
        ));
    }
    let mut grid = sim.n_grid.clone();
    grid.sort_unstable();
    let n_max = *grid.last().unwrap() as usize;

    let test_seed = sim
        .test_seed
        .unwrap_or_else(|| exec::derive_seed(cfg.seed, TAG_TEST_SET));
    let test = dgp::sample_synthetic(sim.test_size as usize, test_seed);
    let truth_upper: Vec<f64> = (0..test.n())
        .map(|i| SyntheticOracle.true_bound(test.x.row(i), &s, BoundSide::Upper))
        .collect();
    let truth_lower: Vec<f64> = (0..test.n())
        .map(|i| SyntheticOracle.true_bound(test.x.row(i), &s, BoundSide::Lower))
        .collect();

    let model = cfg.model.clone();
    let estimators = sim.estimators.clone();
    let nested = sim.nested;
    let grid_ref = &grid;
    let test_ref = &test;
    let (tu, tl) = (&truth_upper, &truth_lower);

    type RepResult = Vec<Vec<(f64, f64)>>; // [n_idx][est_idx] -> (mse_up, mse_lo)
    let per_rep: Vec<Result<RepResult, CliError>> = exec::with_threads(cfg.threads, || {
        exec::par_map(sim.reps as usize, |rep| {
            let rep_seed = exec::derive_seed2(cfg.seed, TAG_SIM_REP, rep as u64);
            let full = if nested {
                Some(dgp::sample_synthetic(n_max, rep_seed))
            } else {
                None
            };
            let mut out: RepResult = Vec::with_capacity(grid_ref.len());
            for (n_idx, &n) in grid_ref.iter().enumerate() {
                let ds = match &full {
                    Some(full) => {
                        let rows: Vec<usize> = (0..n as usize).collect();
                        full.subset(&rows)
                    }
                    None => dgp::sample_synthetic(
                        n as usize,
                        exec::derive_seed(rep_seed, n_idx as u64),
                    ),
                };
                let mut row = Vec::with_capacity(estimators.len());
                for est in &estimators {
                    let fit_seed = exec::derive_seed2(rep_seed, 2, n_idx as u64);
                    let bounds: BoundFunction = match est.as_str() {
                        "blearner" => {
                            fit_blearner(&ds, &s, &model.blearner_config(fit_seed)?)?
                        }
                        "oracle" => fit_oracle(
                            &ds,
                            &s,
                            &SyntheticOracle,
                            &model.second_stage_spec()?,
                            exec::derive_seed(fit_seed, 1),
                        )?,
                        "plugin" => fit_plugin(
                            &ds,
                            &s,
                            &model.nuisance_spec()?,
                            exec::derive_seed(fit_seed, 2),
                        )?,
                        _ => unreachable!("validated above"),
                    };
                    row.push(mse_against(&bounds, test_ref.x.view(), tu, tl));
                }
                out.push(row);
            }
            Ok(out)
        })
    });

    let mut results: Vec<RepResult> = Vec::with_capacity(per_rep.len());
    for r in per_rep {
        results.push(r?);
    }

    let mut table = ResultsTable::new();
    for (est_idx, est) in sim.estimators.iter().enumerate() {
        for (n_idx, &n) in grid.iter().enumerate() {
            for (rep, rep_result) in results.iter().enumerate() {
                let (up, lo) = rep_result[n_idx][est_idx];
                table.push("simulate", est, Some(n), Some(lambda), Some(rep as u64), "mse_upper", up);
                table.push("simulate", est, Some(n), Some(lambda), Some(rep as u64), "mse_lower", lo);
            }
            let ups: Vec<f64> = results.iter().map(|r| r[n_idx][est_idx].0).collect();
            let los: Vec<f64> = results.iter().map(|r| r[n_idx][est_idx].1).collect();
            let (mu, su) = mean_and_se(&ups);
            let (ml, sl) = mean_and_se(&los);
            table.push("simulate", est, Some(n), Some(lambda), None, "mse_upper_mean", mu);
            table.push("simulate", est, Some(n), Some(lambda), None, "mse_upper_se", su);
            table.push("simulate", est, Some(n), Some(lambda), None, "mse_lower_mean", ml);
            table.push("simulate", est, Some(n), Some(lambda), None, "mse_lower_se", sl);
        }
    }
    Ok(table)
}

/// One deferral curve: points whose interval straddles zero are deferred
/// first (widest first), then the remaining points by interval width, so the
/// curve reaches 100% deferral. The error rate at a deferral level is the
/// share of kept points whose recommendation disagrees with the better arm.
pub fn deferral_curve(
    bounds: &[BoundPair],
    better_arm: &[bool],
    points: usize,
) -> Vec<(f64, f64)> {
    let m = bounds.len();
    assert_eq!(m, better_arm.len());
    assert!(points >= 2, "need at least the 0% and 100% deferral points");
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        let (si, sj) = (bounds[i].straddles_zero(), bounds[j].straddles_zero());
        sj.cmp(&si)
            .then(bounds[j].width().total_cmp(&bounds[i].width()))
            .then(i.cmp(&j))
    });
    // recommend treatment iff the interval sits above zero; control iff
    // below; a straddling interval that is still kept falls back to the
    // midpoint sign
    let errors: Vec<bool> = bounds
        .iter()
        .zip(better_arm)
        .map(|(b, &better)| {
            let rec = if b.lower > 0.0 {
                true
            } else if b.upper < 0.0 {
                false
            } else {
                b.midpoint() > 0.0
            };
            rec != better
        })
        .collect();
    (0..points)
        .map(|k| {
            let target = k as f64 / (points - 1) as f64;
            let deferred = ((target * m as f64).ceil() as usize).min(m);
            let kept = &order[deferred..];
            let rate = deferred as f64 / m as f64;
            let err = if kept.is_empty() {
                f64::NAN
            } else {
                kept.iter().filter(|&&i| errors[i]).count() as f64 / kept.len() as f64
            };
            (rate, err)
        })
        .collect()
}

fn confounded_cfg(log_lambda_star: f64, effect: f64, shift: f64) -> ConfoundedConfig {
    ConfoundedConfig {
        lambda_star: log_lambda_star.exp(),
        confounder_effect: effect,
        cate_shift: shift,
    }
}

/// Deferral experiment on hidden-confounder data (synthetic or CSV with
/// ground-truth potential outcomes).
pub fn run_defer(cfg: &RunConfig) -> Result<ResultsTable, CliError> {
    let defer = &cfg.defer;
    let lambda = cfg.model.resolve_lambda()?;
    let s = make_sensitivity(lambda)?;
    if defer.deferral_points < 2 || defer.reps == 0 {
        return Err(CliError::Config(
            "defer needs deferral_points >= 2 and reps >= 1".into(),
        ));
    }
    let csv_data = match defer.source.as_str() {
        "synthetic" => None,
        "csv" => {
            let path = defer.input_csv.as_ref().ok_or_else(|| {
                CliError::Config("defer.source = \"csv\" requires defer.input_csv".into())
            })?;
            let (y0, y1) = match (&defer.y0_col, &defer.y1_col) {
                (Some(y0), Some(y1)) => (y0.as_str(), y1.as_str()),
                _ => {
                    return Err(CliError::Config(
                        "deferral on csv data requires ground-truth columns y0_col and y1_col"
                            .into(),
                    ))
                }
            };
            let schema = CsvSchema {
                treatment_col: defer.treatment_col.as_deref().unwrap_or("a"),
                outcome_col: defer.outcome_col.as_deref().unwrap_or("y"),
                y0_col: Some(y0),
                y1_col: Some(y1),
            };
            let (ds, _) = load_dataset(Path::new(path), &schema)?;
            if !(defer.eval_fraction > 0.0 && defer.eval_fraction < 1.0) {
                return Err(CliError::Config("eval_fraction must be in (0,1)".into()));
            }
            Some(ds)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown defer source '{other}' (synthetic | csv)"
            )))
        }
    };

    let model = cfg.model.clone();
    let ccfg = confounded_cfg(defer.log_lambda_star, defer.confounder_effect, defer.cate_shift);
    let points = defer.deferral_points;
    let csv_ref = &csv_data;

    let per_rep: Vec<Result<Vec<(f64, f64)>, CliError>> = exec::with_threads(cfg.threads, || {
        exec::par_map(defer.reps as usize, |rep| {
            let (train, eval): (Dataset, Dataset) = match csv_ref {
                None => {
                    let train = dgp::sample_confounded(
                        defer.n as usize,
                        exec::derive_seed2(cfg.seed, TAG_DEFER_TRAIN, rep as u64),
                        &ccfg,
                    );
                    let eval = dgp::sample_confounded(
                        defer.n_eval as usize,
                        exec::derive_seed2(cfg.seed, TAG_DEFER_EVAL, rep as u64),
                        &ccfg,
                    );
                    (train.dataset, eval.dataset)
                }
                Some(ds) => {
                    // seeded shuffle split; each replication re-splits
                    use rand::seq::SliceRandom;
                    use rand::SeedableRng;
                    let mut order: Vec<usize> = (0..ds.n()).collect();
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(exec::derive_seed2(
                        cfg.seed,
                        TAG_DEFER_SPLIT,
                        rep as u64,
                    ));
                    order.shuffle(&mut rng);
                    let cut = ((defer.eval_fraction * ds.n() as f64).ceil() as usize)
                        .clamp(1, ds.n() - 1);
                    (ds.subset(&order[cut..]), ds.subset(&order[..cut]))
                }
            };
            let fit_seed = exec::derive_seed2(cfg.seed, 20, rep as u64);
            let bf = fit_blearner(&train, &s, &model.blearner_config(fit_seed)?)?;
            let bounds = bf.predict_batch(eval.x.view());
            let (y0, y1) = match (&eval.y0, &eval.y1) {
                (Some(y0), Some(y1)) => (y0, y1),
                _ => {
                    return Err(CliError::Data(
                        "deferral evaluation requires ground-truth potential outcomes".into(),
                    ))
                }
            };
            let better: Vec<bool> = y0.iter().zip(y1).map(|(a, b)| b > a).collect();
            Ok(deferral_curve(&bounds, &better, points))
        })
    });

    let mut curves = Vec::with_capacity(per_rep.len());
    for r in per_rep {
        curves.push(r?);
    }

    let mut table = ResultsTable::new();
    let n_out = match csv_data {
        Some(ref ds) => ds.n() as u64,
        None => defer.n,
    };
    for (rep, curve) in curves.iter().enumerate() {
        for (k, (rate, err)) in curve.iter().enumerate() {
            table.push("defer", "blearner", Some(n_out), Some(lambda), Some(rep as u64),
                &format!("deferral_rate[{k:02}]"), *rate);
            table.push("defer", "blearner", Some(n_out), Some(lambda), Some(rep as u64),
                &format!("error_rate[{k:02}]"), *err);
        }
    }
    for k in 0..points {
        let rates: Vec<f64> = curves.iter().map(|c| c[k].0).collect();
        let errs: Vec<f64> = curves.iter().map(|c| c[k].1).collect();
        let (rate_mean, _) = mean_and_se(&rates);
        let (err_mean, err_se) = mean_and_se(&errs);
        table.push("defer", "blearner", Some(n_out), Some(lambda), None,
            &format!("deferral_rate_mean[{k:02}]"), rate_mean);
        table.push("defer", "blearner", Some(n_out), Some(lambda), None,
            &format!("error_rate_mean[{k:02}]"), err_mean);
        table.push("defer", "blearner", Some(n_out), Some(lambda), None,
            &format!("error_rate_se[{k:02}]"), err_se);
    }
    Ok(table)
}

/// Λ-sweep: refit the bound function along the log Λ grid, recording the
/// fraction of rows with a nonpositive lower bound, plus the Λ=1 point
/// estimate. Returns the per-row bounds per grid point for histogram output.
pub fn run_sweep(cfg: &RunConfig) -> Result<(ResultsTable, Vec<(f64, Vec<BoundPair>)>), CliError> {
    let sweep = &cfg.sweep;
    if sweep.log_lambda_grid.is_empty() {
        return Err(CliError::Config("sweep needs a nonempty log_lambda_grid".into()));
    }
    let ds: Dataset = match sweep.source.as_str() {
        "synthetic" => {
            let ccfg = confounded_cfg(
                sweep.log_lambda_star,
                sweep.confounder_effect,
                sweep.cate_shift,
            );
            dgp::sample_confounded(
                sweep.n as usize,
                exec::derive_seed(cfg.seed, TAG_SWEEP_DATA),
                &ccfg,
            )
            .dataset
        }
        "csv" => {
            let path = sweep.input_csv.as_ref().ok_or_else(|| {
                CliError::Config("sweep.source = \"csv\" requires sweep.input_csv".into())
            })?;
            let schema = CsvSchema {
                treatment_col: sweep.treatment_col.as_deref().unwrap_or("a"),
                outcome_col: sweep.outcome_col.as_deref().unwrap_or("y"),
                y0_col: None,
                y1_col: None,
            };
            load_dataset(Path::new(path), &schema)?.0
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep source '{other}' (synthetic | csv)"
            )))
        }
    };
    let n = ds.n() as u64;
    let model = cfg.model.clone();
    let ds_ref = &ds;

    // grid fits plus the Lambda = 1 point estimate as the last work item
    let grid = sweep.log_lambda_grid.clone();
    let jobs: Vec<f64> = grid.iter().copied().chain(std::iter::once(0.0)).collect();
    let jobs_ref = &jobs;
    let fits: Vec<Result<Vec<BoundPair>, CliError>> = exec::with_threads(cfg.threads, || {
        exec::par_map(jobs_ref.len(), |idx| {
            let s = make_sensitivity(jobs_ref[idx].exp())?;
            let fit_seed = exec::derive_seed2(cfg.seed, TAG_SWEEP_FIT, idx as u64);
            let bf = fit_blearner(ds_ref, &s, &model.blearner_config(fit_seed)?)?;
            Ok(bf.predict_batch(ds_ref.x.view()))
        })
    });
    let mut all = Vec::with_capacity(fits.len());
    for f in fits {
        all.push(f?);
    }
    let point_estimates = all.pop().expect("point-estimate job present");

    let mut table = ResultsTable::new();
    let mut bounds_out = Vec::with_capacity(grid.len());
    for (idx, (&ll, bounds)) in grid.iter().zip(all).enumerate() {
        let lambda = ll.exp();
        let frac = bounds.iter().filter(|b| b.lower <= 0.0).count() as f64 / bounds.len() as f64;
        let _ = idx;
        table.push("sweep", "blearner", Some(n), Some(lambda), None, "fraction_negative_lower", frac);
        bounds_out.push((ll, bounds));
    }
    let frac_point = point_estimates.iter().filter(|b| b.lower <= 0.0).count() as f64
        / point_estimates.len() as f64;
    table.push("sweep", "blearner", Some(n), Some(1.0), None, "fraction_negative_point", frac_point);
    Ok((table, bounds_out))
}

/// Per-row bound estimation on user data.
pub fn run_estimate(cfg: &RunConfig) -> Result<(Vec<BoundPair>, f64), CliError> {
    let est = &cfg.estimate;
    let lambda = cfg.model.resolve_lambda()?;
    let s = make_sensitivity(lambda)?;
    let train_path = est
        .train_csv
        .as_ref()
        .ok_or_else(|| CliError::Config("estimate requires estimate.train_csv".into()))?;
    let schema = CsvSchema {
        treatment_col: &est.treatment_col,
        outcome_col: &est.outcome_col,
        y0_col: None,
        y1_col: None,
    };
    let (ds, names) = load_dataset(Path::new(train_path), &schema)?;
    let query = match &est.query_csv {
        Some(path) => load_query(Path::new(path), &names)?,
        None => ds.x.clone(),
    };
    let bounds = exec::with_threads(cfg.threads, || -> Result<Vec<BoundPair>, CliError> {
        let bf = fit_blearner(
            &ds,
            &s,
            &cfg.model
                .blearner_config(exec::derive_seed(cfg.seed, TAG_ESTIMATE))?,
        )?;
        Ok(bf.predict_batch(query.view()))
    })?;
    Ok((bounds, lambda))
}
