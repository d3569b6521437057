//! Grid sweep: one fit + evaluation per hyperparameter combination, with
//! per-point outputs and done-markers so an interrupted sweep can resume.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use causefs::dataset::DataMatrix;
use causefs::eval::{evaluate_selection, EvalConfig, MetricsReport};
use causefs::solver::{fit, HyperParams};

use crate::commands::{create_dir, eval_config, load, resolve_h, write_fit, write_metrics, METRICS_JSON};
use crate::{effective_seed, SweepArgs};

const DONE_MARKER: &str = "done";

#[derive(Debug, Clone, Copy, PartialEq)]
struct GridPoint {
    alpha: f64,
    beta: f64,
    lambda: f64,
    k: usize,
}

impl GridPoint {
    fn key(&self) -> String {
        format!("a{:e}_b{:e}_l{:e}_k{}", self.alpha, self.beta, self.lambda, self.k)
    }
}

#[derive(Serialize)]
struct ResultRow {
    alpha: f64,
    beta: f64,
    lambda: f64,
    k: usize,
    rho: usize,
    acc_mean: f64,
    acc_std: f64,
    nmi_mean: f64,
    nmi_std: f64,
}

#[derive(Serialize)]
struct FailureRow {
    alpha: f64,
    beta: f64,
    lambda: f64,
    k: usize,
    error: String,
}

fn run_point(
    point: GridPoint,
    dir: &Path,
    data: &DataMatrix,
    base: &HyperParams,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let marker = dir.join(DONE_MARKER);
    if marker.exists() {
        let text = fs::read_to_string(dir.join(METRICS_JSON))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let hyper = HyperParams {
        alpha: point.alpha,
        beta: point.beta,
        lambda: point.lambda,
        k: point.k,
        ..base.clone()
    };
    let fitted = fit(data, &hyper)?;
    write_fit(dir, data, &fitted)?;
    let report = evaluate_selection(data, &fitted.ranking, config)?;
    write_metrics(dir, &report)?;
    fs::write(&marker, "").with_context(|| format!("cannot write {}", marker.display()))?;
    Ok(report)
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let data = load(&args.data)?;
    if data.labels.is_none() {
        bail!("evaluation requires labels");
    }
    let seed = effective_seed(args.seed)?;
    let config = eval_config(&args.options, data.n_features(), seed)?;
    let base = HyperParams {
        epsilon: args.epsilon,
        max_outer: args.max_outer,
        outer_tol: args.outer_tol,
        variant: args.variant,
        seed,
        rho: config.rho_list.iter().copied().max().unwrap_or(1),
        ..HyperParams::new(resolve_h(args.h, &data)?)
    };

    let mut points = Vec::new();
    for &alpha in &args.alpha {
        for &beta in &args.beta {
            for &lambda in &args.lambda {
                for &k in &args.k {
                    points.push(GridPoint { alpha, beta, lambda, k });
                }
            }
        }
    }
    let point_root = args.out.join("points");
    create_dir(&point_root)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .context("cannot start worker threads")?;
    let outcomes: Vec<(GridPoint, PathBuf, Result<MetricsReport>)> = pool.install(|| {
        points
            .par_iter()
            .map(|&p| {
                let dir = point_root.join(p.key());
                let res = run_point(p, &dir, &data, &base, &config);
                (p, dir, res)
            })
            .collect()
    });

    let results_path = args.out.join("results.csv");
    let mut results = csv::Writer::from_path(&results_path).with_context(|| format!("cannot write {}", results_path.display()))?;
    let failures_path = args.out.join("failures.csv");
    let mut failures = csv::Writer::from_path(&failures_path).with_context(|| format!("cannot write {}", failures_path.display()))?;
    let mut failed = 0;
    for (p, dir, outcome) in &outcomes {
        match outcome {
            Ok(report) => {
                for row in &report.rows {
                    results.serialize(ResultRow {
                        alpha: p.alpha,
                        beta: p.beta,
                        lambda: p.lambda,
                        k: p.k,
                        rho: row.rho,
                        acc_mean: row.acc_mean,
                        acc_std: row.acc_std,
                        nmi_mean: row.nmi_mean,
                        nmi_std: row.nmi_std,
                    })?;
                }
            }
            Err(err) => {
                failed += 1;
                log::error!("grid point {} failed: {err:#}", dir.display());
                failures.serialize(FailureRow {
                    alpha: p.alpha,
                    beta: p.beta,
                    lambda: p.lambda,
                    k: p.k,
                    error: format!("{err:#}"),
                })?;
            }
        }
    }
    results.flush()?;
    failures.flush()?;
    if failed == outcomes.len() {
        bail!("all {failed} grid points failed");
    }
    Ok(())
}
