use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use causefs::dataset::{load_dataset, standardize, synthesize, write_csv, DataMatrix, Format, SyntheticSpec};
use causefs::eval::{evaluate_selection, EvalConfig, MetricsReport};
use causefs::regression::FeatureRanking;
use causefs::solver::{fit as fit_model, FitOutput, HyperParams};

use crate::{effective_seed, DataArgs, EvalArgs, EvalOptions, FitArgs, ModelArgs, SynthArgs};

pub const RANKING_FILE: &str = "ranking.json";
pub const REPORT_FILE: &str = "fit_report.json";
pub const TRACE_FILE: &str = "objective_trace.csv";
pub const PARTITION_FILE: &str = "partition.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

fn infer_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("libsvm" | "svm" | "svmlight") => Format::Libsvm,
        _ => Format::Csv,
    }
}

pub fn load(args: &DataArgs) -> Result<DataMatrix> {
    let format = args.format.unwrap_or_else(|| infer_format(&args.data));
    let data = load_dataset(&args.data, format)?;
    if args.raw {
        return Ok(data);
    }
    let std = standardize(&data);
    if !std.constant_features.is_empty() {
        log::warn!("{} constant feature(s) set to zero", std.constant_features.len());
    }
    Ok(std.data)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))
}

pub fn resolve_h(h: Option<usize>, data: &DataMatrix) -> Result<usize> {
    match h.or(data.n_classes) {
        Some(h) => Ok(h),
        None => bail!("--h is required for unlabeled data"),
    }
}

pub fn hyper_params(model: &ModelArgs, data: &DataMatrix, seed: u64) -> Result<HyperParams> {
    Ok(HyperParams {
        alpha: model.alpha,
        beta: model.beta,
        lambda: model.lambda,
        k: model.k,
        rho: model.rho.min(data.n_features()),
        epsilon: model.epsilon,
        max_outer: model.max_outer,
        outer_tol: model.outer_tol,
        seed,
        variant: model.variant,
        freeze_partition: model.freeze_partition,
        ..HyperParams::new(resolve_h(model.h, data)?)
    })
}

/// Writes the ranking, partition, trace and report of a fit into `out`.
pub fn write_fit(out: &Path, data: &DataMatrix, fitted: &FitOutput) -> Result<()> {
    create_dir(out)?;
    let ranking_path = out.join(RANKING_FILE);
    fitted.ranking.write_json(&data.feature_ids, &ranking_path)?;
    let partition_path = out.join(PARTITION_FILE);
    fitted.state.partition.write_json(&data.feature_ids, &partition_path)?;

    let trace_path = out.join(TRACE_FILE);
    let mut trace = csv::Writer::from_path(&trace_path).with_context(|| format!("cannot write {}", trace_path.display()))?;
    trace.write_record(["iteration", "objective"])?;
    for (i, v) in fitted.state.objective_trace.iter().enumerate() {
        trace.write_record([(i + 1).to_string(), format!("{v:?}")])?;
    }
    trace.flush()?;

    let mut report = fitted.report.clone();
    report.ranking_path = Some(RANKING_FILE.into());
    report.partition_path = Some(PARTITION_FILE.into());
    let report_path = out.join(REPORT_FILE);
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let data = load(&args.data)?;
    let hyper = hyper_params(&args.model, &data, effective_seed(args.seed)?)?;
    let fitted = fit_model(&data, &hyper)?;
    write_fit(&args.out, &data, &fitted)?;
    log::info!(
        "ranked {} features in {} iterations; top {}: {:?}",
        data.n_features(),
        fitted.report.iterations,
        hyper.rho,
        fitted.ranking.selected()
    );
    Ok(())
}

/// Evaluation settings with selection sizes larger than `d` dropped.
pub fn eval_config(options: &EvalOptions, d: usize, seed: u64) -> Result<EvalConfig> {
    let rho_list: Vec<usize> = options.rho_list.iter().copied().filter(|&r| r >= 1 && r <= d).collect();
    if rho_list.len() < options.rho_list.len() {
        log::warn!("dropping selection sizes outside [1, {d}]");
    }
    if rho_list.is_empty() {
        bail!("no selection size in --rho-list fits {d} features");
    }
    Ok(EvalConfig {
        rho_list,
        runs: options.runs,
        seed,
        n_clusters: options.clusters,
        nmi_norm: options.nmi.into(),
    })
}

pub fn write_metrics(out: &Path, report: &MetricsReport) -> Result<()> {
    create_dir(out)?;
    report.write_json(&out.join(METRICS_JSON))?;
    report.write_csv(&out.join(METRICS_CSV))?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let data = load(&args.data)?;
    if data.labels.is_none() {
        bail!("evaluation requires labels");
    }
    let ranking = FeatureRanking::read_json(&args.ranking, 1)?;
    let config = eval_config(&args.options, data.n_features(), effective_seed(args.seed)?)?;
    let report = evaluate_selection(&data, &ranking, &config)?;
    write_metrics(&args.out, &report)?;
    for row in &report.rows {
        log::info!("rho {}: ACC {:.4} NMI {:.4}", row.rho, row.acc_mean, row.nmi_mean);
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n: args.n,
        n_clusters: args.clusters,
        n_causal: args.causal,
        n_spurious: args.spurious,
        n_noise: args.noise,
        confound_strength: args.confound_strength,
        noise_sigma: args.noise_sigma,
        seed: effective_seed(args.seed)?,
    };
    let (data, truth) = synthesize(&spec)?;
    create_dir(&args.out)?;
    write_csv(&data, &args.out.join("data.csv"))?;
    let truth_path = args.out.join("truth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")
        .with_context(|| format!("cannot write {}", truth_path.display()))?;
    Ok(())
}
