//! Alternating minimization of the full objective: initialization, the
//! per-block updates, objective evaluation and the outer loop.
//!
//! Every block update is exact or a descent step for the current values of
//! the adaptive graph regularizers, which are stored with the graphs. Updates
//! that would raise the objective (a column whose new regularizer makes it
//! worse, a re-partition that does not pay off) are rejected, so the recorded
//! trace is non-increasing up to the inexactness of the inner solvers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::{assemble_qp, balance_matrix, solve_simplex_qp, MuTerms, SampleWeights};
use crate::dataset::{derive_treatment, DataMatrix, TreatmentDesign};
use crate::embedding::{gpi_solve, spectral_init, Embedding};
use crate::error::{Error, Result};
use crate::granularity::{causal_partition, compute_nu, initial_partition, GranularityPartition};
use crate::graphs::{
    accept_columns, g_costs, graph_cost, half_sq_distances, knn_graph, laplacian, projected_samples,
    s_costs, solve_graph, weighted_sum, Laplacian, SimilarityGraph,
};
use crate::regression::{rank_features, refresh_d, smoothed_l21, FeatureRanking, GranularBlock, SelectionMatrix, WProblem};

/// Relative slack allowed between consecutive objective values.
pub const DESCENT_SLACK: f64 = 1e-7;

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Graph learning only: no regression onto `F`, no balancing, `μ` fixed
    /// and `W` constrained to orthonormal columns.
    NoCausalRegression,
    /// One fixed k-NN graph on all features; no granularities.
    NoMultigranular,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoCausalRegression, Variant::NoMultigranular];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCausalRegression => "no_causal_regression",
            Variant::NoMultigranular => "no_multigranular",
        }
    }

    fn causal(self) -> bool {
        self != Variant::NoCausalRegression
    }

    fn multigranular(self) -> bool {
        self != Variant::NoMultigranular
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub k: usize,
    pub h: usize,
    pub rho: usize,
    pub epsilon: f64,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Keep the initial granularities and their weights for the whole fit.
    pub freeze_partition: bool,
    pub gpi_max_iter: usize,
    pub gpi_tol: f64,
    pub qp_max_iter: usize,
    pub qp_tol: f64,
}

impl HyperParams {
    pub fn new(h: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 1e7,
            lambda: 1.0,
            k: 5,
            h,
            rho: 20,
            epsilon: 1e-6,
            max_outer: 50,
            outer_tol: 1e-5,
            seed: 0,
            variant: Variant::Full,
            freeze_partition: false,
            gpi_max_iter: 100,
            gpi_tol: 1e-10,
            qp_max_iter: 300,
            qp_tol: 1e-10,
        }
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        if self.variant.causal() {
            positive("beta", self.beta)?;
        }
        if self.h == 0 || self.h > n.min(d) {
            return Err(Error::InvalidParameter(format!(
                "h must lie in [1, {}], got {}",
                n.min(d),
                self.h
            )));
        }
        if self.k == 0 || self.k + 2 > n {
            return Err(Error::InvalidParameter(format!("k must lie in [1, {}], got {}", n - 2, self.k)));
        }
        if self.rho == 0 || self.rho > d {
            return Err(Error::InvalidParameter(format!("rho must lie in [1, {d}], got {}", self.rho)));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
        }
        Ok(())
    }
}

/// Data-derived quantities that stay fixed during a fit.
#[derive(Debug, Clone)]
pub struct FitContext {
    pub x: DMatrix<f64>,
    pub design: TreatmentDesign,
    /// `Σ_r M_r`, so that the MMD sum is `μᵀBμ`.
    pub balance: DMatrix<f64>,
}

impl FitContext {
    pub fn new(data: &DataMatrix) -> Self {
        let design = derive_treatment(data);
        let balance = balance_matrix(&data.values, &design);
        Self {
            x: data.values.clone(),
            design,
            balance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub w: SelectionMatrix,
    pub f: Embedding,
    pub mu: SampleWeights,
    /// One graph per granularity, indexed like `partition.groups()`.
    pub s_list: Vec<SimilarityGraph>,
    pub g: SimilarityGraph,
    pub partition: GranularityPartition,
    pub iteration: usize,
    pub objective_trace: Vec<f64>,
}

impl ModelState {
    /// Every violated constraint, described; empty when the state is valid.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let orth = self.f.orthonormality_error();
        if orth > 1e-9 {
            out.push(format!("F is not orthonormal: {orth:e}"));
        }
        let mu = self.mu.simplex_violation();
        if mu > 1e-10 {
            out.push(format!("mu is off the simplex by {mu:e}"));
        }
        for (m, s) in self.s_list.iter().enumerate() {
            if let Some(msg) = s.check(1e-10) {
                out.push(format!("S[{m}]: {msg}"));
            }
        }
        if let Some(msg) = self.g.check(1e-10) {
            out.push(format!("G: {msg}"));
        }
        let nu: f64 = self.partition.nu.iter().sum();
        if (nu - 1.0).abs() > 1e-12 || self.partition.nu.iter().any(|v| *v < 0.0) {
            out.push(format!("nu sums to {nu}"));
        }
        if self.s_list.len() != self.partition.m {
            out.push(format!("{} graphs for {} granularities", self.s_list.len(), self.partition.m));
        }
        out
    }
}

/// Per-sample scale of the projected samples: `μ`, or ones when `μ` is not
/// part of the model.
fn sample_scale(state: &ModelState, hyper: &HyperParams) -> DVector<f64> {
    if hyper.variant.causal() {
        state.mu.0.clone()
    } else {
        DVector::from_element(state.mu.n(), 1.0)
    }
}

fn granularity_laplacians(state: &ModelState) -> Vec<Laplacian> {
    state.s_list.iter().map(laplacian).collect()
}

/// Graph whose Laplacian enters `Tr(FᵀLF)`.
fn embedding_graph<'a>(state: &'a ModelState, hyper: &HyperParams) -> &'a SimilarityGraph {
    if hyper.variant.multigranular() {
        &state.g
    } else {
        &state.s_list[0]
    }
}

pub fn initialize(data: &DataMatrix, hyper: &HyperParams) -> Result<ModelState> {
    let (d, n) = data.values.shape();
    hyper.validate(n, d)?;
    let fused = knn_graph(&data.values, hyper.k)?;
    let (partition, s_list, g) = if hyper.variant.multigranular() {
        let partition = initial_partition(data)?;
        let s_list = partition
            .groups()
            .iter()
            .map(|features| knn_graph(&data.values.select_rows(features), hyper.k))
            .collect::<Result<Vec<_>>>()?;
        (partition, s_list, fused)
    } else {
        (GranularityPartition::single(d), vec![fused.clone()], fused)
    };
    let f = spectral_init(&laplacian(&g), hyper.h)?;
    Ok(ModelState {
        w: SelectionMatrix::zeros(d, hyper.h),
        f,
        mu: SampleWeights::uniform(n),
        s_list,
        g,
        partition,
        iteration: 0,
        objective_trace: Vec::new(),
    })
}

/// The objective split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `α Σ_i ‖μ_i x_iᵀW − F_i‖²`.
    pub regression: f64,
    /// `Tr(FᵀLF)`.
    pub embedding: f64,
    /// `λ Σ_i sqrt(‖W_i‖² + ε)`.
    pub sparsity: f64,
    /// `Σ_m Σ_i [Σ_j ½‖p_i − p_j‖² S_ji + γ_{m,i}‖S_{·i}‖²]`.
    pub graph: f64,
    /// `−Σ_m ν_m⟨G, S⁽ᵐ⁾⟩ + Σ_i ξ_i‖G_{·i}‖²`.
    pub fusion: f64,
    /// `β Σ_r MMD_r`.
    pub balance: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.regression + self.embedding + self.sparsity + self.graph + self.fusion + self.balance
    }

    fn check_finite(&self) -> Result<()> {
        let named = [
            ("regression term", self.regression),
            ("embedding term", self.embedding),
            ("sparsity term", self.sparsity),
            ("graph term", self.graph),
            ("fusion term", self.fusion),
            ("balance term", self.balance),
        ];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite((*name).into())),
            None => Ok(()),
        }
    }
}

pub fn objective_terms(ctx: &FitContext, state: &ModelState, hyper: &HyperParams) -> Result<ObjectiveTerms> {
    let scale = sample_scale(state, hyper);
    let w = &state.w.w;
    let mut terms = ObjectiveTerms {
        regression: 0.0,
        embedding: 0.0,
        sparsity: hyper.lambda * smoothed_l21(w, hyper.epsilon),
        graph: 0.0,
        fusion: 0.0,
        balance: 0.0,
    };
    if hyper.variant.causal() {
        let mut pred = ctx.x.transpose() * w;
        for (i, mut row) in pred.row_iter_mut().enumerate() {
            row.scale_mut(scale[i]);
        }
        terms.regression = hyper.alpha * (pred - &state.f.0).norm_squared();
        let lap = laplacian(embedding_graph(state, hyper));
        terms.embedding = state.f.0.dot(&(&lap.0 * &state.f.0));
        terms.balance = hyper.beta * state.mu.0.dot(&(&ctx.balance * &state.mu.0));
    }
    if hyper.variant.multigranular() {
        for (features, s) in state.partition.groups().iter().zip(&state.s_list) {
            let projected = projected_samples(&ctx.x, w, &scale, features);
            terms.graph += graph_cost(s, &half_sq_distances(&projected));
        }
        let mixed = weighted_sum(&state.s_list, &state.partition.nu);
        let xi: f64 = state
            .g
            .s
            .column_iter()
            .zip(&state.g.reg)
            .map(|(col, r)| r * col.norm_squared())
            .sum();
        terms.fusion = xi - state.g.s.dot(&mixed);
    }
    terms.check_finite()?;
    Ok(terms)
}

pub fn objective_value(ctx: &FitContext, state: &ModelState, hyper: &HyperParams) -> Result<f64> {
    objective_terms(ctx, state, hyper).map(|t| t.total())
}

/// `W` step: one IRLS solve with the current diagonal, then a refresh of the
/// diagonal. The new `W` is kept unless it raises the `W`-dependent part of
/// the objective (only possible through round-off).
pub fn step_w(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams, unconditional: bool) -> Result<()> {
    let scale = sample_scale(state, hyper);
    let groups = state.partition.groups();
    let laps = granularity_laplacians(state);
    let blocks = if hyper.variant.multigranular() {
        groups
            .iter()
            .zip(&laps)
            .map(|(features, laplacian)| GranularBlock { features, laplacian })
            .collect()
    } else {
        Vec::new()
    };
    let problem = WProblem {
        x: &ctx.x,
        scale: &scale,
        f: hyper.variant.causal().then_some(&state.f.0),
        alpha: hyper.alpha,
        lambda: hyper.lambda,
        blocks,
    };
    let candidate = if hyper.variant.causal() {
        problem.solve(&state.w.d)?
    } else {
        problem.solve_orthogonal(&state.w.d, hyper.h)?
    };
    if candidate.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("W update".into()));
    }
    let accept = unconditional
        || problem.penalized_value(&candidate, hyper.epsilon) <= problem.penalized_value(&state.w.w, hyper.epsilon);
    if accept {
        state.w.w = candidate;
    }
    state.w = refresh_d(&state.w, hyper.epsilon);
    Ok(())
}

/// Granularity graph step, column by column.
pub fn step_s(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams, unconditional: bool) -> Result<()> {
    if !hyper.variant.multigranular() {
        return Ok(());
    }
    let scale = sample_scale(state, hyper);
    for (m, features) in state.partition.groups().iter().enumerate() {
        let projected = projected_samples(&ctx.x, &state.w.w, &scale, features);
        let costs = s_costs(&projected, &state.g.s, state.partition.nu[m]);
        let candidate = solve_graph(&costs, hyper.k)?;
        state.s_list[m] = if unconditional {
            candidate
        } else {
            accept_columns(&state.s_list[m], candidate, &costs).0
        };
    }
    Ok(())
}

/// Fused graph step, column by column.
pub fn step_g(_ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams, unconditional: bool) -> Result<()> {
    if !hyper.variant.multigranular() {
        return Ok(());
    }
    let mixed = weighted_sum(&state.s_list, &state.partition.nu);
    let embedding = hyper.variant.causal().then_some(&state.f.0);
    let costs = g_costs(embedding, &mixed);
    let candidate = solve_graph(&costs, hyper.k)?;
    state.g = if unconditional {
        candidate
    } else {
        accept_columns(&state.g, candidate, &costs).0
    };
    Ok(())
}

/// Embedding step: GPI on `Tr(FᵀLF) − 2αTr(FᵀX̃ᵀW)`, warm-started.
pub fn step_f(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams) -> Result<()> {
    if !hyper.variant.causal() {
        return Ok(());
    }
    let lap = laplacian(embedding_graph(state, hyper));
    let mut b = ctx.x.transpose() * &state.w.w;
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row.scale_mut(hyper.alpha * state.mu.0[i]);
    }
    let res = gpi_solve(&lap.0, &b, &state.f, hyper.gpi_max_iter, hyper.gpi_tol)?;
    state.f = res.embedding;
    Ok(())
}

/// Sample-weight step: the quadratic program on the simplex, warm-started.
pub fn step_mu(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams) -> Result<()> {
    if !hyper.variant.causal() {
        return Ok(());
    }
    let qp = assemble_qp(&mu_terms(ctx, state, hyper, &state.partition.groups(), &granularity_laplacians(state)));
    let sol = solve_simplex_qp(&qp, &state.mu, hyper.qp_max_iter, hyper.qp_tol)?;
    log::debug!(
        "mu step: {} iterations, value {:e} -> {:e}, kkt {:e}",
        sol.iterations,
        sol.initial_value,
        sol.value,
        sol.kkt_residual
    );
    state.mu = sol.mu;
    Ok(())
}

/// The `μ`-dependent terms of the current state.
pub fn mu_terms<'a>(
    ctx: &'a FitContext,
    state: &'a ModelState,
    hyper: &HyperParams,
    groups: &'a [Vec<usize>],
    laps: &'a [Laplacian],
) -> MuTerms<'a> {
    let blocks = if hyper.variant.multigranular() {
        groups
            .iter()
            .zip(laps)
            .map(|(features, laplacian)| GranularBlock { features, laplacian })
            .collect()
    } else {
        Vec::new()
    };
    MuTerms {
        x: &ctx.x,
        w: &state.w.w,
        f: Some(&state.f.0),
        alpha: hyper.alpha,
        blocks,
        beta: hyper.beta,
        balance: Some(&ctx.balance),
    }
}

/// Re-groups the features by their rows of `W` and recomputes `ν`. Graphs of
/// changed granularities are rebuilt by the closed-form `S` update. The
/// result replaces the current partition only if the objective does not
/// increase.
pub fn step_partition(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams, unconditional: bool) -> Result<bool> {
    if hyper.freeze_partition || !hyper.variant.multigranular() {
        return Ok(false);
    }
    let partition = compute_nu(&state.w, &causal_partition(&state.w)?);
    let mut candidate = state.clone();
    if !partition.same_groups(&state.partition) {
        let scale = sample_scale(state, hyper);
        candidate.s_list = partition
            .groups()
            .iter()
            .enumerate()
            .map(|(m, features)| {
                let projected = projected_samples(&ctx.x, &state.w.w, &scale, features);
                solve_graph(&s_costs(&projected, &state.g.s, partition.nu[m]), hyper.k)
            })
            .collect::<Result<Vec<_>>>()?;
    }
    candidate.partition = partition;
    let accept =
        unconditional || objective_value(ctx, &candidate, hyper)? <= objective_value(ctx, state, hyper)?;
    if accept {
        *state = candidate;
    }
    Ok(accept)
}

/// True iff `|last − prev| / max(|prev|, 1e-12) < tol`.
pub fn converged(trace: &[f64], tol: f64) -> bool {
    match trace {
        [.., prev, last] => (last - prev).abs() / prev.abs().max(1e-12) < tol,
        _ => false,
    }
}

/// Runs one outer iteration in the order W, D, S, G, F, μ, partition, ν.
pub fn outer_step(ctx: &FitContext, state: &mut ModelState, hyper: &HyperParams) -> Result<()> {
    let first = state.iteration == 0;
    step_w(ctx, state, hyper, first)?;
    step_s(ctx, state, hyper, first)?;
    step_g(ctx, state, hyper, first)?;
    step_f(ctx, state, hyper)?;
    step_mu(ctx, state, hyper)?;
    step_partition(ctx, state, hyper, first)?;
    state.iteration += 1;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub state: ModelState,
    pub ranking: FeatureRanking,
    pub report: FitReport,
}

/// Summary of a fit, written next to the ranking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub hyper: HyperParams,
    pub n_samples: usize,
    pub n_features: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub final_terms: ObjectiveTerms,
    pub n_granularities: usize,
    pub nu: Vec<f64>,
    pub mmd_uniform: f64,
    pub mmd_fitted: f64,
    pub degenerate_features: Vec<usize>,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_path: Option<String>,
}

/// Alternates the block updates until the relative objective change drops
/// below `outer_tol` or `max_outer` iterations have run, then ranks the
/// features by the row norms of the last `W`.
pub fn fit(data: &DataMatrix, hyper: &HyperParams) -> Result<FitOutput> {
    let start = Instant::now();
    let ctx = FitContext::new(data);
    if hyper.variant.causal() && !ctx.design.degenerate.is_empty() {
        log::info!(
            "{} constant feature(s) excluded from balancing: {:?}",
            ctx.design.degenerate.len(),
            ctx.design.degenerate
        );
    }
    let mut state = initialize(data, hyper)?;
    let mut converged_flag = false;
    while state.iteration < hyper.max_outer {
        outer_step(&ctx, &mut state, hyper)?;
        let value = objective_value(&ctx, &state, hyper)?;
        log::info!("iteration {}: objective {value:.12e}", state.iteration);
        if let Some(&prev) = state.objective_trace.last() {
            if value - prev > DESCENT_SLACK * prev.abs() {
                state.objective_trace.push(value);
                return Err(Error::DescentViolation {
                    iteration: state.iteration,
                    previous: prev,
                    current: value,
                    trace: state.objective_trace.clone(),
                });
            }
        }
        state.objective_trace.push(value);
        if converged(&state.objective_trace, hyper.outer_tol) {
            converged_flag = true;
            break;
        }
    }
    let ranking = rank_features(&state.w, hyper.rho)?;
    let final_terms = objective_terms(&ctx, &state, hyper)?;
    let mmd = |mu: &SampleWeights| mu.0.dot(&(&ctx.balance * &mu.0));
    let report = FitReport {
        hyper: hyper.clone(),
        n_samples: data.n_samples(),
        n_features: data.n_features(),
        iterations: state.iteration,
        converged: converged_flag,
        objective_trace: state.objective_trace.clone(),
        final_terms,
        n_granularities: state.partition.m,
        nu: state.partition.nu.clone(),
        mmd_uniform: mmd(&SampleWeights::uniform(data.n_samples())),
        mmd_fitted: mmd(&state.mu),
        degenerate_features: ctx.design.degenerate.iter().copied().collect(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        ranking_path: None,
        partition_path: None,
    };
    Ok(FitOutput { state, ranking, report })
}
