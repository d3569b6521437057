//! Sparse adaptive similarity graphs.
//!
//! Every graph is stored column-wise: column `i` holds the neighbor weights of
//! sample `i` and lies on the probability simplex with a zero diagonal and at
//! most `k` positive entries. The per-column regularization weight that makes
//! the closed-form solution exactly `k`-sparse is kept next to the weights,
//! since the objective is evaluated with it.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};

/// Column-stochastic, `k`-sparse similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    /// `s[(j, i)]` is the weight of neighbor `j` in column `i`.
    pub s: DMatrix<f64>,
    pub k: usize,
    /// Per-column quadratic regularization weight (γ for granularity graphs,
    /// ξ for the fused graph).
    pub reg: Vec<f64>,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.s.ncols()
    }

    /// Largest violation of the simplex, zero-diagonal and sparsity constraints.
    /// Returns `None` when every column is valid within `tol`.
    pub fn check(&self, tol: f64) -> Option<String> {
        let n = self.n();
        for i in 0..n {
            let col = self.s.column(i);
            if col[i] != 0.0 {
                return Some(format!("column {i}: diagonal {}", col[i]));
            }
            if let Some(v) = col.iter().find(|v| **v < 0.0 || !v.is_finite()) {
                return Some(format!("column {i}: entry {v}"));
            }
            let sum = col.sum();
            if (sum - 1.0).abs() > tol {
                return Some(format!("column {i}: sum {sum}"));
            }
            let nnz = col.iter().filter(|v| **v > 0.0).count();
            if nnz > self.k {
                return Some(format!("column {i}: {nnz} nonzeros > k={}", self.k));
            }
        }
        None
    }

    /// Writes `i j value` triplets (0-based, row then column) for nonzeros.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        for i in 0..self.n() {
            for j in 0..self.n() {
                let v = self.s[(j, i)];
                if v != 0.0 {
                    writeln!(out, "{j} {i} {v:?}").map_err(io_err)?;
                }
            }
        }
        out.flush().map_err(io_err)
    }
}

/// Closed-form `k`-sparse simplex solution for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub weights: Vec<f64>,
    /// `(k·τ(k+1) − Σ_{p≤k} τ(p)) / 2`; zero in the fully tied case.
    pub reg: f64,
}

/// Minimizes `τ·s + reg·‖s‖²` over the simplex, with `reg` chosen so that the
/// minimizer has exactly the `k` smallest entries of `tau` in its support.
///
/// Entries set to `+∞` (the self index) never receive weight. Order statistics
/// break ties by ascending index. When the `k + 1` smallest values coincide,
/// the weights fall back to `1/k` on the first `k` of them.
pub fn simplex_sparse_solve(tau: &[f64], k: usize) -> Result<SparseColumn> {
    let finite = tau.iter().filter(|t| t.is_finite()).count();
    if k == 0 || k + 1 > finite {
        return Err(Error::InvalidParameter(format!(
            "k={k} needs k+1 <= {finite} finite distances"
        )));
    }
    if tau.iter().any(|t| t.is_nan() || *t == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("neighbor distances".into()));
    }
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]).then(a.cmp(&b)));

    let kth_next = tau[order[k]];
    let head_sum: f64 = order[..k].iter().map(|&j| tau[j]).sum();
    let denom = k as f64 * kth_next - head_sum;
    let scale = order[..=k].iter().map(|&j| tau[j].abs()).fold(0.0, f64::max);

    let mut weights = vec![0.0; tau.len()];
    if denom <= 4.0 * f64::EPSILON * k as f64 * scale {
        for &j in &order[..k] {
            weights[j] = 1.0 / k as f64;
        }
        return Ok(SparseColumn { weights, reg: 0.0 });
    }
    for &j in &order[..k] {
        weights[j] = ((kth_next - tau[j]) / denom).max(0.0);
    }
    Ok(SparseColumn {
        weights,
        reg: 0.5 * denom,
    })
}

/// Solves every column of a graph from a distance-like matrix.
/// `tau(i)` must return the column vector for sample `i`.
fn solve_columns<F>(n: usize, k: usize, mut tau: F) -> Result<SimilarityGraph>
where
    F: FnMut(usize) -> Vec<f64>,
{
    let mut s = DMatrix::zeros(n, n);
    let mut reg = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = tau(i);
        t[i] = f64::INFINITY;
        let col = simplex_sparse_solve(&t, k)?;
        s.set_column(i, &DVector::from_vec(col.weights));
        reg.push(col.reg);
    }
    Ok(SimilarityGraph { s, k, reg })
}

/// Half squared Euclidean distances between the columns of `points` (`p × n`).
pub fn half_sq_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    // Direct differences rather than the Gram expansion, so duplicate points
    // get an exact zero distance.
    let n = points.ncols();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let pi = points.column(i);
        for j in (i + 1)..n {
            let v = 0.5 * pi.iter().zip(points.column(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k + 2 > n {
        return Err(Error::InvalidParameter(format!(
            "k must lie in [1, n-2] = [1, {}], got {k}",
            n.saturating_sub(2)
        )));
    }
    Ok(())
}

/// `k`-nearest-neighbor simplex graph on the samples of `data`.
pub fn knn_init(data: &DataMatrix, k: usize) -> Result<SimilarityGraph> {
    knn_graph(&data.values, k)
}

/// `k`-nearest-neighbor simplex graph on the columns of `points`.
pub fn knn_graph(points: &DMatrix<f64>, k: usize) -> Result<SimilarityGraph> {
    let n = points.ncols();
    check_k(k, n)?;
    let dist = half_sq_distances(points);
    solve_columns(n, k, |i| dist.column(i).iter().copied().collect())
}

/// Rows `μ_i x_iᵀ R W` for the features in `features`: an `h × n` matrix with
/// one projected sample per column.
pub fn projected_samples(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sample_scale: &DVector<f64>,
    features: &[usize],
) -> DMatrix<f64> {
    let h = w.ncols();
    let n = x.ncols();
    let mut out = DMatrix::zeros(h, n);
    for &f in features {
        let wr = w.row(f);
        for i in 0..n {
            let xv = x[(f, i)];
            if xv != 0.0 {
                for c in 0..h {
                    out[(c, i)] += xv * wr[c];
                }
            }
        }
    }
    for i in 0..n {
        let m = sample_scale[i];
        out.column_mut(i).scale_mut(m);
    }
    out
}

/// Column costs of a granularity graph: `τ_ji = ½‖p_i − p_j‖² − ν G_ji` with
/// `p` the scaled projected samples of this granularity.
pub fn s_costs(projected: &DMatrix<f64>, fused: &DMatrix<f64>, nu: f64) -> DMatrix<f64> {
    half_sq_distances(projected) - fused * nu
}

/// Granularity graph update: the column-wise closed form on [`s_costs`].
pub fn update_s(
    projected: &DMatrix<f64>,
    fused: &SimilarityGraph,
    nu: f64,
    k: usize,
) -> Result<SimilarityGraph> {
    solve_graph(&s_costs(projected, &fused.s, nu), k)
}

/// Solves every column of a graph from its cost matrix (column `i` holds the
/// costs of sample `i`'s candidate neighbors; the diagonal is ignored).
pub fn solve_graph(costs: &DMatrix<f64>, k: usize) -> Result<SimilarityGraph> {
    let n = costs.ncols();
    check_k(k, n)?;
    solve_columns(n, k, |i| costs.column(i).iter().copied().collect())
}

/// `Σ_{j≠i} cost_ji s_ji + reg_i ‖s_i‖²`: the part of the objective owned by
/// column `i`.
pub fn column_cost(graph: &SimilarityGraph, costs: &DMatrix<f64>, i: usize) -> f64 {
    let col = graph.s.column(i);
    let linear: f64 = (0..col.len())
        .filter(|&j| j != i && col[j] != 0.0)
        .map(|j| costs[(j, i)] * col[j])
        .sum();
    linear + graph.reg[i] * col.norm_squared()
}

pub fn graph_cost(graph: &SimilarityGraph, costs: &DMatrix<f64>) -> f64 {
    (0..graph.n()).map(|i| column_cost(graph, costs, i)).sum()
}

/// Keeps each column of `candidate` (with its regularization weight) only if
/// it does not raise that column's cost; returns the merged graph and the
/// number of rejected columns.
pub fn accept_columns(
    current: &SimilarityGraph,
    candidate: SimilarityGraph,
    costs: &DMatrix<f64>,
) -> (SimilarityGraph, usize) {
    let mut merged = candidate;
    let mut rejected = 0;
    for i in 0..merged.n() {
        if column_cost(&merged, costs, i) > column_cost(current, costs, i) {
            merged.s.set_column(i, &current.s.column(i));
            merged.reg[i] = current.reg[i];
            rejected += 1;
        }
    }
    (merged, rejected)
}

/// `Σ_m ν_m S⁽ᵐ⁾`.
pub fn weighted_sum(graphs: &[SimilarityGraph], nu: &[f64]) -> DMatrix<f64> {
    let n = graphs[0].n();
    graphs
        .iter()
        .zip(nu)
        .fold(DMatrix::zeros(n, n), |acc, (g, &w)| acc + &g.s * w)
}

/// Column costs of the fused graph: `δ_ji = ½‖F_i − F_j‖² − S̄_ji`, where
/// `embedding` is `n × h` (`None` drops the embedding term).
pub fn g_costs(embedding: Option<&DMatrix<f64>>, mixed: &DMatrix<f64>) -> DMatrix<f64> {
    match embedding {
        Some(f) => half_sq_distances(&f.transpose()) - mixed,
        None => -mixed,
    }
}

/// Fused graph update: the column-wise closed form on [`g_costs`].
pub fn update_g(
    embedding: Option<&DMatrix<f64>>,
    mixed: &DMatrix<f64>,
    k: usize,
) -> Result<SimilarityGraph> {
    solve_graph(&g_costs(embedding, mixed), k)
}

/// Symmetric graph Laplacian `Diag(A·1) − A` of `A = (S + Sᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(pub DMatrix<f64>);

pub fn laplacian(graph: &SimilarityGraph) -> Laplacian {
    laplacian_of(&graph.s)
}

pub fn laplacian_of(s: &DMatrix<f64>) -> Laplacian {
    let a = (s + s.transpose()) * 0.5;
    let mut l = -&a;
    for i in 0..a.nrows() {
        l[(i, i)] += a.row(i).sum();
    }
    Laplacian(l)
}
