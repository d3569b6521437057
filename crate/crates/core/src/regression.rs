//! Feature selection matrix subproblem: reweighted least squares for the
//! row-sparse regression, IRLS weights and the final ranking.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::bottom_eigenvectors;
use crate::error::{Error, Result};
use crate::graphs::Laplacian;

/// Feature selection matrix `W` (`d × h`) with its IRLS diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl SelectionMatrix {
    /// `W = 0` with `D = I`.
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w: DMatrix::zeros(d, h),
            d: DVector::from_element(d, 1.0),
        }
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.w.row_iter().map(|r| r.norm()).collect()
    }
}

/// `D_i = 1 / (2·sqrt(‖W_i‖² + ε))`.
pub fn refresh_d(sel: &SelectionMatrix, epsilon: f64) -> SelectionMatrix {
    let d = DVector::from_iterator(
        sel.w.nrows(),
        sel.w.row_iter().map(|r| 0.5 / (r.norm_squared() + epsilon).sqrt()),
    );
    SelectionMatrix { w: sel.w.clone(), d }
}

/// Smoothed `ℓ2,1` norm `Σ_i sqrt(‖W_i‖² + ε)`.
pub fn smoothed_l21(w: &DMatrix<f64>, epsilon: f64) -> f64 {
    w.row_iter().map(|r| (r.norm_squared() + epsilon).sqrt()).sum()
}

/// One granularity's contribution to the `W` system: its feature indices and
/// the Laplacian of its similarity graph.
#[derive(Debug, Clone)]
pub struct GranularBlock<'a> {
    pub features: &'a [usize],
    pub laplacian: &'a Laplacian,
}

/// The quadratic `W` subproblem
/// `α‖X̃ᵀW − F‖² + λTr(WᵀDW) + Σ_m Tr(WᵀR X̃ L_m X̃ᵀ R W)`
/// with `X̃ = X·Diag(scale)`.
#[derive(Debug, Clone)]
pub struct WProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub scale: &'a DVector<f64>,
    /// `None` drops the regression term (the graph-only variant).
    pub f: Option<&'a DMatrix<f64>>,
    pub alpha: f64,
    pub lambda: f64,
    pub blocks: Vec<GranularBlock<'a>>,
}

impl WProblem<'_> {
    pub fn scaled_x(&self) -> DMatrix<f64> {
        let mut xt = self.x.clone();
        for (i, mut col) in xt.column_iter_mut().enumerate() {
            col.scale_mut(self.scale[i]);
        }
        xt
    }

    /// `Σ_m R X̃ L_m X̃ᵀ R`, assembled per granularity on its own rows.
    pub fn graph_matrix(&self, xt: &DMatrix<f64>) -> DMatrix<f64> {
        let d = xt.nrows();
        let mut out = DMatrix::zeros(d, d);
        for block in &self.blocks {
            if block.features.is_empty() {
                continue;
            }
            let rows = xt.select_rows(block.features);
            let part = &rows * &block.laplacian.0 * rows.transpose();
            for (a, &fa) in block.features.iter().enumerate() {
                for (b, &fb) in block.features.iter().enumerate() {
                    out[(fa, fb)] += part[(a, b)];
                }
            }
        }
        out
    }

    /// Left-hand side `αX̃X̃ᵀ + λD + Σ_m R X̃ L_m X̃ᵀ R`.
    pub fn system_matrix(&self, d_weights: &DVector<f64>) -> DMatrix<f64> {
        let xt = self.scaled_x();
        let mut lhs = self.graph_matrix(&xt);
        if self.f.is_some() {
            lhs += &xt * xt.transpose() * self.alpha;
        }
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += self.lambda * d_weights[i];
        }
        // symmetrize away round-off from the products
        (&lhs + lhs.transpose()) * 0.5
    }

    /// Right-hand side `αX̃F`.
    pub fn rhs(&self) -> DMatrix<f64> {
        match self.f {
            Some(f) => self.scaled_x() * f * self.alpha,
            None => DMatrix::zeros(self.x.nrows(), 0),
        }
    }

    /// Solves the stationarity system for `W` by Cholesky factorization.
    pub fn solve(&self, d_weights: &DVector<f64>) -> Result<DMatrix<f64>> {
        let lhs = self.system_matrix(d_weights);
        let rhs = self.rhs();
        let chol = Cholesky::new(lhs)
            .ok_or_else(|| Error::NotPositiveDefinite(format!("lambda = {}", self.lambda)))?;
        Ok(chol.solve(&rhs))
    }

    /// Graph-only variant: minimizes `Tr(Wᵀ(Σ_m R X L_m Xᵀ R + λD)W)` subject to
    /// `WᵀW = I`, which rules out the trivial `W = 0`.
    pub fn solve_orthogonal(&self, d_weights: &DVector<f64>, h: usize) -> Result<DMatrix<f64>> {
        bottom_eigenvectors(&self.system_matrix(d_weights), h)
    }

    /// Quadratic surrogate value at `w` for a fixed IRLS diagonal.
    pub fn surrogate_value(&self, w: &DMatrix<f64>, d_weights: &DVector<f64>) -> f64 {
        let xt = self.scaled_x();
        let mut value = 0.0;
        if let Some(f) = self.f {
            value += self.alpha * (xt.transpose() * w - f).norm_squared();
        }
        let dw = DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| d_weights[r] * w[(r, c)]);
        value += self.lambda * w.dot(&dw);
        let g = self.graph_matrix(&xt);
        value + w.dot(&(g * w))
    }

    /// Surrogate gradient `2(lhs·W − rhs)`.
    pub fn surrogate_gradient(&self, w: &DMatrix<f64>, d_weights: &DVector<f64>) -> DMatrix<f64> {
        let lhs = self.system_matrix(d_weights);
        let grad = lhs * w * 2.0;
        match self.f {
            Some(_) => grad - self.rhs() * 2.0,
            None => grad,
        }
    }

    /// The objective the IRLS steps descend: the surrogate with `λTr(WᵀDW)`
    /// replaced by `λ·Σ_i sqrt(‖W_i‖² + ε)`.
    pub fn penalized_value(&self, w: &DMatrix<f64>, epsilon: f64) -> f64 {
        let zero = DVector::zeros(w.nrows());
        self.surrogate_value(w, &zero) + self.lambda * smoothed_l21(w, epsilon)
    }
}

/// Features ordered by descending row norm of `W`, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
    pub rho: usize,
}

impl FeatureRanking {
    pub fn from_scores(scores: Vec<f64>, rho: usize) -> Result<Self> {
        let d = scores.len();
        if rho == 0 || rho > d {
            return Err(Error::InvalidParameter(format!("rho must lie in [1, {d}], got {rho}")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("feature scores".into()));
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(Self { scores, order, rho })
    }

    /// The top-`rho` feature indices.
    pub fn selected(&self) -> &[usize] {
        &self.order[..self.rho]
    }

    /// The top-`count` feature indices (clamped to `d`).
    pub fn top(&self, count: usize) -> &[usize] {
        &self.order[..count.min(self.order.len())]
    }

    pub fn to_records(&self, feature_ids: &[String]) -> Vec<RankingRecord> {
        self.order
            .iter()
            .enumerate()
            .map(|(pos, &f)| RankingRecord {
                feature_id: feature_ids[f].clone(),
                index: f,
                score: self.scores[f],
                rank: pos + 1,
            })
            .collect()
    }

    pub fn write_json(&self, feature_ids: &[String], path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_records(feature_ids))?;
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a ranking written by [`FeatureRanking::write_json`].
    pub fn read_json(path: &Path, rho: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let records: Vec<RankingRecord> = serde_json::from_str(&text)?;
        let d = records.len();
        let mut scores = vec![f64::NAN; d];
        for r in &records {
            if r.index >= d {
                return Err(Error::InvalidData(format!("ranking index {} >= {d}", r.index)));
            }
            scores[r.index] = r.score;
        }
        let ranking = Self::from_scores(scores, rho.min(d).max(1))?;
        let stored: Vec<usize> = {
            let mut recs = records.clone();
            recs.sort_by_key(|r| r.rank);
            recs.iter().map(|r| r.index).collect()
        };
        Ok(Self {
            order: stored,
            ..ranking
        })
    }
}

/// One entry of the exported ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub feature_id: String,
    pub index: usize,
    pub score: f64,
    pub rank: usize,
}

pub fn rank_features(sel: &SelectionMatrix, rho: usize) -> Result<FeatureRanking> {
    FeatureRanking::from_scores(sel.row_norms(), rho)
}
