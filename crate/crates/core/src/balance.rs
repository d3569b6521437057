//! Confounder balancing: the linear-kernel MMD between treatment and control
//! groups of every feature, the quadratic program in the sample weights and
//! its solution on the probability simplex.

use nalgebra::{DMatrix, DVector};

use crate::dataset::TreatmentDesign;
use crate::error::{Error, Result};
use crate::regression::GranularBlock;

/// Global sample weights `μ` on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(pub DVector<f64>);

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    /// Largest of `|Σμ − 1|` and the most negative entry.
    pub fn simplex_violation(&self) -> f64 {
        let neg = self.0.iter().fold(0.0f64, |m, &v| m.max(-v));
        (self.0.sum() - 1.0).abs().max(neg)
    }
}

/// Linear-kernel MMD of feature `r`: the squared distance between the
/// group-size normalized, `μ`-weighted means of the remaining features over
/// the treated and control samples.
pub fn mmd_value(x: &DMatrix<f64>, design: &TreatmentDesign, mu: &SampleWeights, r: usize) -> Result<f64> {
    if design.degenerate.contains(&r) {
        return Err(Error::DegenerateFeature(r));
    }
    let (d, n) = x.shape();
    if mu.n() != n {
        return Err(Error::LengthMismatch(mu.n(), n));
    }
    let t = design.treated_count[r] as f64;
    let c = design.control_count[r] as f64;
    let mut total = 0.0;
    for q in (0..d).filter(|&q| q != r) {
        let (mut treated, mut control) = (0.0, 0.0);
        for i in 0..n {
            if design.is_treated(r, i) {
                treated += mu.0[i] * x[(q, i)];
            } else {
                control += mu.0[i] * x[(q, i)];
            }
        }
        total += (treated / t - control / c).powi(2);
    }
    Ok(total)
}

/// `Σ_r mmd_value(r)` over the non-degenerate features.
pub fn mmd_sum(x: &DMatrix<f64>, design: &TreatmentDesign, mu: &SampleWeights) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..x.nrows() {
        if !design.degenerate.contains(&r) {
            total += mmd_value(x, design, mu, r)?;
        }
    }
    Ok(total)
}

/// The matrix `M_r` with `μᵀM_rμ = mmd_value(r)`:
/// `M_r[i, j] = v_i v_j ⟨Z_i, Z_j⟩` with `v` the contrast of feature `r`.
pub fn mmd_feature_block(x: &DMatrix<f64>, design: &TreatmentDesign, r: usize) -> Result<DMatrix<f64>> {
    let v = design.contrast(r).ok_or(Error::DegenerateFeature(r))?;
    let n = x.ncols();
    let mut z = x.clone().remove_row(r);
    for (i, mut col) in z.column_iter_mut().enumerate() {
        col.scale_mut(v[i]);
    }
    let block = z.transpose() * z;
    debug_assert_eq!(block.nrows(), n);
    Ok(block)
}

/// `Σ_r M_r` over the non-degenerate features, computed without forming the
/// individual blocks: with `V` the stacked contrasts and `U = V ∘ X`,
/// `Σ_r M_r = (XᵀX) ∘ (VᵀV) − UᵀU`.
pub fn balance_matrix(x: &DMatrix<f64>, design: &TreatmentDesign) -> DMatrix<f64> {
    let (d, n) = x.shape();
    let mut v = DMatrix::zeros(d, n);
    for r in 0..d {
        if let Some(c) = design.contrast(r) {
            v.set_row(r, &nalgebra::RowDVector::from_vec(c));
        }
    }
    let u = v.component_mul(x);
    let gram = x.transpose() * x;
    let vv = v.transpose() * &v;
    let out = gram.component_mul(&vv) - u.transpose() * u;
    (&out + out.transpose()) * 0.5
}

/// `μᵀHμ + aᵀμ + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub a: DVector<f64>,
    pub constant: f64,
}

impl QpProblem {
    pub fn value(&self, mu: &DVector<f64>) -> f64 {
        mu.dot(&(&self.h * mu)) + self.a.dot(mu) + self.constant
    }

    pub fn gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.h * mu * 2.0 + &self.a
    }
}

/// Everything in the objective that depends on `μ`.
#[derive(Debug, Clone)]
pub struct MuTerms<'a> {
    pub x: &'a DMatrix<f64>,
    pub w: &'a DMatrix<f64>,
    /// Embedding `F` (`n × h`); `None` drops the regression term.
    pub f: Option<&'a DMatrix<f64>>,
    pub alpha: f64,
    /// Granularity graphs whose distance term uses `μ`-weighted samples.
    pub blocks: Vec<GranularBlock<'a>>,
    pub beta: f64,
    /// [`balance_matrix`] of the data; `None` drops the balancing term.
    pub balance: Option<&'a DMatrix<f64>>,
}

/// Collects the `μ`-dependent terms into one quadratic:
///
/// * regression `α Σ_i ‖μ_i x_iᵀW − F_i‖²` gives `α‖x_iᵀW‖²` on the diagonal,
///   `−2α x_iᵀW F_iᵀ` in `a` and `α‖F‖²` in the constant;
/// * the graph term of granularity `m` equals `μᵀ(L_m ∘ P_m)μ` with
///   `P_m = XᵀR_mWWᵀR_mX`;
/// * balancing adds `β Σ_r M_r`.
pub fn assemble_qp(terms: &MuTerms) -> QpProblem {
    let n = terms.x.ncols();
    let mut h = DMatrix::zeros(n, n);
    let mut a = DVector::zeros(n);
    let mut constant = 0.0;
    if let Some(f) = terms.f {
        let y = terms.x.transpose() * terms.w;
        for i in 0..n {
            h[(i, i)] += terms.alpha * y.row(i).norm_squared();
            a[i] = -2.0 * terms.alpha * y.row(i).dot(&f.row(i));
        }
        constant = terms.alpha * f.norm_squared();
    }
    for block in &terms.blocks {
        if block.features.is_empty() {
            continue;
        }
        let proj = terms.x.select_rows(block.features).transpose() * terms.w.select_rows(block.features);
        let p = &proj * proj.transpose();
        h += p.component_mul(&block.laplacian.0);
    }
    if let Some(m) = terms.balance {
        h += m * terms.beta;
    }
    let h = (&h + h.transpose()) * 0.5;
    QpProblem { h, a, constant }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Result of [`solve_simplex_qp`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub mu: SampleWeights,
    pub iterations: usize,
    pub initial_value: f64,
    pub value: f64,
    /// Largest violation of the KKT conditions: gradient spread over the
    /// support plus any inactive coordinate whose gradient is below the
    /// support level.
    pub kkt_residual: f64,
}

/// KKT residual of `μ` for the quadratic on the simplex.
pub fn kkt_residual(qp: &QpProblem, mu: &DVector<f64>) -> f64 {
    let g = qp.gradient(mu);
    let support: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 1e-12).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    let level = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
    let mut worst = 0.0f64;
    for i in 0..mu.len() {
        let gap = g[i] - level;
        worst = worst.max(if mu[i] > 1e-12 { gap.abs() } else { (-gap).max(0.0) });
    }
    worst
}

/// Projected gradient descent with step `1/L`, `L = ‖2H‖_∞`. Stops when the
/// relative objective change drops below `tol` or after `max_iter` steps.
pub fn solve_simplex_qp(qp: &QpProblem, mu0: &SampleWeights, max_iter: usize, tol: f64) -> Result<QpSolution> {
    let n = qp.h.nrows();
    if mu0.n() != n || qp.a.len() != n {
        return Err(Error::LengthMismatch(mu0.n(), n));
    }
    let lip = qp
        .h
        .row_iter()
        .map(|r| r.iter().map(|v| 2.0 * v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };

    let mut mu = mu0.0.clone();
    let initial_value = qp.value(&mu);
    if !initial_value.is_finite() {
        return Err(Error::NonFinite("sample weight objective".into()));
    }
    let mut value = initial_value;
    let mut iterations = 0;
    for _ in 0..max_iter {
        let next = project_simplex(&(&mu - qp.gradient(&mu) * step));
        let next_value = qp.value(&next);
        if !next_value.is_finite() {
            return Err(Error::NonFinite("sample weight objective".into()));
        }
        iterations += 1;
        if next_value > value {
            break;
        }
        let rel = (value - next_value) / value.abs().max(1e-12);
        mu = next;
        value = next_value;
        if rel < tol {
            break;
        }
    }
    let kkt = kkt_residual(qp, &mu);
    Ok(QpSolution {
        mu: SampleWeights(mu),
        iterations,
        initial_value,
        value,
        kkt_residual: kkt,
    })
}
