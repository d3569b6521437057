//! Downstream evaluation: k-means on the selected features, clustering
//! accuracy and NMI against labels, and causal-recovery scoring.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DataMatrix, GroundTruth};
use crate::error::{Error, Result};
use crate::regression::FeatureRanking;

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub restarts: usize,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|p| (points[(i, p)] - centers[(c, p)]).powi(2)).sum()
}

/// Distance-proportional seeding: the first center uniformly, each next one
/// with probability proportional to the squared distance to the nearest
/// chosen center.
fn seed_centers(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, p) = points.shape();
    let mut centers = DMatrix::zeros(k, p);
    let first = rng.random_range(0..n);
    centers.set_row(0, &points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.set_row(c, &points.row(pick));
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(sq_dist(points, i, &centers, c));
        }
    }
    centers
}

/// One Lloyd run from seeded centers. Returns the assignments and the inertia
/// after every assignment step.
pub fn lloyd(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let (n, p) = points.shape();
    let mut centers = seed_centers(points, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (best, dist) = (0..k)
                .map(|c| (c, sq_dist(points, i, &centers, c)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            inertia += dist;
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(k, p);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += points.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers.set_row(c, &(sums.row(c) / counts[c] as f64));
            }
        }
        // an emptied cluster takes over the point farthest from its center
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| (i, sq_dist(points, i, &centers, assignments[i])))
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                    .0;
                centers.set_row(c, &points.row(far));
                counts[c] = 1;
            }
        }
    }
    (assignments, history)
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Best-inertia k-means over `restarts` seeded runs on the rows of `points`
/// (`n × p`); ties go to the earlier restart.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<ClusteringResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k-means needs 1 <= K <= n = {n}, got {k}")));
    }
    let restarts = restarts.max(1);
    let mut best: Option<ClusteringResult> = None;
    for r in 0..restarts {
        let (assignments, history) = lloyd(points, k, &mut restart_rng(seed, r));
        let inertia = *history.last().expect("at least one assignment step");
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(ClusteringResult {
                assignments,
                inertia,
                restarts,
            });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<usize>>, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::NoSamples);
    }
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    Ok((table, kp, kt))
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; column 0 is a virtual start node
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=n {
                if !used[col] {
                    let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                    if reduced < min_to[col] {
                        min_to[col] = reduced;
                        way[col] = col0;
                    }
                    if min_to[col] < delta {
                        delta = min_to[col];
                        next = col;
                    }
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = next;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Clustering accuracy under the best one-to-one cluster-to-class matching.
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let size = kp.max(kt);
    let count = |i: usize, j: usize| if i < kp && j < kt { table[i][j] } else { 0 };
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| (0..size).map(|j| -(count(i, j) as f64)).collect())
        .collect();
    let matched: usize = min_cost_assignment(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| count(i, j))
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Normalization of the mutual information in [`nmi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNorm {
    /// `sqrt(H(pred)·H(truth))`.
    #[default]
    Geometric,
    /// `(H(pred) + H(truth)) / 2`.
    Arithmetic,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information. Two single-cluster partitions score 1;
/// otherwise a zero entropy scores 0.
pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let hp = entropy(table.iter().map(|row| row.iter().sum()), n);
    let ht = entropy((0..kt).map(|t| (0..kp).map(|p| table[p][t]).sum()), n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for row in &table {
        let np: usize = row.iter().sum();
        for (t, &c) in row.iter().enumerate() {
            if c > 0 {
                let nt: usize = (0..kp).map(|q| table[q][t]).sum();
                mi += c as f64 / n * (c as f64 * n / (np as f64 * nt as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Geometric => (hp * ht).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (hp + ht),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNorm::Geometric)
}

/// Fraction of the top-`top` ranked features that are causal.
pub fn causal_precision(ranking: &FeatureRanking, truth: &GroundTruth, top: usize) -> Result<f64> {
    let d = ranking.order.len();
    if top == 0 || top > d {
        return Err(Error::InvalidParameter(format!("top must lie in [1, {d}], got {top}")));
    }
    let hits = ranking.top(top).iter().filter(|f| truth.causal.contains(f)).count();
    Ok(hits as f64 / top as f64)
}

/// Features ranked by sample variance, largest first.
pub fn variance_baseline(data: &DataMatrix, rho: usize) -> Result<FeatureRanking> {
    let n = data.n_samples() as f64;
    let scores = data
        .values
        .row_iter()
        .map(|row| {
            let mean = row.sum() / n;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    FeatureRanking::from_scores(scores, rho)
}

/// Mean and standard deviation of ACC and NMI over the k-means runs at one
/// selection size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoMetrics {
    pub rho: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_clusters: usize,
    pub runs: usize,
    pub seed: u64,
    pub nmi_norm: NmiNorm,
    pub rows: Vec<RhoMetrics>,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Settings of the selection-quality protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub rho_list: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Number of clusters; the dataset's class count when `None`.
    pub n_clusters: Option<usize>,
    pub nmi_norm: NmiNorm,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rho_list: vec![20, 40, 60, 80, 100],
            runs: 50,
            seed: 0,
            n_clusters: None,
            nmi_norm: NmiNorm::Geometric,
        }
    }
}

/// For every `ρ`: keep the top-`ρ` features, run k-means `runs` times with
/// distinct seeds, and average ACC and NMI against the labels.
pub fn evaluate_selection(data: &DataMatrix, ranking: &FeatureRanking, config: &EvalConfig) -> Result<MetricsReport> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidData("evaluation requires labels".into()))?;
    let k = config
        .n_clusters
        .or(data.n_classes)
        .ok_or_else(|| Error::InvalidData("evaluation requires labels".into()))?;
    if ranking.order.len() != data.n_features() {
        return Err(Error::LengthMismatch(ranking.order.len(), data.n_features()));
    }
    let runs = config.runs.max(1);
    let mut rows = Vec::with_capacity(config.rho_list.len());
    for &rho in &config.rho_list {
        if rho == 0 || rho > data.n_features() {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [1, {}], got {rho}",
                data.n_features()
            )));
        }
        let points = data.values.select_rows(ranking.top(rho)).transpose();
        let mut accs = Vec::with_capacity(runs);
        let mut nmis = Vec::with_capacity(runs);
        for run in 0..runs {
            let seed = config.seed.wrapping_add(run as u64);
            let clusters = kmeans(&points, k, 1, seed)?;
            accs.push(acc(&clusters.assignments, labels)?);
            nmis.push(nmi_with(&clusters.assignments, labels, config.nmi_norm)?);
        }
        let (acc_mean, acc_std) = mean_std(&accs);
        let (nmi_mean, nmi_std) = mean_std(&nmis);
        rows.push(RhoMetrics {
            rho,
            acc_mean,
            acc_std,
            nmi_mean,
            nmi_std,
        });
    }
    Ok(MetricsReport {
        n_samples: data.n_samples(),
        n_features: data.n_features(),
        n_clusters: k,
        runs,
        seed: config.seed,
        nmi_norm: config.nmi_norm,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::random_matrix;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        permutations(k)
            .iter()
            .map(|perm| pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count())
            .max()
            .unwrap() as f64
            / pred.len() as f64
    }

    #[test]
    fn acc_hand_cases() {
        assert_eq!(acc(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(brute_force_acc(&[0, 0, 1, 1], &[0, 1, 0, 1], 2), 0.5);
        assert_eq!(acc(&[2, 2, 0, 1], &[0, 0, 1, 2]).unwrap(), 1.0);
        assert!(acc(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn acc_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(1..=5);
            let n = rng.random_range(1..30);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            assert_eq!(acc(&pred, &truth).unwrap(), brute_force_acc(&pred, &truth, k));
        }
    }

    #[test]
    fn acc_unequal_cluster_counts() {
        // three predicted clusters against two classes
        assert_eq!(acc(&[0, 1, 2, 2], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn nmi_hand_cases() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 0]).unwrap(), 0.0);
        // p = [0,0,1,1,1], t = [0,0,0,1,1]
        let p = [0, 0, 1, 1, 1];
        let t = [0, 0, 0, 1, 1];
        let h = -(0.4f64 * 0.4f64.ln() + 0.6 * 0.6f64.ln());
        let mi = 0.4 * (0.4f64 / 0.24).ln() + 0.2 * (0.2f64 / 0.36).ln() + 0.4 * (0.4f64 / 0.24).ln();
        assert!((nmi(&p, &t).unwrap() - mi / h).abs() < 1e-12);
        assert!((nmi_with(&p, &t, NmiNorm::Arithmetic).unwrap() - mi / h).abs() < 1e-12);
    }

    #[test]
    fn nmi_independent_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        assert!(nmi(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn kmeans_separated_clouds() {
        let noise = random_matrix(40, 2, 1) * 0.1;
        let points = DMatrix::from_fn(40, 2, |r, c| noise[(r, c)] + if r < 20 { 0.0 } else { 10.0 });
        let truth: Vec<usize> = (0..40).map(|r| usize::from(r >= 20)).collect();
        let res = kmeans(&points, 2, 5, 0).unwrap();
        assert_eq!(acc(&res.assignments, &truth).unwrap(), 1.0);
    }

    #[test]
    fn lloyd_inertia_is_monotone() {
        for seed in 0..20 {
            let points = random_matrix(60, 3, seed);
            let (_, history) = lloyd(&points, 4, &mut restart_rng(seed, 0));
            for w in history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_edge_cases() {
        let points = random_matrix(7, 2, 3);
        assert!(kmeans(&points, 7, 3, 1).unwrap().inertia.abs() < 1e-20);
        assert!(kmeans(&points, 8, 1, 1).is_err());
        let a = kmeans(&points, 3, 4, 11).unwrap();
        assert_eq!(a, kmeans(&points, 3, 4, 11).unwrap());
        // more restarts never hurt
        let mut prev = f64::INFINITY;
        for r in 1..10 {
            let res = kmeans(&points, 3, r, 5).unwrap();
            assert!(res.inertia <= prev);
            prev = res.inertia;
        }
    }

    #[test]
    fn causal_precision_cases() {
        let truth = GroundTruth {
            causal: vec![1, 3],
            spurious: vec![0],
            noise: vec![2],
        };
        let perfect = FeatureRanking::from_scores(vec![0.0, 5.0, 1.0, 4.0], 2).unwrap();
        assert_eq!(causal_precision(&perfect, &truth, 2).unwrap(), 1.0);
        assert_eq!(causal_precision(&perfect, &truth, 4).unwrap(), 0.5);
        assert!(causal_precision(&perfect, &truth, 5).is_err());
    }

    #[test]
    fn random_rankings_score_base_rate() {
        let truth = GroundTruth {
            causal: (0..10).collect(),
            spurious: vec![],
            noise: (10..100).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut total = 0.0;
        for _ in 0..1000 {
            let scores: Vec<f64> = (0..100).map(|_| rng.random()).collect();
            let r = FeatureRanking::from_scores(scores, 10).unwrap();
            total += causal_precision(&r, &truth, 10).unwrap();
        }
        assert!((total / 1000.0 - 0.1).abs() < 0.01);
    }

    #[test]
    fn variance_baseline_order() {
        let x = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.0, 3.0, 6.0, 0.0, 2.0, 4.0]);
        let data = DataMatrix::new(x, None, None).unwrap();
        assert_eq!(variance_baseline(&data, 2).unwrap().order, vec![1, 2, 0]);
        let mut x = random_matrix(4, 10, 2);
        x.row_mut(0).fill(1.0);
        let data = DataMatrix::new(x, None, None).unwrap();
        assert_eq!(*variance_baseline(&data, 2).unwrap().order.last().unwrap(), 0);
        let std = crate::dataset::standardize(&DataMatrix::new(random_matrix(5, 30, 4), None, None).unwrap()).data;
        let r = variance_baseline(&std, 2).unwrap();
        for s in &r.scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_needs_labels() {
        let data = DataMatrix::new(random_matrix(4, 10, 2), None, None).unwrap();
        let r = FeatureRanking::from_scores(vec![1.0; 4], 2).unwrap();
        let err = evaluate_selection(&data, &r, &EvalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("evaluation requires labels"));
    }

    #[test]
    fn evaluation_on_separable_data() {
        let noise = random_matrix(3, 40, 8) * 0.05;
        let x = DMatrix::from_fn(3, 40, |r, c| noise[(r, c)] + if r == 0 && c >= 20 { 5.0 } else { 0.0 });
        let labels: Vec<usize> = (0..40).map(|c| usize::from(c >= 20)).collect();
        let data = DataMatrix::new(x, None, Some(labels)).unwrap();
        let r = FeatureRanking::from_scores(vec![3.0, 2.0, 1.0], 1).unwrap();
        let config = EvalConfig {
            rho_list: vec![1, 2],
            runs: 10,
            ..EvalConfig::default()
        };
        let report = evaluate_selection(&data, &r, &config).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].acc_mean, 1.0);
        assert_eq!(report.rows[0].acc_std, 0.0);
        let dir = tempfile::tempdir().unwrap();
        report.write_csv(&dir.path().join("m.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(text.starts_with("rho,acc_mean,acc_std,nmi_mean,nmi_std\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
