//! Hierarchical grouping of features into granularities.
//!
//! Features are merged bottom-up with average linkage; the number of groups is
//! the dendrogram cut that maximizes the Calinski-Harabasz criterion.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::regression::SelectionMatrix;

/// Upper bound of the searched group counts.
pub const MAX_GROUPS: usize = 10;

/// Assignment of every feature to one of `m` non-empty granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityPartition {
    pub assignments: Vec<usize>,
    pub m: usize,
    pub nu: Vec<f64>,
    /// True when the selected cut had no between-group dispersion.
    pub degenerate: bool,
}

impl GranularityPartition {
    /// A single granularity holding every feature.
    pub fn single(d: usize) -> Self {
        Self {
            assignments: vec![0; d],
            m: 1,
            nu: vec![1.0],
            degenerate: false,
        }
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.m];
        for (f, &g) in self.assignments.iter().enumerate() {
            groups[g].push(f);
        }
        groups
    }

    /// Same grouping, ignoring the labels given to groups.
    pub fn same_groups(&self, other: &Self) -> bool {
        self.m == other.m && self.groups() == other.groups()
    }

    pub fn with_uniform_nu(mut self) -> Self {
        self.nu = vec![1.0 / self.m as f64; self.m];
        self
    }

    pub fn write_json(&self, feature_ids: &[String], path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            feature_id: &'a str,
            granularity: usize,
        }
        let records: Vec<Record> = self
            .assignments
            .iter()
            .zip(feature_ids)
            .map(|(&g, id)| Record {
                feature_id: id,
                granularity: g,
            })
            .collect();
        let text = serde_json::to_string_pretty(&records)?;
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Merge history of an agglomerative clustering. Clusters are named by their
/// smallest member; each step merges `b` into `a` with `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

impl Dendrogram {
    /// Labels after stopping with `groups` clusters, numbered by smallest
    /// member.
    pub fn cut(&self, groups: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = i;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        for m in self.merges.iter().take(self.n.saturating_sub(groups)) {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
        let mut labels = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut root_label = vec![usize::MAX; self.n];
        for i in 0..self.n {
            let r = find(&mut parent, i);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            labels[i] = root_label[r];
        }
        labels
    }
}

/// Average-linkage agglomerative clustering on a symmetric distance matrix.
///
/// Each step merges the closest pair, ties broken by the smallest `(a, b)`.
/// Nearest-neighbor candidates are cached per cluster, so the typical cost is
/// quadratic in the number of points.
pub fn average_linkage(dist: &DMatrix<f64>) -> Dendrogram {
    let n = dist.nrows();
    let mut dm = dist.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    // nearest active neighbor with a larger index, ties by index
    let scan = |dm: &DMatrix<f64>, active: &[bool], i: usize| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in (i + 1)..n {
            if active[j] && dm[(i, j)] < best.1 {
                best = (j, dm[(i, j)]);
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nn_dist[i]) = scan(&dm, &active, i);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut a = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nn_dist[i] < best) {
                a = i;
                best = nn_dist[i];
            }
        }
        let b = nn[a];
        merges.push(Merge { a, b, distance: best });

        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (sa * dm[(a, k)] + sb * dm[(b, k)]) / (sa + sb);
                dm[(a, k)] = v;
                dm[(k, a)] = v;
            }
        }
        size[a] += size[b];
        active[b] = false;

        for k in 0..n {
            if !active[k] {
                continue;
            }
            if k == a || nn[k] == a || nn[k] == b {
                (nn[k], nn_dist[k]) = scan(&dm, &active, k);
            } else if k < a && dm[(k, a)] < nn_dist[k] {
                // ties keep the smaller index; a is only better if strictly closer
                // or equally close with a smaller index
                nn[k] = a;
                nn_dist[k] = dm[(k, a)];
            } else if k < a && dm[(k, a)] == nn_dist[k] && a < nn[k] {
                nn[k] = a;
            }
        }
    }
    Dendrogram { n, merges }
}

/// Calinski-Harabasz index of `labels` on the rows of `points`.
///
/// Returns `+∞` for zero within-group dispersion with positive between-group
/// dispersion, and `0` when both vanish.
pub fn calinski_harabasz(points: &DMatrix<f64>, labels: &[usize], groups: usize) -> f64 {
    let (n, p) = points.shape();
    if groups < 2 || groups >= n {
        return 0.0;
    }
    let overall = points.row_sum() / n as f64;
    let mut centroids = DMatrix::zeros(groups, p);
    let mut counts = vec![0usize; groups];
    for (i, &g) in labels.iter().enumerate() {
        let mut row = centroids.row_mut(g);
        row += points.row(i);
        counts[g] += 1;
    }
    for g in 0..groups {
        let mut row = centroids.row_mut(g);
        row /= counts[g].max(1) as f64;
    }
    let between: f64 = (0..groups)
        .map(|g| counts[g] as f64 * (centroids.row(g) - &overall).norm_squared())
        .sum();
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &g)| (points.row(i) - centroids.row(g)).norm_squared())
        .sum();
    if within <= 0.0 {
        return if between > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (between / (groups - 1) as f64) / (within / (n - groups) as f64)
}

/// Searched group counts `[2, min(MAX_GROUPS, d − 1)]`.
pub fn group_range(d: usize) -> std::ops::RangeInclusive<usize> {
    2..=MAX_GROUPS.min(d.saturating_sub(1))
}

/// Cuts the dendrogram of `dist` at every count in `range` and keeps the cut
/// with the largest CH index on `points` (ties go to the smaller count).
/// With an empty range every feature lands in one granularity.
pub fn select_partition(
    dist: &DMatrix<f64>,
    points: &DMatrix<f64>,
    range: std::ops::RangeInclusive<usize>,
) -> Result<GranularityPartition> {
    let d = dist.nrows();
    if d < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 features, got {d}")));
    }
    if range.is_empty() {
        return Ok(GranularityPartition::single(d));
    }
    let tree = average_linkage(dist);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for m in range {
        let labels = tree.cut(m);
        let ch = calinski_harabasz(points, &labels, m);
        if best.as_ref().is_none_or(|(b, _, _)| ch > *b) {
            best = Some((ch, m, labels));
        }
    }
    let (ch, m, assignments) = best.expect("non-empty range");
    Ok(GranularityPartition {
        assignments,
        m,
        nu: vec![1.0 / m as f64; m],
        degenerate: ch == 0.0,
    })
}

/// Euclidean distances between the rows of `points`.
pub fn row_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (points.row(i) - points.row(j)).norm();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Average-linkage clustering of the rows of `points` (`d × p`) with the
/// group count chosen by CH over `range`.
pub fn cluster_features(
    points: &DMatrix<f64>,
    range: std::ops::RangeInclusive<usize>,
) -> Result<GranularityPartition> {
    select_partition(&row_distances(points), points, range)
}

/// `1 − |Pearson correlation|` between feature rows; constant rows are at
/// distance 1 from everything else.
pub fn correlation_distances(data: &DataMatrix) -> DMatrix<f64> {
    let (d, n) = data.values.shape();
    let mut centered = data.values.clone();
    let mut norms = vec![0.0; d];
    for (r, mut row) in centered.row_iter_mut().enumerate() {
        let mean = row.sum() / n as f64;
        row.add_scalar_mut(-mean);
        norms[r] = row.norm();
    }
    let gram = &centered * centered.transpose();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else if norms[i] <= 1e-12 || norms[j] <= 1e-12 {
            1.0
        } else {
            (1.0 - (gram[(i, j)] / (norms[i] * norms[j])).abs()).max(0.0)
        }
    })
}

/// Initial granularities from feature correlations. The linkage runs on the
/// correlation distances; CH is measured on the rows of that distance matrix.
pub fn initial_partition(data: &DataMatrix) -> Result<GranularityPartition> {
    let dist = correlation_distances(data);
    select_partition(&dist, &dist, group_range(data.n_features()))
}

/// Granularities from the causal contributions: rows of `W` as points.
pub fn causal_partition(sel: &SelectionMatrix) -> Result<GranularityPartition> {
    cluster_features(&sel.w, group_range(sel.w.nrows()))
}

/// `ν_m = Σ_{i∈Δ_m} ‖W_i‖² / Σ_i ‖W_i‖²`, uniform when `W = 0`.
pub fn compute_nu(sel: &SelectionMatrix, partition: &GranularityPartition) -> GranularityPartition {
    let mut mass = vec![0.0; partition.m];
    for (row, &g) in sel.w.row_iter().zip(&partition.assignments) {
        mass[g] += row.norm_squared();
    }
    let total: f64 = mass.iter().sum();
    let nu = if total > 0.0 {
        mass.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / partition.m as f64; partition.m]
    };
    GranularityPartition {
        nu,
        ..partition.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::random_matrix;
    use nalgebra::DVector;

    /// O(d⁴) average linkage that recomputes every cluster distance from the
    /// original points.
    fn brute_force_linkage(points: &DMatrix<f64>) -> Vec<(usize, usize)> {
        let d = points.nrows();
        let mut clusters: Vec<Vec<usize>> = (0..d).map(|i| vec![i]).collect();
        let mut merges = Vec::new();
        while clusters.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in (a + 1)..clusters.len() {
                    let mut total = 0.0;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            total += (points.row(i) - points.row(j)).norm();
                        }
                    }
                    let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                    let key = (clusters[a][0], clusters[b][0]);
                    if avg < best.0 - 1e-12 || ((avg - best.0).abs() <= 1e-12 && key < (best.1, best.2)) {
                        best = (avg, key.0, key.1);
                    }
                }
            }
            let ia = clusters.iter().position(|c| c[0] == best.1).unwrap();
            let ib = clusters.iter().position(|c| c[0] == best.2).unwrap();
            let moved = clusters.remove(ib);
            let ia = if ib < ia { ia - 1 } else { ia };
            clusters[ia].extend(moved);
            clusters[ia].sort_unstable();
            clusters.sort_by_key(|c| c[0]);
            merges.push((best.1, best.2));
        }
        merges
    }

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn linkage_matches_brute_force() {
        for seed in 0..30 {
            let d = 3 + (seed as usize % 8);
            let pts = random_matrix(d, 3, seed);
            let tree = average_linkage(&row_distances(&pts));
            let got: Vec<(usize, usize)> = tree.merges.iter().map(|m| (m.a, m.b)).collect();
            assert_eq!(got, brute_force_linkage(&pts), "seed {seed}");
        }
    }

    #[test]
    fn separated_groups_are_recovered() {
        let pts = column(&[0.0, 0.0, 0.0, 50.0, 50.0, 0.0, 50.0]);
        let part = cluster_features(&pts, 2..=5).unwrap();
        assert_eq!(part.m, 2);
        assert_eq!(part.assignments, vec![0, 0, 0, 1, 1, 0, 1]);
    }

    #[test]
    fn ch_hand_example() {
        let pts = column(&[0.0, 0.1, 10.0, 10.1]);
        let ch = calinski_harabasz(&pts, &[0, 0, 1, 1], 2);
        // between = 4 · 5², within = 4 · 0.05²
        let expected = (100.0 / 1.0) / (0.01 / 2.0);
        assert!((ch - expected).abs() < 1e-6 * expected, "{ch}");
        let part = cluster_features(&pts, 2..=2).unwrap();
        assert_eq!(part.assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn selected_count_maximizes_ch() {
        for seed in 0..10 {
            let pts = random_matrix(12, 2, 50 + seed);
            let part = cluster_features(&pts, 2..=6).unwrap();
            let tree = average_linkage(&row_distances(&pts));
            let best = (2..=6)
                .map(|m| calinski_harabasz(&pts, &tree.cut(m), m))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(calinski_harabasz(&pts, &part.assignments, part.m), best);
            let mut seen = vec![false; part.m];
            for &g in &part.assignments {
                seen[g] = true;
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let sel = SelectionMatrix {
            w: DMatrix::from_element(5, 2, 0.3),
            d: DVector::zeros(5),
        };
        let part = causal_partition(&sel).unwrap();
        assert_eq!(part.m, 2);
        assert!(part.degenerate);
        assert_eq!(part.assignments, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn causal_partition_splits_norm_bands() {
        let jitter = random_matrix(20, 2, 4);
        let w = DMatrix::from_fn(20, 2, |r, c| {
            let base = if r % 2 == 0 { 5.0 } else { 0.1 };
            base + 0.05 * jitter[(r, c)]
        });
        let part = causal_partition(&SelectionMatrix { w, d: DVector::zeros(20) }).unwrap();
        assert_eq!(part.m, 2);
        for r in 0..20 {
            assert_eq!(part.assignments[r], r % 2);
        }
    }

    #[test]
    fn too_few_features() {
        assert!(cluster_features(&column(&[1.0]), 2..=2).is_err());
        let two = cluster_features(&column(&[1.0, 2.0]), group_range(2)).unwrap();
        assert_eq!(two.m, 1);
    }

    #[test]
    fn duplicated_features_merge_first() {
        let mut x = random_matrix(6, 40, 5);
        let copy = x.row(2).clone_owned();
        x.set_row(4, &(copy * 3.0));
        let data = DataMatrix::new(x, None, None).unwrap();
        let dist = correlation_distances(&data);
        assert!(dist[(2, 4)].abs() < 1e-12);
        let tree = average_linkage(&dist);
        assert_eq!((tree.merges[0].a, tree.merges[0].b), (2, 4));
        let part = initial_partition(&data).unwrap();
        assert_eq!(part.assignments[2], part.assignments[4]);
        assert!((part.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_features_are_far_apart() {
        let data = DataMatrix::new(random_matrix(5, 1000, 8), None, None).unwrap();
        let dist = correlation_distances(&data);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(dist[(i, j)] > 0.85, "{}", dist[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn constant_feature_distance() {
        let mut x = random_matrix(3, 10, 1);
        x.row_mut(1).fill(4.0);
        let dist = correlation_distances(&DataMatrix::new(x, None, None).unwrap());
        assert_eq!(dist[(0, 1)], 1.0);
        assert_eq!(dist[(1, 2)], 1.0);
    }

    #[test]
    fn nu_weights() {
        let sel = SelectionMatrix {
            w: DMatrix::from_row_slice(2, 1, &[1.0, 3f64.sqrt()]),
            d: DVector::zeros(2),
        };
        let part = GranularityPartition {
            assignments: vec![0, 1],
            m: 2,
            nu: vec![0.5, 0.5],
            degenerate: false,
        };
        let out = compute_nu(&sel, &part);
        assert!((out.nu[0] - 0.25).abs() < 1e-12 && (out.nu[1] - 0.75).abs() < 1e-12);
        let scaled = SelectionMatrix { w: &sel.w * 7.5, d: sel.d.clone() };
        let again = compute_nu(&scaled, &part);
        assert!((again.nu[0] - 0.25).abs() < 1e-12);
        let single = compute_nu(&sel, &GranularityPartition::single(2));
        assert_eq!(single.nu, vec![1.0]);
        let zero = compute_nu(&SelectionMatrix::zeros(2, 1), &part);
        assert_eq!(zero.nu, vec![0.5, 0.5]);
    }
}
