//! Dataset loading, preprocessing, treatment assignment and the confounded
//! synthetic generator.
//!
//! Samples are stored column-wise: `values` is `d × n` with one row per
//! feature. On disk, CSV files keep the usual samples-in-rows orientation.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-major sample matrix with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    /// `d × n`, one row per feature.
    pub values: DMatrix<f64>,
    pub feature_ids: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub n_classes: Option<usize>,
}

impl DataMatrix {
    /// Builds a matrix and checks shape, finiteness and label range.
    pub fn new(
        values: DMatrix<f64>,
        feature_ids: Option<Vec<String>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (d, n) = values.shape();
        if n == 0 {
            return Err(Error::NoSamples);
        }
        if n < 2 || d < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 samples and 2 features, got n={n}, d={d}"
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % d, idx / d);
            return Err(Error::InvalidData(format!(
                "non-finite entry at feature {r}, sample {c}"
            )));
        }
        let feature_ids = match feature_ids {
            Some(ids) if ids.len() != d => return Err(Error::LengthMismatch(ids.len(), d)),
            Some(ids) => ids,
            None => (0..d).map(|i| format!("f{i}")).collect(),
        };
        let n_classes = match &labels {
            Some(l) if l.len() != n => return Err(Error::LengthMismatch(l.len(), n)),
            Some(l) => Some(l.iter().max().map_or(0, |m| m + 1)),
            None => None,
        };
        Ok(Self {
            values,
            feature_ids,
            labels,
            n_classes,
        })
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Restricts the matrix to the given feature rows, in the given order.
    pub fn select_features(&self, features: &[usize]) -> Result<Self> {
        let d = self.n_features();
        if let Some(&bad) = features.iter().find(|&&f| f >= d) {
            return Err(Error::InvalidParameter(format!("feature index {bad} >= {d}")));
        }
        let values = DMatrix::from_fn(features.len(), self.n_samples(), |r, c| {
            self.values[(features[r], c)]
        });
        let ids = features.iter().map(|&f| self.feature_ids[f].clone()).collect();
        Ok(Self {
            values,
            feature_ids: ids,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
        })
    }
}

/// On-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Libsvm,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "libsvm" | "svmlight" => Ok(Format::Libsvm),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        Format::Csv => read_csv(path, BufReader::new(file)),
        Format::Libsvm => read_libsvm(path, BufReader::new(file)),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Maps arbitrary integer labels onto `0..K` in ascending order of value.
fn remap_labels(raw: &[i64]) -> Vec<usize> {
    let distinct: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    raw.iter()
        .map(|v| distinct.binary_search(v).expect("label present"))
        .collect()
}

fn read_csv<R: std::io::Read>(path: &Path, reader: R) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut has_label = false;

    for (line_idx, record) in rdr.records().enumerate() {
        let line = line_idx + 1;
        let record = record.map_err(|e| parse_error(path, line, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if line_idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            let names: Vec<String> = record.iter().map(str::to_string).collect();
            has_label = names.last().is_some_and(|n| n.eq_ignore_ascii_case("label"));
            header = Some(names);
            continue;
        }
        let fields: Vec<&str> = record.iter().collect();
        let (feature_fields, label_field) = if has_label {
            let (last, rest) = fields.split_last().expect("non-empty record");
            (rest, Some(*last))
        } else {
            (&fields[..], None)
        };
        let mut row = Vec::with_capacity(feature_fields.len());
        for (col, f) in feature_fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(path, line, format!("column {col}: not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("column {col}: non-finite value")));
            }
            row.push(v);
        }
        if let Some(l) = label_field {
            let v: i64 = l
                .parse()
                .map_err(|_| parse_error(path, line, format!("label is not an integer: {l:?}")))?;
            raw_labels.push(v);
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = rows.len();
    let d = rows[0].len();
    let values = DMatrix::from_fn(d, n, |r, c| rows[c][r]);
    let feature_ids = header.map(|mut names| {
        if has_label {
            names.pop();
        }
        names
    });
    let labels = has_label.then(|| remap_labels(&raw_labels));
    DataMatrix::new(values, feature_ids, labels)
}

fn read_libsvm<R: BufRead>(path: &Path, reader: R) -> Result<DataMatrix> {
    let mut samples: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut d = 0usize;

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad label {label_tok:?}")))?;
        if label.fract() != 0.0 {
            return Err(parse_error(path, line_no, format!("label is not an integer: {label_tok:?}")));
        }
        raw_labels.push(label as i64);
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, line_no, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_error(path, line_no, "indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(parse_error(path, line_no, "non-finite value"));
            }
            d = d.max(idx);
            entries.push((idx - 1, val));
        }
        samples.push(entries);
    }

    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut values = DMatrix::zeros(d, samples.len());
    for (c, entries) in samples.iter().enumerate() {
        for &(r, v) in entries {
            values[(r, c)] = v;
        }
    }
    DataMatrix::new(values, None, Some(remap_labels(&raw_labels)))
}

/// Writes samples-in-rows CSV with a header and, if present, a `label` column.
pub fn write_csv(data: &DataMatrix, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = data.feature_ids.join(",");
    if data.labels.is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}").map_err(io_err)?;
    for c in 0..data.n_samples() {
        let mut line = data
            .values
            .column(c)
            .iter()
            // `{:?}` prints the shortest representation that round-trips.
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(labels) = &data.labels {
            line.push_str(&format!(",{}", labels[c]));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Result of [`standardize`]: the transformed data and the zero-variance rows.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: DataMatrix,
    pub constant_features: Vec<usize>,
}

/// Centers each feature and scales it to unit sample standard deviation.
/// Constant features become all-zero rows and are reported.
pub fn standardize(data: &DataMatrix) -> Standardized {
    let n = data.n_samples() as f64;
    let mut values = data.values.clone();
    let mut constant_features = Vec::new();
    for (r, mut row) in values.row_iter_mut().enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            row.fill(0.0);
            constant_features.push(r);
        } else {
            row.apply(|v| *v = (*v - mean) / std);
        }
    }
    Standardized {
        data: DataMatrix {
            values,
            ..data.clone()
        },
        constant_features,
    }
}

/// Per-feature binary treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentDesign {
    /// `d × n`; `true` marks a treated sample. Control is the complement.
    pub treated: DMatrix<bool>,
    pub treated_count: Vec<usize>,
    pub control_count: Vec<usize>,
    /// Features whose treatment or control group is empty.
    pub degenerate: BTreeSet<usize>,
}

impl TreatmentDesign {
    pub fn is_treated(&self, feature: usize, sample: usize) -> bool {
        self.treated[(feature, sample)]
    }

    /// `E` as a 0/1 real matrix.
    pub fn treatment_matrix(&self) -> DMatrix<f64> {
        self.treated.map(|t| if t { 1.0 } else { 0.0 })
    }

    /// `C = 1 - E` as a 0/1 real matrix.
    pub fn control_matrix(&self) -> DMatrix<f64> {
        self.treated.map(|t| if t { 0.0 } else { 1.0 })
    }

    /// Per-sample balancing coefficients `E/|treated| - C/|control|` for one
    /// feature, or `None` if the feature is degenerate.
    pub fn contrast(&self, feature: usize) -> Option<Vec<f64>> {
        if self.degenerate.contains(&feature) {
            return None;
        }
        let t = self.treated_count[feature] as f64;
        let c = self.control_count[feature] as f64;
        Some(
            self.treated
                .row(feature)
                .iter()
                .map(|&e| if e { 1.0 / t } else { -1.0 / c })
                .collect(),
        )
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Splits every feature at its median: strictly greater is treated, ties go
/// to control. Two-valued features are split by value (the larger value is
/// treated) so binary 0/1 features map to themselves.
pub fn derive_treatment(data: &DataMatrix) -> TreatmentDesign {
    let (d, n) = data.values.shape();
    let mut treated = DMatrix::from_element(d, n, false);
    let mut treated_count = vec![0; d];
    let mut control_count = vec![0; d];
    let mut degenerate = BTreeSet::new();

    for r in 0..d {
        let row: Vec<f64> = data.values.row(r).iter().copied().collect();
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0];
        let hi = sorted[n - 1];
        let two_valued = sorted.iter().all(|&v| v == lo || v == hi) && lo != hi;
        let threshold = if two_valued { lo } else { median(&sorted) };
        for (i, &v) in row.iter().enumerate() {
            if v > threshold {
                treated[(r, i)] = true;
                treated_count[r] += 1;
            }
        }
        control_count[r] = n - treated_count[r];
        if treated_count[r] == 0 || control_count[r] == 0 {
            degenerate.insert(r);
        }
    }

    TreatmentDesign {
        treated,
        treated_count,
        control_count,
        degenerate,
    }
}

/// Parameters of the confounded synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub n_clusters: usize,
    pub n_causal: usize,
    pub n_spurious: usize,
    pub n_noise: usize,
    pub confound_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 300,
            n_clusters: 3,
            n_causal: 10,
            n_spurious: 10,
            n_noise: 80,
            confound_strength: 2.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_features(&self) -> usize {
        self.n_causal + self.n_spurious + self.n_noise
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features() < 2 {
            return Err(Error::InvalidParameter("need at least 2 features".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter("need at least 2 samples".into()));
        }
        if self.n_clusters == 0 {
            return Err(Error::InvalidParameter("n_clusters must be positive".into()));
        }
        if !(self.confound_strength >= 0.0 && self.confound_strength.is_finite()) {
            return Err(Error::InvalidParameter("confound_strength must be >= 0".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Which generated features are causal, spurious (confounded) or noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub causal: Vec<usize>,
    pub spurious: Vec<usize>,
    pub noise: Vec<usize>,
}

/// Spread of the per-cluster means of a causal feature.
const CAUSAL_SHIFT: f64 = 1.5;

/// Generates labeled data in which spurious features track the cluster label
/// only through a noisy confounder `u = c + N(0, sigma)`.
///
/// Feature rows are shuffled so the ground-truth sets are not contiguous.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(DataMatrix, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.n;
    let k = spec.n_clusters;
    let d = spec.n_features();

    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let confounder: Vec<f64> = labels
        .iter()
        .map(|&c| c as f64 + noise.sample(&mut rng))
        .collect();

    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);

    let mut values = DMatrix::zeros(d, n);
    let mut truth = GroundTruth {
        causal: Vec::new(),
        spurious: Vec::new(),
        noise: Vec::new(),
    };
    for (kind_idx, &row) in order.iter().enumerate() {
        if kind_idx < spec.n_causal {
            let means: Vec<f64> = (0..k).map(|_| CAUSAL_SHIFT * std_normal.sample(&mut rng)).collect();
            for i in 0..n {
                values[(row, i)] = means[labels[i]] + noise.sample(&mut rng);
            }
            truth.causal.push(row);
        } else if kind_idx < spec.n_causal + spec.n_spurious {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let slope = sign * rng.random_range(0.5..1.5);
            for i in 0..n {
                values[(row, i)] =
                    spec.confound_strength * slope * confounder[i] + noise.sample(&mut rng);
            }
            truth.spurious.push(row);
        } else {
            for i in 0..n {
                values[(row, i)] = noise.sample(&mut rng);
            }
            truth.noise.push(row);
        }
    }
    truth.causal.sort_unstable();
    truth.spurious.sort_unstable();
    truth.noise.sort_unstable();

    let data = DataMatrix::new(values, None, Some(labels))?;
    let data = DataMatrix {
        n_classes: Some(k),
        ..data
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DataMatrix {
        let d = rows.len();
        let n = rows[0].len();
        DataMatrix::new(DMatrix::from_fn(d, n, |r, c| rows[r][c]), None, None).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn empty_csv_reports_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        let err = load_dataset(&path, Format::Csv).unwrap_err();
        assert_eq!(err.to_string(), "no samples");
    }

    #[test]
    fn csv_round_trip() {
        let data = DataMatrix::new(
            DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 3.0, 1e-3, 7.25, -0.333]),
            Some(vec!["a".into(), "b".into()]),
            Some(vec![0, 1, 1]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&data, &path).unwrap();
        let back = load_dataset(&path, Format::Csv).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_without_header_or_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "1,2\n3,4\n5,6\n").unwrap();
        let data = load_dataset(&path, Format::Csv).unwrap();
        assert_eq!(data.values.shape(), (2, 3));
        assert_eq!(data.values[(1, 2)], 6.0);
        assert!(data.labels.is_none());
    }

    #[test]
    fn csv_rejects_garbage_and_small_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "a,b\n1,2\n3,zz\n").unwrap();
        assert!(matches!(load_dataset(&path, Format::Csv), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "1,2\n").unwrap();
        assert!(matches!(load_dataset(&path, Format::Csv), Err(Error::InvalidData(_))));
        std::fs::write(&path, "1,inf\n2,3\n").unwrap();
        assert!(load_dataset(&path, Format::Csv).is_err());
    }

    #[test]
    fn libsvm_parses_sparse_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.svm");
        std::fs::write(&path, "-1 1:0.5 3:2\n+1 2:1.5\n# comment\n-1 3:-1\n").unwrap();
        let data = load_dataset(&path, Format::Libsvm).unwrap();
        assert_eq!(data.values.shape(), (3, 3));
        assert_eq!(data.values[(0, 0)], 0.5);
        assert_eq!(data.values[(2, 0)], 2.0);
        assert_eq!(data.values[(1, 1)], 1.5);
        assert_eq!(data.values[(2, 2)], -1.0);
        assert_eq!(data.labels, Some(vec![0, 1, 0]));
        assert_eq!(data.n_classes, Some(2));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_dataset(Path::new("/nonexistent/jaffe.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/jaffe.csv"));
    }

    #[test]
    fn standardize_moments_and_constant_rows() {
        let data = matrix(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]);
        let out = standardize(&data);
        let row: Vec<f64> = out.data.values.row(0).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / 3.0;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        assert_eq!(out.data.values.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(out.constant_features, vec![1]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let (data, _) = synthesize(&SyntheticSpec {
            n: 50,
            ..Default::default()
        })
        .unwrap();
        let once = standardize(&data).data;
        let twice = standardize(&once).data;
        assert!((once.values - twice.values).amax() < 1e-12);
    }

    #[test]
    fn treatment_median_split() {
        let data = matrix(&[&[1.0, 2.0, 3.0, 4.0], &[7.0, 7.0, 7.0, 7.0], &[0.0, 1.0, 1.0, 1.0]]);
        let design = derive_treatment(&data);
        let e = design.treatment_matrix();
        assert_eq!(e.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(e.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 4]);
        assert_eq!(e.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(design.degenerate.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(design.treated_count, vec![2, 0, 3]);
        assert_eq!(design.control_count, vec![2, 4, 1]);
    }

    #[test]
    fn treatment_matches_sort_oracle() {
        let (data, _) = synthesize(&SyntheticSpec {
            n: 41,
            n_noise: 5,
            ..Default::default()
        })
        .unwrap();
        let design = derive_treatment(&data);
        for r in 0..data.n_features() {
            let row: Vec<f64> = data.values.row(r).iter().copied().collect();
            // oracle: a sample is treated iff at least half the samples are
            // strictly below it (for odd n, it ranks above the middle element)
            for (i, &v) in row.iter().enumerate() {
                let below = row.iter().filter(|&&w| w < v).count();
                let expected = below > row.len() / 2;
                assert_eq!(design.is_treated(r, i), expected);
            }
        }
        let ones = design.treatment_matrix() + design.control_matrix();
        assert!(ones.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn synthesize_is_deterministic_and_partitions_features() {
        let spec = SyntheticSpec {
            n: 120,
            seed: 9,
            ..Default::default()
        };
        let (a, ta) = synthesize(&spec).unwrap();
        let (b, tb) = synthesize(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let mut all: Vec<usize> = ta.causal.iter().chain(&ta.spurious).chain(&ta.noise).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(a.n_classes, Some(3));
    }

    #[test]
    fn synthesize_without_spurious() {
        let (_, truth) = synthesize(&SyntheticSpec {
            n_spurious: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(truth.spurious.is_empty());
        assert_eq!(truth.causal.len(), 10);
    }

    #[test]
    fn spurious_features_correlate_with_label() {
        let (data, truth) = synthesize(&SyntheticSpec {
            n: 500,
            confound_strength: 2.0,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let labels: Vec<f64> = data.labels.as_ref().unwrap().iter().map(|&l| l as f64).collect();
        for &r in &truth.spurious {
            let row: Vec<f64> = data.values.row(r).iter().copied().collect();
            assert!(pearson(&row, &labels).abs() > 0.2, "feature {r}");
        }
    }

    #[test]
    fn synthesized_labels_are_roughly_uniform() {
        let (data, _) = synthesize(&SyntheticSpec {
            n: 600,
            n_clusters: 4,
            ..Default::default()
        })
        .unwrap();
        let mut counts = [0usize; 4];
        for &l in data.labels.as_ref().unwrap() {
            counts[l] += 1;
        }
        for c in counts {
            assert!((c as f64 - 150.0).abs() <= 30.0, "{counts:?}");
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SyntheticSpec {
            n_causal: 1,
            n_spurious: 0,
            n_noise: 0,
            ..Default::default()
        };
        assert!(synthesize(&spec).is_err());
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert!(synthesize(&spec).is_err());
    }
}
