//! Reference oracles shared by the unit tests.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let a = random_matrix(n, n, seed);
    (&a + a.transpose()) * 0.5
}

/// Euclidean projection of `v` onto the simplex by enumerating every support
/// set and keeping the best feasible stationary point. `-∞` entries are never
/// in the support.
pub fn brute_force_simplex_qp(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if support.iter().any(|&i| !v[i].is_finite()) {
            continue;
        }
        let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut s = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            s[i] = v[i] - theta;
            if s[i] < -1e-15 {
                feasible = false;
            }
            s[i] = s[i].max(0.0);
        }
        if !feasible {
            continue;
        }
        let obj: f64 = (0..n)
            .filter(|&i| v[i].is_finite())
            .map(|i| (s[i] - v[i]).powi(2))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, s));
        }
    }
    best.expect("some support is feasible").1
}
