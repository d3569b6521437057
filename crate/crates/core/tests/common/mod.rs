//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random `n × h` matrix with orthonormal columns.
pub fn random_orthonormal(n: usize, h: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_matrix(n, n, rng).qr().q();
    q.columns(0, h).into_owned()
}

/// Minimizes `Σ_j c_j s_j + γ Σ_j s_j²` over the simplex restricted to
/// `allowed` by enumerating every support and solving its equality-constrained
/// stationarity system in closed form. Requires `γ > 0`.
pub fn brute_force_simplex(c: &[f64], gamma: f64, allowed: &[usize]) -> Vec<f64> {
    assert!(gamma > 0.0);
    let m = allowed.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|b| mask & (1 << b) != 0).map(|b| allowed[b]).collect();
        let theta = (2.0 * gamma + support.iter().map(|&j| c[j]).sum::<f64>()) / support.len() as f64;
        let mut s = vec![0.0; c.len()];
        let mut feasible = true;
        for &j in &support {
            let v = (theta - c[j]) / (2.0 * gamma);
            if v < -1e-14 {
                feasible = false;
                break;
            }
            s[j] = v.max(0.0);
        }
        if !feasible {
            continue;
        }
        let value: f64 = allowed.iter().map(|&j| c[j] * s[j] + gamma * s[j] * s[j]).sum();
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, s));
        }
    }
    best.expect("some support is feasible").1
}

/// Euclidean projection onto the simplex as the dense QP
/// `min ‖s − v‖² = Σ (−2v_j) s_j + Σ s_j² + const`.
pub fn brute_force_projection(v: &[f64]) -> Vec<f64> {
    let c: Vec<f64> = v.iter().map(|x| -2.0 * x).collect();
    let all: Vec<usize> = (0..v.len()).collect();
    brute_force_simplex(&c, 1.0, &all)
}

/// Largest principal angle between the column spaces of two matrices with
/// orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let sv = (a.transpose() * b).singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    smallest.clamp(-1.0, 1.0).acos()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Selection matrix `E` with `E·v` picking the entries `rows` of `v`.
pub fn selector(rows: &[usize], d: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(rows.len(), d);
    for (a, &r) in rows.iter().enumerate() {
        e[(a, r)] = 1.0;
    }
    e
}

pub fn simplex_violation(mu: &DVector<f64>) -> f64 {
    let neg = mu.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    neg.max((mu.sum() - 1.0).abs())
}
