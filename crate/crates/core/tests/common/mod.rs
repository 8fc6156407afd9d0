#![allow(dead_code)]

use aflora::adapter::{DecoupledAdapter, Mask};
use aflora::data::{Dataset, PartitionMode};
use aflora::harness::{ExperimentConfig, Method, TaskConfig};
use aflora::linalg::Matrix;
use rand::Rng;

/// Objective evaluated with plain loops over raw parameter slices, sharing no
/// code with the library's forward pass.
#[allow(clippy::too_many_arguments)]
pub fn naive_objective(
    w: &Matrix,
    a: &Matrix,
    b: &Matrix,
    lambda: &[f64],
    mask: &[bool],
    x: &Matrix,
    y: &[usize],
    gamma: f64,
) -> f64 {
    let (m, n) = w.shape();
    let r = a.rows();
    let mut total = 0.0;
    for s in 0..y.len() {
        let mut z = vec![0.0; m];
        for (c, zc) in z.iter_mut().enumerate() {
            for k in 0..n {
                let mut wk = w[(c, k)];
                for j in 0..r {
                    if mask[j] {
                        wk += b[(c, j)] * lambda[j] * a[(j, k)];
                    }
                }
                *zc += wk * x[(s, k)];
            }
        }
        let max = z.iter().cloned().fold(f64::MIN, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        total += max + sum.ln() - z[y[s]];
    }
    let mut reg = 0.0;
    for j in 0..r {
        if mask[j] {
            let sq: f64 = (0..m).map(|i| b[(i, j)] * b[(i, j)]).sum();
            reg += (sq - 1.0) * (sq - 1.0);
        }
    }
    total / y.len() as f64 + gamma * reg
}

pub struct FdGradients {
    pub b: Matrix,
    pub lambda: Vec<f64>,
    pub a: Matrix,
}

/// Central differences of [`naive_objective`] with step `h`.
pub fn fd_gradients(w: &Matrix, ad: &DecoupledAdapter, x: &Matrix, y: &[usize], gamma: f64, h: f64) -> FdGradients {
    let mask = ad.mask.as_slice().to_vec();
    let f = |a: &Matrix, b: &Matrix, l: &[f64]| naive_objective(w, a, b, l, &mask, x, y, gamma);
    let mut gb = Matrix::zeros(ad.b.rows(), ad.b.cols());
    for i in 0..ad.b.rows() {
        for j in 0..ad.b.cols() {
            let (mut p, mut q) = (ad.b.clone(), ad.b.clone());
            p[(i, j)] += h;
            q[(i, j)] -= h;
            gb[(i, j)] = (f(&ad.a_slice, &p, &ad.lambda) - f(&ad.a_slice, &q, &ad.lambda)) / (2.0 * h);
        }
    }
    let mut gl = vec![0.0; ad.lambda.len()];
    for (j, g) in gl.iter_mut().enumerate() {
        let (mut p, mut q) = (ad.lambda.clone(), ad.lambda.clone());
        p[j] += h;
        q[j] -= h;
        *g = (f(&ad.a_slice, &ad.b, &p) - f(&ad.a_slice, &ad.b, &q)) / (2.0 * h);
    }
    let mut ga = Matrix::zeros(ad.a_slice.rows(), ad.a_slice.cols());
    for i in 0..ad.a_slice.rows() {
        for k in 0..ad.a_slice.cols() {
            let (mut p, mut q) = (ad.a_slice.clone(), ad.a_slice.clone());
            p[(i, k)] += h;
            q[(i, k)] -= h;
            ga[(i, k)] = (f(&p, &ad.b, &ad.lambda) - f(&q, &ad.b, &ad.lambda)) / (2.0 * h);
        }
    }
    FdGradients { b: gb, lambda: gl, a: ga }
}

/// Adapter with random factors, gate and mask (at least one active dim).
pub fn random_adapter<R: Rng>(rng: &mut R, m: usize, n: usize, r: usize) -> DecoupledAdapter {
    let a = Matrix::random_row_normalized(r, n, 1.0, rng);
    let b = Matrix::random_normal(m, r, 0.7, rng);
    let lambda: Vec<f64> = (0..r).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut bits: Vec<bool> = (0..r).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..r);
    bits[keep] = true;
    DecoupledAdapter::from_parts(a, b, lambda, Mask::from(bits)).unwrap()
}

pub fn random_batch<R: Rng>(rng: &mut R, size: usize, n: usize, classes: usize) -> Dataset {
    Dataset {
        ids: (0..size).collect(),
        features: Matrix::random_normal(size, n, 1.0, rng),
        labels: (0..size).map(|_| rng.random_range(0..classes)).collect(),
    }
}

/// Worst `|analytic - numeric| / max(1, |numeric|)` over paired entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, f)| (a - f).abs() / f.abs().max(1.0)).fold(0.0, f64::max)
}

/// Small task where every run takes well under a second.
pub fn small_task(classes: usize, features: usize, samples_per_class: usize) -> TaskConfig {
    TaskConfig { feature_dim: features, num_classes: classes, samples_per_class, separation: 2.0, noise_std: 1.0 }
}

/// Shared toy setup for the heterogeneity experiments: eight clients, eight
/// classes, twelve features, rank eight everywhere (so classic aggregation
/// applies), ten rounds of five local epochs.
pub fn heterogeneity_config(method: Method, epsilon: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        method,
        clients: 8,
        rank_caps: vec![8; 8],
        rounds: 10,
        participation: 1.0,
        partition: PartitionMode::Noniid { epsilon },
        task: small_task(8, 12, 2000),
        local_epochs: 5,
        lr: 0.05,
        batch_size: 16,
        server_epochs: 5,
        server_lr: 0.5,
        seed,
        ..ExperimentConfig::default()
    }
}
