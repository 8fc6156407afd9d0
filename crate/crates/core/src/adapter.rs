//! Decoupled LoRA adapter `dW = B * diag(lambda) * A` with a binary rank mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{zero_pad_cols, Matrix};

/// LoRA and protocol hyperparameters shared by clients and server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraHyper {
    /// Output dimension (rows of `W`).
    pub m: usize,
    /// Input dimension (columns of `W`).
    pub n: usize,
    /// Largest initial rank over all clients; width of the global adapters.
    pub r_max: usize,
    /// Target row norm of `A`.
    pub c_norm: f64,
    /// Pruning threshold multiplier on the standard deviation of `lambda^2`.
    pub beta: f64,
    /// Weight of the column-norm regularizer on `B`.
    pub gamma: f64,
    /// Fusion ratio between the previous and the server-tuned `A`.
    pub alpha: f64,
    /// Initial value of every diagonal gate entry.
    pub lambda_init: f64,
}

impl Default for LoraHyper {
    fn default() -> Self {
        Self { m: 64, n: 64, r_max: 64, c_norm: 1.0, beta: 0.5, gamma: 0.1, alpha: 0.5, lambda_init: 1.0 }
    }
}

impl LoraHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 {
            return bad(format!("dimensions must be positive, got m={} n={}", self.m, self.n));
        }
        if self.r_max == 0 || self.r_max > self.m.min(self.n) {
            return bad(format!("r_max={} must lie in 1..=min(m, n)={}", self.r_max, self.m.min(self.n)));
        }
        if !(self.c_norm > 0.0 && self.c_norm.is_finite()) {
            return bad(format!("c_norm must be positive, got {}", self.c_norm));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return bad(format!("lambda_init must be positive, got {}", self.lambda_init));
        }
        Ok(())
    }
}

/// Binary rank mask; `true` marks an active low-rank dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn full(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn empty(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of active dimensions.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&h| h).count()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.0.get(j).copied().unwrap_or(false)
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &h)| h).map(|(j, _)| j).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn set(&mut self, j: usize, on: bool) {
        self.0[j] = on;
    }

    /// Elementwise `self <= other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }
}

impl From<Vec<bool>> for Mask {
    fn from(v: Vec<bool>) -> Self {
        Mask(v)
    }
}

impl From<&[u8]> for Mask {
    fn from(v: &[u8]) -> Self {
        Mask(v.iter().map(|&x| x != 0).collect())
    }
}

/// First `r1` rows of the global `A`.
pub fn truncate_a(a_global: &Matrix, r1: usize) -> Result<Matrix> {
    if r1 == 0 || r1 > a_global.rows() {
        return Err(Error::shape(format!(
            "truncation rank {r1} outside 1..={} for a {}x{} global A",
            a_global.rows(),
            a_global.rows(),
            a_global.cols()
        )));
    }
    a_global.first_rows(r1)
}

/// Per-client adapter state.
///
/// `a_slice` is `r1 x n` and frozen on the client, `b` is `m x r1`, `lambda`
/// holds the diagonal of the gate. Columns of `b` at masked-out positions are
/// kept in storage as zeros so indices stay stable across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledAdapter {
    pub a_slice: Matrix,
    pub b: Matrix,
    pub lambda: Vec<f64>,
    pub mask: Mask,
}

impl DecoupledAdapter {
    /// Round-start adapter: `B = 0`, `lambda = lambda_init` on active dims and
    /// zero elsewhere.
    pub fn init(a_slice: Matrix, m: usize, mask: Mask, lambda_init: f64) -> Result<Self> {
        let r1 = a_slice.rows();
        if mask.len() != r1 {
            return Err(Error::shape(format!("mask of length {} for an A-slice with {r1} rows", mask.len())));
        }
        let lambda = (0..r1).map(|j| if mask.is_active(j) { lambda_init } else { 0.0 }).collect();
        Ok(Self { a_slice, b: Matrix::zeros(m, r1), lambda, mask })
    }

    /// Builds an adapter from explicit parts, zeroing `b` at masked columns.
    pub fn from_parts(a_slice: Matrix, mut b: Matrix, lambda: Vec<f64>, mask: Mask) -> Result<Self> {
        let r1 = a_slice.rows();
        if b.cols() != r1 || lambda.len() != r1 || mask.len() != r1 {
            return Err(Error::shape(format!(
                "inconsistent adapter parts: A {}x{}, B {}x{}, lambda {}, mask {}",
                a_slice.rows(),
                a_slice.cols(),
                b.rows(),
                b.cols(),
                lambda.len(),
                mask.len()
            )));
        }
        for j in 0..r1 {
            if !mask.is_active(j) {
                for i in 0..b.rows() {
                    b[(i, j)] = 0.0;
                }
            }
        }
        Ok(Self { a_slice, b, lambda, mask })
    }

    pub fn m(&self) -> usize {
        self.b.rows()
    }

    pub fn n(&self) -> usize {
        self.a_slice.cols()
    }

    pub fn r_initial(&self) -> usize {
        self.a_slice.rows()
    }

    pub fn r_eff(&self) -> usize {
        self.mask.count()
    }

    /// `B * diag(lambda)` with masked columns zero (`m x r1`).
    pub fn scaled_b(&self) -> Matrix {
        let mut out = Matrix::zeros(self.m(), self.r_initial());
        for j in self.mask.active_indices() {
            for i in 0..self.m() {
                out[(i, j)] = self.lambda[j] * self.b[(i, j)];
            }
        }
        out
    }

    /// `diag(lambda) * A` with masked rows zero (`r1 x n`).
    pub fn scaled_a(&self) -> Matrix {
        let mut out = Matrix::zeros(self.r_initial(), self.n());
        for j in self.mask.active_indices() {
            let lam = self.lambda[j];
            for (o, a) in out.row_mut(j).iter_mut().zip(self.a_slice.row(j)) {
                *o = lam * a;
            }
        }
        out
    }

    /// `sum_j lambda_j b_j a_j^T` over active dims.
    pub fn delta_weight(&self) -> Matrix {
        let (m, n) = (self.m(), self.n());
        let mut out = Matrix::zeros(m, n);
        for j in self.mask.active_indices() {
            let a_row = self.a_slice.row(j);
            for i in 0..m {
                let coef = self.lambda[j] * self.b[(i, j)];
                if coef == 0.0 {
                    continue;
                }
                for (o, a) in out.row_mut(i).iter_mut().zip(a_row) {
                    *o += coef * a;
                }
            }
        }
        out
    }

    /// Upload payload: active columns of `B` scaled by their gate entries,
    /// compacted to `m x r_eff`, plus the mask.
    pub fn merged_upload(&self) -> (Matrix, Mask) {
        let active = self.mask.active_indices();
        let merged = Matrix::from_fn(self.m(), active.len(), |i, c| {
            let j = active[c];
            self.lambda[j] * self.b[(i, j)]
        });
        (merged, self.mask.clone())
    }

    /// Information content `C^2 * lambda_j^2` of active dimension `j`.
    pub fn dimension_information(&self, j: usize, c_norm: f64) -> Result<f64> {
        if !self.mask.is_active(j) {
            return Err(Error::Domain(format!("dimension {j} is not active")));
        }
        Ok(c_norm * c_norm * self.lambda[j] * self.lambda[j])
    }

    /// `lambda_j^2` for every active dim, in index order.
    pub fn active_lambda_sq(&self) -> Vec<f64> {
        self.mask.active_indices().iter().map(|&j| self.lambda[j] * self.lambda[j]).collect()
    }

    /// Harmonized upload re-expanded to `target_cols` columns.
    pub fn padded_upload(&self, target_cols: usize) -> Result<Matrix> {
        let (merged, mask) = self.merged_upload();
        zero_pad_cols(&merged, target_cols, mask.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_adapter(seed: u64, m: usize, n: usize, r1: usize, c: f64) -> DecoupledAdapter {
        let mut rng = Seed(seed).rng();
        let a = Matrix::random_row_normalized(r1, n, c, &mut rng);
        let b = Matrix::random_normal(m, r1, 1.0, &mut rng);
        let lambda = (0..r1).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mask: Vec<bool> = (0..r1).map(|_| rng.random_bool(0.7)).collect();
        DecoupledAdapter::from_parts(a, b, lambda, mask.into()).unwrap()
    }

    #[test]
    fn truncate_cases() {
        let a = Matrix::from_fn(4, 3, |i, j| (10 * i + j) as f64);
        assert_eq!(truncate_a(&a, 4).unwrap(), a);
        assert_eq!(truncate_a(&a, 1).unwrap(), Matrix::from_rows(&[[0.0, 1.0, 2.0]]));
        let t = truncate_a(&a, 2).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.row(0), a.row(0));
        assert_eq!(t.row(1), a.row(1));
        assert!(matches!(truncate_a(&a, 0), Err(Error::Shape(_))));
        assert!(matches!(truncate_a(&a, 5), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_b_gives_zero_delta() {
        let mut rng = Seed(1).rng();
        let a = Matrix::random_row_normalized(3, 4, 1.0, &mut rng);
        let ad = DecoupledAdapter::init(a, 5, Mask::full(3), 1.0).unwrap();
        assert_eq!(ad.delta_weight(), Matrix::zeros(5, 4));
    }

    #[test]
    fn rank_one_delta_by_hand() {
        let ad = DecoupledAdapter::from_parts(
            Matrix::from_rows(&[[1.0, 1.0]]),
            Matrix::from_rows(&[[1.0], [0.0]]),
            vec![2.0],
            Mask::full(1),
        )
        .unwrap();
        assert_eq!(ad.delta_weight(), Matrix::from_rows(&[[2.0, 2.0], [0.0, 0.0]]));
    }

    #[test]
    fn delta_matches_dense_product() {
        let mut rng = Seed(2).rng();
        let a = Matrix::random_row_normalized(4, 6, 1.5, &mut rng);
        let b = Matrix::random_normal(5, 4, 1.0, &mut rng);
        let lambda: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ad = DecoupledAdapter::from_parts(a.clone(), b.clone(), lambda.clone(), Mask::full(4)).unwrap();
        let dense = b.matmul(&Matrix::diag(&lambda)).unwrap().matmul(&a).unwrap();
        assert!(ad.delta_weight().sub(&dense).unwrap().frobenius_norm() <= 1e-12);
    }

    #[test]
    fn merged_upload_cases() {
        let mut rng = Seed(3).rng();
        let a = Matrix::random_row_normalized(3, 2, 1.0, &mut rng);
        let b = Matrix::random_normal(2, 3, 1.0, &mut rng);

        let ad = DecoupledAdapter::from_parts(a.clone(), b.clone(), vec![1.0; 3], Mask::full(3)).unwrap();
        assert_eq!(ad.merged_upload().0, b);

        let ad = DecoupledAdapter::from_parts(a.clone(), b.clone(), vec![1.0; 3], Mask::empty(3)).unwrap();
        let (merged, mask) = ad.merged_upload();
        assert_eq!(merged.shape(), (2, 0));
        assert_eq!(mask, Mask::empty(3));

        let mask: Mask = vec![true, false, true].into();
        let ad = DecoupledAdapter::from_parts(a, b.clone(), vec![2.0, 7.0, 3.0], mask.clone()).unwrap();
        let (merged, got_mask) = ad.merged_upload();
        assert_eq!(got_mask, mask);
        let want = Matrix::from_fn(2, 2, |i, c| if c == 0 { 2.0 * b[(i, 0)] } else { 3.0 * b[(i, 2)] });
        assert_eq!(merged, want);
    }

    #[test]
    fn dimension_information_cases() {
        let ad = DecoupledAdapter::from_parts(
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            vec![0.0, 2.0],
            vec![true, true].into(),
        )
        .unwrap();
        assert_eq!(ad.dimension_information(0, 1.0).unwrap(), 0.0);
        assert_eq!(ad.dimension_information(1, 1.0).unwrap(), 4.0);

        let masked = DecoupledAdapter { mask: vec![true, false].into(), ..ad };
        assert!(matches!(masked.dimension_information(1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn dimension_information_equals_rank_one_energy() {
        // unit b_j, unit a_j, lambda 1.5
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ad = DecoupledAdapter::from_parts(
            Matrix::from_rows(&[[0.6, 0.8, 0.0]]),
            Matrix::from_rows(&[[s], [s]]),
            vec![1.5],
            Mask::full(1),
        )
        .unwrap();
        let energy = ad.delta_weight().frobenius_norm().powi(2);
        assert!((energy - 2.25).abs() <= 1e-12);
        assert!((ad.dimension_information(0, 1.0).unwrap() - energy).abs() <= 1e-12);
    }

    #[test]
    fn hyper_validation() {
        assert!(LoraHyper::default().validate().is_ok());
        let h = LoraHyper { r_max: 65, ..LoraHyper::default() };
        assert!(matches!(h.validate(), Err(Error::Config(_))));
        let h = LoraHyper { alpha: 1.5, ..LoraHyper::default() };
        assert!(h.validate().is_err());
    }

    proptest! {
        #[test]
        fn delta_weight_equals_triple_product(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, r1 in 1usize..6) {
            let ad = random_adapter(seed, m, n, r1, 1.3);
            let lam_masked: Vec<f64> = (0..r1).map(|j| if ad.mask.is_active(j) { ad.lambda[j] } else { 0.0 }).collect();
            let dense = ad.b.matmul(&Matrix::diag(&lam_masked).matmul(&ad.a_slice).unwrap()).unwrap();
            prop_assert!(ad.delta_weight().sub(&dense).unwrap().frobenius_norm() <= 1e-12 * dense.frobenius_norm().max(1.0));
        }

        #[test]
        fn upload_pad_and_truncated_a_reproduce_delta(seed in any::<u64>(), r1 in 1usize..6, extra in 0usize..4) {
            let (m, n) = (4, 7);
            let r_max = r1 + extra;
            let mut rng = Seed(seed ^ 0xABCD).rng();
            let a_global = Matrix::random_row_normalized(r_max, n, 1.0, &mut rng);
            let slice = truncate_a(&a_global, r1).unwrap();
            let b = Matrix::random_normal(m, r1, 1.0, &mut rng);
            let lambda = (0..r1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mask: Vec<bool> = (0..r1).map(|_| rng.random_bool(0.6)).collect();
            let ad = DecoupledAdapter::from_parts(slice, b, lambda, mask.into()).unwrap();
            let via_upload = ad.padded_upload(r_max).unwrap().matmul(&a_global).unwrap();
            let direct = ad.delta_weight();
            prop_assert!(via_upload.sub(&direct).unwrap().frobenius_norm() <= 1e-12 * direct.frobenius_norm().max(1.0));
        }

        #[test]
        fn information_matches_energy_under_exact_constraints(seed in any::<u64>(), c in 0.5f64..3.0) {
            let mut rng = Seed(seed).rng();
            let a = Matrix::random_row_normalized(1, 5, c, &mut rng);
            let b = Matrix::random_row_normalized(1, 4, 1.0, &mut rng).transpose();
            let lam: f64 = rng.random_range(-3.0..3.0);
            let ad = DecoupledAdapter::from_parts(a, b, vec![lam], Mask::full(1)).unwrap();
            let energy = ad.delta_weight().frobenius_norm().powi(2);
            let info = ad.dimension_information(0, c).unwrap();
            prop_assert!((info - energy).abs() <= 1e-10 * energy.max(1.0));
        }
    }
}
