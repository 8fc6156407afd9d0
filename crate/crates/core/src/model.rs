//! Frozen single-layer backbone with logits `z = (W + dW) x`, the regularized
//! cross-entropy objective and its analytic gradients.

use crate::adapter::DecoupledAdapter;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Frozen backbone. `w_base` is `num_classes x n` and never mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    w_base: Matrix,
}

impl ToyModel {
    pub fn new(w_base: Matrix) -> Self {
        Self { w_base }
    }

    pub fn w_base(&self) -> &Matrix {
        &self.w_base
    }

    pub fn num_classes(&self) -> usize {
        self.w_base.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_base.cols()
    }

    fn effective_weight(&self, delta: &Matrix) -> Result<Matrix> {
        self.w_base.add(delta)
    }
}

/// Which parameters a backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    /// `B` and the gate; `A` is frozen.
    Client,
    /// `A` only; `B` (with the gate absorbed) is frozen.
    Server,
    /// `B` and `A` with the gate held fixed. Used by the baseline trainers.
    Joint,
}

/// Gradients of the objective. Fields not selected by [`Wrt`] are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub loss: f64,
    pub grad_b: Option<Matrix>,
    pub grad_lambda: Option<Vec<f64>>,
    pub grad_a: Option<Matrix>,
}

fn check_batch(model: &ToyModel, batch: &Dataset) -> Result<()> {
    if batch.feature_dim() != model.input_dim() {
        return Err(Error::shape(format!(
            "batch has {} features, model expects {}",
            batch.feature_dim(),
            model.input_dim()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Data(format!("label {y} outside 0..{}", model.num_classes())));
    }
    Ok(())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Mean cross-entropy under weight `w` and, if `want_grad`, the averaged outer
/// product `G = mean((softmax(z) - onehot(y)) x^T)`.
fn cross_entropy(w: &Matrix, batch: &Dataset, want_grad: bool) -> (f64, Option<Matrix>) {
    let (m, n) = w.shape();
    let count = batch.len();
    if count == 0 {
        return (0.0, want_grad.then(|| Matrix::zeros(m, n)));
    }
    let mut g = want_grad.then(|| Matrix::zeros(m, n));
    let mut total = 0.0;
    let mut z = vec![0.0; m];
    for s in 0..count {
        let x = batch.features.row(s);
        let y = batch.labels[s];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = dot(w.row(c), x);
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
        if let Some(g) = g.as_mut() {
            softmax_in_place(&mut z);
            z[y] -= 1.0;
            for (c, &dz) in z.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                for (gv, xv) in g.row_mut(c).iter_mut().zip(x) {
                    *gv += dz * xv;
                }
            }
        }
    }
    let inv = 1.0 / count as f64;
    if let Some(g) = g.as_mut() {
        *g = g.scale(inv);
    }
    (total * inv, g)
}

fn regularizer(ad: &DecoupledAdapter, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    ad.mask
        .active_indices()
        .into_iter()
        .map(|j| {
            let sq: f64 = (0..ad.m()).map(|i| ad.b[(i, j)].powi(2)).sum();
            (sq - 1.0).powi(2)
        })
        .sum::<f64>()
        * gamma
}

/// Mean cross-entropy plus `gamma * sum_active (|b_j|^2 - 1)^2`.
pub fn forward_loss(model: &ToyModel, ad: &DecoupledAdapter, batch: &Dataset, gamma: f64) -> Result<f64> {
    check_batch(model, batch)?;
    let w = model.effective_weight(&ad.delta_weight())?;
    let (ce, _) = cross_entropy(&w, batch, false);
    Ok(ce + regularizer(ad, gamma))
}

/// Analytic gradients of [`forward_loss`].
///
/// With `G` the batch-averaged `(dCE/dz) x^T`: `dB = G (Lambda A)^T`,
/// `dlambda_j = b_j^T G a_j`, `dA = (B Lambda)^T G`. The regularizer adds
/// `4 gamma (|b_j|^2 - 1) b_j` to column `j` of `dB`. Masked dims get zero.
pub fn backward(model: &ToyModel, ad: &DecoupledAdapter, batch: &Dataset, gamma: f64, wrt: Wrt) -> Result<GradientSet> {
    check_batch(model, batch)?;
    let w = model.effective_weight(&ad.delta_weight())?;
    let (ce, g) = cross_entropy(&w, batch, true);
    let g = g.expect("gradient requested");
    let loss = ce + regularizer(ad, gamma);
    let active = ad.mask.active_indices();
    let (m, r1) = (ad.m(), ad.r_initial());

    let mut out = GradientSet { loss, grad_b: None, grad_lambda: None, grad_a: None };

    if matches!(wrt, Wrt::Client | Wrt::Joint) {
        // G * A^T is m x r1; column j scaled by lambda_j gives dB.
        let g_at = g.matmul(&ad.a_slice.transpose())?;
        let mut grad_b = Matrix::zeros(m, r1);
        for &j in &active {
            let sq: f64 = (0..m).map(|i| ad.b[(i, j)].powi(2)).sum();
            let reg = 4.0 * gamma * (sq - 1.0);
            for i in 0..m {
                grad_b[(i, j)] = ad.lambda[j] * g_at[(i, j)] + reg * ad.b[(i, j)];
            }
        }
        out.grad_b = Some(grad_b);
        if wrt == Wrt::Client {
            let mut grad_lambda = vec![0.0; r1];
            for &j in &active {
                grad_lambda[j] = (0..m).map(|i| ad.b[(i, j)] * g_at[(i, j)]).sum();
            }
            out.grad_lambda = Some(grad_lambda);
        }
    }
    if matches!(wrt, Wrt::Server | Wrt::Joint) {
        let grad_a = ad.scaled_b().transpose().matmul(&g)?;
        out.grad_a = Some(grad_a);
    }
    Ok(out)
}

/// Fraction of `test` classified correctly under logits `(W + delta) x`.
/// Ties go to the lowest class index.
pub fn predict_accuracy(model: &ToyModel, delta: &Matrix, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("accuracy of an empty test set is undefined".into()));
    }
    check_batch(model, test)?;
    let w = model.effective_weight(delta)?;
    let mut correct = 0usize;
    for s in 0..test.len() {
        let x = test.features.row(s);
        let mut best = 0;
        let mut best_z = f64::NEG_INFINITY;
        for c in 0..w.rows() {
            let z = dot(w.row(c), x);
            if z > best_z {
                best_z = z;
                best = c;
            }
        }
        if best == test.labels[s] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Mean cross-entropy of `model + delta` on `data` (no regularizer).
pub fn mean_cross_entropy(model: &ToyModel, delta: &Matrix, data: &Dataset) -> Result<f64> {
    check_batch(model, data)?;
    let w = model.effective_weight(delta)?;
    Ok(cross_entropy(&w, data, false).0)
}

/// Worst disagreement between [`backward`] and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Entries compared across `B`, the gate and `A`.
    pub entries: usize,
    pub max_abs_err: f64,
    /// `|analytic - numeric| / max(1, |numeric|)`, maximized over entries.
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Compares every analytic gradient entry against a central difference with
/// step `h`.
pub fn check_gradients(
    model: &ToyModel,
    ad: &DecoupledAdapter,
    batch: &Dataset,
    gamma: f64,
    h: f64,
) -> Result<GradCheck> {
    let client = backward(model, ad, batch, gamma, Wrt::Client)?;
    let server = backward(model, ad, batch, gamma, Wrt::Server)?;
    let grad_b = client.grad_b.expect("client pass yields dB");
    let grad_lambda = client.grad_lambda.expect("client pass yields dlambda");
    let grad_a = server.grad_a.expect("server pass yields dA");

    let mut report = GradCheck { entries: 0, max_abs_err: 0.0, max_rel_err: 0.0 };
    let mut record = |analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs();
        report.entries += 1;
        report.max_abs_err = report.max_abs_err.max(err);
        report.max_rel_err = report.max_rel_err.max(err / numeric.abs().max(1.0));
    };
    let central = |perturb: &dyn Fn(&mut DecoupledAdapter, f64)| -> Result<f64> {
        let mut plus = ad.clone();
        perturb(&mut plus, h);
        let mut minus = ad.clone();
        perturb(&mut minus, -h);
        Ok((forward_loss(model, &plus, batch, gamma)? - forward_loss(model, &minus, batch, gamma)?) / (2.0 * h))
    };

    for j in ad.mask.active_indices() {
        for i in 0..ad.m() {
            record(grad_b[(i, j)], central(&|a, d| a.b[(i, j)] += d)?);
        }
        record(grad_lambda[j], central(&|a, d| a.lambda[j] += d)?);
    }
    for i in 0..ad.r_initial() {
        for k in 0..ad.n() {
            record(grad_a[(i, k)], central(&|a, d| a.a_slice[(i, k)] += d)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::Mask;
    use crate::rng::Seed;
    use rand::Rng;

    fn batch(x: Matrix, y: Vec<usize>) -> Dataset {
        Dataset { ids: (0..y.len()).collect(), features: x, labels: y }
    }

    #[test]
    fn uniform_logits_give_ln2_plus_regularizer() {
        let model = ToyModel::new(Matrix::zeros(2, 3));
        let mut rng = Seed(1).rng();
        let a = Matrix::random_row_normalized(3, 3, 1.0, &mut rng);
        let ad = DecoupledAdapter::init(a, 2, Mask::full(3), 1.0).unwrap();
        let data = batch(Matrix::random_normal(5, 3, 1.0, &mut rng), vec![0, 1, 1, 0, 1]);
        let ce = forward_loss(&model, &ad, &data, 0.0).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        let with_reg = forward_loss(&model, &ad, &data, 0.3).unwrap();
        assert!((with_reg - (std::f64::consts::LN_2 + 0.3 * 3.0)).abs() < 1e-14);
    }

    #[test]
    fn unit_columns_switch_off_regularizer() {
        let mut rng = Seed(2).rng();
        let model = ToyModel::new(Matrix::random_normal(3, 4, 1.0, &mut rng));
        let a = Matrix::random_row_normalized(2, 4, 1.0, &mut rng);
        let b = Matrix::random_row_normalized(2, 3, 1.0, &mut rng).transpose();
        let ad = DecoupledAdapter::from_parts(a, b, vec![0.7, -1.2], Mask::full(2)).unwrap();
        let data = batch(Matrix::random_normal(4, 4, 1.0, &mut rng), vec![0, 2, 1, 1]);
        let plain = forward_loss(&model, &ad, &data, 0.0).unwrap();
        let reg = forward_loss(&model, &ad, &data, 1.0).unwrap();
        assert!((plain - reg).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        let model = ToyModel::new(Matrix::zeros(2, 2));
        let ad = DecoupledAdapter::init(Matrix::identity(2), 2, Mask::full(2), 1.0).unwrap();
        let data = batch(Matrix::zeros(1, 2), vec![2]);
        assert!(matches!(forward_loss(&model, &ad, &data, 0.0), Err(Error::Data(_))));
    }

    #[test]
    fn zero_b_freezes_lambda_but_not_b() {
        let mut rng = Seed(3).rng();
        let model = ToyModel::new(Matrix::random_normal(3, 4, 1.0, &mut rng));
        let a = Matrix::random_row_normalized(2, 4, 1.0, &mut rng);
        let ad = DecoupledAdapter::init(a, 3, Mask::full(2), 1.0).unwrap();
        let data = batch(Matrix::random_normal(6, 4, 1.0, &mut rng), vec![0, 1, 2, 0, 1, 2]);
        let g = backward(&model, &ad, &data, 0.0, Wrt::Client).unwrap();
        assert!(g.grad_lambda.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.unwrap().frobenius_norm() > 1e-3);
        assert!(g.grad_a.is_none());
    }

    #[test]
    fn masked_dims_have_zero_gradient() {
        let mut rng = Seed(4).rng();
        let model = ToyModel::new(Matrix::random_normal(3, 4, 1.0, &mut rng));
        let a = Matrix::random_row_normalized(3, 4, 1.0, &mut rng);
        let b = Matrix::random_normal(3, 3, 1.0, &mut rng);
        let ad = DecoupledAdapter::from_parts(a, b, vec![1.0, 0.5, 2.0], vec![true, false, true].into()).unwrap();
        let data = batch(Matrix::random_normal(6, 4, 1.0, &mut rng), vec![0, 1, 2, 0, 1, 2]);
        let g = backward(&model, &ad, &data, 0.5, Wrt::Client).unwrap();
        let gb = g.grad_b.unwrap();
        assert!((0..3).all(|i| gb[(i, 1)] == 0.0));
        assert_eq!(g.grad_lambda.unwrap()[1], 0.0);
        let ga = backward(&model, &ad, &data, 0.5, Wrt::Server).unwrap().grad_a.unwrap();
        assert!(ga.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accuracy_cases() {
        let mut rng = Seed(5).rng();
        let w = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let model = ToyModel::new(w.clone());
        let x = Matrix::random_normal(50, 4, 1.0, &mut rng);
        let y = (0..50)
            .map(|s| {
                let z = w.matvec(x.row(s)).unwrap();
                (0..3).fold(0, |best, c| if z[c] > z[best] { c } else { best })
            })
            .collect();
        let data = batch(x, y);
        assert_eq!(predict_accuracy(&model, &Matrix::zeros(3, 4), &data).unwrap(), 1.0);
        assert_eq!(predict_accuracy(&model, &Matrix::zeros(3, 4), &data.subset(&[7])).unwrap(), 1.0);
        assert!(matches!(predict_accuracy(&model, &Matrix::zeros(3, 4), &Dataset::empty(4)), Err(Error::Domain(_))));
    }

    #[test]
    fn all_ties_predict_class_zero() {
        let mut rng = Seed(6).rng();
        let model = ToyModel::new(Matrix::zeros(4, 3));
        let n = 10_000;
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let data = batch(Matrix::random_normal(n, 3, 1.0, &mut rng), y);
        let acc = predict_accuracy(&model, &Matrix::zeros(4, 3), &data).unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    }
}
