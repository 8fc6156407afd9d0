//! Server side: zero-padding harmonization, rank-aware aggregation of the
//! uploaded `B'` matrices, server fine-tuning of the global `A` on the public
//! split, fusion, and the broadcast product.
//!
//! Because every client's `A` slice is a prefix of the same global `A`, the
//! aggregated `B_global * A_global` equals the weighted sum of the clients'
//! own `B Lambda A` products exactly.

use rand::Rng;

use crate::adapter::{DecoupledAdapter, LoraHyper, Mask};
use crate::client::{sgd, ClientUpdate, SgdConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{zero_pad_cols, Matrix};
use crate::model::{ToyModel, Wrt};

/// Global protocol state.
#[derive(Debug, Clone)]
pub struct GlobalState {
    /// `r_max x n`; rows start at norm `C` and are not re-normalized after fusion.
    pub a_global: Matrix,
    /// `m x r_max`.
    pub b_global: Matrix,
    /// Current backbone with every broadcast update folded in.
    pub backbone: Matrix,
    pub round: usize,
    pub hyper: LoraHyper,
    pub server_sgd: SgdConfig,
}

impl GlobalState {
    /// Fresh state with row-normalized random `A` and zero `B`.
    pub fn init<R: Rng + ?Sized>(
        backbone: Matrix,
        hyper: LoraHyper,
        server_sgd: SgdConfig,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        if backbone.shape() != (hyper.m, hyper.n) {
            return Err(Error::shape(format!(
                "backbone is {}x{}, hyperparameters say {}x{}",
                backbone.rows(),
                backbone.cols(),
                hyper.m,
                hyper.n
            )));
        }
        let a_global = Matrix::random_row_normalized(hyper.r_max, hyper.n, hyper.c_norm, rng);
        let b_global = Matrix::zeros(hyper.m, hyper.r_max);
        Ok(Self { a_global, b_global, backbone, round: 0, hyper, server_sgd })
    }

    pub fn model(&self) -> ToyModel {
        ToyModel::new(self.backbone.clone())
    }
}

/// Embeds an upload into the `m x r_max` global width: active columns go back
/// to their original indices, everything else is zero.
pub fn harmonize(update: &ClientUpdate, r_max: usize) -> Result<Matrix> {
    if update.mask.len() > r_max {
        return Err(Error::shape(format!(
            "client {} mask of length {} exceeds r_max {r_max}",
            update.client_id,
            update.mask.len()
        )));
    }
    zero_pad_cols(&update.b_merged, r_max, update.mask.as_slice())
}

/// `log(1 + r_k) / sum log(1 + r) * |D_k| / sum |D|`, renormalized to sum to one.
pub fn rank_aware_weights(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::Aggregation("no updates to weight".into()));
    }
    let log_sum: f64 = updates.iter().map(|u| (u.r_eff as f64).ln_1p()).sum();
    let data_sum: f64 = updates.iter().map(|u| u.data_count as f64).sum();
    if log_sum == 0.0 || data_sum == 0.0 {
        return Err(Error::Aggregation("every update has zero rank or zero data".into()));
    }
    let raw: Vec<f64> =
        updates.iter().map(|u| (u.r_eff as f64).ln_1p() / log_sum * (u.data_count as f64 / data_sum)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Aggregation("rank-aware weights sum to zero".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `sum_k p_k * harmonize(update_k)` with rank-aware weights.
pub fn aggregate_b(updates: &[ClientUpdate], r_max: usize) -> Result<Matrix> {
    let weights = rank_aware_weights(updates)?;
    aggregate_b_weighted(updates, &weights, r_max)
}

/// Weighted sum of harmonized uploads with caller-supplied weights.
pub fn aggregate_b_weighted(updates: &[ClientUpdate], weights: &[f64], r_max: usize) -> Result<Matrix> {
    if updates.len() != weights.len() {
        return Err(Error::shape(format!("{} updates but {} weights", updates.len(), weights.len())));
    }
    let m = updates.first().map_or(0, |u| u.b_merged.rows());
    let mut out = Matrix::zeros(m, r_max);
    for (u, &p) in updates.iter().zip(weights) {
        out.add_scaled(p, &harmonize(u, r_max)?)?;
    }
    Ok(out)
}

/// SGD on the public split over `A` with `B_global` frozen. The gate is
/// already folded into `B_global`, so it enters as the identity. No
/// column-norm penalty applies here.
pub fn server_finetune_a<R: Rng + ?Sized>(
    state: &GlobalState,
    public: &Dataset,
    model: &ToyModel,
    rng: &mut R,
) -> Result<Matrix> {
    if public.is_empty() || state.server_sgd.epochs == 0 {
        return Ok(state.a_global.clone());
    }
    let r_max = state.a_global.rows();
    let mut ad = DecoupledAdapter::from_parts(
        state.a_global.clone(),
        state.b_global.clone(),
        vec![1.0; r_max],
        Mask::full(r_max),
    )?;
    sgd(model, &mut ad, public, 0.0, Wrt::Server, state.server_sgd, rng)?;
    Ok(ad.a_slice)
}

/// `alpha * a_old + (1 - alpha) * a_ft`.
pub fn fuse_a(a_old: &Matrix, a_ft: &Matrix, alpha: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("fusion ratio {alpha} outside [0, 1]")));
    }
    if a_old.shape() != a_ft.shape() {
        return Err(Error::shape(format!(
            "cannot fuse {}x{} with {}x{}",
            a_old.rows(),
            a_old.cols(),
            a_ft.rows(),
            a_ft.cols()
        )));
    }
    let mut out = a_old.scale(alpha);
    out.add_scaled(1.0 - alpha, a_ft)?;
    Ok(out)
}

/// The update every client folds into its backbone: `B_global * A_global`.
pub fn broadcast_and_fold(state: &GlobalState) -> Result<Matrix> {
    state.b_global.matmul(&state.a_global)
}
