//! Client-side round: truncate the broadcast `A`, train `B` and the gate on the
//! local shard, upload the merged columns, then prune low-information dims.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adapter::{truncate_a, DecoupledAdapter, LoraHyper, Mask};
use crate::baselines::HomAdapterUpdate;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{backward, forward_loss, ToyModel, Wrt};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Minibatch size; `0` means full batch.
    pub batch_size: usize,
}

/// Runs `cfg.epochs` passes of minibatch SGD over `data`, updating the
/// parameters selected by `wrt` in place. Batches are reshuffled every epoch.
pub fn sgd<R: Rng + ?Sized>(
    model: &ToyModel,
    ad: &mut DecoupledAdapter,
    data: &Dataset,
    gamma: f64,
    wrt: Wrt,
    cfg: SgdConfig,
    rng: &mut R,
) -> Result<()> {
    if data.is_empty() {
        return Ok(());
    }
    let bs = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size.min(data.len()) };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(bs) {
            let batch = data.subset(chunk);
            sgd_step(model, ad, &batch, gamma, wrt, cfg.lr)?;
        }
    }
    Ok(())
}

/// One gradient step on a single batch.
pub fn sgd_step(
    model: &ToyModel,
    ad: &mut DecoupledAdapter,
    batch: &Dataset,
    gamma: f64,
    wrt: Wrt,
    lr: f64,
) -> Result<f64> {
    let g = backward(model, ad, batch, gamma, wrt)?;
    if let Some(gb) = &g.grad_b {
        ad.b.add_scaled(-lr, gb)?;
    }
    if let Some(gl) = &g.grad_lambda {
        for (l, d) in ad.lambda.iter_mut().zip(gl) {
            *l -= lr * d;
        }
    }
    if let Some(ga) = &g.grad_a {
        ad.a_slice.add_scaled(-lr, ga)?;
    }
    if !(ad.b.is_finite() && ad.a_slice.is_finite() && ad.lambda.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("SGD produced non-finite parameters; lower the learning rate".into()));
    }
    Ok(g.loss)
}

/// Upload payload of one client for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// `m x r_eff`: active columns of `B`, each scaled by its gate entry.
    pub b_merged: Matrix,
    /// Length `r_initial`.
    pub mask: Mask,
    pub data_count: usize,
    pub r_eff: usize,
}

impl ClientUpdate {
    pub fn new(client_id: usize, b_merged: Matrix, mask: Mask, data_count: usize) -> Result<Self> {
        let r_eff = mask.count();
        if b_merged.cols() != r_eff {
            return Err(Error::shape(format!(
                "upload has {} columns but its mask has {r_eff} active dims",
                b_merged.cols()
            )));
        }
        Ok(Self { client_id, b_merged, mask, data_count, r_eff })
    }
}

/// Result of [`ddr_prune`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneDecision {
    pub mask: Mask,
    /// Population standard deviation of the active `lambda^2` values.
    pub sigma: f64,
    /// `beta * sigma`.
    pub threshold: f64,
    /// True when every dim fell below the threshold and the largest was kept.
    pub floor_applied: bool,
}

/// Keeps active dim `j` iff `lambda_j^2 >= beta * sigma`, where `sigma` is the
/// population standard deviation of `lambda_sq` (the active dims, in index
/// order). Inactive dims stay inactive. With `keep_one`, a client never drops
/// to rank zero: its largest-`lambda^2` dim survives.
pub fn ddr_prune(mask: &Mask, lambda_sq: &[f64], beta: f64, keep_one: bool) -> Result<PruneDecision> {
    let active = mask.active_indices();
    if active.is_empty() {
        return Ok(PruneDecision { mask: mask.clone(), sigma: 0.0, threshold: 0.0, floor_applied: false });
    }
    if lambda_sq.len() != active.len() {
        return Err(Error::shape(format!("{} lambda values for {} active dims", lambda_sq.len(), active.len())));
    }
    let k = lambda_sq.len() as f64;
    let mean = lambda_sq.iter().sum::<f64>() / k;
    let sigma = (lambda_sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
    let threshold = beta * sigma;

    let mut next = mask.clone();
    for (&j, &v) in active.iter().zip(lambda_sq) {
        if v < threshold {
            next.set(j, false);
        }
    }
    let mut floor_applied = false;
    if keep_one && next.count() == 0 {
        let best = (0..lambda_sq.len()).fold(0, |b, i| if lambda_sq[i] > lambda_sq[b] { i } else { b });
        next.set(active[best], true);
        floor_applied = true;
    }
    Ok(PruneDecision { mask: next, sigma, threshold, floor_applied })
}

/// Everything a local round produces.
#[derive(Debug, Clone)]
pub struct LocalRound {
    pub update: ClientUpdate,
    /// Trained adapter, kept for pruning and diagnostics.
    pub adapter: DecoupledAdapter,
    /// Objective on the full shard at the start and end of the round.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Persistent per-client state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: Dataset,
    /// Resource cap: rank of the client's `A` slice.
    pub r_initial: usize,
    /// Carries over between rounds; only ever loses active entries.
    pub mask: Mask,
    pub sgd: SgdConfig,
    /// Keep at least one dimension when pruning.
    pub keep_one: bool,
}

impl ClientState {
    pub fn new(id: usize, shard: Dataset, r_initial: usize, sgd: SgdConfig) -> Self {
        Self { id, shard, r_initial, mask: Mask::full(r_initial), sgd, keep_one: true }
    }

    pub fn r_eff(&self) -> usize {
        self.mask.count()
    }

    /// Decoupled local fine-tuning. Returns `None` for an empty shard.
    pub fn local_round<R: Rng + ?Sized>(
        &self,
        a_global: &Matrix,
        model: &ToyModel,
        hyper: &LoraHyper,
        rng: &mut R,
    ) -> Result<Option<LocalRound>> {
        if self.shard.is_empty() {
            return Ok(None);
        }
        if a_global.rows() < self.r_initial {
            return Err(Error::shape(format!(
                "global A has {} rows, client {} needs {}",
                a_global.rows(),
                self.id,
                self.r_initial
            )));
        }
        let a_slice = truncate_a(a_global, self.r_initial)?;
        let mut ad = DecoupledAdapter::init(a_slice, model.num_classes(), self.mask.clone(), hyper.lambda_init)?;
        let loss_before = forward_loss(model, &ad, &self.shard, hyper.gamma)?;
        if self.r_eff() > 0 {
            sgd(model, &mut ad, &self.shard, hyper.gamma, Wrt::Client, self.sgd, rng)?;
        }
        let loss_after = forward_loss(model, &ad, &self.shard, hyper.gamma)?;
        let (b_merged, mask) = ad.merged_upload();
        let update = ClientUpdate::new(self.id, b_merged, mask, self.shard.len())?;
        Ok(Some(LocalRound { update, adapter: ad, loss_before, loss_after }))
    }

    /// Applies the pruning rule to the trained adapter of this round; the new
    /// mask takes effect from the next round.
    pub fn prune(&mut self, trained: &DecoupledAdapter, beta: f64) -> Result<PruneDecision> {
        let decision = ddr_prune(&self.mask, &trained.active_lambda_sq(), beta, self.keep_one)?;
        debug_assert!(decision.mask.is_subset_of(&self.mask));
        self.mask = decision.mask.clone();
        Ok(decision)
    }

    /// Conventional LoRA round used by the baselines: both `A` (from the
    /// first `r_initial` rows of `a_init`) and `B` train, the gate is fixed
    /// at one and there is no column-norm penalty.
    pub fn baseline_round<R: Rng + ?Sized>(
        &self,
        a_init: &Matrix,
        model: &ToyModel,
        rng: &mut R,
    ) -> Result<Option<HomAdapterUpdate>> {
        if self.shard.is_empty() {
            return Ok(None);
        }
        let a_slice = truncate_a(a_init, self.r_initial)?;
        let mut ad = DecoupledAdapter::init(a_slice, model.num_classes(), Mask::full(self.r_initial), 1.0)?;
        sgd(model, &mut ad, &self.shard, 0.0, Wrt::Joint, self.sgd, rng)?;
        Ok(Some(HomAdapterUpdate { a: ad.a_slice, b: ad.b, data_count: self.shard.len() }))
    }
}
