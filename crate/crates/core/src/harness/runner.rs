use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::metrics::{cost_ratios, RoundMetrics};
use crate::baselines::{
    classic_aggregate, data_weights, flexlora_redistribute, flora_aggregate, hetlora_aggregate, ideal_from_adapters,
    interference_gap, HomAdapterUpdate,
};
use crate::client::{ClientState, LocalRound, SgdConfig};
use crate::data::{generate, partition, PartitionedDataset, SyntheticTask};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{predict_accuracy, ToyModel};
use crate::rng::{Seed, TAG_CLIENT, TAG_INIT, TAG_ROUND, TAG_SAMPLE, TAG_SERVER};
use crate::server::{
    aggregate_b_weighted, broadcast_and_fold, fuse_a, rank_aware_weights, server_finetune_a, GlobalState,
};

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub method: Method,
    /// Test accuracy of the untouched backbone.
    pub initial_accuracy: f64,
    pub rounds: Vec<RoundMetrics>,
    pub initial_backbone: Matrix,
    pub final_backbone: Matrix,
    /// Per-round broadcast updates, in order.
    pub deltas: Vec<Matrix>,
}

impl ExperimentReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial_accuracy, |r| r.test_accuracy)
    }

    /// `final_backbone - initial_backbone`.
    pub fn total_delta(&self) -> Matrix {
        self.final_backbone.sub(&self.initial_backbone).expect("same shape")
    }
}

/// Data, clients and initial global state derived deterministically from a config.
pub struct Setup {
    pub data: PartitionedDataset,
    pub clients: Vec<ClientState>,
    pub global: GlobalState,
}

/// Builds the synthetic task, partitions it and initializes backbone and `A`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let t = &cfg.task;
    let task = SyntheticTask::gaussian_blobs(
        t.feature_dim,
        t.num_classes,
        t.samples_per_class,
        t.separation,
        t.noise_std,
        cfg.seed,
    );
    let dataset = generate(&task)?;
    let data = partition(&dataset, cfg.clients, cfg.partition, cfg.seed)?;

    let sgd = SgdConfig { epochs: cfg.local_epochs, lr: cfg.lr, batch_size: cfg.batch_size };
    let clients = data
        .shards
        .iter()
        .zip(&cfg.rank_caps)
        .enumerate()
        .map(|(id, (shard, &cap))| {
            let mut c = ClientState::new(id, shard.clone(), cap, sgd);
            c.keep_one = cfg.keep_one_dim;
            c
        })
        .collect();

    let mut rng = Seed(cfg.seed).child(TAG_INIT).rng();
    let hyper = cfg.lora_hyper();
    let backbone = Matrix::random_normal(hyper.m, hyper.n, cfg.backbone_std, &mut rng);
    let server_sgd = SgdConfig { epochs: cfg.server_epochs, lr: cfg.server_lr, batch_size: cfg.server_batch_size };
    let global = GlobalState::init(backbone, hyper, server_sgd, &mut rng)?;
    Ok(Setup { data, clients, global })
}

/// Participants of round `t` (1-based), sorted by id. Depends only on the
/// seed and `t`, so extending a run never changes earlier rounds.
pub fn sample_participants(cfg: &ExperimentConfig, t: usize) -> Vec<usize> {
    let mut rng = Seed(cfg.seed).child(TAG_ROUND).child(t as u64).child(TAG_SAMPLE).rng();
    let mut ids = sample(&mut rng, cfg.clients, cfg.participants_per_round()).into_vec();
    ids.sort_unstable();
    ids
}

fn client_seed(cfg: &ExperimentConfig, t: usize, id: usize) -> Seed {
    Seed(cfg.seed).child(TAG_ROUND).child(t as u64).child(TAG_CLIENT).child(id as u64)
}

fn server_seed(cfg: &ExperimentConfig, t: usize) -> Seed {
    Seed(cfg.seed).child(TAG_ROUND).child(t as u64).child(TAG_SERVER)
}

/// Maps `f` over the participants, in parallel when a pool is given. Output
/// order follows `ids` regardless of completion order.
fn fan_out<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    ids: &[usize],
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        Some(p) => p.install(|| ids.par_iter().map(|&k| f(k)).collect()),
        None => ids.iter().map(|&k| f(k)).collect(),
    }
}

struct RoundOutcome {
    delta: Matrix,
    weights: Vec<f64>,
    participant_r_eff: Vec<usize>,
    interference: Option<f64>,
    pruned_dims: usize,
}

/// Runs the configured federated experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let Setup { data, mut clients, mut global } = prepare(cfg)?;
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?,
        )
    } else {
        None
    };
    let (m, n) = (global.hyper.m, global.hyper.n);
    let initial_backbone = global.backbone.clone();
    // Baseline clients restart every round from this shared initial A.
    let a_init = global.a_global.clone();
    let initial_accuracy = predict_accuracy(&global.model(), &Matrix::zeros(m, n), &data.test_split)?;

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut deltas = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let started = Instant::now();
        let participants = sample_participants(cfg, t);
        let per_client_r_eff: Vec<usize> = clients.iter().map(ClientState::r_eff).collect();
        let model = global.model();

        let outcome = match cfg.method {
            Method::Aflora => {
                aflora_round(cfg, t, &participants, &mut clients, &mut global, &model, &data, pool.as_ref())?
            }
            method => baseline_round(cfg, method, t, &participants, &clients, &a_init, &model, pool.as_ref())?,
        };

        global.backbone.add_scaled(1.0, &outcome.delta)?;
        global.round = t;
        if !global.backbone.is_finite() {
            return Err(Error::Numerical(format!("backbone diverged in round {t}")));
        }
        let accuracy = predict_accuracy(&global.model(), &Matrix::zeros(m, n), &data.test_split)?;
        let (trained, comm) = cost_ratios(cfg.method, &outcome.participant_r_eff, m, n);
        rounds.push(RoundMetrics {
            round: t,
            test_accuracy: accuracy,
            per_client_r_eff: if cfg.method == Method::Aflora { per_client_r_eff } else { cfg.rank_caps.clone() },
            trained_param_ratio: trained,
            communicated_param_ratio: comm,
            interference_fnorm: outcome.interference,
            participants,
            weights: outcome.weights,
            participant_r_eff: outcome.participant_r_eff,
            delta_fnorm: outcome.delta.frobenius_norm(),
            pruned_dims: outcome.pruned_dims,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        deltas.push(outcome.delta);
    }
    Ok(ExperimentReport {
        method: cfg.method,
        initial_accuracy,
        rounds,
        initial_backbone,
        final_backbone: global.backbone,
        deltas,
    })
}

#[allow(clippy::too_many_arguments)]
fn aflora_round(
    cfg: &ExperimentConfig,
    t: usize,
    participants: &[usize],
    clients: &mut [ClientState],
    global: &mut GlobalState,
    model: &ToyModel,
    data: &PartitionedDataset,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RoundOutcome> {
    let hyper = global.hyper.clone();
    let a_global = global.a_global.clone();
    let locals: Vec<Option<LocalRound>> = {
        let clients = &*clients;
        fan_out(pool, participants, |k| {
            clients[k].local_round(&a_global, model, &hyper, &mut client_seed(cfg, t, k).rng())
        })?
    };
    let locals: Vec<LocalRound> = locals.into_iter().flatten().collect();
    let (m, n) = (hyper.m, hyper.n);
    if locals.is_empty() {
        return Ok(RoundOutcome {
            delta: Matrix::zeros(m, n),
            weights: Vec::new(),
            participant_r_eff: Vec::new(),
            interference: None,
            pruned_dims: 0,
        });
    }
    let updates: Vec<_> = locals.iter().map(|l| l.update.clone()).collect();
    let weights = rank_aware_weights(&updates)?;
    global.b_global = aggregate_b_weighted(&updates, &weights, hyper.r_max)?;

    // Residual of the aggregated product against the clients' own updates.
    let mut ideal = Matrix::zeros(m, n);
    for (l, &p) in locals.iter().zip(&weights) {
        ideal.add_scaled(p, &l.adapter.delta_weight())?;
    }
    let residual = broadcast_and_fold(global)?.sub(&ideal)?.frobenius_norm();

    let a_ft = server_finetune_a(global, &data.public_split, model, &mut server_seed(cfg, t).rng())?;
    global.a_global = fuse_a(&global.a_global, &a_ft, hyper.alpha)?;
    let delta = broadcast_and_fold(global)?;

    let mut pruned_dims = 0;
    for l in &locals {
        let c = &mut clients[l.update.client_id];
        let before = c.r_eff();
        c.prune(&l.adapter, hyper.beta)?;
        pruned_dims += before - c.r_eff();
    }
    Ok(RoundOutcome {
        delta,
        weights,
        participant_r_eff: updates.iter().map(|u| u.r_eff).collect(),
        interference: Some(residual),
        pruned_dims,
    })
}

#[allow(clippy::too_many_arguments)]
fn baseline_round(
    cfg: &ExperimentConfig,
    method: Method,
    t: usize,
    participants: &[usize],
    clients: &[ClientState],
    a_init: &Matrix,
    model: &ToyModel,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RoundOutcome> {
    let uploads: Vec<Option<HomAdapterUpdate>> =
        fan_out(pool, participants, |k| clients[k].baseline_round(a_init, model, &mut client_seed(cfg, t, k).rng()))?;
    let uploads: Vec<HomAdapterUpdate> = uploads.into_iter().flatten().collect();
    let (m, n) = (model.num_classes(), model.input_dim());
    if uploads.is_empty() {
        return Ok(RoundOutcome {
            delta: Matrix::zeros(m, n),
            weights: Vec::new(),
            participant_r_eff: Vec::new(),
            interference: None,
            pruned_dims: 0,
        });
    }
    let weights = data_weights(&uploads.iter().map(|u| u.data_count).collect::<Vec<_>>())?;
    let ranks: Vec<usize> = uploads.iter().map(HomAdapterUpdate::rank).collect();
    let delta = match method {
        Method::Classic => {
            let (a, b) = classic_aggregate(&uploads)?;
            b.matmul(&a)?
        }
        Method::Hetlora => {
            let (a, b) = hetlora_aggregate(&uploads)?;
            b.matmul(&a)?
        }
        Method::Ideal => ideal_from_adapters(&uploads)?,
        Method::Flora => flora_aggregate(&uploads)?,
        Method::Flexlora => {
            // Global model: weighted mean of what each client receives back.
            let w = ideal_from_adapters(&uploads)?;
            let mut out = Matrix::zeros(m, n);
            for ((a, b), &p) in flexlora_redistribute(&w, &ranks)?.iter().zip(&weights) {
                out.add_scaled(p, &b.matmul(a)?)?;
            }
            out
        }
        Method::Aflora => unreachable!("handled by aflora_round"),
    };
    Ok(RoundOutcome {
        delta,
        weights,
        participant_r_eff: ranks,
        interference: interference_gap(&uploads)?,
        pruned_dims: 0,
    })
}
