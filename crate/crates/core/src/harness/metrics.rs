use serde::Serialize;

use super::config::Method;

/// Per-round measurements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub test_accuracy: f64,
    /// Rank each client trained with this round, indexed by client id.
    pub per_client_r_eff: Vec<usize>,
    pub trained_param_ratio: f64,
    pub communicated_param_ratio: f64,
    /// Classic-vs-ideal gap of this round's uploads; for AFLoRA the residual
    /// between the aggregated product and the ideal one. `None` when the
    /// uploads have mixed ranks.
    pub interference_fnorm: Option<f64>,
    pub participants: Vec<usize>,
    /// Aggregation weights of the participants, in participant order.
    pub weights: Vec<f64>,
    /// Rank each participant trained with, in participant order.
    pub participant_r_eff: Vec<usize>,
    pub delta_fnorm: f64,
    /// Dimensions switched off by pruning at the end of this round.
    pub pruned_dims: usize,
    pub wall_time_secs: f64,
}

impl RoundMetrics {
    pub fn mean_r_eff(&self) -> f64 {
        if self.per_client_r_eff.is_empty() {
            return 0.0;
        }
        self.per_client_r_eff.iter().sum::<usize>() as f64 / self.per_client_r_eff.len() as f64
    }
}

/// Client-side cost of one round, as fractions of the backbone size `m * n`,
/// averaged over the participating clients' ranks.
///
/// AFLoRA clients train `m r + r` parameters (active `B` columns and the gate)
/// and upload `m r`. Baseline clients train and upload both factors,
/// `(m + n) r`.
pub fn cost_ratios(method: Method, ranks: &[usize], m: usize, n: usize) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let total = (m * n) as f64 * ranks.len() as f64;
    let (trained, comm): (usize, usize) = match method {
        Method::Aflora => ranks.iter().fold((0, 0), |(t, c), &r| (t + m * r + r, c + m * r)),
        _ => ranks.iter().fold((0, 0), |(t, c), &r| (t + (m + n) * r, c + (m + n) * r)),
    };
    (trained as f64 / total, comm as f64 / total)
}

/// Round-averaged `(trained, communicated)` ratios.
pub fn mean_cost_ratios(rounds: &[RoundMetrics]) -> (f64, f64) {
    if rounds.is_empty() {
        return (0.0, 0.0);
    }
    let k = rounds.len() as f64;
    (
        rounds.iter().map(|r| r.trained_param_ratio).sum::<f64>() / k,
        rounds.iter().map(|r| r.communicated_param_ratio).sum::<f64>() / k,
    )
}
