use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::LoraHyper;
use crate::data::PartitionMode;
use crate::error::{Error, Result};

/// Aggregation scheme driving a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Aflora,
    Classic,
    Ideal,
    Flora,
    Flexlora,
    Hetlora,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Aflora, Method::Classic, Method::Ideal, Method::Flora, Method::Flexlora, Method::Hetlora];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aflora => "aflora",
            Method::Classic => "classic",
            Method::Ideal => "ideal",
            Method::Flora => "flora",
            Method::Flexlora => "flexlora",
            Method::Hetlora => "hetlora",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Synthetic task shape. `num_classes` is the backbone's output dim `m` and
/// `feature_dim` its input dim `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Expected distance scale between class means.
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { feature_dim: 64, num_classes: 64, samples_per_class: 60, separation: 4.0, noise_std: 1.0 }
    }
}

/// Adapter and protocol knobs; `m`, `n` and `r_max` follow from the task
/// and the rank caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSettings {
    pub c_norm: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub lambda_init: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        let h = LoraHyper::default();
        Self { c_norm: h.c_norm, beta: h.beta, gamma: h.gamma, alpha: h.alpha, lambda_init: h.lambda_init }
    }
}

/// Full experiment description, loadable from JSON. Missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub clients: usize,
    pub rank_caps: Vec<usize>,
    pub rounds: usize,
    pub participation: f64,
    pub partition: PartitionMode,
    pub task: TaskConfig,
    pub lora: LoraSettings,
    pub local_epochs: usize,
    pub lr: f64,
    /// `0` means full batch.
    pub batch_size: usize,
    pub server_epochs: usize,
    pub server_lr: f64,
    pub server_batch_size: usize,
    /// Std of the random frozen backbone entries.
    pub backbone_std: f64,
    /// Never prune a client below rank one.
    pub keep_one_dim: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub dump_rounds: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Aflora,
            clients: 10,
            rank_caps: vec![64, 32, 16, 16, 8, 8, 4, 4, 4, 4],
            rounds: 20,
            participation: 0.2,
            partition: PartitionMode::Noniid { epsilon: 0.5 },
            task: TaskConfig::default(),
            lora: LoraSettings::default(),
            local_epochs: 2,
            lr: 0.1,
            batch_size: 16,
            server_epochs: 2,
            server_lr: 0.1,
            server_batch_size: 16,
            backbone_std: 0.05,
            keep_one_dim: true,
            seed: 0,
            threads: 1,
            out: None,
            dump_rounds: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn r_max(&self) -> usize {
        self.rank_caps.iter().copied().max().unwrap_or(0)
    }

    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.clients as f64).round() as usize).clamp(1, self.clients.max(1))
    }

    pub fn lora_hyper(&self) -> LoraHyper {
        LoraHyper {
            m: self.task.num_classes,
            n: self.task.feature_dim,
            r_max: self.r_max(),
            c_norm: self.lora.c_norm,
            beta: self.lora.beta,
            gamma: self.lora.gamma,
            alpha: self.lora.alpha,
            lambda_init: self.lora.lambda_init,
        }
    }

    /// Checks every constraint up front so a run never fails half-way on bad input.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return bad("clients must be at least 1".into());
        }
        if self.rank_caps.len() != self.clients {
            return bad(format!("rank_caps has {} entries for {} clients", self.rank_caps.len(), self.clients));
        }
        if self.rank_caps.contains(&0) {
            return bad("rank caps must be positive".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad(format!("participation must lie in (0, 1], got {}", self.participation));
        }
        if self.participation * self.clients as f64 + 1e-9 < 1.0 {
            return bad(format!(
                "participation {} selects fewer than one of {} clients",
                self.participation, self.clients
            ));
        }
        if self.task.num_classes < 2 || self.task.feature_dim == 0 || self.task.samples_per_class == 0 {
            return bad("task needs at least 2 classes, 1 feature and 1 sample per class".into());
        }
        if !(self.task.noise_std >= 0.0 && self.task.separation > 0.0) {
            return bad("task noise must be non-negative and separation positive".into());
        }
        if let PartitionMode::Noniid { epsilon } = self.partition {
            if !(0.0..=1.0).contains(&epsilon) {
                return bad(format!("epsilon must lie in [0, 1], got {epsilon}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("server_lr", self.server_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.backbone_std >= 0.0 && self.backbone_std.is_finite()) {
            return bad(format!("backbone_std must be non-negative, got {}", self.backbone_std));
        }
        self.lora_hyper().validate()?;
        if matches!(self.method, Method::Classic) && self.rank_caps.iter().any(|&r| r != self.rank_caps[0]) {
            return bad("classic aggregation needs identical rank caps for every client".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}
