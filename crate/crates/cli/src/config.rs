//! Experiment configuration: which task variants to train, with which
//! network and optimizer, and how to audit the resulting runs.

use std::path::Path;

use lipscope::train::{InitScheme, TrainConfig};
use lipscope::Loss;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Offset added to a run seed to draw its held-out test set.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub seeds: Vec<u64>,
    pub network: NetworkSpec,
    /// `seed` inside is ignored; each run uses its entry of `seeds`.
    pub train: TrainConfig,
    #[serde(default)]
    pub audit: AuditSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Sinusoid {
        omegas: Vec<f64>,
        n: usize,
    },
    CorruptedBlobs {
        corruptions: Vec<f64>,
        n: usize,
        #[serde(default = "default_blob_dim")]
        n_dim: usize,
    },
}

fn default_blob_dim() -> usize {
    lipscope::tasks::BLOB_DEFAULT_DIM
}

/// One task instance of a [`TaskSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Sinusoid { omega: f64, n: usize },
    CorruptedBlobs { corruption: f64, n: usize, n_dim: usize },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Sinusoid { omega, .. } => format!("omega{omega}"),
            Variant::CorruptedBlobs { corruption, .. } => format!("corruption{corruption}"),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Variant::Sinusoid { .. } => lipscope::tasks::SINUSOID_AMBIENT_DIM,
            Variant::CorruptedBlobs { n_dim, .. } => *n_dim,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            Variant::Sinusoid { n, .. } | Variant::CorruptedBlobs { n, .. } => n,
        }
    }
}

impl TaskSpec {
    pub fn variants(&self) -> Vec<Variant> {
        match self {
            TaskSpec::Sinusoid { omegas, n } => omegas
                .iter()
                .map(|&omega| Variant::Sinusoid { omega, n: *n })
                .collect(),
            TaskSpec::CorruptedBlobs {
                corruptions,
                n,
                n_dim,
            } => corruptions
                .iter()
                .map(|&corruption| Variant::CorruptedBlobs {
                    corruption,
                    n: *n,
                    n_dim: *n_dim,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Hidden widths `n_1 … n_{d-1}`; the input width comes from the task.
    pub hidden: Vec<usize>,
    /// Start `W₁` at the identity (needs `n_1 = n_0`).
    #[serde(default)]
    pub first_identity: bool,
    #[serde(default)]
    pub init: InitScheme,
}

impl NetworkSpec {
    pub fn sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// Trajectory-audit window length in epochs.
    #[serde(default = "one")]
    pub window_epochs: u64,
    /// Fixed sandwich slack; the automatic rule is used when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Steady phase start as a fraction of the run.
    #[serde(default = "half")]
    pub tau_fraction: f64,
    /// Trailing epochs for the bias-variance audit.
    #[serde(default = "ten")]
    pub variance_epochs: u64,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_first_layer_probes")]
    pub first_layer_probes: usize,
    /// Confidence parameter of the generalization certificate.
    #[serde(default = "default_delta_conf")]
    pub delta_conf: f64,
    /// Seed for probe sampling.
    #[serde(default)]
    pub probe_seed: u64,
}

fn one() -> u64 {
    1
}
fn half() -> f64 {
    0.5
}
fn ten() -> u64 {
    10
}
fn default_probes() -> usize {
    1000
}
fn default_first_layer_probes() -> usize {
    64
}
fn default_delta_conf() -> f64 {
    0.05
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            window_epochs: one(),
            delta: None,
            tau_fraction: half(),
            variance_epochs: ten(),
            probes: default_probes(),
            first_layer_probes: default_first_layer_probes(),
            delta_conf: default_delta_conf(),
            probe_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds: must list at least one seed".into());
        }
        let variants = self.task.variants();
        if variants.is_empty() {
            return bad("task: must list at least one variant".into());
        }
        for v in &variants {
            match *v {
                Variant::Sinusoid { omega, n } => {
                    if !(omega > 0.0 && omega.is_finite()) {
                        return bad(format!("task.omegas: {omega} is not a positive frequency"));
                    }
                    if n == 0 {
                        return bad("task.n: must be at least 1".into());
                    }
                }
                Variant::CorruptedBlobs {
                    corruption,
                    n,
                    n_dim,
                } => {
                    if !(0.0..=1.0).contains(&corruption) {
                        return bad(format!("task.corruptions: {corruption} is outside [0, 1]"));
                    }
                    if n == 0 || n_dim == 0 {
                        return bad("task.n and task.n_dim must be at least 1".into());
                    }
                }
            }
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad("network.hidden: needs at least one hidden layer of positive width".into());
        }
        if self.network.first_identity && self.network.hidden[0] != variants[0].input_dim() {
            return bad(format!(
                "network.first_identity: first hidden width {} must equal the input width {}",
                self.network.hidden[0],
                variants[0].input_dim()
            ));
        }
        let task_loss = match self.task {
            TaskSpec::Sinusoid { .. } => Loss::Mse,
            TaskSpec::CorruptedBlobs { .. } => Loss::Bce,
        };
        if self.train.loss != task_loss {
            return bad(format!(
                "train.loss: this task is trained with {task_loss:?}, got {:?}",
                self.train.loss
            ));
        }
        self.train
            .validate(variants[0].n())
            .map_err(|e| Failure::Config(format!("train: {e}")))?;
        let a = &self.audit;
        if a.window_epochs == 0 {
            return bad("audit.window_epochs: must be at least 1".into());
        }
        if !(0.0..1.0).contains(&a.tau_fraction) {
            return bad("audit.tau_fraction: must lie in [0, 1)".into());
        }
        if !(a.delta_conf > 0.0 && a.delta_conf <= 1.0) {
            return bad("audit.delta_conf: must lie in (0, 1]".into());
        }
        if a.delta.is_some_and(|d| !(d >= 0.0 && d.is_finite())) {
            return bad("audit.delta: must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"{
            "task": {"kind": "sinusoid", "omegas": [0.25, 1.0], "n": 20},
            "seeds": [0],
            "network": {"hidden": [10, 8], "first_identity": true},
            "train": {"lr": {"constant": 0.01}, "epochs": 2, "loss": "mse", "freeze_first_weights": true}
        }"#
    }

    #[test]
    fn parses_and_validates() {
        let cfg: ExperimentConfig = serde_json::from_str(sample()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.task.variants().len(), 2);
        assert_eq!(cfg.network.sizes(10), vec![10, 10, 8, 1]);
        assert_eq!(cfg.audit, AuditSpec::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = sample().replace("\"seeds\"", "\"seedz\": [1], \"seeds\"");
        assert!(serde_json::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn field_level_messages() {
        let mut cfg: ExperimentConfig = serde_json::from_str(sample()).unwrap();
        cfg.seeds.clear();
        assert!(matches!(cfg.validate(), Err(Failure::Config(m)) if m.starts_with("seeds")));
        let mut cfg: ExperimentConfig = serde_json::from_str(sample()).unwrap();
        cfg.train.loss = Loss::Bce;
        assert!(matches!(cfg.validate(), Err(Failure::Config(m)) if m.starts_with("train.loss")));
    }
}
