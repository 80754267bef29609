//! Instrumented SGD.
//!
//! Each step samples a mini-batch uniformly with replacement, optionally
//! applies ½-Dropout to the hidden outputs, updates every parameter by the
//! batch-mean gradient scaled by `α_t`, and records the quantities the
//! audits consume: the first-layer bias update norm, the loss-derivative
//! magnitude `ε`, their ratio `φ_t = ‖Δb₁‖ / (α_t ε)` and the singular-value
//! extremes of `W₁`.
//!
//! Randomness comes from three independent ChaCha8 streams of the run seed:
//! stream 0 initializes weights, stream 1 samples training indices and
//! stream 2 draws Dropout masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::network::{
    self, Activation, ActivationPattern, Layer, LayerGrad, Loss, Network, NnError,
};
use crate::tasks::Dataset;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SAMPLING: u64 = 1;
pub const STREAM_DROPOUT: u64 = 2;

/// Loss value above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at iteration {t}: {reason}")]
    Diverged { t: u64, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset inputs have dimension {found}, network expects {expected}")]
    InputDim { expected: usize, found: usize },
}

/// Learning-rate schedule `t ↦ α_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant(f64),
    /// `α_t = initial / (1 + decay · t)`.
    InverseTime { initial: f64, decay: f64 },
    /// Piecewise-constant: the rate of the last `(start, rate)` pair with
    /// `start ≤ t`. The first pair must start at 0.
    Piecewise(Vec<(u64, f64)>),
}

impl LrSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        match self {
            LrSchedule::Constant(a) => *a,
            LrSchedule::InverseTime { initial, decay } => initial / (1.0 + decay * t as f64),
            LrSchedule::Piecewise(steps) => steps
                .iter()
                .take_while(|(start, _)| *start <= t)
                .last()
                .map_or(f64::NAN, |(_, r)| *r),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            LrSchedule::Constant(a) if !(*a > 0.0 && a.is_finite()) => {
                Err(format!("learning rate must be positive, got {a}"))
            }
            LrSchedule::InverseTime { initial, decay }
                if !(*initial > 0.0 && initial.is_finite() && *decay >= 0.0) =>
            {
                Err("inverse-time schedule needs initial > 0 and decay >= 0".into())
            }
            LrSchedule::Piecewise(steps) => {
                if steps.first().map(|s| s.0) != Some(0) {
                    return Err("piecewise schedule must start at t = 0".into());
                }
                if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err("piecewise schedule starts must increase".into());
                }
                if steps.iter().any(|(_, r)| !(*r > 0.0 && r.is_finite())) {
                    return Err("piecewise rates must be positive".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dropout {
    #[default]
    Off,
    /// Each hidden unit's output is zeroed with probability ½ for one step.
    /// No rescaling at train or test time.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases `~ U(−1/√fan_in, 1/√fan_in)`.
    #[default]
    UniformFanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: LrSchedule,
    /// Total SGD steps. Exactly one of `iterations` / `epochs` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "one")]
    pub batch_size: usize,
    pub loss: Loss,
    #[serde(default)]
    pub dropout: Dropout,
    #[serde(default)]
    pub seed: u64,
    /// Keep per-sample activation patterns in every record.
    #[serde(default)]
    pub record_patterns: bool,
    /// Keep `b₁(t)` for every `t` (needed by the bias-variance audit).
    #[serde(default)]
    pub record_bias: bool,
    #[serde(default)]
    pub freeze_first_weights: bool,
    /// Iterations between network checkpoints; defaults to one epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_stride: Option<u64>,
    /// Stop at the first epoch end where the mean training loss is below
    /// this value; `iterations`/`epochs` is then a cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below_loss: Option<f64>,
    /// Epochs to train before `stop_below_loss` is checked.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub min_epochs: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(lr: f64, loss: Loss, seed: u64) -> Self {
        Self {
            lr: LrSchedule::Constant(lr),
            iterations: None,
            epochs: None,
            batch_size: 1,
            loss,
            dropout: Dropout::Off,
            seed,
            record_patterns: false,
            record_bias: false,
            freeze_first_weights: false,
            checkpoint_stride: None,
            stop_below_loss: None,
            min_epochs: 0,
        }
    }

    /// Steps per epoch: `N / batch_size` (at least one), i.e. N samples.
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        ((n / self.batch_size.max(1)).max(1)) as u64
    }

    pub fn total_iterations(&self, n: usize) -> u64 {
        match (self.iterations, self.epochs) {
            (Some(it), _) => it,
            (None, Some(e)) => e * self.steps_per_epoch(n),
            (None, None) => 0,
        }
    }

    pub fn stride(&self, n: usize) -> u64 {
        self.checkpoint_stride
            .unwrap_or_else(|| self.steps_per_epoch(n))
            .max(1)
    }

    pub fn validate(&self, n: usize) -> Result<(), TrainError> {
        self.lr.validate().map_err(TrainError::Config)?;
        if self.iterations.is_some() && self.epochs.is_some() {
            return Err(TrainError::Config(
                "set either iterations or epochs, not both".into(),
            ));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(TrainError::Config(format!(
                "batch_size must lie in 1..={n}, got {}",
                self.batch_size
            )));
        }
        if self.stop_below_loss.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return Err(TrainError::Config("stop_below_loss must be positive".into()));
        }
        if self.checkpoint_stride == Some(0) {
            return Err(TrainError::Config("checkpoint_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable digest of the normalized config.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Network with the given layer widths `[n_0, n_1, …, n_{d-1}, 1]`.
///
/// With `first_identity`, `W₁` is the identity (requires `n_1 = n_0`).
pub fn init_network(
    sizes: &[usize],
    head: Activation,
    scheme: InitScheme,
    first_identity: bool,
    seed: u64,
) -> Result<Network, TrainError> {
    if sizes.len() < 2 || *sizes.last().unwrap() != 1 {
        return Err(TrainError::Config(
            "layer sizes must be [n_0, …, 1] with at least two entries".into(),
        ));
    }
    if first_identity && (sizes.len() < 3 || sizes[1] != sizes[0]) {
        return Err(TrainError::Config(
            "identity first layer needs a hidden layer with n_1 = n_0".into(),
        ));
    }
    let InitScheme::UniformFanIn = scheme;
    let mut rng = rng_stream(seed, STREAM_INIT);
    let depth = sizes.len() - 1;
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = if l == 0 && first_identity {
            Matrix::identity(fan_in)
        } else {
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Matrix::from_vec(fan_out, fan_in, data)
        };
        let bias = (0..fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let act = if l + 1 == depth { head } else { Activation::Relu };
        layers.push(Layer::new(weight, bias, act));
    }
    Ok(Network::new(layers)?)
}

/// Patterns of one sampled point at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePatterns {
    /// Before Dropout.
    pub pre: ActivationPattern,
    /// After Dropout (what the gradient actually flowed through).
    pub post: ActivationPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u64,
    pub alpha: f64,
    pub sampled: Vec<usize>,
    /// Per-sample `ε`.
    pub epsilons: Vec<f64>,
    /// Batch aggregate: mean of `epsilons`.
    pub epsilon: f64,
    /// `‖b₁(t+1) − b₁(t)‖₂`.
    pub db1_norm: f64,
    /// `db1_norm / (α_t ε)`; absent on zero-gradient steps.
    pub phi: Option<f64>,
    pub sigma1: f64,
    pub sigman: f64,
    /// Batch-mean loss before the update.
    pub loss: f64,
    /// `f(x)` of each sampled point (post-Dropout).
    pub head_outputs: Vec<f64>,
    /// `‖∇_x f(x_t)‖₂` at the sampled point through the same (possibly
    /// masked) pattern; single-sample steps only.
    pub lambda_sample: Option<f64>,
    /// Frobenius norm of the `W₂` update (its spectral norm for batch size 1).
    pub dw2_norm: f64,
    /// `‖b₂(t+1) − b₂(t)‖₂`.
    pub db2_norm: f64,
    /// `‖b₁(t)‖₂` before the update.
    pub b1_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns: Option<Vec<SamplePatterns>>,
}

impl IterationRecord {
    pub fn zero_gradient(&self) -> bool {
        self.phi.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    pub config: TrainConfig,
    pub initial: Network,
    pub records: Vec<IterationRecord>,
    /// Iteration index at which each epoch starts.
    pub epoch_boundaries: Vec<u64>,
    pub steps_per_epoch: u64,
    pub final_network: Network,
    /// Network states `w(t)` at `t = 0, stride, 2·stride, …` and at the end.
    pub checkpoints: Vec<Checkpoint>,
    pub checkpoint_stride: u64,
    /// `b₁(t)` for `t = 0..=T` when `record_bias` is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_trace: Option<Vec<Vec<f64>>>,
}

impl RunLog {
    pub fn iterations(&self) -> u64 {
        self.records.len() as u64
    }

    /// Digest of the complete log; equal digests mean bit-identical logs.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("run log serializes");
        hex_digest(json.as_bytes())
    }

    /// `b₁(t)`, from the dense trace or an exact checkpoint.
    pub fn bias_at(&self, t: u64) -> Option<Vec<f64>> {
        if let Some(trace) = &self.bias_trace {
            return trace.get(t as usize).cloned();
        }
        self.checkpoints
            .iter()
            .find(|c| c.t == t)
            .map(|c| c.network.first_bias().to_vec())
    }

    /// Sum of `φ_t` per epoch over non-zero-gradient steps.
    pub fn sum_phi_per_epoch(&self) -> Vec<f64> {
        let spe = self.steps_per_epoch.max(1) as usize;
        self.records
            .chunks(spe)
            .map(|c| c.iter().filter_map(|r| r.phi).sum())
            .collect()
    }

    /// Header and rows of `trajectory.csv`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("t,sample_idx,epsilon,db1_norm,phi,sigma1,sigman,loss,head_output\n");
        for r in &self.records {
            let idx: Vec<String> = r.sampled.iter().map(usize::to_string).collect();
            let heads: Vec<String> = r.head_outputs.iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t,
                idx.join(";"),
                r.epsilon,
                r.db1_norm,
                r.phi.map(|p| p.to_string()).unwrap_or_default(),
                r.sigma1,
                r.sigman,
                r.loss,
                heads.join(";"),
            ));
        }
        out
    }
}

/// Owns a training run's mutable state.
pub struct Trainer<'a> {
    net: Network,
    data: &'a Dataset,
    config: TrainConfig,
    sampler: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    t: u64,
    /// Cached `(σ₁, σₙ)` of `W₁` while it is frozen.
    frozen_sigma: Option<(f64, f64)>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: Network, data: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if data.dim() != net.input_dim() {
            return Err(TrainError::InputDim {
                expected: net.input_dim(),
                found: data.dim(),
            });
        }
        config.validate(data.len())?;
        net.check_loss(config.loss)?;
        let frozen_sigma = config
            .freeze_first_weights
            .then(|| linalg::singular_extremes(net.first_weight()));
        Ok(Self {
            sampler: rng_stream(config.seed, STREAM_SAMPLING),
            dropout_rng: rng_stream(config.seed, STREAM_DROPOUT),
            net,
            data,
            config,
            t: 0,
            frozen_sigma,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    fn draw_masks(&mut self) -> Vec<Vec<bool>> {
        self.net
            .hidden_sizes()
            .iter()
            .map(|&n| (0..n).map(|_| self.dropout_rng.random_bool(0.5)).collect())
            .collect()
    }

    /// One SGD step; returns its record. The parameters are updated even
    /// when the gradient is zero (the update is then zero too).
    pub fn step(&mut self) -> Result<IterationRecord, TrainError> {
        let t = self.t;
        let loss_kind = self.config.loss;
        let alpha = self.config.lr.rate(t);
        let batch = self.config.batch_size;
        let n = self.data.len();
        let sampled: Vec<usize> = (0..batch).map(|_| self.sampler.random_range(0..n)).collect();

        let (sigma1, sigman) = match self.frozen_sigma {
            Some(s) => s,
            None => linalg::singular_extremes(self.net.first_weight()),
        };

        let mut total: Option<Vec<LayerGrad>> = None;
        let mut epsilons = Vec::with_capacity(batch);
        let mut head_outputs = Vec::with_capacity(batch);
        let mut loss_sum = 0.0;
        let mut patterns = self.config.record_patterns.then(Vec::new);
        let mut lambda_sample = None;
        for &i in &sampled {
            let masks = match self.config.dropout {
                Dropout::Off => None,
                Dropout::Half => Some(self.draw_masks()),
            };
            let x = &self.data.inputs[i];
            let y = self.data.labels[i];
            let trace = self.net.trace(x, masks.as_deref())?;
            let eps = network::epsilon(loss_kind, trace.output, y)?;
            let seed = loss_kind.derivative(trace.output, y)?;
            let (grads, _) = self.net.backprop(&trace, seed);
            if batch == 1 {
                let (_, gx) = self.net.backprop(&trace, 1.0);
                lambda_sample = Some(linalg::norm2(&gx));
            }
            loss_sum += loss_kind.value(trace.output, y);
            epsilons.push(eps);
            head_outputs.push(trace.output);
            if let Some(p) = patterns.as_mut() {
                p.push(SamplePatterns {
                    pre: trace.pattern.clone(),
                    post: trace.effective.clone(),
                });
            }
            total = Some(match total {
                None => grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                            *x += y;
                        }
                        for (x, y) in a.bias.iter_mut().zip(&g.bias) {
                            *x += y;
                        }
                    }
                    acc
                }
            });
        }
        let mut grads = total.expect("batch is nonempty");
        let inv = 1.0 / batch as f64;
        for g in &mut grads {
            g.weight.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
            g.bias.iter_mut().for_each(|v| *v *= inv);
        }
        let loss = loss_sum * inv;
        let epsilon = epsilons.iter().sum::<f64>() * inv;

        let b1_before = self.net.first_bias().to_vec();
        let b2_before = self.net.layers()[1.min(self.net.depth() - 1)].bias.clone();
        let w2_before = self.net.layers()[1.min(self.net.depth() - 1)].weight.clone();
        let b1_norm = linalg::norm2(&b1_before);
        self.net
            .apply_gradient(&grads, alpha, self.config.freeze_first_weights);

        let db1: Vec<f64> = self
            .net
            .first_bias()
            .iter()
            .zip(&b1_before)
            .map(|(a, b)| a - b)
            .collect();
        let db1_norm = linalg::norm2(&db1);
        let (dw2_norm, db2_norm) = if self.net.depth() >= 2 {
            let l2 = &self.net.layers()[1];
            let db2: Vec<f64> = l2.bias.iter().zip(&b2_before).map(|(a, b)| a - b).collect();
            (l2.weight.sub(&w2_before).frobenius_norm(), linalg::norm2(&db2))
        } else {
            (0.0, 0.0)
        };
        let phi = (epsilon > 0.0).then(|| db1_norm / (alpha * epsilon));

        if !(loss.is_finite() && loss <= DIVERGENCE_LOSS) {
            return Err(TrainError::Diverged {
                t,
                reason: format!("loss {loss} exceeds {DIVERGENCE_LOSS:e}"),
            });
        }
        if !self.net.is_finite() {
            return Err(TrainError::Diverged {
                t,
                reason: "non-finite parameter".into(),
            });
        }

        self.t += 1;
        Ok(IterationRecord {
            t,
            alpha,
            sampled,
            epsilons,
            epsilon,
            db1_norm,
            phi,
            sigma1,
            sigman,
            loss,
            head_outputs,
            lambda_sample,
            dw2_norm,
            db2_norm,
            b1_norm,
            patterns,
        })
    }
}

/// Executes `config`'s iterations from `net0` and returns the full log.
pub fn run_training(net0: &Network, data: &Dataset, config: &TrainConfig) -> Result<RunLog, TrainError> {
    let mut trainer = Trainer::new(net0.clone(), data, config.clone())?;
    let total = config.total_iterations(data.len());
    let spe = config.steps_per_epoch(data.len());
    let stride = config.stride(data.len());
    let mut records = Vec::with_capacity(total as usize);
    let mut checkpoints = vec![Checkpoint {
        t: 0,
        network: net0.clone(),
    }];
    let mut bias_trace = config
        .record_bias
        .then(|| vec![net0.first_bias().to_vec()]);
    for _ in 0..total {
        let rec = trainer.step()?;
        records.push(rec);
        let t = trainer.iteration();
        if let Some(trace) = bias_trace.as_mut() {
            trace.push(trainer.network().first_bias().to_vec());
        }
        let fitted = match config.stop_below_loss {
            Some(target) if t % spe == 0 && t / spe >= config.min_epochs => {
                mean_loss(trainer.network(), data, config.loss)? < target
            }
            _ => false,
        };
        if t % stride == 0 || t == total || fitted {
            checkpoints.push(Checkpoint {
                t,
                network: trainer.network().clone(),
            });
        }
        if fitted {
            break;
        }
    }
    let done = trainer.iteration();
    let epoch_boundaries = (0..done).step_by(spe as usize).collect();
    Ok(RunLog {
        config_hash: config.hash_hex(),
        config: config.clone(),
        initial: net0.clone(),
        records,
        epoch_boundaries,
        steps_per_epoch: spe,
        final_network: trainer.into_network(),
        checkpoints,
        checkpoint_stride: stride,
        bias_trace,
    })
}

/// `‖∂ℓ/∂b₁‖ / ε` at a fixed network: the `φ` a single-sample step would
/// record without moving the parameters. `None` when `ε = 0`.
pub fn frozen_phi(net: &Network, x: &[f64], y: f64, loss: Loss) -> Result<Option<f64>, NnError> {
    net.check_loss(loss)?;
    let trace = net.trace(x, None)?;
    let eps = network::epsilon(loss, trace.output, y)?;
    if eps == 0.0 {
        return Ok(None);
    }
    let seed = loss.derivative(trace.output, y)?;
    let (grads, _) = net.backprop(&trace, seed);
    Ok(Some(linalg::norm2(&grads[0].bias) / eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronFrequencies {
    /// Fraction of points activating each hidden unit, per hidden layer.
    pub per_layer: Vec<Vec<f64>>,
    pub p_min: f64,
    pub p_avg: f64,
}

/// How often each hidden unit is active over `data` (no Dropout).
pub fn neuron_frequencies(net: &Network, data: &Dataset) -> Result<NeuronFrequencies, NnError> {
    let sizes = net.hidden_sizes();
    let mut counts: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![0; n]).collect();
    for x in &data.inputs {
        let p = net.pattern(x)?;
        for (c, layer) in counts.iter_mut().zip(&p.per_layer) {
            for (ci, &on) in c.iter_mut().zip(layer) {
                *ci += usize::from(on);
            }
        }
    }
    let n = data.len() as f64;
    let per_layer: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| c.iter().map(|&k| k as f64 / n).collect())
        .collect();
    let all: Vec<f64> = per_layer.iter().flatten().copied().collect();
    let p_min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let p_avg = all.iter().sum::<f64>() / all.len().max(1) as f64;
    Ok(NeuronFrequencies {
        per_layer,
        p_min: if all.is_empty() { 0.0 } else { p_min },
        p_avg,
    })
}

/// Drops hidden units that are never active on `data`, returning the smaller
/// network and the number of units removed. The outputs on `data` are unchanged.
pub fn prune_dead(net: &Network, data: &Dataset) -> Result<(Network, usize), NnError> {
    let freq = neuron_frequencies(net, data)?;
    let keep: Vec<Vec<usize>> = freq
        .per_layer
        .iter()
        .map(|f| (0..f.len()).filter(|&i| f[i] > 0.0).collect())
        .collect();
    if let Some(l) = keep.iter().position(Vec::is_empty) {
        return Err(NnError::DeadLayer { layer: l + 1 });
    }
    let layers = net.layers();
    let mut out = Vec::with_capacity(layers.len());
    let mut removed = 0;
    for (l, layer) in layers.iter().enumerate() {
        let rows: Vec<usize> = match keep.get(l) {
            Some(k) => k.clone(),
            None => (0..layer.output_dim()).collect(),
        };
        let cols: Vec<usize> = match l.checked_sub(1) {
            Some(p) => keep[p].clone(),
            None => (0..layer.input_dim()).collect(),
        };
        removed += layer.output_dim() - rows.len();
        let mut w = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            let r = layer.weight.row(i);
            w.extend(cols.iter().map(|&j| r[j]));
        }
        let b = rows.iter().map(|&i| layer.bias[i]).collect();
        out.push(Layer::new(Matrix::from_vec(rows.len(), cols.len(), w), b, layer.activation));
    }
    Ok((Network::new(out)?, removed))
}

/// Mean loss over the dataset: `(f(x) − y)²` for MSE (no ½), the
/// cross-entropy for BCE.
pub fn mean_loss(net: &Network, data: &Dataset, loss: Loss) -> Result<f64, NnError> {
    match loss {
        Loss::Mse => mean_squared_error(net, data),
        Loss::Bce => {
            let mut s = 0.0;
            for (x, &y) in data.inputs.iter().zip(&data.labels) {
                s += loss.value(net.predict(x)?, y);
            }
            Ok(s / data.len() as f64)
        }
    }
}

/// Mean of `(f(x) − y)²` over the dataset.
pub fn mean_squared_error(net: &Network, data: &Dataset) -> Result<f64, NnError> {
    let mut s = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        let d = net.predict(x)? - y;
        s += d * d;
    }
    Ok(s / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_net() -> Network {
        Network::new(vec![Layer::new(
            Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap(),
            vec![0.5],
            Activation::Identity,
        )])
        .unwrap()
    }

    #[test]
    fn pruning_dead_units_keeps_outputs_on_data() {
        let net = Network::new(vec![
            Layer::new(
                Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                vec![0.0, -1.0, 0.0],
                Activation::Relu,
            ),
            Layer::new(Matrix::from_rows(&[vec![2.0, 5.0, -1.0]]).unwrap(), vec![0.3], Activation::Identity),
        ])
        .unwrap();
        let data = crate::tasks::gen_corrupted_blobs(0.0, 40, 2, 3);
        let (pruned, removed) = prune_dead(&net, &data).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(pruned.hidden_sizes(), vec![2]);
        for x in &data.inputs {
            assert_eq!(net.predict(x).unwrap(), pruned.predict(x).unwrap());
        }
        assert!(neuron_frequencies(&pruned, &data).unwrap().p_min > 0.0);
    }

    fn small_relu(seed: u64) -> Network {
        init_network(&[3, 3, 4, 1], Activation::Identity, InitScheme::UniformFanIn, false, seed)
            .unwrap()
    }

    #[test]
    fn zero_error_step_leaves_network_unchanged() {
        let net = affine_net();
        let xs = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        let ys = xs.iter().map(|x| net.predict(x).unwrap()).collect();
        let data = Dataset::custom(xs, ys);
        let mut cfg = TrainConfig::new(0.1, Loss::Mse, 4);
        cfg.iterations = Some(5);
        let log = run_training(&net, &data, &cfg).unwrap();
        assert_eq!(log.final_network, net);
        for r in &log.records {
            assert_eq!(r.loss, 0.0);
            assert!(r.zero_gradient());
            assert_eq!(r.db1_norm, 0.0);
        }
    }

    #[test]
    fn zero_iterations_give_empty_log() {
        let net = small_relu(1);
        let data = Dataset::custom(vec![vec![0.1, 0.2, 0.3]], vec![1.0]);
        let mut cfg = TrainConfig::new(0.01, Loss::Mse, 0);
        cfg.iterations = Some(0);
        let log = run_training(&net, &data, &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.final_network, net);
        assert_eq!(log.checkpoints.len(), 1);
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let net = small_relu(2);
        let data = crate::tasks::gen_corrupted_blobs(0.2, 20, 3, 5);
        let data = Dataset::custom(data.inputs, data.labels);
        let mut cfg = TrainConfig::new(0.05, Loss::Mse, 17);
        cfg.iterations = Some(300);
        cfg.dropout = Dropout::Half;
        cfg.record_patterns = true;
        cfg.record_bias = true;
        let a = run_training(&net, &data, &cfg).unwrap();
        let b = run_training(&net, &data, &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a, b);
        cfg.seed = 18;
        let c = run_training(&net, &data, &cfg).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn identity_first_layer_phi_equals_local_lipschitz() {
        let net = init_network(&[4, 4, 6, 1], Activation::Identity, InitScheme::UniformFanIn, true, 3)
            .unwrap();
        let data = crate::tasks::gen_corrupted_blobs(0.0, 30, 4, 1);
        let mut cfg = TrainConfig::new(0.01, Loss::Mse, 9);
        cfg.freeze_first_weights = true;
        let mut trainer = Trainer::new(net, &data, cfg).unwrap();
        for _ in 0..200 {
            let before = trainer.network().clone();
            let rec = trainer.step().unwrap();
            let x = &data.inputs[rec.sampled[0]];
            let lambda = network::grad_input_norm(&before, x).unwrap();
            if let Some(phi) = rec.phi {
                assert!((phi - lambda).abs() <= 1e-9 * lambda.max(1e-12), "{phi} vs {lambda}");
            }
            assert_eq!((rec.sigma1, rec.sigman), (1.0, 1.0));
        }
        // W1 stayed the identity
        assert_eq!(trainer.network().first_weight(), &Matrix::identity(4));
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let net = small_relu(4);
        let data = Dataset::custom(vec![vec![10.0, 10.0, 10.0], vec![-10.0, 5.0, 1.0]], vec![1e3, -1e3]);
        let mut cfg = TrainConfig::new(10.0, Loss::Mse, 0);
        cfg.iterations = Some(1000);
        match run_training(&net, &data, &cfg) {
            Err(TrainError::Diverged { t, .. }) => assert!(t < 1000),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let data = Dataset::custom(vec![vec![0.0, 0.0, 0.0]; 3], vec![0.0; 3]);
        let mut cfg = TrainConfig::new(0.1, Loss::Mse, 0);
        cfg.batch_size = 4;
        assert!(matches!(
            Trainer::new(small_relu(0), &data, cfg.clone()),
            Err(TrainError::Config(_))
        ));
        cfg.batch_size = 1;
        cfg.lr = LrSchedule::Constant(0.0);
        assert!(Trainer::new(small_relu(0), &data, cfg.clone()).is_err());
        cfg.lr = LrSchedule::Piecewise(vec![(5, 0.1)]);
        assert!(Trainer::new(small_relu(0), &data, cfg.clone()).is_err());
        cfg.lr = LrSchedule::Constant(0.1);
        cfg.loss = Loss::Bce;
        assert!(matches!(
            Trainer::new(small_relu(0), &data, cfg),
            Err(TrainError::Network(NnError::LossHeadMismatch { .. }))
        ));
    }

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::Constant(0.3).rate(99), 0.3);
        let inv = LrSchedule::InverseTime {
            initial: 1.0,
            decay: 1.0,
        };
        assert_eq!(inv.rate(1), 0.5);
        let pw = LrSchedule::Piecewise(vec![(0, 0.1), (10, 0.01)]);
        assert_eq!(pw.rate(9), 0.1);
        assert_eq!(pw.rate(10), 0.01);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let ok = r#"{"lr":{"constant":0.001},"epochs":3,"loss":"mse"}"#;
        let cfg: TrainConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.total_iterations(100), 300);
        let bad = r#"{"lr":{"constant":0.001},"epochs":3,"loss":"mse","learning_rate":1}"#;
        assert!(serde_json::from_str::<TrainConfig>(bad).is_err());
    }

    #[test]
    fn dropout_masks_are_fair_coins() {
        let net = init_network(&[2, 5, 1], Activation::Identity, InitScheme::UniformFanIn, false, 0)
            .unwrap();
        let data = Dataset::custom(vec![vec![0.0, 0.0]], vec![0.0]);
        let mut cfg = TrainConfig::new(0.1, Loss::Mse, 123);
        cfg.dropout = Dropout::Half;
        let mut trainer = Trainer::new(net, &data, cfg).unwrap();
        let draws = 10_000;
        let mut on = [0usize; 5];
        for _ in 0..draws {
            let m = trainer.draw_masks();
            for (c, &b) in on.iter_mut().zip(&m[0]) {
                *c += usize::from(b);
            }
        }
        for c in on {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.02, "unit frequency {f}");
        }
    }

    #[test]
    fn neuron_frequency_extremes() {
        // unit 0: weight row 0, bias 1 -> always on; unit 1: bias -1 -> never on
        let net = Network::new(vec![
            Layer::new(Matrix::zeros(2, 2), vec![1.0, -1.0], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), vec![0.0], Activation::Identity),
        ])
        .unwrap();
        let data = crate::tasks::gen_corrupted_blobs(0.0, 25, 2, 3);
        let f = neuron_frequencies(&net, &data).unwrap();
        assert_eq!(f.per_layer, vec![vec![1.0, 0.0]]);
        assert_eq!(f.p_min, 0.0);
        assert_eq!(f.p_avg, 0.5);
    }

    #[test]
    fn trajectory_csv_columns() {
        let net = small_relu(5);
        let data = crate::tasks::gen_corrupted_blobs(0.0, 10, 3, 1);
        let mut cfg = TrainConfig::new(0.01, Loss::Mse, 2);
        cfg.iterations = Some(4);
        let log = run_training(&net, &data, &cfg).unwrap();
        let csv = log.trajectory_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,sample_idx,epsilon,db1_norm,phi,sigma1,sigman,loss,head_output"
        );
        assert_eq!(lines.count(), 4);
    }
}
