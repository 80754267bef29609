//! Lipschitz quantities of a network and audits of the trajectory bounds
//! against a recorded run.
//!
//! The local Lipschitz constant of the linear region containing `x` is
//! `λ(R_x) = ‖∇_x f(x)‖₂`. Training-set averages and maxima are recomputed
//! at checkpoint stride and linearly interpolated in between; the stride is
//! carried in every report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::network::{self, Loss, Network, NnError};
use crate::tasks::Dataset;
use crate::train::RunLog;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("window [{start}, {end}) lies outside the recorded iterations 0..{len}")]
    WindowOutOfRange { start: u64, end: u64, len: u64 },
    #[error("iteration {tau} is beyond the last recorded iteration {len}")]
    TauOutOfRange { tau: u64, len: u64 },
    #[error("no non-zero-gradient iterations at or after {0}")]
    NoSteadyIterations(u64),
    #[error("window needs at least 2 records, has {0}")]
    WindowTooShort(u64),
    #[error("audit needs b1 at every iteration; rerun with record_bias (checkpoint stride 1)")]
    MissingBiasTrace,
    #[error("b1 at iteration {0} is not available: no bias trace and no checkpoint there")]
    MissingCheckpoint(u64),
    #[error("distance-to-initialization bound refuses BCE runs: the loss derivative is unbounded")]
    BceRefused,
    #[error("covering radius {0} violates the condition delta < 1")]
    CoveringRadiusTooLarge(f64),
    #[error("audit requires single-sample steps, run used batch size {0}")]
    BatchedRun(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

/// `λ(R_x) = ‖∇_x f(x)‖₂` (includes `ψ` for a sigmoid head).
pub fn local_lipschitz(net: &Network, x: &[f64]) -> Result<f64> {
    Ok(network::grad_input_norm(net, x)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStats {
    pub avg: f64,
    pub max: f64,
}

/// Mean and max of `λ(R_x)` over the training inputs.
pub fn lambda_stats(net: &Network, data: &Dataset) -> Result<LambdaStats> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for x in &data.inputs {
        let l = local_lipschitz(net, x)?;
        sum += l;
        max = max.max(l);
    }
    Ok(LambdaStats {
        avg: sum / data.len() as f64,
        max,
    })
}

/// `λ_prod = ∏_l ‖W_l‖₂`.
pub fn prod_bound(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| linalg::spectral_norm(&l.weight))
        .product()
}

/// Training-set statistics of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub t: u64,
    pub lambda_avg: f64,
    pub lambda_max: f64,
    pub eps_avg: f64,
    pub eps_var: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub stride: u64,
    pub points: Vec<CheckpointStat>,
}

impl CheckpointStats {
    /// Evaluates every checkpoint of `log` on the full training set.
    pub fn compute(log: &RunLog, data: &Dataset) -> Result<Self> {
        let loss = log.config.loss;
        let mut points = Vec::with_capacity(log.checkpoints.len());
        for c in &log.checkpoints {
            let ls = lambda_stats(&c.network, data)?;
            let eps = training_epsilons(&c.network, data, loss)?;
            let n = eps.len() as f64;
            let avg = eps.iter().sum::<f64>() / n;
            let var = eps.iter().map(|e| (e - avg) * (e - avg)).sum::<f64>() / n;
            points.push(CheckpointStat {
                t: c.t,
                lambda_avg: ls.avg,
                lambda_max: ls.max,
                eps_avg: avg,
                eps_var: var,
                eps_min: eps.iter().copied().fold(f64::INFINITY, f64::min),
                eps_max: eps.iter().copied().fold(0.0, f64::max),
            });
        }
        Ok(Self {
            stride: log.checkpoint_stride,
            points,
        })
    }

    /// Linear interpolation of `field` at iteration `t`.
    pub fn at(&self, t: u64, field: impl Fn(&CheckpointStat) -> f64) -> f64 {
        let pts = &self.points;
        let k = pts.partition_point(|p| p.t <= t);
        if k == 0 {
            return field(&pts[0]);
        }
        let lo = &pts[k - 1];
        if lo.t == t || k == pts.len() {
            return field(lo);
        }
        let hi = &pts[k];
        let w = (t - lo.t) as f64 / (hi.t - lo.t) as f64;
        (1.0 - w) * field(lo) + w * field(hi)
    }

    fn within(&self, start: u64, end: u64) -> impl Iterator<Item = &CheckpointStat> {
        self.points.iter().filter(move |p| p.t >= start && p.t <= end)
    }
}

/// `ε(x_i, y_i)` for every training point.
pub fn training_epsilons(net: &Network, data: &Dataset, loss: Loss) -> Result<Vec<f64>> {
    data.inputs
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| Ok(network::epsilon(loss, net.predict(x)?, y)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub t_start: u64,
    pub t_end: u64,
    /// Iterations in the window with a non-zero gradient.
    pub count: u64,
    pub sum_phi: f64,
    /// `Σ (λ_avg/σ₁ − δ)`.
    pub lower_bound: f64,
    /// `Σ (λ_avg/σₙ + δ)`; infinite when `σₙ = 0`.
    pub upper_bound: f64,
    pub delta: f64,
    /// Smallest `δ ≥ 0` for which the sandwich would hold.
    pub delta_needed: f64,
    pub satisfied: bool,
    pub checkpoint_stride: u64,
    pub lambda_avg_series: Vec<f64>,
    pub lambda_max_series: Vec<f64>,
}

/// Checks `Σ(λ_avg/σ₁ − δ) ≤ Σ φ_t ≤ Σ(λ_avg/σₙ + δ)` on each window.
///
/// `delta = None` uses `0.5 ·` the window mean of `λ_max/σₙ`.
pub fn audit_theorem1(
    log: &RunLog,
    stats: &CheckpointStats,
    windows: &[(u64, u64)],
    delta: Option<f64>,
) -> Result<Vec<TrajectoryWindow>> {
    let len = log.iterations();
    let mut out = Vec::with_capacity(windows.len());
    for &(start, end) in windows {
        if start >= end || end > len {
            return Err(AuditError::WindowOutOfRange { start, end, len });
        }
        let mut count = 0u64;
        let (mut sum_phi, mut s_lo, mut s_hi, mut max_ratio) = (0.0, 0.0, 0.0, 0.0);
        for r in &log.records[start as usize..end as usize] {
            let Some(phi) = r.phi else { continue };
            count += 1;
            let l_avg = stats.at(r.t, |p| p.lambda_avg);
            let l_max = stats.at(r.t, |p| p.lambda_max);
            sum_phi += phi;
            s_lo += l_avg / r.sigma1;
            s_hi += if r.sigman > 0.0 { l_avg / r.sigman } else { f64::INFINITY };
            max_ratio += if r.sigman > 0.0 { l_max / r.sigman } else { f64::INFINITY };
        }
        let delta = match delta {
            Some(d) => d,
            None if count > 0 => 0.5 * max_ratio / count as f64,
            None => 0.0,
        };
        let c = count as f64;
        let lower_bound = s_lo - delta * c;
        let upper_bound = s_hi + delta * c;
        let delta_needed = if count == 0 {
            0.0
        } else {
            ((s_lo - sum_phi) / c).max((sum_phi - s_hi) / c).max(0.0)
        };
        out.push(TrajectoryWindow {
            t_start: start,
            t_end: end,
            count,
            sum_phi,
            lower_bound,
            upper_bound,
            delta,
            delta_needed,
            satisfied: lower_bound <= sum_phi && sum_phi <= upper_bound,
            checkpoint_stride: stats.stride,
            lambda_avg_series: stats.within(start, end).map(|p| p.lambda_avg).collect(),
            lambda_max_series: stats.within(start, end).map(|p| p.lambda_max).collect(),
        });
    }
    Ok(out)
}

/// Consecutive windows of `len` iterations covering the log (last one may
/// be shorter).
pub fn consecutive_windows(total: u64, len: u64) -> Vec<(u64, u64)> {
    let len = len.max(1);
    (0..total)
        .step_by(len as usize)
        .map(|s| (s, (s + len).min(total)))
        .collect()
}

/// Smallest `φ` for which the run is `(τ, φ)`-steady: the largest recorded
/// `φ_t` with `t ≥ τ`.
pub fn steady_phi(log: &RunLog, tau: u64) -> Result<f64> {
    let len = log.iterations();
    if tau >= len {
        return Err(AuditError::TauOutOfRange { tau, len });
    }
    log.records[tau as usize..]
        .iter()
        .filter_map(|r| r.phi)
        .reduce(f64::max)
        .ok_or(AuditError::NoSteadyIterations(tau))
}

/// `max_{t ≥ τ} σ₁(W₁(t))` from the records.
pub fn steady_beta(log: &RunLog, tau: u64) -> f64 {
    log.records
        .iter()
        .skip(tau as usize)
        .map(|r| r.sigma1)
        .fold(0.0, f64::max)
}

/// `λ(R_x) ≤ β φ` near every training point of a `(τ, φ)`-steady run.
pub fn corollary1_bound(phi: f64, beta: f64) -> f64 {
    beta * phi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary2Report {
    pub t_start: u64,
    pub t_end: u64,
    /// `avg_t ‖b₁(t) − avg b₁‖²`.
    pub empirical_variance: f64,
    /// `avg_t α_t λ_avg / σ₁`.
    pub avg_alpha_lambda_over_sigma1: f64,
    /// `avg_t α_t λ_max / σ₁`.
    pub avg_alpha_lambda_max_over_sigma1: f64,
    /// `c = avg_t ε_var / ε_avg⁴`.
    pub c: f64,
    pub delta: f64,
    /// `(avg α λ_avg/σ₁ − δ)₊² / (δ/3 + c)`, hidden constant set to 1.
    pub bound_value: f64,
    /// `empirical_variance / bound_value`.
    pub ratio: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub beta1: f64,
    /// `(max{ε_min⁻² − ε_max⁻², avg αλ_max/σ₁}/δ)² + β₁²`.
    pub required_window: f64,
    pub precondition_met: bool,
    pub checkpoint_stride: u64,
}

/// Bias-variance audit over `[t_start, t_end)`; needs a dense bias trace.
pub fn audit_corollary2(
    log: &RunLog,
    stats: &CheckpointStats,
    window: (u64, u64),
    delta: f64,
) -> Result<Corollary2Report> {
    let (start, end) = window;
    let len = log.iterations();
    if start >= end || end > len {
        return Err(AuditError::WindowOutOfRange { start, end, len });
    }
    if end - start < 2 {
        return Err(AuditError::WindowTooShort(end - start));
    }
    let trace = log.bias_trace.as_ref().ok_or(AuditError::MissingBiasTrace)?;
    let biases = &trace[start as usize..end as usize];
    let empirical_variance = bias_variance(biases);

    let records = &log.records[start as usize..end as usize];
    let m = records.len() as f64;
    let mut a_avg = 0.0;
    let mut a_max = 0.0;
    let mut c = 0.0;
    for r in records {
        let l_avg = stats.at(r.t, |p| p.lambda_avg);
        let l_max = stats.at(r.t, |p| p.lambda_max);
        a_avg += r.alpha * l_avg / r.sigma1;
        a_max += r.alpha * l_max / r.sigma1;
        let e_avg = stats.at(r.t, |p| p.eps_avg);
        let e_var = stats.at(r.t, |p| p.eps_var);
        c += e_var / e_avg.powi(4);
    }
    a_avg /= m;
    a_max /= m;
    c /= m;
    let bound_value = (a_avg - delta).max(0.0).powi(2) / (delta / 3.0 + c);
    let eps_min = records.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min);
    let eps_max = records.iter().map(|r| r.epsilon).fold(0.0, f64::max);
    let beta1 = biases.iter().map(|b| linalg::norm2(b)).fold(0.0, f64::max);
    let spread = (eps_min.powi(-2) - eps_max.powi(-2)).max(a_max);
    let required_window = (spread / delta).powi(2) + beta1 * beta1;
    Ok(Corollary2Report {
        t_start: start,
        t_end: end,
        empirical_variance,
        avg_alpha_lambda_over_sigma1: a_avg,
        avg_alpha_lambda_max_over_sigma1: a_max,
        c,
        delta,
        bound_value,
        ratio: if bound_value > 0.0 {
            empirical_variance / bound_value
        } else {
            f64::INFINITY
        },
        eps_min,
        eps_max,
        beta1,
        required_window,
        precondition_met: m >= required_window,
        checkpoint_stride: stats.stride,
    })
}

/// `avg_t ‖b_t − avg b‖²`.
pub fn bias_variance(biases: &[Vec<f64>]) -> f64 {
    let m = biases.len() as f64;
    let dim = biases.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for b in biases {
        for (mi, bi) in mean.iter_mut().zip(b) {
            *mi += bi / m;
        }
    }
    biases
        .iter()
        .map(|b| {
            let d = linalg::dist2(b, &mean);
            d * d
        })
        .sum::<f64>()
        / m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary3Report {
    pub tau: u64,
    /// `‖b₁(τ) − b₁(0)‖₂`.
    pub distance: f64,
    /// `Σ_{t<τ} α_t ε_max(X,t) λ_avg(t) / σₙ(t)` (δ = 0).
    pub bound: f64,
    pub satisfied: bool,
    /// `Σ_{t<τ} ‖Δb₁‖`, the deterministic triangle-inequality bound.
    pub path_length: f64,
    pub checkpoint_stride: u64,
}

/// Distance to initialization of `b₁` after `τ` steps, against its bound.
pub fn audit_corollary3(log: &RunLog, stats: &CheckpointStats, tau: u64) -> Result<Corollary3Report> {
    if log.config.loss == Loss::Bce {
        return Err(AuditError::BceRefused);
    }
    let len = log.iterations();
    if tau > len {
        return Err(AuditError::TauOutOfRange { tau, len });
    }
    let b_tau = log.bias_at(tau).ok_or(AuditError::MissingCheckpoint(tau))?;
    let b_0 = log.initial.first_bias();
    let distance = linalg::dist2(&b_tau, b_0);
    let mut bound = 0.0;
    let mut path_length = 0.0;
    for r in &log.records[..tau as usize] {
        path_length += r.db1_norm;
        let e_max = stats.at(r.t, |p| p.eps_max);
        let l_avg = stats.at(r.t, |p| p.lambda_avg);
        let term = r.alpha * e_max * l_avg;
        bound += if term == 0.0 {
            0.0
        } else if r.sigman > 0.0 {
            term / r.sigman
        } else {
            f64::INFINITY
        };
    }
    Ok(Corollary3Report {
        tau,
        distance,
        bound,
        satisfied: distance <= bound,
        path_length,
        checkpoint_stride: stats.stride,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstLayerReport {
    pub tau: u64,
    /// `max_{t≥τ} ‖ΔW₂‖/‖Δb₂‖ + ‖b₁(t)‖`.
    pub theta: f64,
    /// `max` pairwise `‖W₁(t) − W₁(t′)‖₂` over post-τ checkpoints.
    pub beta: f64,
    /// Covering radius of the training inputs over the probes.
    pub delta: f64,
    /// `(θ + β)/(1 − δ)`.
    pub bound: f64,
    /// `max` over probes `p` of `‖S₁(p) W₁ p‖₂ / ‖p‖₂`.
    pub measured: f64,
    pub holds: bool,
}

/// Largest distance from a probe to its nearest training input.
pub fn covering_radius(data: &Dataset, probes: &[Vec<f64>]) -> f64 {
    probes
        .iter()
        .map(|p| {
            data.inputs
                .iter()
                .map(|x| linalg::dist2(x, p))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// `(θ + β)/(1 − δ)`; refuses `δ ≥ 1`.
pub fn first_layer_formula(theta: f64, beta: f64, delta: f64) -> Result<f64> {
    if delta >= 1.0 {
        return Err(AuditError::CoveringRadiusTooLarge(delta));
    }
    Ok((theta + beta) / (1.0 - delta))
}

/// First-layer Lipschitz bound from post-τ training behavior.
///
/// `probes` sample the domain (typically unit vectors on the data manifold);
/// `δ` is their covering radius by the training inputs. The measured value
/// uses the final network.
pub fn first_layer_bound(
    log: &RunLog,
    data: &Dataset,
    tau: u64,
    probes: &[Vec<f64>],
) -> Result<FirstLayerReport> {
    let len = log.iterations();
    if tau >= len {
        return Err(AuditError::TauOutOfRange { tau, len });
    }
    if log.final_network.depth() < 2 {
        return Err(AuditError::Invalid("first-layer bound needs at least two layers".into()));
    }
    let theta = log.records[tau as usize..]
        .iter()
        .filter(|r| r.db2_norm > 0.0)
        .map(|r| r.dw2_norm / r.db2_norm + r.b1_norm)
        .fold(0.0, f64::max);
    let ws: Vec<&Matrix> = log
        .checkpoints
        .iter()
        .filter(|c| c.t >= tau)
        .map(|c| c.network.first_weight())
        .collect();
    let mut beta = 0.0f64;
    for i in 0..ws.len() {
        for j in i + 1..ws.len() {
            beta = beta.max(linalg::spectral_norm(&ws[i].sub(ws[j])));
        }
    }
    let delta = covering_radius(data, probes);
    let bound = first_layer_formula(theta, beta, delta)?;
    let net = &log.final_network;
    let w1 = net.first_weight();
    let mut measured = 0.0f64;
    for p in probes {
        let norm = linalg::norm2(p);
        if norm == 0.0 {
            continue;
        }
        let s1 = &net.pattern(p)?.per_layer[0];
        let wp = w1.mul_vec(p);
        let v: f64 = wp
            .iter()
            .zip(s1)
            .filter(|(_, &on)| on)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt();
        measured = measured.max(v / norm);
    }
    Ok(FirstLayerReport {
        tau,
        theta,
        beta,
        delta,
        bound,
        measured,
        holds: bound >= measured,
    })
}

/// Per-run aggregate emitted as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub checkpoint_stride: u64,
    pub checkpoint_t: Vec<u64>,
    pub lambda_avg_series: Vec<f64>,
    pub lambda_max_series: Vec<f64>,
    pub sum_phi_per_epoch: Vec<f64>,
    /// Cumulative sum of `sum_phi_per_epoch`.
    pub total_trajectory: Vec<f64>,
    pub variance_last_k_epochs: Option<f64>,
    pub variance_epochs: u64,
    /// `‖b₁(t) − b₁(0)‖₂` at each checkpoint.
    pub distance_to_init_series: Vec<f64>,
    pub prod_bound: f64,
    pub steady_tau: u64,
    pub steady_phi: Option<f64>,
    pub corollary_bounds: CorollaryBounds,
    pub final_train_mse: Option<f64>,
    pub zero_gradient_steps: u64,
    pub phi_batch_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryBounds {
    pub steady_beta: Option<f64>,
    /// `β φ` (Corollary-1 style bound near training points).
    pub near_data: Option<f64>,
    pub distance_bound: Option<f64>,
    pub distance: f64,
}

/// Builds the run summary. `k_epochs` sets the trailing variance window and
/// `tau` the steady-phase start.
pub fn complexity_report(
    log: &RunLog,
    data: &Dataset,
    stats: &CheckpointStats,
    k_epochs: u64,
    tau: u64,
) -> Result<ComplexityReport> {
    let b0 = log.initial.first_bias();
    let total = log.iterations();
    let spe = log.steps_per_epoch.max(1);
    let variance_last_k_epochs = log.bias_trace.as_ref().and_then(|trace| {
        let span = (k_epochs * spe).min(total);
        (span >= 2).then(|| bias_variance(&trace[(total - span) as usize..total as usize]))
    });
    let steady_phi_value = steady_phi(log, tau).ok();
    let beta = (tau < total).then(|| steady_beta(log, tau));
    let distance_bound = if log.config.loss == Loss::Mse {
        Some(audit_corollary3(log, stats, total)?.bound)
    } else {
        None
    };
    let final_train_mse = if log.config.loss == Loss::Mse {
        Some(crate::train::mean_squared_error(&log.final_network, data)?)
    } else {
        None
    };
    let sum_phi_per_epoch = log.sum_phi_per_epoch();
    let total_trajectory = sum_phi_per_epoch
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(ComplexityReport {
        checkpoint_stride: stats.stride,
        checkpoint_t: stats.points.iter().map(|p| p.t).collect(),
        lambda_avg_series: stats.points.iter().map(|p| p.lambda_avg).collect(),
        lambda_max_series: stats.points.iter().map(|p| p.lambda_max).collect(),
        sum_phi_per_epoch,
        total_trajectory,
        variance_last_k_epochs,
        variance_epochs: k_epochs,
        distance_to_init_series: log
            .checkpoints
            .iter()
            .map(|c| linalg::dist2(c.network.first_bias(), b0))
            .collect(),
        prod_bound: prod_bound(&log.final_network),
        steady_tau: tau,
        steady_phi: steady_phi_value,
        corollary_bounds: CorollaryBounds {
            steady_beta: beta,
            near_data: steady_phi_value.zip(beta).map(|(p, b)| corollary1_bound(p, b)),
            distance_bound,
            distance: linalg::dist2(log.final_network.first_bias(), b0),
        },
        final_train_mse,
        zero_gradient_steps: log.records.iter().filter(|r| r.zero_gradient()).count() as u64,
        phi_batch_convention: if log.config.batch_size > 1 {
            "phi uses the batch-mean epsilon".into()
        } else {
            "single-sample".into()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use crate::train::{self, IterationRecord, TrainConfig};

    fn affine(w: &[f64]) -> Network {
        Network::new(vec![Layer::new(
            Matrix::from_rows(&[w.to_vec()]).unwrap(),
            vec![0.3],
            Activation::Identity,
        )])
        .unwrap()
    }

    fn synthetic_log(phis: &[Option<f64>]) -> RunLog {
        let net = affine(&[1.0]);
        let records = phis
            .iter()
            .enumerate()
            .map(|(t, &phi)| IterationRecord {
                t: t as u64,
                alpha: 0.1,
                sampled: vec![0],
                epsilons: vec![1.0],
                epsilon: if phi.is_some() { 1.0 } else { 0.0 },
                db1_norm: phi.unwrap_or(0.0) * 0.1,
                phi,
                sigma1: 1.0,
                sigman: 1.0,
                loss: 0.0,
                head_outputs: vec![0.0],
                lambda_sample: phi,
                dw2_norm: 0.0,
                db2_norm: 0.0,
                b1_norm: 0.0,
                patterns: None,
            })
            .collect();
        let cfg = TrainConfig::new(0.1, Loss::Mse, 0);
        RunLog {
            config_hash: cfg.hash_hex(),
            config: cfg,
            initial: net.clone(),
            records,
            epoch_boundaries: vec![0],
            steps_per_epoch: phis.len().max(1) as u64,
            final_network: net.clone(),
            checkpoints: vec![train::Checkpoint { t: 0, network: net }],
            checkpoint_stride: 1,
            bias_trace: None,
        }
    }

    #[test]
    fn affine_local_lipschitz() {
        let net = affine(&[3.0, 4.0]);
        for x in [[0.0, 0.0], [5.0, -2.0], [1e3, 1e-3]] {
            assert!((local_lipschitz(&net, &x).unwrap() - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn all_off_point_has_zero_lipschitz() {
        let net = Network::new(vec![
            Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), vec![0.0], Activation::Identity),
        ])
        .unwrap();
        assert_eq!(local_lipschitz(&net, &[-1.0, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn tall_first_layer_breaks_lower_sandwich() {
        let net = Network::new(vec![
            Layer::new(Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(), vec![0.0; 2], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap(), vec![0.0], Activation::Identity),
        ])
        .unwrap();
        let phi = train::frozen_phi(&net, &[1.0], 5.0, Loss::Mse).unwrap().unwrap();
        let (s1, sn) = linalg::singular_extremes(net.first_weight());
        let grad = local_lipschitz(&net, &[1.0]).unwrap();
        assert_eq!(grad, 0.0);
        assert!((phi * sn - 2.0).abs() < 1e-12);
        assert!(grad <= phi * s1);
    }

    #[test]
    fn lambda_stats_single_point_and_affine() {
        let net = affine(&[3.0, 4.0]);
        let d = Dataset::custom(vec![vec![1.0, 1.0]], vec![0.0]);
        let s = lambda_stats(&net, &d).unwrap();
        assert_eq!(s.avg, s.max);
        let d = Dataset::custom(vec![vec![1.0, 1.0], vec![-7.0, 2.0], vec![0.0, 9.0]], vec![0.0; 3]);
        let s = lambda_stats(&net, &d).unwrap();
        assert!((s.avg - 5.0).abs() < 1e-15 && (s.max - 5.0).abs() < 1e-15);
    }

    #[test]
    fn prod_bound_examples() {
        let net = Network::new(vec![
            Layer::new(Matrix::identity(3), vec![0.0; 3], Activation::Relu),
            Layer::new(Matrix::identity(3), vec![0.0; 3], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap(), vec![0.0], Activation::Identity),
        ])
        .unwrap();
        assert!((prod_bound(&net) - 1.0).abs() < 1e-15);
        assert!((prod_bound(&affine(&[3.0, 4.0])) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn steady_phi_examples() {
        let log = synthetic_log(&[Some(2.0); 10]);
        assert_eq!(steady_phi(&log, 0).unwrap(), 2.0);
        let log = synthetic_log(&[Some(5.0), Some(1.0), None, Some(3.0)]);
        assert_eq!(steady_phi(&log, 3).unwrap(), 3.0);
        assert_eq!(steady_phi(&log, 1).unwrap(), 3.0);
        assert_eq!(steady_phi(&log, 0).unwrap(), 5.0);
        assert!(matches!(steady_phi(&log, 4), Err(AuditError::TauOutOfRange { .. })));
        let log = synthetic_log(&[Some(1.0), None]);
        assert!(matches!(steady_phi(&log, 1), Err(AuditError::NoSteadyIterations(1))));
    }

    #[test]
    fn corollary1_examples() {
        assert_eq!(corollary1_bound(2.0, 3.0), 6.0);
        assert_eq!(corollary1_bound(0.0, 3.0), 0.0);
    }

    #[test]
    fn zero_gradient_window_sums_to_zero() {
        let log = synthetic_log(&[None, None, None, Some(1.0)]);
        let d = Dataset::custom(vec![vec![1.0]], vec![0.0]);
        let stats = CheckpointStats::compute(&log, &d).unwrap();
        let w = audit_theorem1(&log, &stats, &[(0, 3)], Some(0.5)).unwrap();
        assert_eq!(w[0].count, 0);
        assert_eq!((w[0].sum_phi, w[0].lower_bound, w[0].upper_bound), (0.0, 0.0, 0.0));
        assert!(w[0].satisfied);
        assert!(matches!(
            audit_theorem1(&log, &stats, &[(2, 5)], None),
            Err(AuditError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn bias_variance_examples() {
        let constant = vec![vec![1.0, -2.0]; 5];
        assert_eq!(bias_variance(&constant), 0.0);
        let two = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(bias_variance(&two), 1.0);
    }

    #[test]
    fn corollary2_needs_dense_trace() {
        let log = synthetic_log(&[Some(1.0); 4]);
        let d = Dataset::custom(vec![vec![1.0]], vec![0.0]);
        let stats = CheckpointStats::compute(&log, &d).unwrap();
        assert!(matches!(
            audit_corollary2(&log, &stats, (0, 4), 0.1),
            Err(AuditError::MissingBiasTrace)
        ));
        assert!(matches!(
            audit_corollary2(&log, &stats, (0, 1), 0.1),
            Err(AuditError::WindowTooShort(1))
        ));
    }

    #[test]
    fn corollary3_refuses_bce_and_handles_tau_zero() {
        let mut log = synthetic_log(&[Some(1.0); 3]);
        let d = Dataset::custom(vec![vec![1.0]], vec![0.0]);
        let stats = CheckpointStats::compute(&log, &d).unwrap();
        let r = audit_corollary3(&log, &stats, 0).unwrap();
        assert_eq!((r.distance, r.bound), (0.0, 0.0));
        log.config.loss = Loss::Bce;
        assert!(matches!(audit_corollary3(&log, &stats, 0), Err(AuditError::BceRefused)));
    }

    #[test]
    fn first_layer_formula_examples() {
        assert_eq!(first_layer_formula(1.0, 0.0, 0.5).unwrap(), 2.0);
        assert_eq!(first_layer_formula(1.5, 0.0, 0.0).unwrap(), 1.5);
        assert!(matches!(
            first_layer_formula(1.0, 0.0, 1.0),
            Err(AuditError::CoveringRadiusTooLarge(_))
        ));
    }

    #[test]
    fn interpolation_between_checkpoints() {
        let stats = CheckpointStats {
            stride: 10,
            points: vec![
                CheckpointStat { t: 0, lambda_avg: 1.0, lambda_max: 1.0, eps_avg: 1.0, eps_var: 0.0, eps_min: 1.0, eps_max: 1.0 },
                CheckpointStat { t: 10, lambda_avg: 3.0, lambda_max: 1.0, eps_avg: 1.0, eps_var: 0.0, eps_min: 1.0, eps_max: 1.0 },
            ],
        };
        assert_eq!(stats.at(0, |p| p.lambda_avg), 1.0);
        assert_eq!(stats.at(5, |p| p.lambda_avg), 2.0);
        assert_eq!(stats.at(10, |p| p.lambda_avg), 3.0);
        assert_eq!(stats.at(12, |p| p.lambda_avg), 3.0);
    }

    #[test]
    fn consecutive_window_cover() {
        assert_eq!(consecutive_windows(5, 2), vec![(0, 2), (2, 4), (4, 5)]);
        assert!(consecutive_windows(0, 3).is_empty());
    }
}
