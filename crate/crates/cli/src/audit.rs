//! `lipscope audit`: runs the trajectory, region and certificate audits on a
//! run directory and writes one JSON report per audit.

use std::path::Path;

use clap::ValueEnum;
use lipscope::lipschitz::{self, CheckpointStats};
use lipscope::region::{self, CertificateIngredients, PatternMatrix};
use lipscope::tasks::SinusoidTask;
use lipscope::train::{self, Dropout};
use lipscope::Loss;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::Variant;
use crate::run::{self, LoadedRun};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Theorem1,
    Corollary2,
    Corollary3,
    Theorem2,
    Theorem3,
    Firstlayer,
    All,
}

const ALL: [Which; 6] = [
    Which::Theorem1,
    Which::Corollary2,
    Which::Corollary3,
    Which::Theorem2,
    Which::Theorem3,
    Which::Firstlayer,
];

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Theorem1 => "theorem1",
            Which::Corollary2 => "corollary2",
            Which::Corollary3 => "corollary3",
            Which::Theorem2 => "theorem2",
            Which::Theorem3 => "theorem3",
            Which::Firstlayer => "firstlayer",
            Which::All => "all",
        }
    }
}

/// Report file contents: `report` is null for an empty run or a refused
/// audit, and `note` says why.
#[derive(Debug, Serialize)]
pub struct Envelope<T: Serialize> {
    pub run: String,
    pub audit: &'static str,
    pub iterations: u64,
    pub report: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Theorem1Summary {
    pub window_iterations: u64,
    pub windows: Vec<lipschitz::TrajectoryWindow>,
    pub satisfied: usize,
    pub violated: usize,
}

#[derive(Debug, Serialize)]
pub struct Theorem2Summary {
    /// `log` (post-τ steps of a pattern-recording run) or `frozen` (the
    /// final network at the training points, γ = 0).
    pub pattern_source: &'static str,
    pub columns: usize,
    pub gamma: f64,
    pub mu: Option<f64>,
    pub tau: u64,
    pub probe_domain: String,
    pub report: region::Theorem2Report,
}

#[derive(Debug, Serialize)]
pub struct Theorem3Summary {
    pub tau: u64,
    pub gamma: region::GammaReport,
    pub certificate: region::GeneralizationCertificate,
    /// Largest λ over the probe sample, to compare with `λ_steady`.
    pub max_probe_lambda: f64,
    pub probes: usize,
    /// Fraction of probe patterns dominated by some training pattern.
    pub domination_fraction: f64,
    pub gap: f64,
    pub gap_within_bound: bool,
}

#[derive(Debug, Serialize)]
pub struct FirstLayerSummary {
    pub probes: usize,
    pub probe_domain: String,
    pub report: lipschitz::FirstLayerReport,
}

fn probe_rng(run: &LoadedRun, stream: u64) -> rand_chacha::ChaCha8Rng {
    train::rng_stream(run.spec.audit.probe_seed ^ run.spec.seed.rotate_left(17), 100 + stream)
}

/// Probes for empty-region audits: the embedded latent square for the
/// sinusoid task, the training-data bounding box otherwise.
pub fn region_probes(run: &LoadedRun, count: usize) -> (Vec<Vec<f64>>, String) {
    let mut rng = probe_rng(run, 0);
    match run.spec.variant {
        Variant::Sinusoid { omega, .. } => {
            let task = SinusoidTask::new(omega, run.spec.seed);
            let probes = (0..count)
                .map(|_| task.embed(&[rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]))
                .collect();
            (probes, "embedded latent square [-1,1]^2".into())
        }
        Variant::CorruptedBlobs { .. } => {
            let dim = run.data.dim();
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for x in &run.data.inputs {
                for k in 0..dim {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
            let probes = (0..count)
                .map(|_| (0..dim).map(|k| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>()).collect())
                .collect();
            (probes, "training-data bounding box".into())
        }
    }
}

/// Unit-norm probes on the data manifold.
pub fn unit_probes(run: &LoadedRun, count: usize) -> (Vec<Vec<f64>>, String) {
    match run.spec.variant {
        Variant::Sinusoid { omega, .. } => {
            let task = SinusoidTask::new(omega, run.spec.seed);
            let probes = (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    task.embed(&[a.cos(), a.sin()])
                })
                .collect();
            (probes, "unit circle of the embedding plane".into())
        }
        Variant::CorruptedBlobs { .. } => {
            let mut rng = probe_rng(run, 1);
            let dim = run.data.dim();
            let probes = (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = lipscope::linalg::norm2(&v);
                    v.iter().map(|x| x / n).collect()
                })
                .collect();
            (probes, "unit sphere".into())
        }
    }
}

pub fn theorem1(run: &LoadedRun, stats: &CheckpointStats) -> Result<Theorem1Summary, Failure> {
    let len = run.spec.audit.window_epochs * run.log.steps_per_epoch;
    let windows = lipschitz::consecutive_windows(run.log.iterations(), len);
    let windows = lipschitz::audit_theorem1(&run.log, stats, &windows, run.spec.audit.delta)?;
    let satisfied = windows.iter().filter(|w| w.satisfied).count();
    Ok(Theorem1Summary {
        window_iterations: len,
        violated: windows.len() - satisfied,
        satisfied,
        windows,
    })
}

pub fn corollary2(run: &LoadedRun, stats: &CheckpointStats) -> Result<lipschitz::Corollary2Report, Failure> {
    let total = run.log.iterations();
    let k = run.spec.audit.variance_epochs * run.log.steps_per_epoch;
    let window = (total.saturating_sub(k), total);
    let delta = run.spec.audit.delta.unwrap_or(0.0);
    Ok(lipschitz::audit_corollary2(&run.log, stats, window, delta)?)
}

pub fn corollary3(run: &LoadedRun, stats: &CheckpointStats) -> Result<lipschitz::Corollary3Report, Failure> {
    Ok(lipschitz::audit_corollary3(&run.log, stats, run.log.iterations())?)
}

fn mu_after(run: &LoadedRun, tau: u64) -> f64 {
    run.log.records[tau as usize..]
        .iter()
        .flat_map(|r| r.head_outputs.iter())
        .map(|&f| f.min(1.0 - f))
        .fold(f64::INFINITY, f64::min)
}

pub fn theorem2(run: &LoadedRun) -> Result<Theorem2Summary, Failure> {
    let tau = run.spec.tau(run.log.iterations());
    let cfg = &run.log.config;
    let (pm, source, gamma) = if cfg.record_patterns && cfg.batch_size == 1 {
        let g = region::estimate_gamma(&run.log, &run.data, tau)?.gamma;
        let pm = PatternMatrix::from_log(&run.log, (tau, run.log.iterations()), g)?;
        (pm, "log", g)
    } else {
        let pm = PatternMatrix::from_frozen(&run.log.final_network, &run.data, cfg.loss)?;
        (pm, "frozen", 0.0)
    };
    let (probes, domain) = region_probes(run, run.spec.audit.probes);
    let report = region::audit_theorem2(&run.log.final_network, &pm, &probes, &run.data)?;
    Ok(Theorem2Summary {
        pattern_source: source,
        columns: pm.len(),
        gamma,
        mu: pm.mu,
        tau,
        probe_domain: domain,
        report,
    })
}

pub fn theorem3(run: &LoadedRun) -> Result<Theorem3Summary, Failure> {
    let cfg = &run.log.config;
    if cfg.loss != Loss::Bce || cfg.dropout != Dropout::Half {
        return Err(Failure::Refused(
            "the generalization certificate needs a BCE run trained with dropout: half".into(),
        ));
    }
    let tau = run.spec.tau(run.log.iterations());
    let net = &run.log.final_network;
    let gamma = region::estimate_gamma(&run.log, &run.data, tau)?;
    let freq = train::neuron_frequencies(net, &run.data)?;
    let ing = CertificateIngredients {
        phi: lipschitz::steady_phi(&run.log, tau)?,
        beta: lipschitz::steady_beta(&run.log, tau),
        gamma: gamma.gamma,
        mu: mu_after(run, tau),
        p_min: freq.p_min,
        sum_hidden: net.hidden_sizes().iter().sum(),
        delta_conf: run.spec.audit.delta_conf,
        c: 0.0,
    };
    let certificate = region::certificate(net, &run.data, Some(&run.test), &ing)?;
    let (probes, _) = region_probes(run, run.spec.audit.probes);
    let mut max_probe_lambda = 0.0f64;
    let mut patterns = Vec::with_capacity(probes.len());
    for p in &probes {
        max_probe_lambda = max_probe_lambda.max(lipschitz::local_lipschitz(net, p)?);
        patterns.push(net.pattern(p)?);
    }
    let pm = PatternMatrix::from_frozen(net, &run.data, Loss::Bce)?;
    let gap = (certificate.er_emp - certificate.er_test.unwrap_or(certificate.er_emp)).abs();
    Ok(Theorem3Summary {
        tau,
        gamma,
        max_probe_lambda,
        probes: probes.len(),
        domination_fraction: region::pattern_domination_check(&pm, &patterns),
        gap,
        gap_within_bound: gap <= certificate.bound,
        certificate,
    })
}

pub fn firstlayer(run: &LoadedRun) -> Result<FirstLayerSummary, Failure> {
    let tau = run.spec.tau(run.log.iterations());
    let (probes, domain) = unit_probes(run, run.spec.audit.first_layer_probes);
    let report = lipschitz::first_layer_bound(&run.log, &run.data, tau, &probes)?;
    Ok(FirstLayerSummary {
        probes: probes.len(),
        probe_domain: domain,
        report,
    })
}

fn emit<T: Serialize>(
    dir: &Path,
    run: &LoadedRun,
    which: Which,
    result: Result<Option<T>, Failure>,
    lenient: bool,
    notes: &mut Vec<String>,
) -> Result<(), Failure> {
    let (report, note) = match result {
        Ok(Some(r)) => (Some(r), None),
        Ok(None) => (None, Some("empty run".to_string())),
        Err(e) if lenient => {
            notes.push(format!("{}: {e}", which.name()));
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let env = Envelope {
        run: run.spec.name(),
        audit: which.name(),
        iterations: run.log.iterations(),
        report,
        note,
    };
    run::write_json(&dir.join(format!("{}.json", which.name())), &env)
}

/// Audits one run directory. Under `All`, a refused audit becomes a note in
/// its report instead of an error; the notes are returned.
pub fn audit_dir(dir: &Path, which: Which) -> Result<Vec<String>, Failure> {
    let run = run::load_run(dir)?;
    audit_loaded(dir, &run, which)
}

pub fn audit_loaded(dir: &Path, run: &LoadedRun, which: Which) -> Result<Vec<String>, Failure> {
    let lenient = which == Which::All;
    let list: Vec<Which> = if lenient { ALL.to_vec() } else { vec![which] };
    let empty = run.log.iterations() == 0;
    let stats = CheckpointStats::compute(&run.log, &run.data)?;
    let mut notes = Vec::new();
    for w in list {
        match w {
            Which::Theorem1 => {
                let r = if empty { Ok(None) } else { theorem1(run, &stats).map(Some) };
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::Corollary2 => {
                let r = if empty { Ok(None) } else { corollary2(run, &stats).map(Some) };
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::Corollary3 => {
                let r = if empty { Ok(None) } else { corollary3(run, &stats).map(Some) };
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::Theorem2 => {
                let r = if empty { Ok(None) } else { theorem2(run).map(Some) };
                if let Ok(Some(s)) = &r {
                    run::write_text(&dir.join("bp_report.csv"), &region::bp_report_csv(&s.report))?;
                }
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::Theorem3 => {
                let r = if empty { Ok(None) } else { theorem3(run).map(Some) };
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::Firstlayer => {
                let r = if empty { Ok(None) } else { firstlayer(run).map(Some) };
                emit(dir, run, w, r, lenient, &mut notes)?;
            }
            Which::All => unreachable!(),
        }
    }
    Ok(notes)
}
