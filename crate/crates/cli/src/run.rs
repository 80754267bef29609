//! One training run: data generation, training, summary, and the run
//! directory that persists it.

use std::fs;
use std::path::{Path, PathBuf};

use lipscope::lipschitz::{self, CheckpointStats, ComplexityReport};
use lipscope::network::Network;
use lipscope::tasks::{self, Dataset, SinusoidTask};
use lipscope::train::{self, IterationRecord, RunLog, SamplePatterns, TrainConfig};
use lipscope::{ActivationPattern, Loss};
use serde::{Deserialize, Serialize};

use crate::config::{AuditSpec, ExperimentConfig, NetworkSpec, Variant, TEST_SEED_OFFSET};
use crate::Failure;

/// Everything needed to regenerate a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub variant: Variant,
    pub seed: u64,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub audit: AuditSpec,
}

impl RunSpec {
    pub fn name(&self) -> String {
        format!("{}_s{}", self.variant.label(), self.seed)
    }

    /// The training config with this run's seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn tau(&self, iterations: u64) -> u64 {
        ((iterations as f64 * self.audit.tau_fraction).floor() as u64).min(iterations.saturating_sub(1))
    }
}

/// Training and held-out sets of a variant. The held-out set has the same
/// size and distribution, drawn with `seed + TEST_SEED_OFFSET`.
pub fn make_data(variant: &Variant, seed: u64) -> (Dataset, Dataset) {
    let test_seed = seed.wrapping_add(TEST_SEED_OFFSET);
    match *variant {
        Variant::Sinusoid { omega, n } => {
            let task = SinusoidTask::new(omega, seed);
            (task.sample(n, seed), task.sample(n, test_seed))
        }
        Variant::CorruptedBlobs {
            corruption,
            n,
            n_dim,
        } => (
            tasks::gen_corrupted_blobs(corruption, n, n_dim, seed),
            tasks::gen_corrupted_blobs(corruption, n, n_dim, test_seed),
        ),
    }
}

/// Per-run aggregates written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub variant: Variant,
    pub seed: u64,
    pub iterations: u64,
    pub config_hash: String,
    pub complexity: ComplexityReport,
    /// Mean training loss at each checkpoint (MSE without the ½ factor, or
    /// mean BCE).
    pub train_loss_series: Vec<f64>,
    pub test_loss_series: Vec<f64>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
}

pub struct RunOutput {
    pub spec: RunSpec,
    pub data: Dataset,
    pub test: Dataset,
    pub log: RunLog,
    pub stats: CheckpointStats,
    pub summary: RunSummary,
}

pub fn mean_loss(net: &Network, data: &Dataset, loss: Loss) -> Result<f64, Failure> {
    Ok(train::mean_loss(net, data, loss)?)
}

pub fn initial_network(spec: &RunSpec) -> Result<Network, Failure> {
    let sizes = spec.network.sizes(spec.variant.input_dim());
    Ok(train::init_network(
        &sizes,
        spec.train.loss.required_head(),
        spec.network.init,
        spec.network.first_identity,
        spec.seed,
    )?)
}

/// Trains one run and computes its summary.
pub fn execute(spec: &RunSpec) -> Result<RunOutput, Failure> {
    let (data, test) = make_data(&spec.variant, spec.seed);
    let net0 = initial_network(spec)?;
    let log = train::run_training(&net0, &data, &spec.train_config())?;
    summarize(spec.clone(), data, test, log)
}

pub fn summarize(spec: RunSpec, data: Dataset, test: Dataset, log: RunLog) -> Result<RunOutput, Failure> {
    let stats = CheckpointStats::compute(&log, &data)?;
    let tau = spec.tau(log.iterations());
    let complexity = lipschitz::complexity_report(&log, &data, &stats, spec.audit.variance_epochs, tau)?;
    let loss = log.config.loss;
    let mut train_loss_series = Vec::with_capacity(log.checkpoints.len());
    let mut test_loss_series = Vec::with_capacity(log.checkpoints.len());
    for c in &log.checkpoints {
        train_loss_series.push(mean_loss(&c.network, &data, loss)?);
        test_loss_series.push(mean_loss(&c.network, &test, loss)?);
    }
    let summary = RunSummary {
        run: spec.name(),
        variant: spec.variant,
        seed: spec.seed,
        iterations: log.iterations(),
        config_hash: log.config_hash.clone(),
        complexity,
        final_train_loss: mean_loss(&log.final_network, &data, loss)?,
        final_test_loss: mean_loss(&log.final_network, &test, loss)?,
        train_loss_series,
        test_loss_series,
    };
    Ok(RunOutput {
        spec,
        data,
        test,
        log,
        stats,
        summary,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))
}

/// Run log without its per-iteration records, which live in the CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunHeader {
    config_hash: String,
    config: TrainConfig,
    iterations: u64,
    initial: Network,
    epoch_boundaries: Vec<u64>,
    steps_per_epoch: u64,
    final_network: Network,
    checkpoint_stride: u64,
    checkpoint_t: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_trace: Option<Vec<Vec<f64>>>,
}

/// Writes the run directory: `config.json`, `dataset.csv`, `meta.json`,
/// `trajectory.csv`, `trajectory_extra.csv`, `runlog.json`,
/// `checkpoints/`, `final_network.json` and `summary.json`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), Failure> {
    let ckdir = dir.join("checkpoints");
    fs::create_dir_all(&ckdir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", ckdir.display())))?;
    write_json(&dir.join("config.json"), &out.spec)?;
    write_text(&dir.join("dataset.csv"), &out.data.to_csv())?;
    write_text(&dir.join("meta.json"), &(out.data.meta_json() + "\n"))?;
    write_text(&dir.join("trajectory.csv"), &out.log.trajectory_csv())?;
    write_text(&dir.join("trajectory_extra.csv"), &extra_csv(&out.log.records))?;
    let log = &out.log;
    let header = RunHeader {
        config_hash: log.config_hash.clone(),
        config: log.config.clone(),
        iterations: log.iterations(),
        initial: log.initial.clone(),
        epoch_boundaries: log.epoch_boundaries.clone(),
        steps_per_epoch: log.steps_per_epoch,
        final_network: log.final_network.clone(),
        checkpoint_stride: log.checkpoint_stride,
        checkpoint_t: log.checkpoints.iter().map(|c| c.t).collect(),
        bias_trace: log.bias_trace.clone(),
    };
    write_text(&dir.join("runlog.json"), &(serde_json::to_string(&header).expect("serializes") + "\n"))?;
    for c in &log.checkpoints {
        write_text(&ckdir.join(format!("t{:010}.json", c.t)), &(c.network.to_json() + "\n"))?;
    }
    write_text(&dir.join("final_network.json"), &(log.final_network.to_json() + "\n"))?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    Ok(())
}

fn bits(p: &ActivationPattern) -> String {
    p.per_layer
        .iter()
        .map(|l| l.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
        .collect::<Vec<_>>()
        .join("|")
}

fn parse_bits(s: &str) -> ActivationPattern {
    ActivationPattern::new(
        s.split('|')
            .map(|l| l.chars().map(|c| c == '1').collect())
            .collect(),
    )
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn extra_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(
        "t,alpha,epsilons,lambda_sample,dw2_norm,db2_norm,b1_norm,pattern_pre,pattern_post\n",
    );
    for r in records {
        let (pre, post) = match &r.patterns {
            Some(p) => (
                p.iter().map(|s| bits(&s.pre)).collect::<Vec<_>>().join(";"),
                p.iter().map(|s| bits(&s.post)).collect::<Vec<_>>().join(";"),
            ),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.alpha,
            join(&r.epsilons),
            r.lambda_sample.map(|v| v.to_string()).unwrap_or_default(),
            r.dw2_norm,
            r.db2_norm,
            r.b1_norm,
            pre,
            post
        ));
    }
    out
}

fn corrupt(path: &Path, line: usize, what: &str) -> Failure {
    Failure::Io(format!("{} line {line}: {what}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';').map(|v| v.parse().ok()).collect()
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    if s.is_empty() {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn read_records(dir: &Path) -> Result<Vec<IterationRecord>, Failure> {
    let main_path = dir.join("trajectory.csv");
    let extra_path = dir.join("trajectory_extra.csv");
    let main = read_text(&main_path)?;
    let extra = read_text(&extra_path)?;
    let mut records = Vec::new();
    for (i, (a, b)) in main.lines().skip(1).zip(extra.lines().skip(1)).enumerate() {
        let line = i + 2;
        let f: Vec<&str> = a.split(',').collect();
        let g: Vec<&str> = b.split(',').collect();
        if f.len() != 9 || g.len() != 9 {
            return Err(corrupt(&main_path, line, "wrong column count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| corrupt(&main_path, line, "bad number"));
        let patterns = if g[7].is_empty() {
            None
        } else {
            Some(
                g[7].split(';')
                    .zip(g[8].split(';'))
                    .map(|(pre, post)| SamplePatterns {
                        pre: parse_bits(pre),
                        post: parse_bits(post),
                    })
                    .collect(),
            )
        };
        records.push(IterationRecord {
            t: f[0].parse().map_err(|_| corrupt(&main_path, line, "bad t"))?,
            alpha: num(g[1])?,
            sampled: parse_list(f[1]).ok_or_else(|| corrupt(&main_path, line, "bad sample_idx"))?,
            epsilons: parse_list(g[2]).ok_or_else(|| corrupt(&extra_path, line, "bad epsilons"))?,
            epsilon: num(f[2])?,
            db1_norm: num(f[3])?,
            phi: parse_opt(f[4]).ok_or_else(|| corrupt(&main_path, line, "bad phi"))?,
            sigma1: num(f[5])?,
            sigman: num(f[6])?,
            loss: num(f[7])?,
            head_outputs: parse_list(f[8]).ok_or_else(|| corrupt(&main_path, line, "bad head_output"))?,
            lambda_sample: parse_opt(g[3]).ok_or_else(|| corrupt(&extra_path, line, "bad lambda"))?,
            dw2_norm: num(g[4])?,
            db2_norm: num(g[5])?,
            b1_norm: num(g[6])?,
            patterns,
        });
    }
    Ok(records)
}

pub struct LoadedRun {
    pub spec: RunSpec,
    pub data: Dataset,
    pub test: Dataset,
    pub log: RunLog,
}

pub fn is_run_dir(dir: &Path) -> bool {
    dir.join("runlog.json").is_file()
}

/// Reads a run directory back into memory. The datasets are regenerated
/// from the recorded spec.
pub fn load_run(dir: &Path) -> Result<LoadedRun, Failure> {
    let spec: RunSpec = serde_json::from_str(&read_text(&dir.join("config.json"))?)
        .map_err(|e| Failure::Config(format!("{}: {e}", dir.join("config.json").display())))?;
    let header: RunHeader = serde_json::from_str(&read_text(&dir.join("runlog.json"))?)
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.join("runlog.json").display())))?;
    let records = read_records(dir)?;
    if records.len() as u64 != header.iterations {
        return Err(Failure::Io(format!(
            "{}: {} records, runlog.json says {}",
            dir.display(),
            records.len(),
            header.iterations
        )));
    }
    let mut checkpoints = Vec::with_capacity(header.checkpoint_t.len());
    for &t in &header.checkpoint_t {
        let p = dir.join("checkpoints").join(format!("t{t:010}.json"));
        let network = Network::from_json(&read_text(&p)?)
            .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
        checkpoints.push(train::Checkpoint { t, network });
    }
    let (data, test) = make_data(&spec.variant, spec.seed);
    let log = RunLog {
        config_hash: header.config_hash,
        config: header.config,
        initial: header.initial,
        records,
        epoch_boundaries: header.epoch_boundaries,
        steps_per_epoch: header.steps_per_epoch,
        final_network: header.final_network,
        checkpoints,
        checkpoint_stride: header.checkpoint_stride,
        bias_trace: header.bias_trace,
    };
    Ok(LoadedRun {
        spec,
        data,
        test,
        log,
    })
}

/// Run directories below `dir`: `dir` itself if it is one, else its
/// immediate subdirectories that are, in name order.
pub fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if is_run_dir(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_run_dir(p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Failure::Io(format!("{} contains no run directory", dir.display())));
    }
    Ok(out)
}

/// All runs of an experiment, in (variant, seed) order.
pub fn expand(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for variant in cfg.task.variants() {
        for &seed in &cfg.seeds {
            out.push(RunSpec {
                variant,
                seed,
                network: cfg.network.clone(),
                train: cfg.train.clone(),
                audit: cfg.audit.clone(),
            });
        }
    }
    out
}

/// Trains every run of `cfg` into `out/<variant>_s<seed>`.
pub fn train_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("cannot create {}: {e}", out.display())))?;
    write_json(&out.join("experiment.json"), cfg)?;
    let specs = expand(cfg);
    crate::par_map(&specs, |spec| {
        let result = execute(spec)?;
        let dir = out.join(spec.name());
        write_run(&dir, &result)?;
        Ok(dir)
    })
}
