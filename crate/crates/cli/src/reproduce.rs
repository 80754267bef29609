//! `lipscope reproduce`: desk-scale recipes for the figures, built
//! from the train, audit and regions commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lipscope::lipschitz::CheckpointStats;
use lipscope::region::PatternMatrix;
use lipscope::regionviz::{self, ColorMode, RegionStatus};
use lipscope::tasks::sinusoid_label;
use lipscope::train::{LrSchedule, TrainConfig};
use lipscope::Loss;
use serde::Serialize;

use crate::audit::{self, Which};
use crate::config::{AuditSpec, ExperimentConfig, NetworkSpec, TaskSpec, Variant};
use crate::plot::{self, Series};
use crate::regions;
use crate::run::{self, LoadedRun, RunSpec};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig5,
    FigTotalTrajectory,
}

pub struct Options {
    pub seeds: Option<u64>,
    pub epochs: Option<u64>,
    pub keep_runs: bool,
}

pub const OMEGAS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const TASK1_SEEDS: u64 = 10;
pub const TASK1_EPOCH_CAP: u64 = 20_000;
pub const FIT_MSE: f64 = 0.05;
pub const FIT_MIN_EPOCHS: u64 = 50;

/// The experiment a figure's recipe trains.
pub fn recipe(figure: Figure, opts: &Options) -> ExperimentConfig {
    let task1 = |omegas: Vec<f64>, n: usize, hidden: Vec<usize>, seeds: u64, cap: u64, fit: f64| {
        let mut train = TrainConfig::new(0.001, Loss::Mse, 0);
        train.lr = LrSchedule::Constant(0.001);
        train.epochs = Some(opts.epochs.unwrap_or(cap));
        train.freeze_first_weights = true;
        train.record_bias = true;
        train.stop_below_loss = Some(fit);
        train.min_epochs = FIT_MIN_EPOCHS;
        ExperimentConfig {
            task: TaskSpec::Sinusoid { omegas, n },
            seeds: (0..opts.seeds.unwrap_or(seeds)).collect(),
            network: NetworkSpec {
                hidden,
                first_identity: true,
                init: Default::default(),
            },
            train,
            audit: AuditSpec::default(),
        }
    };
    match figure {
        Figure::Fig1 | Figure::Fig2 | Figure::FigTotalTrajectory => task1(
            OMEGAS.to_vec(),
            100,
            vec![10, 32, 32, 32],
            TASK1_SEEDS,
            TASK1_EPOCH_CAP,
            FIT_MSE,
        ),
        Figure::Fig5 => task1(vec![0.5], 200, vec![10, 32], 1, 5_000, 0.01),
    }
}

/// What the figures need from one run, extracted so the run log can be
/// dropped.
#[derive(Debug, Clone, Serialize)]
pub struct RunPoint {
    pub omega: f64,
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub sum_phi_per_epoch: Vec<f64>,
    pub total_trajectory: Vec<f64>,
    /// Losses at every epoch end (index 0 is initialization).
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub variance: Option<f64>,
    pub distance: Option<f64>,
}

fn omega_of(v: &Variant) -> f64 {
    match *v {
        Variant::Sinusoid { omega, .. } => omega,
        Variant::CorruptedBlobs { corruption, .. } => corruption,
    }
}

fn loaded(out: &run::RunOutput) -> LoadedRun {
    LoadedRun {
        spec: out.spec.clone(),
        data: out.data.clone(),
        test: out.test.clone(),
        log: out.log.clone(),
    }
}

fn train_point(spec: &RunSpec, root: &Path, keep: bool, audits: &[Which]) -> Result<RunPoint, Failure> {
    let out = run::execute(spec)?;
    let lr = loaded(&out);
    let stats: &CheckpointStats = &out.stats;
    let mut variance = None;
    let mut distance = None;
    for &w in audits {
        match w {
            Which::Corollary2 => variance = Some(audit::corollary2(&lr, stats)?.empirical_variance),
            Which::Corollary3 => distance = Some(audit::corollary3(&lr, stats)?.distance),
            _ => {}
        }
    }
    if keep {
        let dir = root.join("runs").join(spec.name());
        run::write_run(&dir, &out)?;
        audit::audit_loaded(&dir, &lr, Which::All)?;
    }
    let c = &out.summary.complexity;
    Ok(RunPoint {
        omega: omega_of(&spec.variant),
        seed: spec.seed,
        epochs: c.sum_phi_per_epoch.len(),
        final_train_loss: out.summary.final_train_loss,
        final_test_loss: out.summary.final_test_loss,
        sum_phi_per_epoch: c.sum_phi_per_epoch.clone(),
        total_trajectory: c.total_trajectory.clone(),
        train_loss: out.summary.train_loss_series.clone(),
        test_loss: out.summary.test_loss_series.clone(),
        variance,
        distance,
    })
}

/// Mean over the runs still going at each epoch.
fn seed_mean(points: &[&RunPoint], series: impl Fn(&RunPoint) -> &[f64]) -> Vec<(f64, f64)> {
    let len = points.iter().map(|p| series(p).len()).max().unwrap_or(0);
    (0..len)
        .map(|e| {
            let vals: Vec<f64> = points.iter().filter_map(|p| series(p).get(e).copied()).collect();
            (e as f64, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn by_omega(points: &[RunPoint]) -> Vec<(f64, Vec<&RunPoint>)> {
    let mut out: Vec<(f64, Vec<&RunPoint>)> = Vec::new();
    for p in points {
        match out.iter_mut().find(|(w, _)| *w == p.omega) {
            Some((_, v)) => v.push(p),
            None => out.push((p.omega, vec![p])),
        }
    }
    out
}

fn per_omega_plot(
    points: &[RunPoint],
    series: impl Fn(&RunPoint) -> &[f64] + Copy,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    log_y: bool,
    offset: f64,
) -> String {
    let s: Vec<Series> = by_omega(points)
        .into_iter()
        .map(|(w, ps)| Series {
            label: format!("omega={w}"),
            points: seed_mean(&ps, series).into_iter().map(|(x, y)| (x + offset, y)).collect(),
        })
        .collect();
    plot::line_plot(title, xlabel, ylabel, &s, log_y)
}

fn write(out: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let p = out.join(name);
    run::write_text(&p, text)?;
    files.push(p);
    Ok(())
}

fn train_all(cfg: &ExperimentConfig, out: &Path, keep: bool, audits: &[Which]) -> Result<Vec<RunPoint>, Failure> {
    let specs = run::expand(cfg);
    crate::par_map(&specs, |s| train_point(s, out, keep, audits))
}

fn fig1(points: &[RunPoint], out: &Path, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut csv = String::from("omega,seed,epoch,train_loss,test_loss,sum_phi\n");
    for p in points {
        for e in 0..p.epochs {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.omega,
                p.seed,
                e + 1,
                p.train_loss.get(e + 1).map(f64::to_string).unwrap_or_default(),
                p.test_loss.get(e + 1).map(f64::to_string).unwrap_or_default(),
                p.sum_phi_per_epoch[e]
            ));
        }
    }
    write(out, "fig1.csv", &csv, files)?;
    let tl = per_omega_plot(points, |p| &p.train_loss, "Training loss", "epoch", "train MSE", true, 0.0);
    write(out, "fig1_train_loss.svg", &tl, files)?;
    let sp = per_omega_plot(
        points,
        |p| &p.sum_phi_per_epoch,
        "Per-epoch normalized bias trajectory",
        "epoch",
        "sum of phi",
        true,
        1.0,
    );
    write(out, "fig1_sum_phi.svg", &sp, files)?;
    let te = per_omega_plot(points, |p| &p.test_loss, "Test loss", "epoch", "test MSE", true, 0.0);
    write(out, "fig1_test_loss.svg", &te, files)
}

fn fig_total(points: &[RunPoint], out: &Path, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut csv = String::from("omega,seed,epoch,total_trajectory\n");
    for p in points {
        for (e, v) in p.total_trajectory.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", p.omega, p.seed, e + 1, v));
        }
    }
    write(out, "fig_total_trajectory.csv", &csv, files)?;
    let svg = per_omega_plot(
        points,
        |p| &p.total_trajectory,
        "Total normalized bias trajectory",
        "epoch",
        "cumulative sum of phi",
        true,
        1.0,
    );
    write(out, "fig_total_trajectory.svg", &svg, files)
}

#[derive(Debug, Serialize)]
pub struct Fig2Row {
    pub omega: f64,
    pub runs: usize,
    pub mean_variance: f64,
    pub mean_distance: f64,
}

pub fn fig2_rows(points: &[RunPoint]) -> Vec<Fig2Row> {
    by_omega(points)
        .into_iter()
        .map(|(w, ps)| {
            let n = ps.len() as f64;
            Fig2Row {
                omega: w,
                runs: ps.len(),
                mean_variance: ps.iter().filter_map(|p| p.variance).sum::<f64>() / n,
                mean_distance: ps.iter().filter_map(|p| p.distance).sum::<f64>() / n,
            }
        })
        .collect()
}

fn fig2(points: &[RunPoint], out: &Path, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut csv = String::from("omega,seed,epochs,variance,distance\n");
    for p in points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.omega,
            p.seed,
            p.epochs,
            p.variance.map(|v| v.to_string()).unwrap_or_default(),
            p.distance.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    write(out, "fig2.csv", &csv, files)?;
    let rows = fig2_rows(points);
    let mut summary = String::from("omega,runs,mean_variance,mean_distance\n");
    for r in &rows {
        summary.push_str(&format!("{},{},{},{}\n", r.omega, r.runs, r.mean_variance, r.mean_distance));
    }
    write(out, "fig2_summary.csv", &summary, files)?;
    let var = Series {
        label: "seed mean".into(),
        points: rows.iter().map(|r| (r.omega, r.mean_variance)).collect(),
    };
    let dist = Series {
        label: "seed mean".into(),
        points: rows.iter().map(|r| (r.omega, r.mean_distance)).collect(),
    };
    write(
        out,
        "fig2_variance.svg",
        &plot::line_plot("Bias variance, last 10 epochs", "omega", "variance", &[var], true),
        files,
    )?;
    write(
        out,
        "fig2_distance.svg",
        &plot::line_plot("Distance of b1 to initialization", "omega", "distance", &[dist], false),
        files,
    )
}

#[derive(Debug, Serialize)]
pub struct Fig5Summary {
    pub run: String,
    pub final_train_loss: f64,
    pub regions: usize,
    pub occupied: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub skipped: usize,
    /// Median of bound/λ over feasible regions with λ > 0.
    pub median_bound_ratio: Option<f64>,
    pub violations: usize,
}

fn fig5(cfg: &ExperimentConfig, out: &Path, keep: bool, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let spec = run::expand(cfg).remove(0);
    let result = run::execute(&spec)?;
    if keep {
        let dir = out.join("runs").join(spec.name());
        run::write_run(&dir, &result)?;
        audit::audit_loaded(&dir, &loaded(&result), Which::All)?;
    }
    let Variant::Sinusoid { omega, .. } = spec.variant else {
        unreachable!("fig5 is a sinusoid recipe")
    };
    let net = &result.log.final_network;
    let plane = regions::embedding_plane(omega, spec.seed, regions::DEFAULT_RESOLUTION);
    let pm = PatternMatrix::from_frozen(net, &result.data, Loss::Mse)?;
    let atlas = regions::write_atlas(net, &plane, Some(&pm), Some(&result.data), 5_000, out, "fig5")?;
    files.extend(atlas.files.iter().cloned());
    let scan = &atlas.scan;
    let [gu, gv] = plane.resolution;
    let mut truth = Vec::with_capacity(gu * gv);
    for j in 0..gv {
        for i in 0..gu {
            let (u, v) = plane.cell_center(i, j);
            truth.push(sinusoid_label(omega, &[u, v]));
        }
    }
    let points = result.data.inputs.clone();
    let panels = [
        ("fig5_truth.svg", ColorMode::Values(truth), "target function"),
        ("fig5_learned.svg", ColorMode::Values(regionviz::grid_values(net, &plane)?), "learned function"),
        ("fig5_lipschitz.svg", ColorMode::Lipschitz, "local Lipschitz constant"),
        ("fig5_bound.svg", ColorMode::Bound, "basis-pursuit bound"),
    ];
    for (name, mode, title) in panels {
        write(out, name, &regionviz::emit_svg(scan, &points, &mode, title), files)?;
    }
    let count = |s| scan.regions.iter().filter(|r| r.theorem2_status == s).count();
    let mut ratios: Vec<f64> = scan
        .regions
        .iter()
        .filter_map(|r| match r.theorem2_bound {
            Some(b) if r.lambda > 0.0 => Some(b / r.lambda),
            _ => None,
        })
        .collect();
    let violations = scan
        .regions
        .iter()
        .filter(|r| r.theorem2_bound.is_some_and(|b| b * (1.0 + lipscope::region::SOUNDNESS_SLACK) < r.lambda))
        .count();
    let summary = Fig5Summary {
        run: spec.name(),
        final_train_loss: result.summary.final_train_loss,
        regions: scan.regions.len(),
        occupied: count(RegionStatus::Occupied),
        feasible: count(RegionStatus::Feasible),
        infeasible: count(RegionStatus::Infeasible),
        skipped: count(RegionStatus::Skipped),
        median_bound_ratio: lipscope::region::median(&mut ratios),
        violations,
    };
    let p = out.join("fig5_summary.json");
    run::write_json(&p, &summary)?;
    files.push(p);
    Ok(())
}

pub fn reproduce(figure: Figure, out: &Path, opts: &Options) -> Result<Vec<PathBuf>, Failure> {
    let cfg = recipe(figure, opts);
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("cannot create {}: {e}", out.display())))?;
    let mut files = Vec::new();
    let p = out.join("experiment.json");
    run::write_json(&p, &cfg)?;
    files.push(p);
    match figure {
        Figure::Fig5 => fig5(&cfg, out, opts.keep_runs, &mut files)?,
        Figure::Fig1 => fig1(&train_all(&cfg, out, opts.keep_runs, &[])?, out, &mut files)?,
        Figure::FigTotalTrajectory => fig_total(&train_all(&cfg, out, opts.keep_runs, &[])?, out, &mut files)?,
        Figure::Fig2 => {
            let points = train_all(&cfg, out, opts.keep_runs, &[Which::Corollary2, Which::Corollary3])?;
            fig2(&points, out, &mut files)?
        }
    }
    Ok(files)
}
