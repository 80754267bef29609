//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use lipscope::linalg::{self, Matrix};
use lipscope::region::{self, BpStatus, PatternMatrix};
use lipscope::regionviz::{self, ColorMode, RegionScan, SlicePlane};
use lipscope::train::{self, InitScheme, TrainConfig};
use lipscope::{Activation, ActivationPattern, Dataset, Layer, Loss, Network};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

/// Extreme singular values via the eigenvalues of `MᵀM` (nalgebra).
pub fn eigen_extremes(m: &Matrix) -> (f64, f64) {
    let a = to_na(m);
    let gram = a.transpose() * &a;
    let ev = gram.symmetric_eigenvalues();
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    (max.sqrt(), min.sqrt())
}

/// Compares `singular_extremes` with the SVD (σ₁) and eigen (σ_n) oracles on
/// one random matrix. Returns the discrepancy description on failure.
pub fn check_singular(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let rows = rng.random_range(1..=12);
    let cols = rng.random_range(1..=12);
    let m = random_matrix(rng, rows, cols);
    let (s1, sn) = linalg::singular_extremes(&m);
    let svd = to_na(&m).singular_values();
    let top = svd.iter().copied().fold(0.0, f64::max);
    if (s1 - top).abs() > 1e-8 * top.max(1.0) {
        return Err(format!("sigma_1 {s1} vs {top} ({rows}x{cols})"));
    }
    // σ_n is over the n = cols input directions; zero when rows < cols.
    let (_, e_min) = eigen_extremes(&m);
    let expect_min = if rows < cols { 0.0 } else { e_min };
    // The eigen route loses half the digits near zero.
    let tol = if expect_min < 1e-4 { 1e-6 } else { 1e-8 * top.max(1.0) };
    if (sn - expect_min).abs() > tol {
        return Err(format!("sigma_n {sn} vs {expect_min} ({rows}x{cols})"));
    }
    Ok(())
}

pub fn random_pattern(rng: &mut ChaCha8Rng, sizes: &[usize], p: f64) -> ActivationPattern {
    ActivationPattern::new(sizes.iter().map(|&n| (0..n).map(|_| rng.random_bool(p)).collect()).collect())
}

pub fn flat(p: &ActivationPattern) -> Vec<f64> {
    p.flatten().iter().map(|&b| f64::from(b)).collect()
}

/// `min Σ φ_j |k_j|  s.t.  S k = s` by enumerating supports of linearly
/// independent columns; an optimal basic solution lives on one of them.
pub fn exhaustive_bp(cols: &[Vec<f64>], phi: &[f64], target: &[f64]) -> Option<f64> {
    let n = cols.len();
    let dim = target.len();
    let b = nalgebra::DVector::from_column_slice(target);
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let (resid, k) = if idx.is_empty() {
            (b.amax(), nalgebra::DVector::zeros(0))
        } else {
            let a = DMatrix::from_fn(dim, idx.len(), |r, c| cols[idx[c]][r]);
            if a.clone().svd(false, false).singular_values.iter().any(|&s| s < 1e-9) {
                continue;
            }
            let Ok(k) = a.clone().svd(true, true).solve(&b, 1e-12) else { continue };
            ((&a * &k - &b).amax(), k)
        };
        if resid > 1e-9 {
            continue;
        }
        let obj: f64 = idx.iter().zip(k.iter()).map(|(&j, kj)| phi[j] * kj.abs()).sum();
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

/// One random micro-instance with at most six columns: solver against
/// exhaustive search. `Ok(true)` when feasible and in agreement.
pub fn check_bp_micro(rng: &mut ChaCha8Rng, trial: usize) -> Result<bool, String> {
    let sizes = if trial % 2 == 0 { vec![3, 2] } else { vec![2, 2, 2] };
    let t = rng.random_range(1..=6);
    let entries: Vec<(ActivationPattern, Option<f64>)> = (0..t)
        .map(|_| (random_pattern(rng, &sizes, 0.6), Some(rng.random_range(0.1..3.0))))
        .collect();
    let target = random_pattern(rng, &sizes, 0.5);
    let pm = PatternMatrix::new(sizes, entries, None, 1.0, 0.0, Activation::Identity).map_err(|e| e.to_string())?;
    let sol = region::basis_pursuit(&pm, &target).map_err(|e| e.to_string())?;
    let cols: Vec<Vec<f64>> = pm.columns.iter().map(flat).collect();
    match (sol.status, exhaustive_bp(&cols, &pm.phi, &flat(&target))) {
        (BpStatus::Optimal, Some(w)) => {
            if (sol.objective - w).abs() > 1e-9 * w.max(1.0) || sol.residual > 1e-8 {
                return Err(format!("trial {trial}: {} vs {w}", sol.objective));
            }
            Ok(true)
        }
        (BpStatus::Infeasible, None) => Ok(false),
        (s, w) => Err(format!("trial {trial}: solver {s:?}, oracle {w:?}")),
    }
}

/// A random pattern matrix with its target.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (PatternMatrix, ActivationPattern) {
    let sizes: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
    let entries: Vec<(ActivationPattern, Option<f64>)> = (0..rng.random_range(1..=8))
        .map(|_| (random_pattern(rng, &sizes, 0.5), Some(rng.random_range(0.05..4.0))))
        .collect();
    let target = random_pattern(rng, &sizes, 0.5);
    let pm = PatternMatrix::new(sizes, entries, None, 1.3, 0.2, Activation::Identity).unwrap();
    (pm, target)
}

/// A binary cover is a feasible LP point, so the LP optimum is at most
/// `k ‖φ_T‖_∞`. `Ok(true)` when a cover exists and is dominated.
pub fn check_cover_dominance(pm: &PatternMatrix, target: &ActivationPattern) -> Result<bool, String> {
    let Some(cover) = region::binary_cover_bound(pm, target, pm.len()).map_err(|e| e.to_string())? else {
        return Ok(false);
    };
    let bp = region::basis_pursuit(pm, target).map_err(|e| e.to_string())?;
    if bp.status != BpStatus::Optimal {
        return Err(format!("cover of size {} but basis pursuit infeasible", cover.k));
    }
    let limit = cover.k as f64 * pm.phi_max();
    if bp.objective > limit * (1.0 + 1e-9) + 1e-12 {
        return Err(format!("objective {} > k·phi_max {limit}", bp.objective));
    }
    if bp.bound.unwrap() > cover.bound * (1.0 + 1e-9) + 1e-12 {
        return Err(format!("bound {:?} > cover bound {}", bp.bound, cover.bound));
    }
    Ok(true)
}

/// Size of the smallest subset of points whose `r`-balls cover all points.
pub fn exact_cover(points: &[Vec<f64>], r: f64) -> usize {
    let n = points.len();
    (0u32..(1 << n))
        .filter(|mask| {
            (0..n).all(|i| (0..n).any(|c| mask >> c & 1 == 1 && linalg::dist2(&points[i], &points[c]) <= r))
        })
        .map(|m| m.count_ones() as usize)
        .min()
        .unwrap_or(0)
}

pub fn check_cover(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=8);
    let dim = rng.random_range(1..=3);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let r = rng.random_range(0.05..1.5);
    let (greedy, centers) = region::greedy_cover(&pts, r);
    let exact = exact_cover(&pts, r);
    if greedy != centers.len() || greedy < exact {
        return Err(format!("greedy {greedy} vs exact {exact}"));
    }
    if !pts.iter().all(|p| centers.iter().any(|&c| linalg::dist2(p, &pts[c]) <= r)) {
        return Err("greedy centers leave a point uncovered".into());
    }
    Ok(())
}

/// `f(x, y) = relu(x) + relu(y)`: four quadrant regions.
pub fn quadrant_net() -> Network {
    Network::new(vec![
        Layer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Relu),
        Layer::new(Matrix::from_vec(1, 2, vec![1.0, 1.0]), vec![0.0], Activation::Identity),
    ])
    .unwrap()
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Compares against the golden file, rewriting it first under `UPDATE_GOLDEN`.
pub fn golden_matches(name: &str, got: &str) -> Result<(), String> {
    let path = fixture_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, got).map_err(|e| e.to_string())?;
    }
    let want = std::fs::read_to_string(&path).map_err(|_| format!("missing golden {name}"))?;
    if got != want {
        return Err(format!("{name} differs from its golden file"));
    }
    Ok(())
}

/// Every cell belongs to exactly one region, whose pattern is the pattern at
/// that cell's center, and region patterns are distinct.
pub fn check_partition(net: &Network, scan: &RegionScan) -> Result<(), String> {
    let [gu, gv] = scan.plane.resolution;
    if scan.grid.len() != gu * gv {
        return Err(format!("grid has {} cells, expected {}", scan.grid.len(), gu * gv));
    }
    let total: usize = scan.regions.iter().map(|r| r.cell_count).sum();
    if total != gu * gv {
        return Err(format!("region cell counts sum to {total}"));
    }
    for j in 0..gv {
        for i in 0..gu {
            let (u, v) = scan.plane.cell_center(i, j);
            let p = net.pattern(&scan.plane.point(u, v)).map_err(|e| e.to_string())?;
            if scan.region_at(i, j).pattern != p {
                return Err(format!("cell ({i},{j}) assigned to the wrong region"));
            }
        }
    }
    let mut hashes: Vec<&str> = scan.regions.iter().map(|r| r.pattern_hash.as_str()).collect();
    hashes.sort();
    hashes.dedup();
    if hashes.len() != scan.regions.len() {
        return Err("two regions share a pattern".into());
    }
    Ok(())
}

pub struct Atlas {
    pub net: Network,
    pub data: Option<Dataset>,
    pub scan: RegionScan,
    /// `(golden file name, rendered SVG)`.
    pub svgs: Vec<(&'static str, String)>,
}

/// The quadrant network on a 16×16 grid over `[-1, 1]²`.
pub fn quadrant_atlas() -> Atlas {
    let net = quadrant_net();
    let plane = SlicePlane::standard_2d([-1.0, 1.0, -1.0, 1.0], [16, 16]);
    let scan = regionviz::scan_regions(&net, &plane, None, None, 0).unwrap();
    let svg = regionviz::emit_svg(&scan, &[vec![0.5, 0.5], vec![-0.5, 0.25]], &ColorMode::Lipschitz, "quadrants");
    Atlas { net, data: None, scan, svgs: vec![("quadrants_lipschitz.svg", svg)] }
}

/// A 2-5-4-1 net fit to five points, with basis-pursuit bounds on its empty
/// regions.
pub fn trained_atlas() -> Atlas {
    let data = Dataset::custom(
        vec![vec![0.5, 0.5], vec![-0.5, 0.4], vec![0.3, -0.6], vec![-0.4, -0.4], vec![0.0, 0.8]],
        vec![1.0, 0.0, 0.5, -0.5, 0.2],
    );
    let net = train::init_network(&[2, 5, 4, 1], Activation::Identity, InitScheme::UniformFanIn, false, 9).unwrap();
    let mut cfg = TrainConfig::new(0.05, Loss::Mse, 2);
    cfg.epochs = Some(40);
    let net = train::run_training(&net, &data, &cfg).unwrap().final_network;
    let pm = PatternMatrix::from_frozen(&net, &data, Loss::Mse).unwrap();
    let plane = SlicePlane::standard_2d([-1.5, 1.5, -1.5, 1.5], [24, 24]);
    let scan = regionviz::scan_regions(&net, &plane, Some(&pm), Some(&data), 1000).unwrap();
    let svgs = vec![
        ("trained_bound.svg", regionviz::emit_svg(&scan, &data.inputs, &ColorMode::Bound, "bound")),
        ("trained_lipschitz.svg", regionviz::emit_svg(&scan, &data.inputs, &ColorMode::Lipschitz, "lipschitz")),
    ];
    Atlas { net, data: Some(data), scan, svgs }
}
