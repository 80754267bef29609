//! Linear-region atlases on a 2D slice of input space.
//!
//! Regions are found by evaluating the activation pattern at the center of
//! every grid cell, so regions thinner than a cell can be missed.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::lipschitz::{local_lipschitz, AuditError, Result};
use crate::network::{ActivationPattern, Network};
use crate::region::{self, BpStatus, PatternMatrix};
use crate::tasks::Dataset;

/// `origin + u·axes[0] + v·axes[1]` over `extent`, sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicePlane {
    pub origin: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    /// `[u_min, u_max, v_min, v_max]`.
    pub extent: [f64; 4],
    /// `[g_u, g_v]`.
    pub resolution: [usize; 2],
}

impl SlicePlane {
    pub fn new(origin: Vec<f64>, axes: [Vec<f64>; 2], extent: [f64; 4], resolution: [usize; 2]) -> Result<Self> {
        let p = Self {
            origin,
            axes,
            extent,
            resolution,
        };
        p.validate()?;
        Ok(p)
    }

    /// The `(u, v)` coordinate plane of a 2D input space.
    pub fn standard_2d(extent: [f64; 4], resolution: [usize; 2]) -> Self {
        Self {
            origin: vec![0.0, 0.0],
            axes: [vec![1.0, 0.0], vec![0.0, 1.0]],
            extent,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.origin.len();
        let bad = |m: String| Err(AuditError::Invalid(m));
        if n == 0 || self.axes.iter().any(|a| a.len() != n) {
            return bad(format!("axes must have the origin's dimension {n}"));
        }
        let [a, b] = &self.axes;
        if (linalg::dot(a, a) - 1.0).abs() > 1e-10
            || (linalg::dot(b, b) - 1.0).abs() > 1e-10
            || linalg::dot(a, b).abs() > 1e-10
        {
            return bad("axes must be orthonormal to 1e-10".into());
        }
        let [u0, u1, v0, v1] = self.extent;
        if !(u0 < u1 && v0 < v1) || self.extent.iter().any(|e| !e.is_finite()) {
            return bad(format!("extent {:?} is empty or not finite", self.extent));
        }
        if self.resolution.iter().any(|&g| g < 2) {
            return bad("resolution must be at least 2 per axis".into());
        }
        Ok(())
    }

    pub fn point(&self, u: f64, v: f64) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.axes[0])
            .zip(&self.axes[1])
            .map(|((o, a), b)| o + u * a + v * b)
            .collect()
    }

    /// `(u, v)` of the center of grid cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let [u0, u1, v0, v1] = self.extent;
        let [gu, gv] = self.resolution;
        (
            u0 + (i as f64 + 0.5) * (u1 - u0) / gu as f64,
            v0 + (j as f64 + 0.5) * (v1 - v0) / gv as f64,
        )
    }

    /// Orthogonal projection of `x` onto the plane's coordinates.
    pub fn project(&self, x: &[f64]) -> (f64, f64) {
        let d: Vec<f64> = x.iter().zip(&self.origin).map(|(x, o)| x - o).collect();
        (linalg::dot(&d, &self.axes[0]), linalg::dot(&d, &self.axes[1]))
    }

    pub fn with_resolution(&self, resolution: [usize; 2]) -> Self {
        Self {
            resolution,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionStatus {
    Feasible,
    Infeasible,
    Occupied,
    /// Basis pursuit was not run (no pattern matrix, or budget exhausted).
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub pattern_hash: String,
    pub pattern: ActivationPattern,
    pub cell_count: usize,
    /// 4-connected components of this pattern on the grid.
    pub components: usize,
    pub lambda: f64,
    pub contains_training_point: bool,
    pub theorem2_bound: Option<f64>,
    pub theorem2_status: RegionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScan {
    pub plane: SlicePlane,
    pub regions: Vec<RegionCell>,
    /// Region index of every grid cell, `j·g_u + i` with `v` growing in `j`.
    pub grid: Vec<usize>,
}

impl RegionScan {
    pub fn region_at(&self, i: usize, j: usize) -> &RegionCell {
        &self.regions[self.grid[j * self.plane.resolution[0] + i]]
    }
}

/// Groups grid cells by activation pattern. With a pattern matrix, basis
/// pursuit runs on up to `bp_budget` empty regions, in scan order.
pub fn scan_regions(
    net: &Network,
    plane: &SlicePlane,
    pm: Option<&PatternMatrix>,
    data: Option<&Dataset>,
    bp_budget: usize,
) -> Result<RegionScan> {
    plane.validate()?;
    if plane.origin.len() != net.input_dim() {
        return Err(AuditError::Invalid(format!(
            "plane lives in dimension {}, network expects {}",
            plane.origin.len(),
            net.input_dim()
        )));
    }
    let [gu, gv] = plane.resolution;
    let mut index: HashMap<ActivationPattern, usize> = HashMap::new();
    let mut regions: Vec<RegionCell> = Vec::new();
    let mut grid = Vec::with_capacity(gu * gv);
    for j in 0..gv {
        for i in 0..gu {
            let (u, v) = plane.cell_center(i, j);
            let x = plane.point(u, v);
            let p = net.pattern(&x)?;
            let r = match index.get(&p) {
                Some(&r) => r,
                None => {
                    let r = regions.len();
                    index.insert(p.clone(), r);
                    regions.push(RegionCell {
                        pattern_hash: p.hash_hex(),
                        pattern: p,
                        cell_count: 0,
                        components: 0,
                        lambda: local_lipschitz(net, &x)?,
                        contains_training_point: false,
                        theorem2_bound: None,
                        theorem2_status: RegionStatus::Skipped,
                    });
                    r
                }
            };
            regions[r].cell_count += 1;
            grid.push(r);
        }
    }
    for (r, c) in count_components(&grid, gu, gv, regions.len()).into_iter().enumerate() {
        regions[r].components = c;
    }
    if let Some(data) = data {
        let occupied: HashSet<ActivationPattern> = data
            .inputs
            .iter()
            .map(|x| net.pattern(x))
            .collect::<std::result::Result<_, _>>()?;
        for reg in &mut regions {
            if occupied.contains(&reg.pattern) {
                reg.contains_training_point = true;
                reg.theorem2_status = RegionStatus::Occupied;
            }
        }
    }
    if let Some(pm) = pm {
        let mut left = bp_budget;
        for reg in regions.iter_mut().filter(|r| !r.contains_training_point) {
            if left == 0 {
                break;
            }
            left -= 1;
            let sol = region::basis_pursuit(pm, &reg.pattern)?;
            reg.theorem2_bound = sol.bound;
            reg.theorem2_status = match sol.status {
                BpStatus::Optimal => RegionStatus::Feasible,
                BpStatus::Infeasible => RegionStatus::Infeasible,
            };
        }
    }
    Ok(RegionScan {
        plane: plane.clone(),
        regions,
        grid,
    })
}

fn count_components(grid: &[usize], gu: usize, gv: usize, n: usize) -> Vec<usize> {
    let mut seen = vec![false; grid.len()];
    let mut counts = vec![0; n];
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if seen[start] {
            continue;
        }
        let r = grid[start];
        counts[r] += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(c) = stack.pop() {
            let (i, j) = (c % gu, c / gu);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(c - 1);
            }
            if i + 1 < gu {
                nb.push(c + 1);
            }
            if j > 0 {
                nb.push(c - gu);
            }
            if j + 1 < gv {
                nb.push(c + gu);
            }
            for m in nb {
                if !seen[m] && grid[m] == r {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub regions: usize,
    pub regions_doubled: usize,
    pub converged: bool,
}

/// Region counts at the plane's resolution and at twice it.
pub fn convergence_check(net: &Network, plane: &SlicePlane) -> Result<Convergence> {
    let a = scan_regions(net, plane, None, None, 0)?.regions.len();
    let [gu, gv] = plane.resolution;
    let b = scan_regions(net, &plane.with_resolution([2 * gu, 2 * gv]), None, None, 0)?
        .regions
        .len();
    Ok(Convergence {
        regions: a,
        regions_doubled: b,
        converged: a == b,
    })
}

/// `regions.csv` body.
pub fn regions_csv(scan: &RegionScan) -> String {
    let mut out = String::from("pattern_hash,cell_count,lambda,occupied,bound,status\n");
    for r in &scan.regions {
        let status = match r.theorem2_status {
            RegionStatus::Feasible => "feasible",
            RegionStatus::Infeasible => "infeasible",
            RegionStatus::Occupied => "occupied",
            RegionStatus::Skipped => "skipped",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.pattern_hash,
            r.cell_count,
            r.lambda,
            r.contains_training_point,
            r.theorem2_bound.map(|b| b.to_string()).unwrap_or_default(),
            status
        );
    }
    out
}

/// What the cell fill encodes.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorMode {
    /// Local Lipschitz constant per region.
    Lipschitz,
    /// Basis-pursuit bound; black for infeasible, white for occupied.
    Bound,
    /// One value per grid cell (same layout as `RegionScan::grid`), on a
    /// diverging scale symmetric about zero.
    Values(Vec<f64>),
}

const CANVAS: f64 = 480.0;
const VIRIDIS: [(u8, u8, u8); 5] = [
    (68, 1, 84),
    (59, 82, 139),
    (33, 145, 140),
    (94, 201, 98),
    (253, 231, 37),
];

fn sequential(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let w = x - k as f64;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    let mix = |p: u8, q: u8| (p as f64 + w * (q as f64 - p as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        let s = -t;
        (255.0 - s * 196.0, 255.0 - s * 173.0, 255.0 - s * 116.0)
    } else {
        (255.0 - t * 77.0, 255.0 - t * 231.0, 255.0 - t * 212.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn cell_colors(scan: &RegionScan, mode: &ColorMode) -> Vec<String> {
    match mode {
        ColorMode::Lipschitz => {
            let max = scan.regions.iter().map(|r| r.lambda).fold(0.0, f64::max);
            let per: Vec<String> = scan
                .regions
                .iter()
                .map(|r| sequential(if max > 0.0 { r.lambda / max } else { 0.0 }))
                .collect();
            scan.grid.iter().map(|&r| per[r].clone()).collect()
        }
        ColorMode::Bound => {
            let max = scan
                .regions
                .iter()
                .filter_map(|r| r.theorem2_bound)
                .fold(0.0, f64::max);
            let per: Vec<String> = scan
                .regions
                .iter()
                .map(|r| match (r.theorem2_status, r.theorem2_bound) {
                    (RegionStatus::Occupied, _) => "#ffffff".to_string(),
                    (_, Some(b)) => sequential(if max > 0.0 { b / max } else { 0.0 }),
                    (RegionStatus::Skipped, None) => "#bdbdbd".to_string(),
                    _ => "#000000".to_string(),
                })
                .collect();
            scan.grid.iter().map(|&r| per[r].clone()).collect()
        }
        ColorMode::Values(v) => {
            let max = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
            v.iter()
                .map(|x| diverging(if max > 0.0 { x / max } else { 0.0 }))
                .collect()
        }
    }
}

/// Renders the atlas as an SVG 1.1 document. Training points are drawn at
/// their projection onto the plane; points outside the extent are skipped.
pub fn emit_svg(scan: &RegionScan, points: &[Vec<f64>], mode: &ColorMode, title: &str) -> String {
    let plane = &scan.plane;
    let [gu, gv] = plane.resolution;
    let [u0, u1, v0, v1] = plane.extent;
    let (cw, ch) = (CANVAS / gu as f64, CANVAS / gv as f64);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = CANVAS + 40.0,
        h = CANVAS + 60.0
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<g transform="translate(20,40)" shape-rendering="crispEdges">"#);

    if !scan.grid.is_empty() {
        let colors = cell_colors(scan, mode);
        for j in 0..gv {
            let y = (gv - 1 - j) as f64 * ch;
            let mut i = 0;
            while i < gu {
                let c = &colors[j * gu + i];
                let mut e = i + 1;
                while e < gu && colors[j * gu + e] == *c {
                    e += 1;
                }
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                    i as f64 * cw,
                    y,
                    (e - i) as f64 * cw,
                    ch,
                    c
                );
                i = e;
            }
        }
        let mut path = String::new();
        for j in 0..gv {
            for i in 0..gu {
                let r = scan.grid[j * gu + i];
                let top = (gv - 1 - j) as f64 * ch;
                if i + 1 < gu && scan.grid[j * gu + i + 1] != r {
                    let x = (i + 1) as f64 * cw;
                    let _ = write!(path, "M{:.3} {:.3}V{:.3}", x, top, top + ch);
                }
                if j + 1 < gv && scan.grid[(j + 1) * gu + i] != r {
                    let x = i as f64 * cw;
                    let _ = write!(path, "M{:.3} {:.3}H{:.3}", x, top, x + cw);
                }
            }
        }
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r##"<path d="{path}" fill="none" stroke="#202020" stroke-width="0.5"/>"##
            );
        }
    }
    for p in points {
        let (u, v) = plane.project(p);
        if u < u0 || u > u1 || v < v0 || v > v1 {
            continue;
        }
        let x = (u - u0) / (u1 - u0) * CANVAS;
        let y = (v1 - v) / (v1 - v0) * CANVAS;
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.3}" cy="{y:.3}" r="2.5" fill="#e6550d" stroke="#000000" stroke-width="0.5"/>"##
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="none" stroke="#000000" stroke-width="1"/>"##
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="20" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.0}" font-family="sans-serif" font-size="11">u [{u0}, {u1}]  v [{v0}, {v1}]</text>"#,
        CANVAS + 56.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Network outputs at every grid-cell center, in grid order.
pub fn grid_values(net: &Network, plane: &SlicePlane) -> Result<Vec<f64>> {
    let [gu, gv] = plane.resolution;
    let mut out = Vec::with_capacity(gu * gv);
    for j in 0..gv {
        for i in 0..gu {
            let (u, v) = plane.cell_center(i, j);
            out.push(net.predict(&plane.point(u, v))?);
        }
    }
    Ok(out)
}
