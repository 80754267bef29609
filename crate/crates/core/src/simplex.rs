//! Dense two-phase simplex for `min cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Pricing is Dantzig's rule with a fallback to Bland's rule on degenerate
//! stalls, so the method terminates on degenerate problems. After the final pivot the basic
//! solution is recomputed from the original data by Gaussian elimination.

use crate::linalg::Matrix;

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    m: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v /= p;
        }
        let prow: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.m {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                for (v, pv) in self.t[r * w..(r + 1) * w].iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                self.t[r * w + pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize, dead: &[bool]) -> Vec<f64> {
        let mut d = cost[..allowed].to_vec();
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if dead[r] || cb == 0.0 {
                continue;
            }
            let row = &self.t[r * self.width..r * self.width + allowed];
            for (dj, a) in d.iter_mut().zip(row) {
                *dj -= cb * a;
            }
        }
        for &j in &self.basis {
            if j < allowed {
                d[j] = 0.0;
            }
        }
        d
    }

    /// Minimizes `cost` over columns `0..allowed`, ignoring rows in `dead`.
    /// Dantzig pricing, switching to Bland's rule after a run of degenerate
    /// pivots so that cycling is impossible. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize, dead: &[bool]) -> bool {
        let mut d = self.reduced_costs(cost, allowed, dead);
        let mut degenerate_run = 0usize;
        loop {
            let tol = |j: usize| FEAS_TOL * (1.0 + cost[j].abs());
            let bland = degenerate_run > DEGENERATE_SWITCH;
            let entering = if bland {
                (0..allowed).find(|&j| d[j] < -tol(j))
            } else {
                (0..allowed)
                    .filter(|&j| d[j] < -tol(j))
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]))
            };
            let Some(j) = entering else {
                // Confirm against freshly computed reduced costs.
                let fresh = self.reduced_costs(cost, allowed, dead);
                if (0..allowed).any(|j| fresh[j] < -tol(j)) {
                    d = fresh;
                    degenerate_run = DEGENERATE_SWITCH + 1;
                    continue;
                }
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                if dead[r] {
                    continue;
                }
                let a = self.at(r, j);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                            if ratio < lratio && !tie
                                || tie && self.basis[r] < self.basis[lr]
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else { return false };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, j);
            let dj = d[j];
            let row = &self.t[r * self.width..r * self.width + allowed];
            for (dk, a) in d.iter_mut().zip(row) {
                *dk -= dj * a;
            }
            d[j] = 0.0;
        }
    }
}

/// Solves `min cᵀx  s.t.  Ax = b, x ≥ 0`.
pub fn minimize(a: &Matrix, b: &[f64], c: &[f64]) -> LpSolution {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(b.len(), m, "rhs length");
    assert_eq!(c.len(), n, "cost length");
    let width = n + m + 1;
    let mut t = vec![0.0; m * width];
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[r * width + j] = sign * a[(r, j)];
        }
        t[r * width + n + r] = 1.0;
        t[r * width + width - 1] = sign * b[r];
    }
    let mut tab = Tableau {
        m,
        width,
        t,
        basis: (n..n + m).collect(),
        pivots: 0,
    };
    let mut dead = vec![false; m];

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    tab.optimize(&phase1, n + m, &dead);
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let infeas: f64 = (0..m)
        .filter(|&r| tab.basis[r] >= n)
        .map(|r| tab.rhs(r).abs())
        .sum();
    if infeas > 1e-8 * scale {
        return LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
            pivots: tab.pivots,
        };
    }
    for r in 0..m {
        if tab.basis[r] < n {
            continue;
        }
        match (0..n).find(|&j| !tab.basis.contains(&j) && tab.at(r, j).abs() > 1e-9) {
            Some(j) => tab.pivot(r, j),
            None => dead[r] = true,
        }
    }

    let mut phase2 = c.to_vec();
    phase2.resize(n + m, 0.0);
    if !tab.optimize(&phase2, n, &dead) {
        return LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective: f64::NEG_INFINITY,
            pivots: tab.pivots,
        };
    }

    let live: Vec<usize> = (0..m).filter(|&r| !dead[r]).collect();
    let cols: Vec<usize> = live.iter().map(|&r| tab.basis[r]).collect();
    let mut x = vec![0.0; n];
    match solve_square(a, b, &live, &cols) {
        Some(xb) => {
            for (&j, v) in cols.iter().zip(xb) {
                x[j] = v.max(0.0);
            }
        }
        None => {
            for (&r, &j) in live.iter().zip(&cols) {
                x[j] = tab.rhs(r).max(0.0);
            }
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        pivots: tab.pivots,
    }
}

/// Solves the square system `A[rows, cols] y = b[rows]` with partial
/// pivoting.
fn solve_square(a: &Matrix, b: &[f64], rows: &[usize], cols: &[usize]) -> Option<Vec<f64>> {
    let k = rows.len();
    let mut aug: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| {
            let mut row: Vec<f64> = cols.iter().map(|&j| a[(r, j)]).collect();
            row.push(b[r]);
            row
        })
        .collect();
    for col in 0..k {
        let p = (col..k).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))?;
        if aug[p][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, p);
        for r in col + 1..k {
            let f = aug[r][col] / aug[col][col];
            if f != 0.0 {
                for c in col..=k {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut y = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| aug[r][c] * y[c]).sum();
        y[r] = (aug[r][k] - s) / aug[r][r];
    }
    Some(y)
}
