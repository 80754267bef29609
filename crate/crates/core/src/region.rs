//! Activation-pattern algebra: Lipschitz bounds for linear regions that
//! contain no training point, the Dropout-based global estimate, and the
//! covering-number generalization certificate.
//!
//! For a fixed network `∂f/∂b₁` is linear in the Kronecker-flattened pattern
//! `s(x)`, so writing an empty region's pattern as `Σ k_t s_t` transfers the
//! observed normalized updates `φ_t` to it. Only coordinates on which some
//! column or the target is nonzero are materialized, and coordinates whose
//! column signatures coincide collapse to a single equality row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix};
use crate::lipschitz::{local_lipschitz, AuditError, Result};
use crate::network::{Activation, ActivationPattern, Loss, Network};
use crate::simplex::{self, LpStatus};
use crate::tasks::Dataset;
use crate::train::{self, RunLog};

/// Columns `s_t(x_t)` with their normalized updates `φ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMatrix {
    pub layer_sizes: Vec<usize>,
    pub columns: Vec<ActivationPattern>,
    pub phi: Vec<f64>,
    /// How many source iterations each column stands for.
    pub multiplicity: Vec<usize>,
    /// Source iterations with `ε = 0`, which carry no `φ`.
    pub dropped_zero_gradient: usize,
    pub mu: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub head: Activation,
}

impl PatternMatrix {
    /// Builds the matrix from `(pattern, φ)` pairs; `None` marks a
    /// zero-gradient iteration. Duplicate patterns keep the smallest `φ`.
    pub fn new(
        layer_sizes: Vec<usize>,
        entries: impl IntoIterator<Item = (ActivationPattern, Option<f64>)>,
        mu: Option<f64>,
        beta: f64,
        gamma: f64,
        head: Activation,
    ) -> Result<Self> {
        if head == Activation::Sigmoid && !mu.is_some_and(|m| m > 0.0 && m <= 0.5) {
            return Err(AuditError::Invalid(format!(
                "sigmoid head needs mu in (0, 0.5], got {mu:?}"
            )));
        }
        let mut index: BTreeMap<ActivationPattern, usize> = BTreeMap::new();
        let mut pm = Self {
            layer_sizes,
            columns: Vec::new(),
            phi: Vec::new(),
            multiplicity: Vec::new(),
            dropped_zero_gradient: 0,
            mu,
            beta,
            gamma,
            head,
        };
        for (pattern, phi) in entries {
            let widths: Vec<usize> = pattern.per_layer.iter().map(Vec::len).collect();
            if widths != pm.layer_sizes {
                return Err(AuditError::Invalid(format!(
                    "pattern widths {widths:?} differ from {:?}",
                    pm.layer_sizes
                )));
            }
            let Some(phi) = phi else {
                pm.dropped_zero_gradient += 1;
                continue;
            };
            if !(phi >= 0.0 && phi.is_finite()) {
                return Err(AuditError::Invalid(format!("phi must be finite and >= 0, got {phi}")));
            }
            match index.get(&pattern) {
                Some(&j) => {
                    pm.phi[j] = pm.phi[j].min(phi);
                    pm.multiplicity[j] += 1;
                }
                None => {
                    index.insert(pattern.clone(), pm.columns.len());
                    pm.columns.push(pattern);
                    pm.phi.push(phi);
                    pm.multiplicity.push(1);
                }
            }
        }
        Ok(pm)
    }

    /// Columns from the recorded iterations `[t_start, t_end)` of a run with
    /// pattern recording. Uses the post-Dropout pattern, the one the update
    /// flowed through.
    pub fn from_log(log: &RunLog, window: (u64, u64), gamma: f64) -> Result<Self> {
        let (start, end) = window;
        let len = log.iterations();
        if start >= end || end > len {
            return Err(AuditError::WindowOutOfRange { start, end, len });
        }
        if log.config.batch_size != 1 {
            return Err(AuditError::BatchedRun(log.config.batch_size));
        }
        let records = &log.records[start as usize..end as usize];
        let mut entries = Vec::with_capacity(records.len());
        let mut beta = 0.0f64;
        let mut mu = f64::INFINITY;
        for r in records {
            let p = r.patterns.as_ref().ok_or_else(|| {
                AuditError::Invalid("run was trained without record_patterns".into())
            })?;
            entries.push((p[0].post.clone(), r.phi));
            beta = beta.max(r.sigma1);
            let y = r.head_outputs[0];
            mu = mu.min(y.min(1.0 - y));
        }
        let head = log.final_network.head();
        let mu = (head == Activation::Sigmoid).then_some(mu);
        Self::new(log.final_network.hidden_sizes(), entries, mu, beta, gamma, head)
    }

    /// Columns obtained by evaluating a fixed network on every training
    /// point, as if each were one SGD step with training halted (`γ = 0`).
    pub fn from_frozen(net: &Network, data: &Dataset, loss: Loss) -> Result<Self> {
        let mut entries = Vec::with_capacity(data.len());
        let mut mu = f64::INFINITY;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let phi = train::frozen_phi(net, x, y, loss)?;
            let (out, pattern) = net.forward(x)?;
            mu = mu.min(out.min(1.0 - out));
            entries.push((pattern, phi));
        }
        let mu = (net.head() == Activation::Sigmoid).then_some(mu);
        let (beta, _) = linalg::singular_extremes(net.first_weight());
        Self::new(net.hidden_sizes(), entries, mu, beta, 0.0, net.head())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Total source iterations represented, including dropped ones.
    pub fn source_count(&self) -> usize {
        self.multiplicity.iter().sum::<usize>() + self.dropped_zero_gradient
    }

    pub fn phi_max(&self) -> f64 {
        self.phi.iter().copied().fold(0.0, f64::max)
    }

    pub fn xi(&self) -> Result<f64> {
        xi_factor(self.mu.unwrap_or(0.5), self.head)
    }

    fn words(&self) -> usize {
        self.len().div_ceil(64).max(1)
    }

    /// Per layer and unit: bitset of the columns with that unit active.
    fn unit_sets(&self) -> Vec<Vec<Vec<u64>>> {
        let words = self.words();
        self.layer_sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..n)
                    .map(|i| {
                        let mut set = vec![0u64; words];
                        for (j, c) in self.columns.iter().enumerate() {
                            if c.per_layer[l][i] {
                                set[j / 64] |= 1 << (j % 64);
                            }
                        }
                        set
                    })
                    .collect()
            })
            .collect()
    }

    /// The distinct equality rows of `S_T k = s_target`, each a column
    /// bitset with its right-hand side. `None` when some row is
    /// unsatisfiable by construction.
    fn rows(&self, target: &ActivationPattern) -> Option<Vec<(Vec<u64>, f64)>> {
        let sets = self.unit_sets();
        let words = self.words();
        let candidates: Vec<Vec<usize>> = self
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..n)
                    .filter(|&i| {
                        target.per_layer[l][i] || sets[l][i].iter().any(|&w| w != 0)
                    })
                    .collect()
            })
            .collect();
        // Whether layers l.. of the target all have an active unit.
        let mut tail_live = vec![true; self.layer_sizes.len() + 1];
        for l in (0..self.layer_sizes.len()).rev() {
            tail_live[l] = tail_live[l + 1] && target.per_layer[l].iter().any(|&b| b);
        }
        let mut rows: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        let ok = self.collect_rows(
            0,
            vec![u64::MAX; words],
            true,
            &sets,
            &candidates,
            &tail_live,
            target,
            &mut rows,
        );
        ok.then(|| rows.into_iter().collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn collect_rows(
        &self,
        l: usize,
        sig: Vec<u64>,
        on: bool,
        sets: &[Vec<Vec<u64>>],
        candidates: &[Vec<usize>],
        tail_live: &[bool],
        target: &ActivationPattern,
        rows: &mut BTreeMap<Vec<u64>, f64>,
    ) -> bool {
        let empty = sig.iter().all(|&w| w == 0);
        if empty {
            return !(on && tail_live[l]);
        }
        if l == self.layer_sizes.len() {
            let rhs = f64::from(u8::from(on));
            return match rows.insert(sig, rhs) {
                Some(prev) => prev == rhs,
                None => true,
            };
        }
        for &i in &candidates[l] {
            let next: Vec<u64> = sig.iter().zip(&sets[l][i]).map(|(a, b)| a & b).collect();
            let next_on = on && target.per_layer[l][i];
            if !self.collect_rows(l + 1, next, next_on, sets, candidates, tail_live, target, rows) {
                return false;
            }
        }
        true
    }
}

/// `ξ = 0.25/(μ(1−μ))` for a sigmoid head, `1` otherwise.
pub fn xi_factor(mu: f64, head: Activation) -> Result<f64> {
    match head {
        Activation::Sigmoid => {
            if !(mu > 0.0 && mu <= 0.5) {
                return Err(AuditError::Invalid(format!(
                    "mu must lie in (0, 0.5] for a sigmoid head, got {mu}"
                )));
            }
            Ok(0.25 / (mu * (1.0 - mu)))
        }
        _ => Ok(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BPSolution {
    pub status: BpStatus,
    /// `k = k⁺ − k⁻`, one entry per column.
    pub k: Vec<f64>,
    /// `‖k ⊙ φ_T‖₁`.
    pub objective: f64,
    /// `(1+γ) β ξ · objective`.
    pub bound: Option<f64>,
    /// `‖S_T k − s_target‖_∞`.
    pub residual: f64,
    pub rows: usize,
}

impl BPSolution {
    fn infeasible(n: usize, rows: usize) -> Self {
        Self {
            status: BpStatus::Infeasible,
            k: vec![0.0; n],
            objective: f64::NAN,
            bound: None,
            residual: f64::NAN,
            rows,
        }
    }
}

/// `min ‖k ⊙ φ_T‖₁  s.t.  S_T k = s_target`, as a linear program over
/// `k = k⁺ − k⁻`.
pub fn basis_pursuit(pm: &PatternMatrix, target: &ActivationPattern) -> Result<BPSolution> {
    let widths: Vec<usize> = target.per_layer.iter().map(Vec::len).collect();
    if widths != pm.layer_sizes {
        return Err(AuditError::Invalid(format!(
            "target widths {widths:?} differ from {:?}",
            pm.layer_sizes
        )));
    }
    let n = pm.len();
    let Some(rows) = pm.rows(target) else {
        return Ok(BPSolution::infeasible(n, 0));
    };
    let m = rows.len();
    let Some(keep) = independent_rows(&rows, n) else {
        return Ok(BPSolution::infeasible(n, m));
    };
    let mut a = Matrix::zeros(keep.len(), 2 * n);
    let mut b = vec![0.0; keep.len()];
    {
        let data = a.as_mut_slice();
        for (r, (sig, rhs)) in keep.iter().map(|&i| &rows[i]).enumerate() {
            b[r] = *rhs;
            for j in 0..n {
                if sig[j / 64] >> (j % 64) & 1 == 1 {
                    data[r * 2 * n + j] = 1.0;
                    data[r * 2 * n + n + j] = -1.0;
                }
            }
        }
    }
    let cost: Vec<f64> = pm.phi.iter().chain(&pm.phi).copied().collect();
    let sol = simplex::minimize(&a, &b, &cost);
    if sol.status != LpStatus::Optimal {
        return Ok(BPSolution::infeasible(n, m));
    }
    let k: Vec<f64> = (0..n).map(|j| sol.x[j] - sol.x[n + j]).collect();
    let residual = rows
        .iter()
        .map(|(sig, rhs)| {
            let s: f64 = (0..n)
                .filter(|&j| sig[j / 64] >> (j % 64) & 1 == 1)
                .map(|j| k[j])
                .sum();
            (s - rhs).abs()
        })
        .fold(0.0, f64::max);
    if residual > 1e-8 {
        return Ok(BPSolution::infeasible(n, m));
    }
    let objective: f64 = k.iter().zip(&pm.phi).map(|(k, p)| k.abs() * p).sum();
    let bound = (1.0 + pm.gamma) * pm.beta * pm.xi()? * objective;
    Ok(BPSolution {
        status: BpStatus::Optimal,
        k,
        objective,
        bound: Some(bound),
        residual,
        rows: m,
    })
}

/// Indices of a maximal linearly independent subset of the equality rows,
/// or `None` if the system is inconsistent. The reduced system has the same
/// solution set, and at most `n` rows instead of one per distinct signature.
fn independent_rows(rows: &[(Vec<u64>, f64)], n: usize) -> Option<Vec<usize>> {
    const TOL: f64 = 1e-9;
    let mut basis: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut keep = Vec::new();
    for (i, (sig, rhs)) in rows.iter().enumerate() {
        let mut v: Vec<f64> = (0..n)
            .map(|j| f64::from(u8::from(sig[j / 64] >> (j % 64) & 1 == 1)))
            .collect();
        v.push(*rhs);
        for (p, row) in &basis {
            let f = v[*p];
            if f != 0.0 {
                for (x, y) in v.iter_mut().zip(row) {
                    *x -= f * y;
                }
            }
        }
        let Some(p) = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())) else {
            if rhs.abs() > TOL {
                return None;
            }
            continue;
        };
        if v[p].abs() <= TOL {
            if v[n].abs() > TOL {
                return None;
            }
            continue;
        }
        let scale = v[p];
        v.iter_mut().for_each(|x| *x /= scale);
        basis.push((p, v));
        keep.push(i);
    }
    Some(keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryCover {
    pub k: usize,
    pub columns: Vec<usize>,
    /// `k β (1+γ) ξ ‖φ_T‖_∞`.
    pub bound: f64,
}

/// Smallest set of at most `k_max` distinct columns whose flattened
/// patterns sum exactly to the target.
pub fn binary_cover_bound(
    pm: &PatternMatrix,
    target: &ActivationPattern,
    k_max: usize,
) -> Result<Option<BinaryCover>> {
    let t_support = target.flat_support();
    let pos: std::collections::HashMap<usize, usize> =
        t_support.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let words = t_support.len().div_ceil(64).max(1);
    // Candidates: nonzero columns whose support lies inside the target's.
    let mut cands: Vec<(usize, Vec<u64>, usize)> = Vec::new();
    'col: for (j, c) in pm.columns.iter().enumerate() {
        let sup = c.flat_support();
        if sup.is_empty() {
            continue;
        }
        let mut set = vec![0u64; words];
        for s in &sup {
            let Some(&i) = pos.get(s) else { continue 'col };
            set[i / 64] |= 1 << (i % 64);
        }
        cands.push((j, set, sup.len()));
    }
    let factor = (1.0 + pm.gamma) * pm.beta * pm.xi()? * pm.phi_max();
    if t_support.is_empty() {
        return Ok(Some(BinaryCover { k: 0, columns: Vec::new(), bound: 0.0 }));
    }
    for k in 1..=k_max {
        let mut chosen = Vec::with_capacity(k);
        if cover_search(&cands, 0, k, vec![0u64; words], 0, t_support.len(), &mut chosen) {
            return Ok(Some(BinaryCover {
                k,
                columns: chosen.iter().map(|&c| cands[c].0).collect(),
                bound: k as f64 * factor,
            }));
        }
    }
    Ok(None)
}

fn cover_search(
    cands: &[(usize, Vec<u64>, usize)],
    from: usize,
    left: usize,
    used: Vec<u64>,
    covered: usize,
    need: usize,
    chosen: &mut Vec<usize>,
) -> bool {
    if left == 0 {
        return covered == need;
    }
    for c in from..cands.len() {
        let (_, set, size) = &cands[c];
        if covered + size > need || used.iter().zip(set).any(|(a, b)| a & b != 0) {
            continue;
        }
        let next: Vec<u64> = used.iter().zip(set).map(|(a, b)| a | b).collect();
        chosen.push(c);
        if cover_search(cands, c + 1, left - 1, next, covered + size, need, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeStatus {
    Occupied,
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe_id: usize,
    pub status: ProbeStatus,
    pub actual_lipschitz: f64,
    pub bound: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub probes: Vec<ProbeResult>,
    pub occupied: usize,
    pub feasible: usize,
    pub infeasible: usize,
    /// Feasible fraction among empty-region probes.
    pub feasibility_rate: f64,
    pub median_ratio: Option<f64>,
    /// Feasible probes whose bound falls below the actual constant.
    pub violations: usize,
}

/// Relative slack for floating-point noise when comparing bound and actual.
pub const SOUNDNESS_SLACK: f64 = 1e-9;

/// Runs basis pursuit at every probe whose pattern differs from all
/// training-point patterns.
pub fn audit_theorem2(
    net: &Network,
    pm: &PatternMatrix,
    probes: &[Vec<f64>],
    data: &Dataset,
) -> Result<Theorem2Report> {
    let occupied: std::collections::HashSet<ActivationPattern> = data
        .inputs
        .iter()
        .map(|x| net.pattern(x))
        .collect::<std::result::Result<_, _>>()?;
    let mut results = Vec::with_capacity(probes.len());
    let mut ratios = Vec::new();
    let mut violations = 0;
    for (id, p) in probes.iter().enumerate() {
        let actual = local_lipschitz(net, p)?;
        let pattern = net.pattern(p)?;
        if occupied.contains(&pattern) {
            results.push(ProbeResult {
                probe_id: id,
                status: ProbeStatus::Occupied,
                actual_lipschitz: actual,
                bound: None,
                ratio: None,
            });
            continue;
        }
        let sol = basis_pursuit(pm, &pattern)?;
        let (status, ratio) = match sol.bound {
            Some(b) => {
                if b * (1.0 + SOUNDNESS_SLACK) + f64::MIN_POSITIVE < actual {
                    violations += 1;
                }
                let r = (actual > 0.0).then(|| b / actual);
                if let Some(r) = r {
                    ratios.push(r);
                }
                (ProbeStatus::Feasible, r)
            }
            None => (ProbeStatus::Infeasible, None),
        };
        results.push(ProbeResult {
            probe_id: id,
            status,
            actual_lipschitz: actual,
            bound: sol.bound,
            ratio,
        });
    }
    let count = |s| results.iter().filter(|r| r.status == s).count();
    let (occ, feas, infeas) = (
        count(ProbeStatus::Occupied),
        count(ProbeStatus::Feasible),
        count(ProbeStatus::Infeasible),
    );
    Ok(Theorem2Report {
        probes: results,
        occupied: occ,
        feasible: feas,
        infeasible: infeas,
        feasibility_rate: if feas + infeas > 0 {
            feas as f64 / (feas + infeas) as f64
        } else {
            0.0
        },
        median_ratio: median(&mut ratios),
        violations,
    })
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `bp_report.csv` body.
pub fn bp_report_csv(report: &Theorem2Report) -> String {
    let mut out = String::from("probe_id,feasible,actual_lipschitz,bound,ratio\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in &report.probes {
        let feasible = match p.status {
            ProbeStatus::Feasible => "true",
            ProbeStatus::Infeasible => "false",
            ProbeStatus::Occupied => "occupied",
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.probe_id,
            feasible,
            p.actual_lipschitz,
            opt(p.bound),
            opt(p.ratio)
        ));
    }
    out
}

/// `c = (1+γ) β / (μ(1−μ) p_min)` with the `(1+o(1))` factor set to 1.
pub fn steady_c(beta: f64, gamma: f64, mu: f64, p_min: f64) -> Result<f64> {
    if p_min <= 0.0 {
        return Err(AuditError::Invalid(
            "p_min = 0: some neuron is never active on the training set; prune dead neurons first"
                .into(),
        ));
    }
    if !(mu > 0.0 && mu <= 0.5) {
        return Err(AuditError::Invalid(format!("mu must lie in (0, 0.5], got {mu}")));
    }
    Ok((1.0 + gamma) * beta / (mu * (1.0 - mu) * p_min))
}

/// `λ_steady = (φ c / 4) log(Σ n_l)` over the hidden widths.
pub fn lambda_steady(
    phi: f64,
    beta: f64,
    gamma: f64,
    mu: f64,
    p_min: f64,
    hidden_sizes: &[usize],
) -> Result<f64> {
    let c = steady_c(beta, gamma, mu, p_min)?;
    let total: usize = hidden_sizes.iter().sum();
    Ok(phi * c / 4.0 * (total as f64).ln())
}

/// Greedy first-uncovered cover: walks the points in order, opening a
/// center at each point not within `r` of an existing center.
pub fn greedy_cover(points: &[Vec<f64>], r: f64) -> (usize, Vec<usize>) {
    let mut covered = vec![false; points.len()];
    let mut centers = Vec::new();
    for i in 0..points.len() {
        if covered[i] {
            continue;
        }
        centers.push(i);
        for (j, c) in covered.iter_mut().enumerate() {
            if !*c && linalg::dist2(&points[i], &points[j]) <= r {
                *c = true;
            }
        }
    }
    (centers.len(), centers)
}

/// `r(X) = min_i |1 − 2f(x_i)| / (c log(Σ n_l) φ)`.
pub fn radius(f_values: &[f64], c: f64, phi: f64, hidden_sizes: &[usize]) -> Result<f64> {
    let margin = f_values
        .iter()
        .map(|f| (1.0 - 2.0 * f).abs())
        .fold(f64::INFINITY, f64::min);
    if margin == 0.0 {
        return Err(AuditError::Invalid("a training output equals 0.5: zero margin".into()));
    }
    let total: usize = hidden_sizes.iter().sum();
    Ok(margin / (c * (total as f64).ln() * phi))
}

/// `√((4 log 2 · cover + 2 log(1/δ)) / N)`.
pub fn generalization_bound(cover_count: usize, n: usize, delta_conf: f64) -> f64 {
    ((4.0 * std::f64::consts::LN_2 * cover_count as f64 + 2.0 * (1.0 / delta_conf).ln())
        / n as f64)
        .sqrt()
}

/// Fraction misclassified by `1{f(x) > 0.5}`.
pub fn empirical_errors(net: &Network, data: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let g = if net.predict(x)? > 0.5 { 1.0 } else { 0.0 };
        wrong += usize::from(g != y);
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// Fraction of probe patterns dominated coordinate-wise by `Σ_t s_t`.
pub fn pattern_domination_check(pm: &PatternMatrix, probes: &[ActivationPattern]) -> f64 {
    if probes.is_empty() {
        return 1.0;
    }
    let sets = pm.unit_sets();
    let words = pm.words();
    let dominated = probes
        .iter()
        .filter(|p| dominated(&sets, p, 0, vec![u64::MAX; words]))
        .count();
    dominated as f64 / probes.len() as f64
}

fn dominated(sets: &[Vec<Vec<u64>>], p: &ActivationPattern, l: usize, sig: Vec<u64>) -> bool {
    if sig.iter().all(|&w| w == 0) {
        return p.per_layer[l..].iter().any(|layer| !layer.iter().any(|&b| b));
    }
    if l == sets.len() {
        return true;
    }
    p.per_layer[l].iter().enumerate().filter(|(_, &on)| on).all(|(i, _)| {
        let next = sig.iter().zip(&sets[l][i]).map(|(a, b)| a & b).collect();
        dominated(sets, p, l + 1, next)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub tau: u64,
    /// `max λ_t(R_x)/λ_t′(R_x) − 1` over post-τ checkpoint pairs and
    /// training points.
    pub gamma: f64,
    /// (checkpoint, point) pairs whose pattern differs from the first post-τ
    /// checkpoint.
    pub pattern_flips: usize,
    pub checkpoints: usize,
}

/// Estimates the near-convergence slack `γ` from checkpoints at `t ≥ τ`.
pub fn estimate_gamma(log: &RunLog, data: &Dataset, tau: u64) -> Result<GammaReport> {
    let nets: Vec<&Network> = log
        .checkpoints
        .iter()
        .filter(|c| c.t >= tau)
        .map(|c| &c.network)
        .collect();
    let mut gamma = 0.0f64;
    let mut flips = 0;
    for x in &data.inputs {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut first = None;
        for net in &nets {
            let l = local_lipschitz(net, x)?;
            lo = lo.min(l);
            hi = hi.max(l);
            let p = net.pattern(x)?;
            match &first {
                None => first = Some(p),
                Some(f) => flips += usize::from(*f != p),
            }
        }
        if hi > 0.0 {
            gamma = gamma.max(if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY });
        }
    }
    Ok(GammaReport {
        tau,
        gamma,
        pattern_flips: flips,
        checkpoints: nets.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateIngredients {
    pub phi: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub p_min: f64,
    pub sum_hidden: usize,
    pub delta_conf: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCertificate {
    pub r: f64,
    pub covering_number: usize,
    /// Points covered: the training sample plus any held-out sample.
    pub cover_sample_size: usize,
    pub sample_based: bool,
    pub asymptotic_factors_omitted: bool,
    pub lambda_steady: f64,
    pub er_emp: f64,
    pub er_test: Option<f64>,
    pub bound: f64,
    pub ingredients: CertificateIngredients,
}

/// Assembles the covering-number certificate for a sigmoid classifier.
pub fn certificate(
    net: &Network,
    train: &Dataset,
    test: Option<&Dataset>,
    ing: &CertificateIngredients,
) -> Result<GeneralizationCertificate> {
    let hidden = net.hidden_sizes();
    let c = steady_c(ing.beta, ing.gamma, ing.mu, ing.p_min)?;
    let f_values: Vec<f64> = train
        .inputs
        .iter()
        .map(|x| net.predict(x))
        .collect::<std::result::Result<_, _>>()?;
    let r = radius(&f_values, c, ing.phi, &hidden)?;
    let mut points = train.inputs.clone();
    if let Some(t) = test {
        points.extend(t.inputs.iter().cloned());
    }
    let (covering_number, _) = greedy_cover(&points, r);
    Ok(GeneralizationCertificate {
        r,
        covering_number,
        cover_sample_size: points.len(),
        sample_based: true,
        asymptotic_factors_omitted: true,
        lambda_steady: lambda_steady(ing.phi, ing.beta, ing.gamma, ing.mu, ing.p_min, &hidden)?,
        er_emp: empirical_errors(net, train)?,
        er_test: test.map(|t| empirical_errors(net, t)).transpose()?,
        bound: generalization_bound(covering_number, train.len(), ing.delta_conf),
        ingredients: CertificateIngredients {
            c,
            sum_hidden: hidden.iter().sum(),
            ..ing.clone()
        },
    })
}
