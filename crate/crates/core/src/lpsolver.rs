//! Exact solver for the linearized inner problem
//!
//! ```text
//! minimize    sum_ij w_ij x_ij
//! subject to  sum_j d_ij x_ij <= 1        for every cell i
//!             sum_i x_ij      = 1         for every test point j
//!             x_ij >= 0
//! ```
//!
//! (`x_ij <= 1` follows from the convexity rows.) The solver is a two-phase
//! revised primal simplex with generalized upper bounding: each test-point
//! row keeps one basic "key" variable that is eliminated implicitly, so the
//! explicit working basis is only `M x M` regardless of the number of test
//! points. The working-basis inverse is kept dense and updated in product
//! form, with a full refactorization when a key changes hands between two
//! basic members of its row and every [`LpOptions::refactor_every`] pivots.
//!
//! Pricing is Dantzig's rule over blocks of test points. After a run of
//! degenerate pivots the solver switches to Bland's rule until the
//! objective moves again, which rules out cycling. All choices are
//! deterministic, so identical input gives identical output.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Grid, Result};

/// Largest `M * N` handled with the dense representation.
pub const MAX_DENSE_ENTRIES: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    /// Objective weights, `M x N`.
    pub weights: Grid,
    /// Capacity coefficients, `M x N`, non-negative.
    pub demand: Grid,
    /// Cells allowed to carry load; masked cells have their row forced to zero.
    pub allowed: Option<Vec<bool>>,
}

impl LpProblem {
    pub fn new(weights: Grid, demand: Grid) -> Result<Self> {
        let p = Self {
            weights,
            demand,
            allowed: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mask(mut self, allowed: Vec<bool>) -> Result<Self> {
        self.allowed = Some(allowed);
        self.validate()?;
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_tps(&self) -> usize {
        self.weights.ncols()
    }

    fn is_allowed(&self, i: usize) -> bool {
        self.allowed.as_ref().is_none_or(|a| a[i])
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.dim() != self.demand.dim() {
            return Err(Error::Dimension(format!(
                "weights {:?} vs demand {:?}",
                self.weights.dim(),
                self.demand.dim()
            )));
        }
        if self.weights.len() > MAX_DENSE_ENTRIES {
            return Err(Error::TooLarge(format!("{} LP columns", self.weights.len())));
        }
        if let Some(a) = &self.allowed {
            if a.len() != self.n_cells() {
                return Err(Error::Dimension("mask length differs from cell count".into()));
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("non-finite LP weight".into()));
        }
        if self.demand.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidConfig("capacity coefficients must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Plain-text dump: a header line, then `cell tp weight demand` per allowed column.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# cellsleep-lp v1")?;
        writeln!(out, "cells {} tps {}", self.n_cells(), self.n_tps())?;
        writeln!(out, "cell tp weight demand")?;
        for ((i, j), w) in self.weights.indexed_iter() {
            if self.is_allowed(i) {
                writeln!(out, "{i} {j} {w:e} {:e}", self.demand[[i, j]])?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

/// Why phase 1 could not reach a feasible point.
#[derive(Clone, Debug, PartialEq)]
pub struct InfeasibilityCertificate {
    /// Cells whose capacity row stays violated at the phase-1 optimum, with the excess load.
    pub overloaded: Vec<(usize, f64)>,
    /// Test points with no allowed cell at all.
    pub unservable: Vec<usize>,
    pub phase1_objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Grid,
    pub objective: f64,
    pub status: LpStatus,
    pub pivots: usize,
    /// Duals of the capacity rows (non-positive at an optimum).
    pub capacity_duals: Vec<f64>,
    /// Duals of the test-point rows.
    pub tp_duals: Vec<f64>,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOptions {
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance, relative to the largest weight magnitude (at least 1).
    pub reduced_cost_tol: f64,
    pub pivot_tol: f64,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Test points priced per block before an entering candidate is accepted.
    pub pricing_block: usize,
    /// Entries whose demand exceeds this are left out; such a cell could carry
    /// at most `1 / max_demand` of the test point.
    pub max_demand: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            reduced_cost_tol: 1e-9,
            pivot_tol: 1e-11,
            refactor_every: 100,
            bland_after: 64,
            pricing_block: 256,
            max_demand: 1e3,
        }
    }
}

pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(p, &LpOptions::default())
}

pub fn solve_lp_with(p: &LpProblem, opts: &LpOptions) -> Result<LpSolution> {
    p.validate()?;
    let (m, n) = p.weights.dim();
    if n == 0 {
        return Ok(LpSolution {
            x: Grid::zeros((m, 0)),
            objective: 0.0,
            status: LpStatus::Optimal,
            pivots: 0,
            capacity_duals: vec![0.0; m],
            tp_duals: vec![],
            certificate: None,
        });
    }
    let unservable: Vec<usize> = (0..n)
        .filter(|&j| (0..m).all(|i| !p.is_allowed(i) || !(p.demand[[i, j]] <= opts.max_demand)))
        .collect();
    if m == 0 || !unservable.is_empty() {
        return Ok(LpSolution {
            x: Grid::zeros((m, n)),
            objective: f64::NAN,
            status: LpStatus::Infeasible,
            pivots: 0,
            capacity_duals: vec![0.0; m],
            tp_duals: vec![0.0; n],
            certificate: Some(InfeasibilityCertificate {
                overloaded: vec![],
                unservable: (0..n).collect(),
                phase1_objective: f64::INFINITY,
            }),
        });
    }
    let mut s = Simplex::new(p, opts);
    s.crash();
    if s.art_total() > opts.feasibility_tol {
        s.phase = Phase::One;
        s.run()?;
        let infeas = s.art_total();
        if infeas > opts.feasibility_tol * (m as f64).max(1.0) {
            return Ok(s.infeasible(infeas));
        }
    }
    s.phase = Phase::Two;
    s.zero_artificials();
    s.run()?;
    Ok(s.extract())
}

/// Smallest accepted pivot relative to the entering column's scale.
const STABLE_PIVOT: f64 = 1e-7;
/// Entering candidates kept between full pricing passes.
const CANDIDATES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Var {
    X { cell: usize, tp: usize },
    Slack(usize),
    Art(usize),
}

#[derive(Clone, Copy, Debug)]
enum Leaving {
    Row(usize),
    Key(usize),
}

struct Simplex<'a> {
    p: &'a LpProblem,
    opts: &'a LpOptions,
    m: usize,
    n: usize,
    /// Weights and demands, TP-major (`[j * m + i]`) for contiguous pricing.
    w: Vec<f64>,
    d: Vec<f64>,
    allowed: Vec<bool>,
    phase: Phase,
    cost_tol: f64,
    key: Vec<usize>,
    key_val: Vec<f64>,
    basic: Vec<Var>,
    val: Vec<f64>,
    /// Working basis inverse, row-major `m x m`.
    binv: Vec<f64>,
    /// Working-basis rows holding non-key members of each TP row.
    group: Vec<Vec<usize>>,
    x_basic: Vec<bool>,
    slack_basic: Vec<bool>,
    art_basic: Vec<bool>,
    pi: Vec<f64>,
    pivots: usize,
    since_refactor: usize,
    degenerate_run: usize,
    cursor: usize,
    // scratch
    delta: Vec<f64>,
    key_rate: Vec<f64>,
    touched: Vec<usize>,
    banned: Vec<Var>,
    cands: Vec<(usize, usize)>,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProblem, opts: &'a LpOptions) -> Self {
        let (m, n) = p.weights.dim();
        let mut w = vec![0.0; m * n];
        let mut d = vec![0.0; m * n];
        for ((i, j), &v) in p.weights.indexed_iter() {
            w[j * m + i] = v;
            d[j * m + i] = p.demand[[i, j]];
        }
        let allowed: Vec<bool> = (0..m * n)
            .map(|k| p.is_allowed(k % m) && d[k] <= opts.max_demand)
            .collect();
        let wmax = (0..m * n)
            .filter(|&k| allowed[k])
            .map(|k| w[k].abs())
            .fold(1.0, f64::max);
        Self {
            p,
            opts,
            m,
            n,
            w,
            d,
            allowed,
            phase: Phase::Two,
            cost_tol: opts.reduced_cost_tol * wmax,
            key: vec![0; n],
            key_val: vec![0.0; n],
            basic: Vec::with_capacity(m),
            val: vec![0.0; m],
            binv: vec![0.0; m * m],
            group: vec![Vec::new(); n],
            x_basic: vec![false; m * n],
            slack_basic: vec![false; m],
            art_basic: vec![false; m],
            pi: vec![0.0; m],
            pivots: 0,
            since_refactor: 0,
            degenerate_run: 0,
            cursor: 0,
            delta: vec![0.0; m],
            key_rate: vec![0.0; n],
            touched: Vec::new(),
            banned: Vec::new(),
            cands: Vec::new(),
        }
    }

    #[inline]
    fn dem(&self, i: usize, j: usize) -> f64 {
        self.d[j * self.m + i]
    }

    #[inline]
    fn cost(&self, v: Var) -> f64 {
        match (self.phase, v) {
            (Phase::One, Var::Art(_)) => 1.0,
            (Phase::One, _) => 0.0,
            (Phase::Two, Var::X { cell, tp }) => self.w[tp * self.m + cell],
            (Phase::Two, _) => 0.0,
        }
    }

    fn var_index(&self, v: Var) -> usize {
        match v {
            Var::X { cell, tp } => tp * self.m + cell,
            Var::Slack(i) => self.m * self.n + i,
            Var::Art(i) => self.m * self.n + self.m + i,
        }
    }

    /// Starting basis: every TP keyed to its cheapest cell with room left,
    /// residual capacity (or overload) carried by slacks (or artificials).
    fn crash(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut load = vec![0.0; m];
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for j in 0..n {
            order.clear();
            let base = j * m;
            order.extend((0..m).filter(|&i| self.allowed[base + i]));
            order.sort_by(|&a, &b| self.w[base + a].total_cmp(&self.w[base + b]).then(a.cmp(&b)));
            let pick = order
                .iter()
                .copied()
                .find(|&i| load[i] + self.d[base + i] <= 1.0)
                .unwrap_or_else(|| {
                    *order
                        .iter()
                        .min_by(|&&a, &&b| {
                            (load[a] + self.d[base + a])
                                .total_cmp(&(load[b] + self.d[base + b]))
                                .then(a.cmp(&b))
                        })
                        .expect("at least one allowed cell")
                });
            self.key[j] = pick;
            self.key_val[j] = 1.0;
            self.x_basic[base + pick] = true;
            load[pick] += self.d[base + pick];
        }
        self.basic.clear();
        for (i, &l) in load.iter().enumerate() {
            if l <= 1.0 {
                self.basic.push(Var::Slack(i));
                self.slack_basic[i] = true;
                self.val[i] = 1.0 - l;
            } else {
                self.basic.push(Var::Art(i));
                self.art_basic[i] = true;
                self.val[i] = l - 1.0;
            }
        }
        self.binv.fill(0.0);
        for i in 0..m {
            self.binv[i * m + i] = if self.art_basic[i] { -1.0 } else { 1.0 };
        }
    }

    fn art_total(&self) -> f64 {
        self.basic
            .iter()
            .zip(&self.val)
            .filter(|(v, _)| matches!(v, Var::Art(_)))
            .map(|(_, x)| x.max(0.0))
            .sum()
    }

    fn zero_artificials(&mut self) {
        for r in 0..self.m {
            if matches!(self.basic[r], Var::Art(_)) {
                self.val[r] = 0.0;
            }
        }
    }

    /// Reduced capacity column of `v` against the key of its TP row, as a sparse pair list.
    fn reduced_column(&self, v: Var) -> [(usize, f64); 2] {
        match v {
            Var::X { cell, tp } => {
                let k = self.key[tp];
                [(cell, self.dem(cell, tp)), (k, -self.dem(k, tp))]
            }
            Var::Slack(i) => [(i, 1.0), (i, 0.0)],
            Var::Art(i) => [(i, -1.0), (i, 0.0)],
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (r, &v) in self.basic.iter().enumerate() {
            for (row, coef) in self.reduced_column(v) {
                a[row * m + r] += coef;
            }
        }
        self.binv = invert(&a, m).ok_or_else(|| Error::Numerical("singular working basis".into()))?;
        let mut rhs = vec![1.0; m];
        for j in 0..self.n {
            let k = self.key[j];
            rhs[k] -= self.dem(k, j);
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.val[r] = row.iter().zip(&rhs).map(|(b, c)| b * c).sum();
        }
        if self.phase == Phase::Two {
            self.zero_artificials();
        }
        for j in 0..self.n {
            let s: f64 = self.group[j].iter().map(|&r| self.val[r]).sum();
            self.key_val[j] = 1.0 - s;
        }
        for v in self.val.iter_mut().chain(self.key_val.iter_mut()) {
            if *v < 0.0 && *v > -self.opts.feasibility_tol {
                *v = 0.0;
            }
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn compute_duals(&mut self) {
        let m = self.m;
        self.pi.fill(0.0);
        for r in 0..m {
            let v = self.basic[r];
            let mut c = self.cost(v);
            if let Var::X { tp, .. } = v {
                c -= self.cost(Var::X {
                    cell: self.key[tp],
                    tp,
                });
            }
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (p, b) in self.pi.iter_mut().zip(row) {
                    *p += c * b;
                }
            }
        }
    }

    #[inline]
    fn tp_dual(&self, j: usize) -> f64 {
        let k = self.key[j];
        self.cost(Var::X { cell: k, tp: j }) - self.pi[k] * self.dem(k, j)
    }

    fn price_group(&self, j: usize, best: &mut Option<(f64, Var)>, bland: bool) -> bool {
        let m = self.m;
        let mu = self.tp_dual(j);
        let base = j * m;
        let phase_one = self.phase == Phase::One;
        for i in 0..m {
            if !self.allowed[base + i] || self.x_basic[base + i] {
                continue;
            }
            let c = if phase_one { 0.0 } else { self.w[base + i] };
            let rc = c - self.pi[i] * self.d[base + i] - mu;
            if rc < -self.cost_tol {
                if bland {
                    *best = Some((rc, Var::X { cell: i, tp: j }));
                    return true;
                }
                if best.is_none_or(|(b, _)| rc < b) {
                    *best = Some((rc, Var::X { cell: i, tp: j }));
                }
            }
        }
        false
    }

    fn choose_entering(&mut self, bland: bool) -> Option<Var> {
        let mut best: Option<(f64, Var)> = None;
        if bland {
            // Lowest variable index: X columns first (TP-major), then slacks, then artificials.
            for j in 0..self.n {
                if self.price_group(j, &mut best, true) {
                    return best.map(|b| b.1);
                }
            }
            self.price_slacks(&mut best, true);
            return best.map(|b| b.1);
        }
        self.price_slacks(&mut best, false);
        // Re-price the surviving candidates from the last scan first.
        let mut kept = std::mem::take(&mut self.cands);
        kept.retain(|&(cell, tp)| !self.x_basic[tp * self.m + cell]);
        let mut from_list: Option<(f64, usize)> = None;
        for (k, &(cell, tp)) in kept.iter().enumerate() {
            let rc = self.reduced_cost_x(cell, tp);
            if rc < -self.cost_tol && from_list.is_none_or(|(b, _)| rc < b) {
                from_list = Some((rc, k));
            }
        }
        if let Some((rc, k)) = from_list {
            if best.is_none_or(|(b, _)| rc < b) {
                let (cell, tp) = kept.swap_remove(k);
                self.cands = kept;
                return Some(Var::X { cell, tp });
            }
            self.cands = kept;
            return best.map(|b| b.1);
        }
        let block = self.opts.pricing_block.max(1);
        let mut found: Vec<(f64, usize, usize)> = Vec::new();
        let mut scanned = 0;
        while scanned < self.n {
            let j = (self.cursor + scanned) % self.n;
            self.collect_group(j, &mut found);
            scanned += 1;
            if scanned % block == 0 && found.len() >= CANDIDATES {
                break;
            }
        }
        self.cursor = (self.cursor + scanned) % self.n;
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then((a.2, a.1).cmp(&(b.2, b.1)));
        if found.len() > CANDIDATES {
            found.select_nth_unstable_by(CANDIDATES, order);
            found.truncate(CANDIDATES);
        }
        found.sort_by(order);
        let top = found.first().copied();
        self.cands = found.iter().skip(1).map(|&(_, cell, tp)| (cell, tp)).collect();
        match (top, best) {
            (Some((rc, cell, tp)), b) if b.is_none_or(|(bv, _)| rc < bv) => Some(Var::X { cell, tp }),
            (_, b) => b.map(|b| b.1),
        }
    }

    fn reduced_cost_x(&self, cell: usize, tp: usize) -> f64 {
        let c = if self.phase == Phase::One { 0.0 } else { self.w[tp * self.m + cell] };
        c - self.pi[cell] * self.d[tp * self.m + cell] - self.tp_dual(tp)
    }

    fn collect_group(&self, j: usize, out: &mut Vec<(f64, usize, usize)>) {
        let m = self.m;
        let mu = self.tp_dual(j);
        let base = j * m;
        let phase_one = self.phase == Phase::One;
        let it = self.w[base..base + m]
            .iter()
            .zip(&self.d[base..base + m])
            .zip(&self.pi)
            .zip(self.allowed[base..base + m].iter().zip(&self.x_basic[base..base + m]));
        for (i, (((&w, &d), &pi), (&ok, &basic))) in it.enumerate() {
            let c = if phase_one { 0.0 } else { w };
            let rc = c - pi * d - mu;
            if rc < -self.cost_tol && ok && !basic {
                out.push((rc, i, j));
            }
        }
    }

    fn price_slacks(&self, best: &mut Option<(f64, Var)>, bland: bool) -> bool {
        for i in 0..self.m {
            if !self.slack_basic[i] {
                let rc = -self.pi[i];
                if rc < -self.cost_tol && (bland || best.is_none_or(|(b, _)| rc < b)) {
                    *best = Some((rc, Var::Slack(i)));
                    if bland {
                        return true;
                    }
                }
            }
        }
        if self.phase == Phase::One {
            for i in 0..self.m {
                if !self.art_basic[i] {
                    let rc = 1.0 + self.pi[i];
                    if rc < -self.cost_tol && (bland || best.is_none_or(|(b, _)| rc < b)) {
                        *best = Some((rc, Var::Art(i)));
                        if bland {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    fn run(&mut self) -> Result<()> {
        self.refactor()?;
        let limit = 50 * (self.m + self.n) + 10_000;
        let mut phase_pivots = 0;
        let mut retried = false;
        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            self.compute_duals();
            let bland = self.degenerate_run >= self.opts.bland_after;
            let Some(q) = self.choose_entering(bland) else {
                if self.banned.is_empty() || retried {
                    self.lift_bans();
                    return Ok(());
                }
                // Re-price the banned columns once on a fresh factorization.
                self.lift_bans();
                self.refactor()?;
                retried = true;
                continue;
            };
            if !self.pivot(q, bland)? {
                if self.since_refactor > 0 {
                    self.refactor()?;
                    self.compute_duals();
                    if self.pivot(q, bland)? {
                        self.lift_bans();
                        phase_pivots += 1;
                        continue;
                    }
                }
                self.banned.push(q);
                self.mark(q);
                continue;
            }
            self.lift_bans();
            retried = false;
            phase_pivots += 1;
            if phase_pivots > limit {
                return Err(Error::Numerical(format!("no convergence after {phase_pivots} pivots")));
            }
        }
    }

    fn lift_bans(&mut self) {
        while let Some(v) = self.banned.pop() {
            self.unmark(v);
        }
    }

    /// Returns `false` without touching the basis when the pivot element is too small.
    fn pivot(&mut self, q: Var, bland: bool) -> Result<bool> {
        let m = self.m;
        // delta = Binv * alpha_q
        let col = self.reduced_column(q);
        for r in 0..m {
            let row = r * m;
            self.delta[r] = col.iter().map(|&(c, a)| a * self.binv[row + c]).sum();
        }
        // Key rates for the TP rows touched by this direction.
        for &g in &self.touched {
            self.key_rate[g] = 0.0;
        }
        self.touched.clear();
        for r in 0..m {
            if let Var::X { tp, .. } = self.basic[r] {
                if self.delta[r] != 0.0 {
                    if !self.touched.contains(&tp) {
                        self.touched.push(tp);
                    }
                    self.key_rate[tp] += self.delta[r];
                }
            }
        }
        if let Var::X { tp, .. } = q {
            if !self.touched.contains(&tp) {
                self.touched.push(tp);
            }
            self.key_rate[tp] -= 1.0;
        }

        let scale = self
            .delta
            .iter()
            .map(|d| d.abs())
            .chain(self.touched.iter().map(|&g| self.key_rate[g].abs()))
            .fold(0.0_f64, f64::max);
        let ptol = self.opts.pivot_tol.max(1e-9 * scale);
        let ftol = self.opts.feasibility_tol;
        // Candidates: (value, rate, tie index, leaving), rate > 0 is the decrease speed.
        let mut cands: Vec<(f64, f64, usize, Leaving)> = Vec::new();
        for r in 0..m {
            let dr = self.delta[r];
            let v = self.basic[r];
            let fixed_zero = self.phase == Phase::Two && matches!(v, Var::Art(_));
            if fixed_zero {
                if dr.abs() > ptol {
                    cands.push((0.0, dr.abs(), self.var_index(v), Leaving::Row(r)));
                }
            } else if dr > ptol {
                cands.push((self.val[r].max(0.0), dr, self.var_index(v), Leaving::Row(r)));
            }
        }
        for &g in &self.touched {
            let rate = self.key_rate[g];
            if rate < -ptol {
                let idx = self.var_index(Var::X { cell: self.key[g], tp: g });
                cands.push((self.key_val[g].max(0.0), -rate, idx, Leaving::Key(g)));
            }
        }
        if cands.is_empty() {
            return Err(Error::Numerical("unbounded direction in a bounded LP".into()));
        }
        let leaving = if bland {
            let tmin = cands.iter().map(|c| c.0 / c.1).fold(f64::INFINITY, f64::min);
            cands
                .iter()
                .filter(|c| c.0 / c.1 <= tmin + 1e-12)
                .min_by_key(|c| c.2)
                .map(|c| c.3)
        } else {
            // Harris: relaxed bound first, then the largest rate inside it.
            let tmax = cands.iter().map(|c| (c.0 + ftol) / c.1).fold(f64::INFINITY, f64::min);
            cands
                .iter()
                .filter(|c| c.0 / c.1 <= tmax)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
                .map(|c| c.3)
        }
        .expect("non-empty candidate set");
        let piv = match leaving {
            Leaving::Row(r) => self.delta[r],
            Leaving::Key(g) => self.key_rate[g],
        };
        if piv.abs() < STABLE_PIVOT * scale {
            return Ok(false);
        }
        let t = match leaving {
            Leaving::Row(r) if self.phase == Phase::Two && matches!(self.basic[r], Var::Art(_)) => 0.0,
            Leaving::Row(r) => self.val[r].max(0.0) / self.delta[r],
            Leaving::Key(g) => self.key_val[g].max(0.0) / -self.key_rate[g],
        };

        // Primal update.
        for r in 0..m {
            self.val[r] -= t * self.delta[r];
        }
        for &g in &self.touched {
            self.key_val[g] += t * self.key_rate[g];
        }
        self.degenerate_run = if t <= 1e-12 { self.degenerate_run + 1 } else { 0 };
        self.pivots += 1;
        self.since_refactor += 1;

        match leaving {
            Leaving::Row(r) => {
                let old = self.basic[r];
                self.unmark(old);
                if let Var::X { tp, .. } = old {
                    self.group[tp].retain(|&x| x != r);
                }
                self.basic[r] = q;
                self.val[r] = t;
                self.mark(q);
                if let Var::X { tp, .. } = q {
                    self.group[tp].push(r);
                }
                self.eta_update(r);
            }
            Leaving::Key(g) => {
                let old_key = Var::X { cell: self.key[g], tp: g };
                self.unmark(old_key);
                self.key_val[g] = 0.0;
                let q_in_g = matches!(q, Var::X { tp, .. } if tp == g);
                if self.group[g].is_empty() {
                    let Var::X { cell, .. } = q else {
                        return Err(Error::Numerical("key left without a replacement".into()));
                    };
                    self.key[g] = cell;
                    self.key_val[g] = t;
                    self.mark(q);
                } else if q_in_g {
                    let Var::X { cell, .. } = q else { unreachable!() };
                    self.key[g] = cell;
                    self.key_val[g] = t;
                    self.mark(q);
                    // Every member column loses the entering column: B' = B (I - delta w^T).
                    let denom = 1.0 - self.group[g].iter().map(|&r| self.delta[r]).sum::<f64>();
                    let srow = self.group_row_sum(g);
                    for k in 0..m {
                        let f = self.delta[k] / denom;
                        if f != 0.0 {
                            for (a, b) in self.binv[k * m..(k + 1) * m].iter_mut().zip(&srow) {
                                *a += f * b;
                            }
                        }
                    }
                } else {
                    let r0 = self.group[g].remove(0);
                    let Var::X { cell, .. } = self.basic[r0] else { unreachable!() };
                    let p: f64 = self.delta[r0] + self.group[g].iter().map(|&r| self.delta[r]).sum::<f64>();
                    self.key[g] = cell;
                    self.key_val[g] = self.val[r0];
                    self.basic[r0] = q;
                    self.val[r0] = t;
                    self.mark(q);
                    if let Var::X { tp, .. } = q {
                        self.group[tp].push(r0);
                    }
                    // Row r0 takes the entering column, the other members are re-keyed.
                    let mut z = self.group_row_sum(g);
                    for (a, b) in z.iter_mut().zip(&self.binv[r0 * m..(r0 + 1) * m]) {
                        *a = (*a + b) / p;
                    }
                    for k in 0..m {
                        if k == r0 {
                            continue;
                        }
                        let f = self.delta[k];
                        if f != 0.0 {
                            for (a, b) in self.binv[k * m..(k + 1) * m].iter_mut().zip(&z) {
                                *a -= f * b;
                            }
                        }
                    }
                    self.binv[r0 * m..(r0 + 1) * m].copy_from_slice(&z);
                }
            }
        }
        Ok(true)
    }

    /// Sum of the inverse rows belonging to the basic members of group `g`.
    fn group_row_sum(&self, g: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        for &r in &self.group[g] {
            for (a, b) in out.iter_mut().zip(&self.binv[r * m..(r + 1) * m]) {
                *a += b;
            }
        }
        out
    }

    fn mark(&mut self, v: Var) {
        self.set_flag(v, true);
    }

    fn unmark(&mut self, v: Var) {
        self.set_flag(v, false);
    }

    fn set_flag(&mut self, v: Var, on: bool) {
        match v {
            Var::X { cell, tp } => self.x_basic[tp * self.m + cell] = on,
            Var::Slack(i) => self.slack_basic[i] = on,
            Var::Art(i) => self.art_basic[i] = on,
        }
    }

    /// Product-form update of the working inverse for a pivot in row `r`.
    fn eta_update(&mut self, r: usize) {
        let m = self.m;
        let piv = self.delta[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= piv;
        }
        for (k, row) in before.chunks_exact_mut(m).enumerate() {
            let f = self.delta[k];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
            }
        }
        for (k, row) in after.chunks_exact_mut(m).enumerate() {
            let f = self.delta[r + 1 + k];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
            }
        }
    }

    fn primal(&self) -> Grid {
        let mut x = Grid::zeros((self.m, self.n));
        for j in 0..self.n {
            x[[self.key[j], j]] = self.key_val[j].clamp(0.0, 1.0);
        }
        for (r, &v) in self.basic.iter().enumerate() {
            if let Var::X { cell, tp } = v {
                x[[cell, tp]] = self.val[r].clamp(0.0, 1.0);
            }
        }
        x
    }

    fn infeasible(&mut self, infeas: f64) -> LpSolution {
        let overloaded = self
            .basic
            .iter()
            .zip(&self.val)
            .filter_map(|(v, &x)| match v {
                Var::Art(i) if x > self.opts.feasibility_tol => Some((*i, x)),
                _ => None,
            })
            .collect();
        LpSolution {
            x: self.primal(),
            objective: f64::NAN,
            status: LpStatus::Infeasible,
            pivots: self.pivots,
            capacity_duals: vec![0.0; self.m],
            tp_duals: vec![0.0; self.n],
            certificate: Some(InfeasibilityCertificate {
                overloaded,
                unservable: vec![],
                phase1_objective: infeas,
            }),
        }
    }

    fn extract(&mut self) -> LpSolution {
        self.compute_duals();
        let x = self.primal();
        let objective = x.iter().zip(self.p.weights.iter()).map(|(a, b)| a * b).sum();
        let tp_duals = (0..self.n).map(|j| self.tp_dual(j)).collect();
        LpSolution {
            x,
            objective,
            status: LpStatus::Optimal,
            pivots: self.pivots,
            capacity_duals: self.pi.clone(),
            tp_duals,
            certificate: None,
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
fn invert(a: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut a = a.to_vec();
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let (piv_row, piv_abs) = (c..m)
            .map(|r| (r, a[r * m + c].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if piv_abs < 1e-14 {
            return None;
        }
        if piv_row != c {
            for k in 0..m {
                a.swap(c * m + k, piv_row * m + k);
                inv.swap(c * m + k, piv_row * m + k);
            }
        }
        let p = a[c * m + c];
        for k in 0..m {
            a[c * m + k] /= p;
            inv[c * m + k] /= p;
        }
        for r in 0..m {
            if r != c {
                let f = a[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
    }
    Some(inv)
}
