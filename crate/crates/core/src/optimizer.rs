//! Relaxed energy minimization by majorization-minimization.
//!
//! The relaxed objective over assignments `x` in the polytope
//! `{ sum_j d_ij x_ij <= 1, sum_i x_ij = 1, 0 <= x <= 1 }` is
//!
//! ```text
//! h(x) = sum_l c^_l ln(eps + t_l(x)) + sum_i [ e^_i ln(eps + s_i(x)) + f_i(rho_i(x)) ]
//! ```
//!
//! with `s_i = sum_j x_ij`, `t_l = sum_{i in l} s_i`, `rho_i = sum_j d_ij x_ij`
//! and `c^ = c / ln(1 + 1/eps)`, `e^ = e / ln(1 + 1/eps)`. Constant terms are
//! dropped, so `h` can be negative. Each MM step minimizes the tangent plane
//! of the concave `h` at the current iterate, which is an LP.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyModel;
use crate::linkmodel::{demand_coefficients, LinkParams, LoadVector};
use crate::lpsolver::{solve_lp_with, LpOptions, LpProblem, LpStatus};
use crate::scenario::{PathLossMatrix, Scenario, Topology};
use crate::{Error, Grid, Result};

/// Smooth surrogate of the indicator `a > 0`: `ln(1 + a/eps) / ln(1 + 1/eps)`.
pub fn l0_surrogate(a: f64, eps: f64) -> f64 {
    (a.abs() / eps).ln_1p() / (1.0 / eps).ln_1p()
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub demand: Grid,
    pub topology: Topology,
    pub energy: EnergyModel,
    pub eps: f64,
    pub c_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    /// Cells that may serve traffic; `None` allows all.
    pub allowed: Option<Vec<bool>>,
}

impl ProblemInstance {
    pub fn new(demand: Grid, topology: Topology, energy: EnergyModel, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if demand.nrows() != topology.n_cells() {
            return Err(Error::Dimension(format!(
                "demand has {} rows, topology {} cells",
                demand.nrows(),
                topology.n_cells()
            )));
        }
        energy.check_topology(&topology)?;
        if demand.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidConfig("demand coefficients must be positive and finite".into()));
        }
        let scale = (1.0 / eps).ln_1p();
        let c_hat = energy.bs_static.iter().map(|c| c / scale).collect();
        let e_hat = energy.cell_static.iter().map(|e| e / scale).collect();
        Ok(Self {
            demand,
            topology,
            energy,
            eps,
            c_hat,
            e_hat,
            allowed: None,
        })
    }

    pub fn with_mask(mut self, allowed: Option<Vec<bool>>) -> Result<Self> {
        if let Some(a) = &allowed {
            if a.len() != self.n_cells() {
                return Err(Error::Dimension("mask length differs from cell count".into()));
            }
        }
        self.allowed = allowed;
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.demand.nrows()
    }

    pub fn n_tps(&self) -> usize {
        self.demand.ncols()
    }

    pub fn n_bs(&self) -> usize {
        self.topology.n_bs()
    }

    pub fn is_allowed(&self, i: usize) -> bool {
        self.allowed.as_ref().is_none_or(|a| a[i])
    }

    /// `(s, t, rho)`: per-cell shares, per-station shares and per-cell loads.
    pub fn aggregates(&self, x: &Grid) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = x.rows().into_iter().map(|r| r.sum()).collect();
        let t = self
            .topology
            .sectors
            .iter()
            .map(|cells| cells.iter().map(|&i| s[i]).sum())
            .collect();
        let rho = x
            .rows()
            .into_iter()
            .zip(self.demand.rows())
            .map(|(xr, dr)| xr.dot(&dr))
            .collect();
        (s, t, rho)
    }

    pub fn loads(&self, x: &Grid) -> LoadVector {
        LoadVector(self.aggregates(x).2)
    }

    /// Whether `x` lies in the feasible polytope within `tol`.
    pub fn is_feasible(&self, x: &Grid, tol: f64) -> bool {
        if x.dim() != self.demand.dim() || x.iter().any(|v| *v < -tol || *v > 1.0 + tol) {
            return false;
        }
        let cols_ok = x.columns().into_iter().all(|c| (c.sum() - 1.0).abs() <= tol);
        let (s, _, rho) = self.aggregates(x);
        let mask_ok = (0..self.n_cells()).all(|i| self.is_allowed(i) || s[i] <= tol);
        cols_ok && mask_ok && rho.iter().all(|r| *r <= 1.0 + tol)
    }
}

/// Instance for a scenario under efficiency matrix `omega`.
pub fn build_problem(
    scenario: &Scenario,
    g: &PathLossMatrix,
    lp: &LinkParams,
    em: &EnergyModel,
    omega: &Grid,
    eps: f64,
) -> Result<ProblemInstance> {
    if g.n_cells() != scenario.n_cells() || g.n_tps() != scenario.n_tps() {
        return Err(Error::Dimension(format!(
            "gain matrix {}x{} vs scenario {}x{}",
            g.n_cells(),
            g.n_tps(),
            scenario.n_cells(),
            scenario.n_tps()
        )));
    }
    if omega.dim() != g.gains.dim() {
        return Err(Error::Dimension("efficiency matrix shape differs from gains".into()));
    }
    let d = demand_coefficients(&scenario.tps.rates, omega, lp)?;
    ProblemInstance::new(d, scenario.topology.clone(), em.clone(), eps)
}

pub fn objective_h(x: &Grid, inst: &ProblemInstance) -> f64 {
    let eps = inst.eps;
    let (s, t, rho) = inst.aggregates(x);
    let bs: f64 = inst.c_hat.iter().zip(&t).map(|(c, t)| c * (eps + t).ln()).sum();
    let cells: f64 = (0..inst.n_cells())
        .map(|i| inst.e_hat[i] * (eps + s[i]).ln() + inst.energy.dynamic[i].value(rho[i]))
        .sum();
    bs + cells
}

pub fn gradient_h(x: &Grid, inst: &ProblemInstance) -> Grid {
    let eps = inst.eps;
    let (s, t, rho) = inst.aggregates(x);
    let mut grad = inst.demand.clone();
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let l = inst.topology.parent(i);
        let activation = inst.c_hat[l] / (eps + t[l]) + inst.e_hat[i] / (eps + s[i]);
        let slope = inst.energy.dynamic[i].derivative(rho[i]);
        row.mapv_inplace(|d| activation + slope * d);
    }
    grad
}

/// Tangent-plane majorizer `h(y) + grad h(y) . (x - y)`.
pub fn majorizer_g(x: &Grid, y: &Grid, inst: &ProblemInstance) -> f64 {
    let grad = gradient_h(y, inst);
    let lin: f64 = grad
        .iter()
        .zip(x.iter().zip(y.iter()))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    objective_h(y, inst) + lin
}

/// LP weights of one MM step; identical to the gradient at the current iterate.
pub fn mm_weights(xn: &Grid, inst: &ProblemInstance) -> Grid {
    gradient_h(xn, inst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MMConfig {
    pub eps: f64,
    pub eps_star: f64,
    pub max_iters: usize,
    pub lp: LpOptions,
    /// Keep every iterate in the trace (memory heavy on large instances).
    pub keep_iterates: bool,
}

impl Default for MMConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            eps_star: 1e-3,
            max_iters: 200,
            lp: LpOptions::default(),
            keep_iterates: false,
        }
    }
}

impl MMConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.eps_star > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidConfig("need eps > 0, eps_star > 0, max_iters >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Start,
    Optimal,
    /// The LP point failed the majorizer descent check and was discarded.
    Rejected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MMStep {
    pub iter: usize,
    pub h: f64,
    pub status: StepStatus,
    pub pivots: usize,
    pub ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    Rejected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MMTrace {
    pub steps: Vec<MMStep>,
    pub iterates: Vec<Grid>,
    pub x: Grid,
    pub stop: StopReason,
    pub start_feasible: bool,
}

impl MMTrace {
    /// Number of LP solves performed.
    pub fn iterations(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn h_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.h).collect()
    }

    pub fn final_h(&self) -> f64 {
        self.steps.iter().rev().find(|s| s.status != StepStatus::Rejected).map_or(f64::NAN, |s| s.h)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,h,lp_status,ms")?;
        for s in &self.steps {
            let status = match s.status {
                StepStatus::Start => "start",
                StepStatus::Optimal => "optimal",
                StepStatus::Rejected => "rejected",
            };
            writeln!(out, "{},{:.12e},{},{:.3}", s.iter, s.h, status, s.ms)?;
        }
        Ok(())
    }
}

fn dot(a: &Grid, b: &Grid) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Runs MM from `x0` until the decrease of `h` drops to `eps_star` or `max_iters` LPs.
pub fn mm_iterate(inst: &ProblemInstance, x0: &Grid, cfg: &MMConfig) -> Result<MMTrace> {
    cfg.validate()?;
    if x0.dim() != inst.demand.dim() {
        return Err(Error::Dimension("start point shape differs from instance".into()));
    }
    let start_feasible = inst.is_feasible(x0, 1e-8);
    let mut x = x0.clone();
    let mut h = objective_h(&x, inst);
    let mut steps = vec![MMStep {
        iter: 0,
        h,
        status: StepStatus::Start,
        pivots: 0,
        ms: 0.0,
    }];
    let mut iterates = if cfg.keep_iterates { vec![x.clone()] } else { vec![] };
    let mut stop = StopReason::MaxIters;
    for n in 1..=cfg.max_iters {
        let t0 = Instant::now();
        let w = mm_weights(&x, inst);
        let mut lp = LpProblem::new(w.clone(), inst.demand.clone())?;
        if let Some(mask) = &inst.allowed {
            lp = lp.with_mask(mask.clone())?;
        }
        let sol = solve_lp_with(&lp, &cfg.lp)?;
        if sol.status == LpStatus::Infeasible {
            let cert = sol.certificate.unwrap_or_else(|| unreachable!("infeasible LP carries a certificate"));
            return Err(Error::Infeasible(format!(
                "relaxed problem infeasible: overloaded cells {:?}, unservable TPs {:?}",
                cert.overloaded.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
                cert.unservable
            )));
        }
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let lin_new = dot(&w, &sol.x);
        let lin_old = dot(&w, &x);
        // A start outside the polytope cannot be compared against.
        if start_feasible || n > 1 {
            if lin_new > lin_old + 1e-9 * (1.0 + lin_old.abs()) {
                steps.push(MMStep {
                    iter: n,
                    h: objective_h(&sol.x, inst),
                    status: StepStatus::Rejected,
                    pivots: sol.pivots,
                    ms,
                });
                stop = StopReason::Rejected;
                break;
            }
        }
        let hn = objective_h(&sol.x, inst);
        steps.push(MMStep {
            iter: n,
            h: hn,
            status: StepStatus::Optimal,
            pivots: sol.pivots,
            ms,
        });
        let decrease = h - hn;
        x = sol.x;
        h = hn;
        if cfg.keep_iterates {
            iterates.push(x.clone());
        }
        if decrease <= cfg.eps_star && (start_feasible || n > 1) {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(MMTrace {
        steps,
        iterates,
        x,
        stop,
        start_feasible,
    })
}
