//! Interference-coupled loads and the load-aware alternating scheme.
//!
//! For a fixed assignment the cell loads solve `rho = J(rho)` with
//!
//! ```text
//! J_i(rho) = min{ sum_j lambda_ij x_ij / log2(1 + P_i g_ij / (eta_ij (sum_{k != i} P_k g_kj rho_k + noise))), cap }
//! ```
//!
//! and `lambda_ij = r_j / (B_i eta_bw_ij)`. `J` is a standard interference
//! function, so Picard iteration from zero increases monotonically to the
//! unique fixed point.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discretize::{mm_start, round_assignment};
use crate::energy::{activity, network_energy, ActivityReport, EnergyModel};
use crate::linkmodel::{efficiency_matrix, worst_case_efficiency, Assignment, LinkParams, LoadVector, PerLink};
use crate::optimizer::{build_problem, mm_iterate, MMConfig, MMTrace, ProblemInstance};
use crate::scenario::{PathLossMatrix, Scenario};
use crate::{Error, Grid, Result};

pub const DEFAULT_CAP: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct InterferenceMapping {
    pub x: Grid,
    pub lambda: Grid,
    pub gains: Grid,
    pub tx_power: Vec<f64>,
    pub noise: f64,
    pub eff_sinr: PerLink,
    pub cap: f64,
}

impl InterferenceMapping {
    pub fn new(x: &Grid, rates: &[f64], g: &PathLossMatrix, lp: &LinkParams) -> Result<Self> {
        lp.validate()?;
        if x.dim() != g.gains.dim() || rates.len() != g.n_tps() || lp.n_cells() != g.n_cells() {
            return Err(Error::Dimension("assignment, rates, gains and link parameters disagree".into()));
        }
        let lambda = Grid::from_shape_fn(x.dim(), |(i, j)| rates[j] / (lp.bandwidth[i] * lp.eff_bw.get(i, j)));
        Ok(Self {
            x: x.clone(),
            lambda,
            gains: g.gains.clone(),
            tx_power: lp.tx_power.clone(),
            noise: lp.noise,
            eff_sinr: lp.eff_sinr.clone(),
            cap: DEFAULT_CAP,
        })
    }

    pub fn with_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap >= 1.0) {
            return Err(Error::InvalidConfig("load cap must be at least 1".into()));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.x.nrows()
    }
}

pub fn interference_map(rho: &LoadVector, im: &InterferenceMapping) -> LoadVector {
    let (m, n) = im.x.dim();
    let power: Vec<f64> = (0..m).map(|k| im.tx_power[k] * rho[k]).collect();
    let mut out = vec![0.0; m];
    for j in 0..n {
        for i in 0..m {
            let x = im.x[[i, j]];
            if x == 0.0 {
                continue;
            }
            // Summed directly rather than total minus own term, which keeps
            // the map monotone in floating point.
            let interference: f64 = (0..m)
                .filter(|&k| k != i)
                .map(|k| power[k] * im.gains[[k, j]])
                .sum();
            let own = im.tx_power[i] * im.gains[[i, j]];
            let sinr = own / (im.eff_sinr.get(i, j) * (interference + im.noise));
            out[i] += im.lambda[[i, j]] * x / (sinr.ln_1p() / std::f64::consts::LN_2);
        }
    }
    for o in out.iter_mut() {
        *o = o.min(im.cap);
    }
    LoadVector(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    pub rho: LoadVector,
    pub iterations: usize,
    pub residual: f64,
    pub feasible: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 10_000,
        }
    }
}

/// Picard iteration from zero load.
pub fn fixed_point_load(im: &InterferenceMapping, opts: &FixedPointOptions) -> FixedPointResult {
    fixed_point_from(im, LoadVector::zeros(im.n_cells()), opts)
}

/// Picard iteration from an arbitrary non-negative start.
pub fn fixed_point_from(im: &InterferenceMapping, start: LoadVector, opts: &FixedPointOptions) -> FixedPointResult {
    let mut rho = start;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let next = interference_map(&rho, im);
        iterations += 1;
        residual = next.0.iter().zip(&rho.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rho = next;
        if residual <= opts.tol {
            break;
        }
    }
    FixedPointResult {
        feasible: rho.0.iter().all(|r| *r <= 1.0 + 1e-9),
        converged: residual <= opts.tol,
        rho,
        iterations,
        residual,
    }
}

/// Which relaxation of the assignment is returned and fed to the load step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    WorstCase,
    LoadAware,
    Fractional,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst_case" => Ok(Mode::WorstCase),
            "load_aware" => Ok(Mode::LoadAware),
            "fractional" => Ok(Mode::Fractional),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::WorstCase => "worst_case",
            Mode::LoadAware => "load_aware",
            Mode::Fractional => "fractional",
        })
    }
}

/// Outcome of one relaxed solve followed (unless fractional) by rounding.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub assignment: Assignment,
    pub relaxed: Grid,
    /// Loads implied by the instance's demand matrix.
    pub loads: LoadVector,
    pub energy: f64,
    pub energy_norm: f64,
    pub activity: ActivityReport,
    pub trace: MMTrace,
    pub wall_ms: f64,
}

/// Relaxed MM solve from the default start, then rounding.
pub fn smm_solve(
    inst: &ProblemInstance,
    g: &PathLossMatrix,
    dist: &Grid,
    cfg: &MMConfig,
    fractional: bool,
) -> Result<SolveResult> {
    let (x0, _) = mm_start(g, inst, dist)?;
    smm_solve_from(inst, &x0, dist, cfg, fractional)
}

pub fn smm_solve_from(
    inst: &ProblemInstance,
    x0: &Grid,
    dist: &Grid,
    cfg: &MMConfig,
    fractional: bool,
) -> Result<SolveResult> {
    let t0 = Instant::now();
    let trace = mm_iterate(inst, x0, cfg)?;
    let relaxed = trace.x.clone();
    let assignment = if fractional {
        Assignment {
            x: relaxed.clone(),
            binary: false,
        }
    } else {
        round_assignment(&relaxed, inst, dist)?
    };
    let loads = inst.loads(&assignment.x);
    Ok(finish(inst, assignment, relaxed, loads, trace, t0))
}

fn finish(
    inst: &ProblemInstance,
    assignment: Assignment,
    relaxed: Grid,
    loads: LoadVector,
    trace: MMTrace,
    t0: Instant,
) -> SolveResult {
    let energy = network_energy(&loads, &inst.energy, &inst.topology);
    let full = inst.energy.full_load_energy();
    SolveResult {
        activity: activity(&loads, &inst.energy, &inst.topology),
        energy_norm: if full > 0.0 { energy / full } else { 0.0 },
        energy,
        assignment,
        relaxed,
        loads,
        trace,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingConfig {
    pub iterations: usize,
    pub mm: MMConfig,
    pub fixed_point: FixedPointOptions,
    pub fractional: bool,
    pub early_stop: bool,
    /// Keep the previous configuration when a refinement would raise the energy.
    pub keep_best: bool,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            mm: MMConfig::default(),
            fixed_point: FixedPointOptions::default(),
            fractional: false,
            early_stop: true,
            keep_best: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AltIteration {
    pub iter: usize,
    /// Energy at the loads the optimizer planned with in this iteration.
    pub energy: f64,
    pub energy_norm: f64,
    /// Energy at the self-consistent loads of the resulting configuration.
    pub energy_fixed_point: f64,
    pub active_cells: usize,
    pub max_load: f64,
    /// The configuration's self-consistent loads stay within capacity.
    pub feasible: bool,
    /// The refinement was discarded in favour of the previous configuration.
    pub kept_previous: bool,
    pub fixed_point: FixedPointResult,
}

#[derive(Clone, Debug)]
pub struct AlternatingResult {
    pub iterations: Vec<AltIteration>,
    pub result: SolveResult,
}

impl AlternatingResult {
    pub fn energies(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.energy).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,energy_w,energy_norm,active_cells,max_load,feasible")?;
        for it in &self.iterations {
            writeln!(
                out,
                "{},{:.6},{:.9},{},{:.9},{}",
                it.iter, it.energy, it.energy_norm, it.active_cells, it.max_load, it.feasible
            )?;
        }
        Ok(())
    }
}

/// Worst-case solve followed by up to `cfg.iterations` load-aware refinements.
///
/// Each refinement takes the self-consistent loads of the previous
/// configuration, recomputes the efficiencies at those loads (clipped to
/// `[0, 1]`), masks every cell that was inactive and solves again, starting
/// from the previous configuration. With `keep_best`, a refinement that
/// raises the energy is discarded and the previous configuration retained.
pub fn alternating_solve(
    scenario: &Scenario,
    g: &PathLossMatrix,
    lp: &LinkParams,
    em: &EnergyModel,
    cfg: &AlternatingConfig,
) -> Result<AlternatingResult> {
    let dist = scenario.distance_matrix();
    let omega = worst_case_efficiency(g, lp)?;
    let inst = build_problem(scenario, g, lp, em, &omega, cfg.mm.eps)?;
    let mut current = smm_solve(&inst, g, &dist, &cfg.mm, cfg.fractional)?;
    let mut iterations = vec![record(0, &current, scenario, g, lp, em, cfg)?];
    for n in 1..=cfg.iterations {
        let prev = iterations.last().expect("at least one iteration");
        let clipped = LoadVector(prev.fixed_point.rho.0.iter().map(|r| r.clamp(0.0, 1.0)).collect());
        let omega = efficiency_matrix(&clipped, g, lp)?;
        let mask: Vec<bool> = (0..scenario.n_cells())
            .map(|i| current.activity.active_cells.contains(&i))
            .collect();
        let inst = build_problem(scenario, g, lp, em, &omega, cfg.mm.eps)?.with_mask(Some(mask))?;
        let next = smm_solve_from(&inst, &current.assignment.x, &dist, &cfg.mm, cfg.fractional)?;
        let it = record(n, &next, scenario, g, lp, em, cfg)?;
        let tol = 1e-9 * prev.energy.abs().max(1.0);
        if cfg.keep_best && it.energy > prev.energy + tol {
            let mut kept = prev.clone();
            kept.iter = n;
            kept.kept_previous = true;
            iterations.push(kept);
            if cfg.early_stop {
                break;
            }
            continue;
        }
        let unchanged = next.activity.active_cells == current.activity.active_cells
            && (it.energy - prev.energy).abs() <= tol;
        iterations.push(it);
        current = next;
        if cfg.early_stop && unchanged {
            break;
        }
    }
    Ok(AlternatingResult {
        iterations,
        result: current,
    })
}

fn record(
    iter: usize,
    res: &SolveResult,
    scenario: &Scenario,
    g: &PathLossMatrix,
    lp: &LinkParams,
    em: &EnergyModel,
    cfg: &AlternatingConfig,
) -> Result<AltIteration> {
    let im = InterferenceMapping::new(&res.assignment.x, &scenario.tps.rates, g, lp)?;
    let fp = fixed_point_load(&im, &cfg.fixed_point);
    Ok(AltIteration {
        iter,
        energy: res.energy,
        energy_norm: res.energy_norm,
        energy_fixed_point: network_energy(&fp.rho, em, &scenario.topology),
        active_cells: res.activity.active_cells.len(),
        max_load: fp.rho.max(),
        feasible: fp.feasible,
        kept_previous: false,
        fixed_point: fp,
    })
}
