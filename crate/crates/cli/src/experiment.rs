//! Seeded runs, result rows and the sweep driver.

use std::io::{BufRead, Write};
use std::time::Instant;

use cellsleep_core::discretize::{assignment_energy, exact_solve, greedy_zoom, mm_start, round_assignment};
use cellsleep_core::energy::{activity, ActivityReport, EnergyModel};
use cellsleep_core::linkmodel::{worst_case_efficiency, LinkParams};
use cellsleep_core::loadaware::{alternating_solve, smm_solve, Mode};
use cellsleep_core::optimizer::{build_problem, ProblemInstance};
use cellsleep_core::scenario::{generate_scenario_with_layout, path_loss, CellType, PathLossMatrix, PropagationConfig, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig};
use crate::{Error, Result};

/// First line of every result file.
pub const SCHEMA_LINE: &str = "# cellsleep-results v1";

pub const COLUMNS: [&str; 16] = [
    "seed",
    "n_bs",
    "n_cells",
    "n_tps",
    "algorithm",
    "mode",
    "sweep_value",
    "energy_w",
    "energy_norm",
    "active_cells",
    "active_bs",
    "active_type1",
    "active_type2",
    "iterations",
    "wall_ms",
    "feasible",
];

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "CELLSLEEP_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub n_bs: usize,
    pub n_cells: usize,
    pub n_tps: usize,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub sweep_value: Option<f64>,
    pub energy_w: f64,
    pub energy_norm: f64,
    pub active_cells: usize,
    pub active_bs: usize,
    pub active_type1: usize,
    pub active_type2: usize,
    /// MM iterations, load-aware rounds, or branch-and-bound nodes (exact).
    pub iterations: u64,
    pub wall_ms: f64,
    pub feasible: bool,
}

/// A generated network with everything the solvers need.
pub struct World {
    pub scenario: Scenario,
    pub gains: PathLossMatrix,
    pub link: LinkParams,
    pub energy: EnergyModel,
}

impl World {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mut scenario = generate_scenario_with_layout(
            &cfg.area,
            cfg.topology.n_bs,
            cfg.topology.layout,
            &cfg.traffic,
            seed,
        )?;
        if cfg.topology.alternate_types {
            scenario.topology.alternate_types();
        }
        Self::from_scenario(cfg, scenario, &cfg.propagation)
    }

    pub fn from_scenario(cfg: &ExperimentConfig, scenario: Scenario, prop: &PropagationConfig) -> Result<Self> {
        let gains = path_loss(&scenario, prop, scenario.seed)?;
        let link = cfg.link.params(scenario.n_cells())?;
        let energy = cfg.energy.model(&scenario.topology)?;
        Ok(Self {
            scenario,
            gains,
            link,
            energy,
        })
    }

    /// Worst-case problem instance.
    pub fn instance(&self, eps: f64) -> Result<ProblemInstance> {
        let omega = worst_case_efficiency(&self.gains, &self.link)?;
        Ok(build_problem(&self.scenario, &self.gains, &self.link, &self.energy, &omega, eps)?)
    }
}

struct Outcome {
    energy: f64,
    energy_norm: f64,
    activity: ActivityReport,
    iterations: u64,
}

fn solve(world: &World, cfg: &ExperimentConfig) -> Result<Outcome> {
    let alg = &cfg.algorithm;
    if alg.algorithm == Algorithm::Smm && alg.mode == Mode::LoadAware {
        let r = alternating_solve(&world.scenario, &world.gains, &world.link, &world.energy, &alg.alternating())?;
        let res = r.result;
        return Ok(Outcome {
            energy: res.energy,
            energy_norm: res.energy_norm,
            activity: res.activity,
            iterations: r.iterations.len() as u64 - 1,
        });
    }
    let inst = world.instance(alg.eps)?;
    let dist = world.scenario.distance_matrix();
    let from_x = |x: &cellsleep_core::Grid, iterations: u64| {
        let loads = inst.loads(x);
        let energy = assignment_energy(x, &inst);
        let full = inst.energy.full_load_energy();
        Outcome {
            energy,
            energy_norm: if full > 0.0 { energy / full } else { 0.0 },
            activity: activity(&loads, &inst.energy, &inst.topology),
            iterations,
        }
    };
    match alg.algorithm {
        Algorithm::Smm => {
            let r = smm_solve(&inst, &world.gains, &dist, &alg.mm(), alg.mode == Mode::Fractional)?;
            Ok(Outcome {
                energy: r.energy,
                energy_norm: r.energy_norm,
                activity: r.activity,
                iterations: r.trace.iterations() as u64,
            })
        }
        Algorithm::Exact => {
            let r = exact_solve(&inst, &alg.exact_limits())?;
            Ok(from_x(&r.assignment.x, r.nodes))
        }
        Algorithm::Greedy => Ok(from_x(&greedy_zoom(&inst)?.x, 0)),
        Algorithm::Strongest => {
            // Strongest-signal start after capacity repair, rounded.
            let (x0, _) = mm_start(&world.gains, &inst, &dist)?;
            let a = round_assignment(&x0, &inst, &dist)?;
            Ok(from_x(&a.x, 0))
        }
    }
}

fn failed_row(cfg: &ExperimentConfig, seed: u64, sweep_value: Option<f64>, wall_ms: f64) -> ResultRow {
    ResultRow {
        seed,
        n_bs: cfg.topology.n_bs,
        n_cells: cfg.n_cells(),
        n_tps: cfg.traffic.n_tps,
        algorithm: cfg.algorithm.algorithm,
        mode: cfg.algorithm.mode,
        sweep_value,
        energy_w: f64::NAN,
        energy_norm: f64::NAN,
        active_cells: 0,
        active_bs: 0,
        active_type1: 0,
        active_type2: 0,
        iterations: 0,
        wall_ms,
        feasible: false,
    }
}

/// Solves one world and reports it as a row; failures become infeasible rows.
pub fn run_world(world: &World, cfg: &ExperimentConfig, sweep_value: Option<f64>) -> ResultRow {
    let t0 = Instant::now();
    let outcome = solve(world, cfg);
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let topo = &world.scenario.topology;
    let mut row = failed_row(cfg, world.scenario.seed, sweep_value, wall_ms);
    row.n_bs = topo.n_bs();
    row.n_cells = topo.n_cells();
    row.n_tps = world.scenario.n_tps();
    if let Ok(o) = outcome {
        row.energy_w = o.energy;
        row.energy_norm = o.energy_norm;
        row.active_cells = o.activity.active_cells.len();
        row.active_bs = o.activity.active_bs.len();
        row.active_type1 = o.activity.active_of_type(topo, CellType::Type1);
        row.active_type2 = o.activity.active_of_type(topo, CellType::Type2);
        row.iterations = o.iterations;
        row.feasible = true;
    }
    row
}

/// One seeded run at a sweep point. A scenario that cannot be generated
/// yields an infeasible row as well.
pub fn run_once(cfg: &ExperimentConfig, sweep_value: Option<f64>, seed: u64) -> ResultRow {
    let cfg = cfg.at(sweep_value);
    match World::generate(&cfg, seed) {
        Ok(world) => run_world(&world, &cfg, sweep_value),
        Err(_) => failed_row(&cfg, seed, sweep_value, 0.0),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentSummary {
    pub rows: usize,
    pub failed: usize,
}

pub struct ResultWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ResultWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{SCHEMA_LINE}")?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Runs every (sweep value, repeat) pair and writes one row each.
///
/// The seed of repeat `r` is `seed_base + r` at every sweep value. Repeats
/// run in parallel; rows are written in (sweep value, repeat) order and
/// flushed after each sweep value.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let pool = pool()?;
    let mut writer = ResultWriter::new(out)?;
    let mut summary = ExperimentSummary::default();
    for value in cfg.points() {
        let rows: Vec<ResultRow> = pool.install(|| {
            (0..cfg.sweep.repeats as u64)
                .into_par_iter()
                .map(|r| run_once(cfg, value, cfg.sweep.seed_base + r))
                .collect()
        });
        for row in &rows {
            writer.write(row)?;
            summary.rows += 1;
            if !row.feasible {
                summary.failed += 1;
            }
        }
        writer.flush()?;
    }
    Ok(summary)
}

/// Parses a result file, rejecting any other schema.
pub fn read_results<R: BufRead>(mut input: R) -> Result<Vec<ResultRow>> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(Error::Schema(format!("expected {SCHEMA_LINE:?}, found {:?}", first.trim_end())));
    }
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != COLUMNS {
        return Err(Error::Schema(format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec.map_err(|e| Error::Schema(e.to_string()))?);
    }
    Ok(rows)
}

pub fn read_results_file(path: &std::path::Path) -> Result<Vec<ResultRow>> {
    let f = std::fs::File::open(path)?;
    read_results(std::io::BufReader::new(f))
}
