#![allow(dead_code)]

use cellsleep_core::energy::{EnergyModel, EnergyParams};
use cellsleep_core::linkmodel::{worst_case_efficiency, LinkParams};
use cellsleep_core::optimizer::{build_problem, ProblemInstance};
use cellsleep_core::scenario::{
    generate_scenario, path_loss, AreaConfig, BaseStation, Cell, CellType, PathLossMatrix, Point, PropagationConfig, Scenario,
    Topology, TrafficConfig,
};
use cellsleep_core::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Setup {
    pub scenario: Scenario,
    pub gains: PathLossMatrix,
    pub link: LinkParams,
    pub energy: EnergyModel,
    pub inst: ProblemInstance,
}

/// Generated scenario with worst-case demands.
pub fn setup(n_bs: usize, sectors: usize, n_tps: usize, params: &EnergyParams, seed: u64) -> Setup {
    let traffic = TrafficConfig { n_tps, ..Default::default() };
    let scenario = generate_scenario(&AreaConfig::default(), n_bs, sectors, &traffic, seed).unwrap();
    let gains = path_loss(&scenario, &PropagationConfig::default(), seed).unwrap();
    let link = LinkParams::uniform(scenario.n_cells());
    let energy = params.model(&scenario.topology).unwrap();
    let omega = worst_case_efficiency(&gains, &link).unwrap();
    let inst = build_problem(&scenario, &gains, &link, &energy, &omega, 1e-3).unwrap();
    Setup {
        scenario,
        gains,
        link,
        energy,
        inst,
    }
}

pub fn standard(seed: u64) -> Setup {
    setup(34, 3, 100, &EnergyParams::default(), seed)
}

/// Tiny synthetic instance: `m` omni cells on `n_bs` sites, demands drawn directly.
pub struct Tiny {
    pub inst: ProblemInstance,
    pub dist: Grid,
    pub gains: PathLossMatrix,
}

pub fn tiny(seed: u64, m: usize, n: usize) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bs = rng.random_range(1..=m);
    let sites: Vec<Point> = (0..n_bs)
        .map(|_| Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)))
        .collect();
    let base_stations = sites
        .iter()
        .enumerate()
        .map(|(id, &position)| BaseStation { id, position })
        .collect();
    let cells = (0..m)
        .map(|i| Cell {
            id: i,
            parent: i % n_bs,
            azimuth_deg: None,
            cell_type: CellType::Type1,
        })
        .collect();
    let topo = Topology::new(base_stations, cells).unwrap();
    let tps: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)))
        .collect();
    let dist = Grid::from_shape_fn((m, n), |(i, j)| {
        let p = topo.cell_position(i);
        (p.x - tps[j].x).hypot(p.y - tps[j].y)
    });
    let gains = Grid::from_shape_fn((m, n), |(i, j)| 1.0 / (1.0 + dist[[i, j]]).powi(3));
    let demand = Grid::from_shape_fn((m, n), |(i, j)| {
        let base = 0.05 + 0.5 * dist[[i, j]] / 1000.0;
        base * rng.random_range(0.6..1.4)
    });
    let c = rng.random_range(0.0..600.0);
    let e = rng.random_range(50.0..400.0);
    let slope = rng.random_range(0.0..600.0);
    let energy = EnergyModel::uniform(&topo, c, e, slope).unwrap();
    let inst = ProblemInstance::new(demand, topo, energy, 1e-3).unwrap();
    Tiny {
        inst,
        dist,
        gains: PathLossMatrix::new(gains).unwrap(),
    }
}

/// Random point of the feasible polytope built by mixing binary-feasible
/// assignments found by random greedy packing.
pub fn random_feasible(inst: &ProblemInstance, rng: &mut ChaCha8Rng) -> Option<Grid> {
    let (m, n) = (inst.n_cells(), inst.n_tps());
    let mut mix = Grid::zeros((m, n));
    let mut weights = 0.0;
    for _ in 0..4 {
        let mut x = Grid::zeros((m, n));
        let mut load = vec![0.0; m];
        let mut ok = true;
        for j in 0..n {
            let start = rng.random_range(0..m);
            let pick = (0..m)
                .map(|k| (start + k) % m)
                .find(|&i| load[i] + inst.demand[[i, j]] <= 1.0);
            match pick {
                Some(i) => {
                    x[[i, j]] = 1.0;
                    load[i] += inst.demand[[i, j]];
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let w: f64 = rng.random_range(0.1..1.0);
            mix.scaled_add(w, &x);
            weights += w;
        }
    }
    (weights > 0.0).then(|| mix / weights)
}
