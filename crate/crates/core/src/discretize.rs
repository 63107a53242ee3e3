//! Binary assignments: rounding of relaxed solutions, start points, an exact
//! search for small instances and a greedy baseline.

use std::time::{Duration, Instant};

use crate::energy::network_energy;
use crate::linkmodel::{load_from_assignment, Assignment, LoadVector};
use crate::optimizer::ProblemInstance;
use crate::scenario::PathLossMatrix;
use crate::{Error, Grid, Result};

/// Slack on the capacity check of a single cell.
pub const CAPACITY_SLACK: f64 = 1e-9;
/// Entries at least this close to one count as already assigned.
pub const ONE_TOL: f64 = 1e-9;
/// Relative gain difference below which two cells count as tied.
pub const TIE_REL: f64 = 1e-12;

/// Energy of an assignment with loads from the instance's demand matrix.
pub fn assignment_energy(x: &Grid, inst: &ProblemInstance) -> f64 {
    network_energy(&load_from_assignment(x, &inst.demand), &inst.energy, &inst.topology)
}

/// Checks the binary domain, column sums, the mask and every capacity row.
pub fn check_binary(x: &Grid, inst: &ProblemInstance) -> Result<()> {
    if x.dim() != inst.demand.dim() {
        return Err(Error::Dimension("assignment shape differs from instance".into()));
    }
    for (j, col) in x.columns().into_iter().enumerate() {
        if col.iter().any(|v| *v != 0.0 && *v != 1.0) || col.sum() != 1.0 {
            return Err(Error::InvalidConfig(format!("column {j} is not a unit vector")));
        }
    }
    let rho = load_from_assignment(x, &inst.demand);
    for i in 0..inst.n_cells() {
        if rho[i] > 1.0 + CAPACITY_SLACK {
            return Err(Error::Infeasible(format!("cell {i} carries load {}", rho[i])));
        }
        if !inst.is_allowed(i) && x.row(i).sum() > 0.0 {
            return Err(Error::Infeasible(format!("masked cell {i} carries traffic")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrongestSignal {
    pub assignment: Assignment,
    /// Cells whose capacity row is violated by the assignment.
    pub overloaded: Vec<usize>,
}

fn strongest_cells(g: &PathLossMatrix, inst: &ProblemInstance, j: usize) -> Vec<usize> {
    let best = (0..inst.n_cells())
        .filter(|&i| inst.is_allowed(i))
        .map(|i| g.gains[[i, j]])
        .fold(f64::NEG_INFINITY, f64::max);
    (0..inst.n_cells())
        .filter(|&i| inst.is_allowed(i) && g.gains[[i, j]] >= best * (1.0 - TIE_REL))
        .collect()
}

/// Every TP to the allowed cell with the largest gain, lowest cell id on ties.
pub fn strongest_signal_assignment(g: &PathLossMatrix, inst: &ProblemInstance) -> Result<StrongestSignal> {
    if g.gains.dim() != inst.demand.dim() {
        return Err(Error::Dimension("gain matrix shape differs from instance".into()));
    }
    let mut serving = Vec::with_capacity(inst.n_tps());
    for j in 0..inst.n_tps() {
        let mut best: Option<usize> = None;
        for i in (0..inst.n_cells()).filter(|&i| inst.is_allowed(i)) {
            if best.is_none_or(|b| g.gains[[i, j]] > g.gains[[b, j]]) {
                best = Some(i);
            }
        }
        serving.push(best.ok_or(Error::RoundingFailed { tp: j })?);
    }
    let assignment = Assignment::from_serving(inst.n_cells(), &serving);
    let rho = load_from_assignment(&assignment.x, &inst.demand);
    let overloaded = (0..inst.n_cells()).filter(|&i| rho[i] > 1.0 + CAPACITY_SLACK).collect();
    Ok(StrongestSignal { assignment, overloaded })
}

/// Cell for an unplaced TP: the closest inactive cell it fits on, else the
/// closest active cell with room left.
fn place_closest(j: usize, rho: &[f64], dist: &Grid, inst: &ProblemInstance) -> Option<usize> {
    let fits = |i: usize| inst.is_allowed(i) && rho[i] + inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK;
    let closest = |inactive: bool| {
        (0..inst.n_cells())
            .filter(|&i| fits(i) && (rho[i] <= 0.0) == inactive)
            .min_by(|&a, &b| dist[[a, j]].total_cmp(&dist[[b, j]]).then(a.cmp(&b)))
    };
    closest(true).or_else(|| closest(false))
}

/// MM start point: strongest-signal assignment with exact ties shared equally,
/// then capacity repair. Returns the point and whether it is feasible.
pub fn mm_start(g: &PathLossMatrix, inst: &ProblemInstance, dist: &Grid) -> Result<(Grid, bool)> {
    if g.gains.dim() != inst.demand.dim() || dist.dim() != inst.demand.dim() {
        return Err(Error::Dimension("gain or distance matrix shape differs from instance".into()));
    }
    let (m, n) = inst.demand.dim();
    let mut x = Grid::zeros((m, n));
    for j in 0..n {
        let tied = strongest_cells(g, inst, j);
        if tied.is_empty() {
            return Err(Error::RoundingFailed { tp: j });
        }
        let share = 1.0 / tied.len() as f64;
        for i in tied {
            x[[i, j]] = share;
        }
    }
    let mut rho = load_from_assignment(&x, &inst.demand).0;
    let mut unplaced = Vec::new();
    loop {
        let Some(worst) = (0..m)
            .filter(|&i| rho[i] > 1.0 + CAPACITY_SLACK)
            .max_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(b.cmp(&a)))
        else {
            break;
        };
        let j = (0..n)
            .filter(|&j| x[[worst, j]] > 0.0)
            .max_by(|&a, &b| inst.demand[[worst, a]].total_cmp(&inst.demand[[worst, b]]).then(b.cmp(&a)))
            .expect("overloaded cell serves some TP");
        for i in 0..m {
            rho[i] -= x[[i, j]] * inst.demand[[i, j]];
            x[[i, j]] = 0.0;
        }
        unplaced.push(j);
    }
    unplaced.sort_unstable();
    let mut feasible = true;
    for j in unplaced {
        match place_closest(j, &rho, dist, inst) {
            Some(i) => {
                x[[i, j]] = 1.0;
                rho[i] += inst.demand[[i, j]];
            }
            None => {
                // Fall back to the strongest cell; the start stays infeasible.
                let i = strongest_cells(g, inst, j)[0];
                x[[i, j]] = 1.0;
                rho[i] += inst.demand[[i, j]];
                feasible = false;
            }
        }
    }
    Ok((x, feasible))
}

/// Maps a relaxed solution to a binary assignment.
///
/// Entries equal to one are kept; the remaining fractional entries are
/// visited from largest to smallest (ties by `(cell, tp)`) and fixed when the
/// cell still has room. Any TP left over goes to the closest inactive cell
/// that can carry it, then to the closest active cell with room.
pub fn round_assignment(x: &Grid, inst: &ProblemInstance, dist: &Grid) -> Result<Assignment> {
    if x.dim() != inst.demand.dim() || dist.dim() != inst.demand.dim() {
        return Err(Error::Dimension("relaxed point or distances differ from instance".into()));
    }
    let (m, n) = x.dim();
    let mut serving: Vec<Option<usize>> = vec![None; n];
    let mut rho = vec![0.0; m];
    for j in 0..n {
        if let Some(i) = (0..m).find(|&i| x[[i, j]] >= 1.0 - ONE_TOL && inst.is_allowed(i)) {
            if rho[i] + inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK {
                serving[j] = Some(i);
                rho[i] += inst.demand[[i, j]];
            }
        }
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for j in (0..n).filter(|&j| serving[j].is_none()) {
        for i in 0..m {
            let v = x[[i, j]];
            if v > 0.0 && inst.is_allowed(i) {
                candidates.push((v, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, j) in candidates {
        if serving[j].is_none() && rho[i] + inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK {
            serving[j] = Some(i);
            rho[i] += inst.demand[[i, j]];
        }
    }
    for j in 0..n {
        if serving[j].is_none() {
            let i = place_closest(j, &rho, dist, inst).ok_or(Error::RoundingFailed { tp: j })?;
            serving[j] = Some(i);
            rho[i] += inst.demand[[i, j]];
        }
    }
    let serving: Vec<usize> = serving.into_iter().map(|s| s.expect("every TP placed")).collect();
    Ok(Assignment::from_serving(m, &serving))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactLimits {
    pub max_cells: usize,
    pub max_tps: usize,
    pub time_budget: Duration,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self {
            max_cells: 9,
            max_tps: 10,
            time_budget: Duration::from_secs(60),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    pub assignment: Assignment,
    pub energy: f64,
    pub proven_optimal: bool,
    pub nodes: u64,
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    order: Vec<usize>,
    rho: Vec<f64>,
    serving: Vec<usize>,
    bs_active: Vec<usize>,
    best: f64,
    best_serving: Option<Vec<usize>>,
    nodes: u64,
    deadline: Instant,
    timed_out: bool,
    monotone: bool,
}

impl Search<'_> {
    fn static_energy(&self) -> f64 {
        let em = &self.inst.energy;
        let mut e = 0.0;
        for (l, &count) in self.bs_active.iter().enumerate() {
            if count > 0 {
                e += em.bs_static[l];
            }
        }
        for (i, &r) in self.rho.iter().enumerate() {
            if r > 0.0 {
                e += em.cell_static[i];
                if self.monotone {
                    e += em.dynamic[i].value(r);
                }
            }
        }
        e
    }

    /// Extra energy forced by the remaining TPs that no active cell can take.
    fn completion_bound(&self, depth: usize) -> f64 {
        let inst = self.inst;
        let em = &inst.energy;
        let mut bound: f64 = 0.0;
        for &j in &self.order[depth..] {
            let fits_active = (0..inst.n_cells())
                .any(|i| self.rho[i] > 0.0 && self.rho[i] + inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK);
            if fits_active {
                continue;
            }
            let cheapest = (0..inst.n_cells())
                .filter(|&i| inst.is_allowed(i) && self.rho[i] <= 0.0 && inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK)
                .map(|i| {
                    let l = inst.topology.parent(i);
                    let bs = if self.bs_active[l] == 0 { em.bs_static[l] } else { 0.0 };
                    let dynamic = if self.monotone { em.dynamic[i].value(inst.demand[[i, j]]) } else { 0.0 };
                    bs + em.cell_static[i] + dynamic
                })
                .fold(f64::INFINITY, f64::min);
            bound = bound.max(cheapest);
        }
        bound
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.nodes % 4096 == 0 && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        let lb = self.static_energy();
        if depth == self.order.len() {
            let e = assignment_energy_from(&self.rho, self.inst);
            if e < self.best {
                self.best = e;
                self.best_serving = Some(self.serving.clone());
            }
            return;
        }
        if lb + self.completion_bound(depth) >= self.best - 1e-9 * self.best.abs().max(1.0) {
            return;
        }
        let j = self.order[depth];
        let inst = self.inst;
        let m = inst.n_cells();
        // Active cells first, then inactive ones; both in id order.
        let mut choices: Vec<usize> = (0..m).filter(|&i| self.rho[i] > 0.0).collect();
        choices.extend((0..m).filter(|&i| self.rho[i] <= 0.0));
        for i in choices {
            let d = inst.demand[[i, j]];
            if !inst.is_allowed(i) || self.rho[i] + d > 1.0 + CAPACITY_SLACK {
                continue;
            }
            let l = inst.topology.parent(i);
            let was = self.rho[i];
            self.rho[i] += d;
            self.bs_active[l] += 1;
            self.serving[j] = i;
            self.dfs(depth + 1);
            self.bs_active[l] -= 1;
            self.rho[i] = was;
            if self.timed_out {
                return;
            }
        }
    }
}

fn assignment_energy_from(rho: &[f64], inst: &ProblemInstance) -> f64 {
    network_energy(&LoadVector(rho.to_vec()), &inst.energy, &inst.topology)
}

/// Minimum-energy binary assignment by depth-first search with incumbent pruning.
pub fn exact_solve(inst: &ProblemInstance, limits: &ExactLimits) -> Result<ExactResult> {
    let (m, n) = inst.demand.dim();
    if m > limits.max_cells || n > limits.max_tps {
        return Err(Error::TooLarge(format!(
            "exact search limited to {} cells / {} TPs, got {m} / {n}",
            limits.max_cells, limits.max_tps
        )));
    }
    let monotone = inst.energy.dynamic.iter().all(|f| f.is_nondecreasing());
    // Most constrained TPs first: fewest cells able to carry them.
    let mut order: Vec<usize> = (0..n).collect();
    let options = |j: usize| (0..m).filter(|&i| inst.is_allowed(i) && inst.demand[[i, j]] <= 1.0 + CAPACITY_SLACK).count();
    order.sort_by_key(|&j| (options(j), j));
    let mut search = Search {
        inst,
        order,
        rho: vec![0.0; m],
        serving: vec![0; n],
        bs_active: vec![0; inst.n_bs()],
        best: f64::INFINITY,
        best_serving: None,
        nodes: 0,
        deadline: Instant::now() + limits.time_budget,
        timed_out: false,
        monotone,
    };
    if let Ok(g) = greedy_zoom(inst) {
        search.best = assignment_energy(&g.x, inst);
        search.best_serving = g.serving_cells();
    }
    search.dfs(0);
    let serving = search
        .best_serving
        .ok_or_else(|| Error::Infeasible("no binary assignment satisfies every capacity row".into()))?;
    let assignment = Assignment::from_serving(m, &serving);
    Ok(ExactResult {
        energy: assignment_energy(&assignment.x, inst),
        assignment,
        proven_optimal: !search.timed_out,
        nodes: search.nodes,
    })
}

/// Repeatedly opens the cell that can take the most remaining TPs.
///
/// A candidate cell is packed with remaining TPs in increasing demand order
/// while they fit. The cell with the largest count wins, ties going to the
/// larger absorbed demand and then the lower id.
pub fn greedy_zoom(inst: &ProblemInstance) -> Result<Assignment> {
    let (m, n) = inst.demand.dim();
    let mut serving: Vec<Option<usize>> = vec![None; n];
    let mut opened = vec![false; m];
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64, usize, Vec<usize>)> = None;
        for i in (0..m).filter(|&i| inst.is_allowed(i) && !opened[i]) {
            let mut tps = remaining.clone();
            tps.sort_by(|&a, &b| inst.demand[[i, a]].total_cmp(&inst.demand[[i, b]]).then(a.cmp(&b)));
            let mut load = 0.0;
            let mut taken = Vec::new();
            for j in tps {
                let d = inst.demand[[i, j]];
                if load + d <= 1.0 + CAPACITY_SLACK {
                    load += d;
                    taken.push(j);
                }
            }
            let better = match &best {
                None => true,
                Some((c, l, _, _)) => taken.len() > *c || (taken.len() == *c && load > *l),
            };
            if !taken.is_empty() && better {
                best = Some((taken.len(), load, i, taken));
            }
        }
        let Some((_, _, i, taken)) = best else {
            return Err(Error::RoundingFailed { tp: remaining[0] });
        };
        opened[i] = true;
        for &j in &taken {
            serving[j] = Some(i);
        }
        remaining.retain(|j| serving[*j].is_none());
    }
    let serving: Vec<usize> = serving.into_iter().map(|s| s.expect("assigned")).collect();
    Ok(Assignment::from_serving(m, &serving))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyModel;
    use crate::scenario::{BaseStation, Cell, CellType, Point, Topology};
    use ndarray::array;

    fn instance(d: Grid, c: f64, e: f64) -> ProblemInstance {
        let m = d.nrows();
        let bss = (0..m)
            .map(|l| BaseStation {
                id: l,
                position: Point::new(0.0, 0.0),
            })
            .collect();
        let cells = (0..m)
            .map(|i| Cell {
                id: i,
                parent: i,
                azimuth_deg: None,
                cell_type: CellType::Type1,
            })
            .collect();
        let t = Topology::new(bss, cells).unwrap();
        let em = EnergyModel::uniform(&t, c, e, 0.0).unwrap();
        ProblemInstance::new(d, t, em, 1e-3).unwrap()
    }

    #[test]
    fn binary_input_unchanged() {
        let p = instance(array![[0.3, 0.3], [0.3, 0.3]], 1.0, 1.0);
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let r = round_assignment(&x, &p, &Grid::zeros((2, 2))).unwrap();
        assert_eq!(r.x, x);
    }

    #[test]
    fn largest_fraction_wins() {
        let p = instance(array![[0.3], [0.3]], 1.0, 1.0);
        let r = round_assignment(&array![[0.6], [0.4]], &p, &Grid::zeros((2, 1))).unwrap();
        assert_eq!(r.serving_cells().unwrap(), vec![0]);
    }

    #[test]
    fn blocked_cell_falls_to_next_fraction() {
        // TP 0 fills cell 0, so TP 1 cannot take its 0.6 share there.
        let p = instance(array![[0.9, 0.5], [0.9, 0.5]], 1.0, 1.0);
        let x = array![[1.0, 0.6], [0.0, 0.4]];
        let r = round_assignment(&x, &p, &Grid::zeros((2, 2))).unwrap();
        assert_eq!(r.serving_cells().unwrap(), vec![0, 1]);
        check_binary(&r.x, &p).unwrap();
    }

    #[test]
    fn rounding_failure_reported() {
        let p = instance(array![[0.9, 0.9]], 1.0, 1.0);
        let x = array![[1.0, 1.0]];
        assert_eq!(
            round_assignment(&x, &p, &Grid::zeros((1, 2))).unwrap_err(),
            Error::RoundingFailed { tp: 1 }
        );
    }

    #[test]
    fn strongest_signal_ties_lowest_id() {
        let p = instance(array![[0.1, 0.1], [0.1, 0.1]], 1.0, 1.0);
        let g = PathLossMatrix::new(array![[1e-9, 1e-9], [2e-9, 1e-9]]).unwrap();
        let s = strongest_signal_assignment(&g, &p).unwrap();
        assert_eq!(s.assignment.serving_cells().unwrap(), vec![1, 0]);
        assert!(s.overloaded.is_empty());
        let (x0, feasible) = mm_start(&g, &p, &Grid::zeros((2, 2))).unwrap();
        assert!(feasible);
        assert_eq!(x0, array![[0.0, 0.5], [1.0, 0.5]]);
    }

    #[test]
    fn start_repair_moves_overload() {
        let p = instance(array![[0.6, 0.7], [0.6, 0.6]], 1.0, 1.0);
        let g = PathLossMatrix::new(array![[2e-9, 2e-9], [1e-9, 1e-9]]).unwrap();
        let s = strongest_signal_assignment(&g, &p).unwrap();
        assert_eq!(s.overloaded, vec![0]);
        let (x0, feasible) = mm_start(&g, &p, &Grid::zeros((2, 2))).unwrap();
        assert!(feasible);
        assert_eq!(x0, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn exact_prefers_single_cell() {
        let p = instance(array![[0.3, 0.3], [0.3, 0.3]], 500.0, 280.0);
        let r = exact_solve(&p, &ExactLimits::default()).unwrap();
        assert!(r.proven_optimal);
        assert_eq!(r.energy, 780.0);
        let s = r.assignment.serving_cells().unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn exact_rejects_large() {
        let p = instance(Grid::from_elem((10, 2), 0.1), 1.0, 1.0);
        assert!(matches!(exact_solve(&p, &ExactLimits::default()), Err(Error::TooLarge(_))));
    }

    #[test]
    fn greedy_single_cell_covers_all() {
        let p = instance(array![[0.2, 0.2, 0.2], [0.5, 0.5, 0.5]], 1.0, 1.0);
        let a = greedy_zoom(&p).unwrap();
        assert_eq!(a.serving_cells().unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn greedy_islands() {
        // Each TP fits only its own cell.
        let p = instance(array![[0.5, 5.0], [5.0, 0.5]], 1.0, 1.0);
        let a = greedy_zoom(&p).unwrap();
        assert_eq!(a.serving_cells().unwrap(), vec![0, 1]);
        let bad = instance(array![[2.0]], 1.0, 1.0);
        assert!(greedy_zoom(&bad).is_err());
    }
}
