//! Base-station and network power consumption.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linkmodel::LoadVector;
use crate::scenario::{CellType, Topology};
use crate::{Error, Result};

/// A concave, continuously differentiable load-to-power map on `[0, 1]`.
pub trait ConcavePower: Send + Sync {
    fn value(&self, rho: f64) -> f64;
    fn derivative(&self, rho: f64) -> f64;
}

/// Load-dependent power of one cell.
#[derive(Clone)]
pub enum DynamicPower {
    Linear { slope: f64 },
    Custom(Arc<dyn ConcavePower>),
}

impl fmt::Debug for DynamicPower {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicPower::Linear { slope } => write!(f, "Linear({slope})"),
            DynamicPower::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl DynamicPower {
    #[inline]
    pub fn value(&self, rho: f64) -> f64 {
        match self {
            DynamicPower::Linear { slope } => slope * rho,
            DynamicPower::Custom(p) => p.value(rho),
        }
    }

    #[inline]
    pub fn derivative(&self, rho: f64) -> f64 {
        match self {
            DynamicPower::Linear { slope } => *slope,
            DynamicPower::Custom(p) => p.derivative(rho),
        }
    }

    /// True when the map is known never to decrease with load.
    pub fn is_nondecreasing(&self) -> bool {
        matches!(self, DynamicPower::Linear { slope } if *slope >= 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct EnergyModel {
    /// Shared static power per base station, watts.
    pub bs_static: Vec<f64>,
    /// Static power per active cell, watts.
    pub cell_static: Vec<f64>,
    pub dynamic: Vec<DynamicPower>,
    /// Loads at or below this are treated as inactive.
    pub activity_eps: f64,
}

pub const ACTIVITY_EPS: f64 = 1e-9;

/// Serializable description of an energy model, resolved against a topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    /// Static power per base station, watts.
    pub c: f64,
    /// Static power per type-1 cell, watts.
    pub e: f64,
    /// Slope of the linear dynamic term before scaling by `c_prime`.
    pub f_coeff: f64,
    pub c_prime: f64,
    /// Static-power multiplier applied to type-2 cells.
    pub beta: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            c: 500.0,
            e: 280.0,
            f_coeff: 564.0,
            c_prime: 1.0,
            beta: 1.0,
        }
    }
}

impl EnergyParams {
    pub fn model(&self, topo: &Topology) -> Result<EnergyModel> {
        if self.c < 0.0 || self.e < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig("static powers must be non-negative".into()));
        }
        let slope = self.f_coeff * self.c_prime;
        if slope < 0.0 {
            return Err(Error::InvalidConfig("dynamic slope must be non-negative".into()));
        }
        let cell_static = topo
            .cells
            .iter()
            .map(|c| match c.cell_type {
                CellType::Type1 => self.e,
                CellType::Type2 => self.e * self.beta,
            })
            .collect();
        EnergyModel::new(
            vec![self.c; topo.n_bs()],
            cell_static,
            vec![DynamicPower::Linear { slope }; topo.n_cells()],
        )
    }
}

impl EnergyModel {
    pub fn new(bs_static: Vec<f64>, cell_static: Vec<f64>, dynamic: Vec<DynamicPower>) -> Result<Self> {
        if cell_static.len() != dynamic.len() {
            return Err(Error::Dimension("cell_static and dynamic lengths differ".into()));
        }
        if bs_static.iter().chain(&cell_static).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidConfig("static powers must be non-negative".into()));
        }
        for (i, f) in dynamic.iter().enumerate() {
            if f.value(0.0) < 0.0 {
                return Err(Error::InvalidConfig(format!("dynamic power of cell {i} negative at zero load")));
            }
            if let DynamicPower::Linear { slope } = f {
                if *slope < 0.0 {
                    return Err(Error::InvalidConfig(format!("cell {i} has negative dynamic slope")));
                }
            }
        }
        Ok(Self {
            bs_static,
            cell_static,
            dynamic,
            activity_eps: ACTIVITY_EPS,
        })
    }

    /// Same static and linear dynamic power everywhere.
    pub fn uniform(topo: &Topology, c: f64, e: f64, slope: f64) -> Result<Self> {
        Self::new(
            vec![c; topo.n_bs()],
            vec![e; topo.n_cells()],
            vec![DynamicPower::Linear { slope }; topo.n_cells()],
        )
    }

    pub fn check_topology(&self, topo: &Topology) -> Result<()> {
        if self.bs_static.len() != topo.n_bs() || self.cell_static.len() != topo.n_cells() {
            return Err(Error::Dimension(format!(
                "energy model for {} BS / {} cells, topology has {} / {}",
                self.bs_static.len(),
                self.cell_static.len(),
                topo.n_bs(),
                topo.n_cells()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn is_active(&self, rho: f64) -> bool {
        rho > self.activity_eps
    }

    /// Energy of the network with every cell active and fully loaded.
    pub fn full_load_energy(&self) -> f64 {
        self.bs_static.iter().sum::<f64>()
            + self
                .cell_static
                .iter()
                .zip(&self.dynamic)
                .map(|(e, f)| e + f.value(1.0))
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityReport {
    pub active_cells: BTreeSet<usize>,
    pub active_bs: BTreeSet<usize>,
    /// Power per base station, zero exactly for inactive ones.
    pub bs_energy: Vec<f64>,
}

impl ActivityReport {
    pub fn total(&self) -> f64 {
        self.bs_energy.iter().sum()
    }

    pub fn active_of_type(&self, topo: &Topology, t: CellType) -> usize {
        self.active_cells
            .iter()
            .filter(|&&i| topo.cells[i].cell_type == t)
            .count()
    }
}

/// Power drawn by base station `l`.
pub fn bs_energy(l: usize, rho: &LoadVector, em: &EnergyModel, topo: &Topology) -> f64 {
    let mut active = false;
    let mut cells = 0.0;
    for &i in &topo.sectors[l] {
        if em.is_active(rho[i]) {
            active = true;
            cells += em.cell_static[i] + em.dynamic[i].value(rho[i]);
        }
    }
    if active {
        em.bs_static[l] + cells
    } else {
        0.0
    }
}

pub fn network_energy(rho: &LoadVector, em: &EnergyModel, topo: &Topology) -> f64 {
    (0..topo.n_bs()).map(|l| bs_energy(l, rho, em, topo)).sum()
}

/// Network energy relative to the all-active, fully loaded network.
pub fn normalized_energy(rho: &LoadVector, em: &EnergyModel, topo: &Topology) -> Result<f64> {
    let full = em.full_load_energy();
    if !(full > 0.0) {
        return Err(Error::InvalidConfig("energy model is identically zero".into()));
    }
    Ok(network_energy(rho, em, topo) / full)
}

pub fn activity(rho: &LoadVector, em: &EnergyModel, topo: &Topology) -> ActivityReport {
    let active_cells: BTreeSet<usize> = (0..topo.n_cells()).filter(|&i| em.is_active(rho[i])).collect();
    let active_bs = active_cells.iter().map(|&i| topo.parent(i)).collect();
    let bs_energy = (0..topo.n_bs()).map(|l| bs_energy(l, rho, em, topo)).collect();
    ActivityReport {
        active_cells,
        active_bs,
        bs_energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CellLayout, Point};

    fn sites(n: usize, sectors: usize) -> Topology {
        let pts: Vec<Point> = (0..n).map(|k| Point::new(k as f64, 0.0)).collect();
        Topology::from_sites(&pts, CellLayout::Sectored { sectors }).unwrap()
    }

    #[test]
    fn inactive_station_draws_nothing() {
        let topo = sites(2, 3);
        let em = EnergyParams::default().model(&topo).unwrap();
        let rho = LoadVector(vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert_eq!(bs_energy(0, &rho, &em, &topo), 0.0);
        assert!((bs_energy(1, &rho, &em, &topo) - (500.0 + 280.0 + 282.0)).abs() < 1e-9);
    }

    #[test]
    fn default_parameter_arithmetic() {
        let topo = sites(1, 3);
        let em = EnergyParams::default().model(&topo).unwrap();
        let one = LoadVector(vec![1.0, 0.0, 0.0]);
        assert!((bs_energy(0, &one, &em, &topo) - 1344.0).abs() < 1e-9);
        assert!((network_energy(&one, &em, &topo) - 1344.0).abs() < 1e-9);
        let full = LoadVector::full(3);
        assert!((bs_energy(0, &full, &em, &topo) - 3032.0).abs() < 1e-9);
        assert_eq!(network_energy(&LoadVector::zeros(3), &em, &topo), 0.0);
    }

    #[test]
    fn normalization() {
        let topo = sites(34, 3);
        let em = EnergyParams::default().model(&topo).unwrap();
        assert!((normalized_energy(&LoadVector::full(102), &em, &topo).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalized_energy(&LoadVector::zeros(102), &em, &topo).unwrap(), 0.0);
        let mut rho = vec![0.0; 102];
        rho[..3].fill(1.0);
        let v = normalized_energy(&LoadVector(rho), &em, &topo).unwrap();
        assert!((v - 1.0 / 34.0).abs() < 1e-12);
        assert!((v - 0.0294).abs() < 1e-4);

        let zero = EnergyModel::uniform(&topo, 0.0, 0.0, 0.0).unwrap();
        assert!(normalized_energy(&LoadVector::full(102), &zero, &topo).is_err());
    }

    #[test]
    fn activity_threshold() {
        let topo = sites(2, 1);
        let em = EnergyModel::uniform(&topo, 500.0, 280.0, 0.0).unwrap();
        let rho = LoadVector(vec![1e-12, 0.2]);
        let rep = activity(&rho, &em, &topo);
        assert_eq!(rep.active_cells.into_iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(rep.bs_energy, vec![0.0, 780.0]);
    }

    #[test]
    fn beta_scales_type2_cells() {
        let pts = [Point::new(0.0, 0.0)];
        let topo = Topology::from_sites(&pts, CellLayout::CoLocated { cells_per_site: 2 }).unwrap();
        let p = EnergyParams {
            c: 0.0,
            e: 780.0,
            f_coeff: 0.0,
            beta: 0.5,
            ..Default::default()
        };
        let em = p.model(&topo).unwrap();
        assert_eq!(em.cell_static, vec![780.0, 390.0]);
    }

    #[test]
    fn rejects_negative_parameters() {
        let topo = sites(1, 1);
        assert!(EnergyModel::uniform(&topo, -1.0, 0.0, 0.0).is_err());
        assert!(EnergyModel::uniform(&topo, 0.0, 0.0, -1.0).is_err());
    }

    struct Sqrt;
    impl ConcavePower for Sqrt {
        fn value(&self, rho: f64) -> f64 {
            100.0 * rho.sqrt()
        }
        fn derivative(&self, rho: f64) -> f64 {
            50.0 / rho.max(1e-12).sqrt()
        }
    }

    #[test]
    fn custom_concave_power() {
        let topo = sites(1, 1);
        let em = EnergyModel::new(vec![0.0], vec![10.0], vec![DynamicPower::Custom(Arc::new(Sqrt))]).unwrap();
        let e = network_energy(&LoadVector(vec![0.25]), &em, &topo);
        assert!((e - 60.0).abs() < 1e-12);
        assert!(!em.dynamic[0].is_nondecreasing());
    }
}
