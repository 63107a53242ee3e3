//! SINR, spectral efficiency and the load an assignment induces at fixed
//! efficiencies.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::scenario::PathLossMatrix;
use crate::{Error, Grid, Result};

/// A per-link constant that is usually uniform across the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLink {
    Uniform(f64),
    Matrix(Grid),
}

impl PerLink {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            PerLink::Uniform(v) => *v,
            PerLink::Matrix(g) => g[[i, j]],
        }
    }

    fn all_positive(&self) -> bool {
        match self {
            PerLink::Uniform(v) => *v > 0.0,
            PerLink::Matrix(g) => g.iter().all(|v| *v > 0.0),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Thermal noise over one 180 kHz resource block with a 9 dB noise figure.
pub fn default_noise_watts() -> f64 {
    dbm_to_watts(-174.0 + 10.0 * 180e3f64.log10() + 9.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Transmit power per resource unit, watts, one entry per cell.
    pub tx_power: Vec<f64>,
    /// Noise power per resource unit, watts.
    pub noise: f64,
    /// Usable bandwidth per cell in Hz (signaling reserve already removed).
    pub bandwidth: Vec<f64>,
    pub eff_bw: PerLink,
    pub eff_sinr: PerLink,
}

impl LinkParams {
    /// Uniform parameters: 40 dBm, 20 MHz, bandwidth efficiency 0.83, SINR efficiency 1.
    pub fn uniform(n_cells: usize) -> Self {
        Self {
            tx_power: vec![dbm_to_watts(40.0); n_cells],
            noise: default_noise_watts(),
            bandwidth: vec![20e6; n_cells],
            eff_bw: PerLink::Uniform(0.83),
            eff_sinr: PerLink::Uniform(1.0),
        }
    }

    /// Applies a signaling reserve: usable bandwidth becomes `total - reserve`.
    pub fn with_signaling_reserve(mut self, reserve_hz: &[f64]) -> Result<Self> {
        if reserve_hz.len() != self.bandwidth.len() {
            return Err(Error::Dimension("one reserve per cell expected".into()));
        }
        for (b, a) in self.bandwidth.iter_mut().zip(reserve_hz) {
            *b -= a;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.tx_power.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_power.len() != self.bandwidth.len() {
            return Err(Error::Dimension("tx_power and bandwidth lengths differ".into()));
        }
        if self.tx_power.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidConfig("transmit powers must be positive".into()));
        }
        if !(self.noise > 0.0) {
            return Err(Error::InvalidConfig("noise power must be positive".into()));
        }
        if self.bandwidth.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidConfig("bandwidths must be positive".into()));
        }
        if !self.eff_bw.all_positive() || !self.eff_sinr.all_positive() {
            return Err(Error::InvalidConfig("efficiency constants must be positive".into()));
        }
        Ok(())
    }

    fn check_dims(&self, g: &PathLossMatrix) -> Result<()> {
        if self.n_cells() != g.n_cells() {
            return Err(Error::Dimension(format!(
                "link params for {} cells, gain matrix has {}",
                self.n_cells(),
                g.n_cells()
            )));
        }
        Ok(())
    }
}

/// Per-cell load fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadVector(pub Vec<f64>);

impl LoadVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn full(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, slack: f64) -> bool {
        self.0.iter().all(|&r| r <= 1.0 + slack)
    }
}

impl std::ops::Index<usize> for LoadVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Assignment matrix `x[i, j]`, the share of TP `j` served by cell `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub x: Grid,
    pub binary: bool,
}

impl Assignment {
    pub const COLUMN_TOL: f64 = 1e-8;

    /// Validates column sums and, for binary assignments, the {0, 1} domain.
    pub fn new(x: Grid, binary: bool) -> Result<Self> {
        for (j, col) in x.columns().into_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > Self::COLUMN_TOL {
                return Err(Error::InvalidConfig(format!("column {j} sums to {s}")));
            }
            if col.iter().any(|v| *v < -Self::COLUMN_TOL || *v > 1.0 + Self::COLUMN_TOL) {
                return Err(Error::InvalidConfig(format!("column {j} leaves [0, 1]")));
            }
            if binary && col.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::InvalidConfig(format!("column {j} is not binary")));
            }
        }
        Ok(Self { x, binary })
    }

    /// Binary assignment from a serving cell per TP.
    pub fn from_serving(m: usize, serving: &[usize]) -> Self {
        let mut x = Grid::zeros((m, serving.len()));
        for (j, &i) in serving.iter().enumerate() {
            x[[i, j]] = 1.0;
        }
        Self { x, binary: true }
    }

    pub fn n_cells(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_tps(&self) -> usize {
        self.x.ncols()
    }

    /// Serving cell per TP for a binary assignment.
    pub fn serving_cells(&self) -> Option<Vec<usize>> {
        if !self.binary {
            return None;
        }
        self.x
            .columns()
            .into_iter()
            .map(|c| c.iter().position(|v| *v == 1.0))
            .collect()
    }
}

/// Aggregate received power `sum_k P_k g_kj rho_k` at every TP.
fn received_load_power(rho: &[f64], g: &Grid, tx_power: &[f64]) -> Vec<f64> {
    let mut total = vec![0.0; g.ncols()];
    for (k, row) in g.rows().into_iter().enumerate() {
        let w = tx_power[k] * rho[k];
        if w == 0.0 {
            continue;
        }
        for (t, &gkj) in total.iter_mut().zip(row.iter()) {
            *t += w * gkj;
        }
    }
    total
}

/// `P_i g_ij / (sum_{k != i} P_k g_kj rho_k + noise)`.
pub fn sinr(i: usize, j: usize, rho: &LoadVector, g: &PathLossMatrix, lp: &LinkParams) -> f64 {
    let interference: f64 = (0..g.n_cells())
        .filter(|&k| k != i)
        .map(|k| lp.tx_power[k] * g.gains[[k, j]] * rho[k])
        .sum();
    lp.tx_power[i] * g.gains[[i, j]] / (interference + lp.noise)
}

/// Spectral efficiency in bit/s/Hz for a given SINR on link `(i, j)`.
#[inline]
pub fn efficiency_from_sinr(gamma: f64, i: usize, j: usize, lp: &LinkParams) -> f64 {
    lp.eff_bw.get(i, j) * (gamma / lp.eff_sinr.get(i, j)).ln_1p() / std::f64::consts::LN_2
}

pub fn spectral_efficiency(i: usize, j: usize, rho: &LoadVector, g: &PathLossMatrix, lp: &LinkParams) -> f64 {
    efficiency_from_sinr(sinr(i, j, rho, g, lp), i, j, lp)
}

/// SINR matrix for every link at load `rho`.
pub fn sinr_matrix(rho: &LoadVector, g: &PathLossMatrix, lp: &LinkParams) -> Result<Grid> {
    lp.check_dims(g)?;
    if rho.len() != g.n_cells() {
        return Err(Error::Dimension("load vector length differs from cell count".into()));
    }
    let total = received_load_power(&rho.0, &g.gains, &lp.tx_power);
    Ok(Grid::from_shape_fn(g.gains.dim(), |(i, j)| {
        let own = lp.tx_power[i] * g.gains[[i, j]];
        // Subtracting the own term keeps this O(MN); clamp guards rounding.
        let interference = (total[j] - own * rho[i]).max(0.0);
        own / (interference + lp.noise)
    }))
}

pub fn efficiency_matrix(rho: &LoadVector, g: &PathLossMatrix, lp: &LinkParams) -> Result<Grid> {
    let mut w = sinr_matrix(rho, g, lp)?;
    for ((i, j), v) in w.indexed_iter_mut() {
        *v = efficiency_from_sinr(*v, i, j, lp);
    }
    Ok(w)
}

/// Efficiencies with every cell fully loaded, a lower bound for any load in `[0, 1]^M`.
pub fn worst_case_efficiency(g: &PathLossMatrix, lp: &LinkParams) -> Result<Grid> {
    efficiency_matrix(&LoadVector::full(g.n_cells()), g, lp)
}

/// `d[i, j] = r_j / (B_i omega_ij)`: the load TP `j` puts on cell `i`.
pub fn demand_coefficients(rates: &[f64], omega: &Grid, lp: &LinkParams) -> Result<Grid> {
    if omega.ncols() != rates.len() || omega.nrows() != lp.bandwidth.len() {
        return Err(Error::Dimension(format!(
            "efficiency matrix {:?} vs {} cells / {} rates",
            omega.dim(),
            lp.bandwidth.len(),
            rates.len()
        )));
    }
    if let Some(((i, j), _)) = omega.indexed_iter().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NonPositiveEfficiency { cell: i, tp: j });
    }
    Ok(Grid::from_shape_fn(omega.dim(), |(i, j)| {
        rates[j] / (lp.bandwidth[i] * omega[[i, j]])
    }))
}

/// `rho_i = sum_j d_ij x_ij`.
pub fn load_from_assignment(x: &Grid, demand: &Grid) -> LoadVector {
    let mut rho = vec![0.0; x.nrows()];
    Zip::from(x.rows())
        .and(demand.rows())
        .and(&mut rho)
        .for_each(|xr, dr, r| *r = xr.dot(&dr));
    LoadVector(rho)
}
