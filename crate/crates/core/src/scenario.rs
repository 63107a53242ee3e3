//! Seeded generation of network topologies, test-point traffic and the
//! cell-to-test-point gain matrix.
//!
//! Every random draw comes from a ChaCha stream derived from the scenario
//! seed, one stream per purpose (sites, traffic, shadowing), so identical
//! seeds reproduce identical scenarios bit for bit and changing the number
//! of test points does not move the base stations.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Grid, Result};

const STREAM_SITES: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_SHADOWING: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub wrap_around: bool,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            width_m: 2000.0,
            height_m: 2000.0,
            wrap_around: true,
        }
    }
}

impl AreaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "area must have positive size, got {}x{}",
                self.width_m, self.height_m
            )));
        }
        Ok(())
    }

    /// Maps a point into the area: modulo the torus when wrapping, clamped otherwise.
    pub fn fold(&self, p: Point) -> Point {
        if self.wrap_around {
            Point::new(p.x.rem_euclid(self.width_m), p.y.rem_euclid(self.height_m))
        } else {
            Point::new(p.x.clamp(0.0, self.width_m), p.y.clamp(0.0, self.height_m))
        }
    }
}

fn wrap_axis(delta: f64, len: f64) -> f64 {
    // Shortest signed offset on a circle of circumference `len`.
    let d = delta.rem_euclid(len);
    if d > len / 2.0 {
        d - len
    } else {
        d
    }
}

/// Signed displacement from `from` to the nearest image of `to`.
pub fn wrap_displacement(from: Point, to: Point, area: &AreaConfig) -> (f64, f64) {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if area.wrap_around {
        (wrap_axis(dx, area.width_m), wrap_axis(dy, area.height_m))
    } else {
        (dx, dy)
    }
}

/// Torus distance when the area wraps around, Euclidean distance otherwise.
pub fn wrap_distance(p: Point, q: Point, area: &AreaConfig) -> f64 {
    let (dx, dy) = wrap_displacement(p, q, area);
    dx.hypot(dy)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    #[default]
    Type1,
    Type2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub parent: usize,
    /// Boresight in degrees counter-clockwise from the +x axis; `None` is omnidirectional.
    pub azimuth_deg: Option<f64>,
    #[serde(default)]
    pub cell_type: CellType,
}

/// How cells are attached to each site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellLayout {
    /// `sectors` directional cells at azimuths `k * 360 / sectors`; one sector means omnidirectional.
    Sectored { sectors: usize },
    /// `cells_per_site` omnidirectional cells sharing the site. The first
    /// cell of each site is type 1, the others type 2.
    CoLocated { cells_per_site: usize },
}

impl CellLayout {
    pub fn cells_per_site(&self) -> usize {
        match *self {
            CellLayout::Sectored { sectors } => sectors,
            CellLayout::CoLocated { cells_per_site } => cells_per_site,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub base_stations: Vec<BaseStation>,
    pub cells: Vec<Cell>,
    /// `sectors[l]` lists the cell ids hosted by base station `l`.
    pub sectors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology and checks that every cell has exactly one valid parent.
    pub fn new(base_stations: Vec<BaseStation>, cells: Vec<Cell>) -> Result<Self> {
        let mut sectors = vec![Vec::new(); base_stations.len()];
        for (i, c) in cells.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidConfig(format!("cell at index {i} has id {}", c.id)));
            }
            let slot = sectors.get_mut(c.parent).ok_or_else(|| {
                Error::InvalidConfig(format!("cell {i} references missing base station {}", c.parent))
            })?;
            slot.push(i);
        }
        for (l, bs) in base_stations.iter().enumerate() {
            if bs.id != l {
                return Err(Error::InvalidConfig(format!("base station at index {l} has id {}", bs.id)));
            }
        }
        Ok(Self {
            base_stations,
            cells,
            sectors,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_bs(&self) -> usize {
        self.base_stations.len()
    }

    pub fn parent(&self, cell: usize) -> usize {
        self.cells[cell].parent
    }

    pub fn cell_position(&self, cell: usize) -> Point {
        self.base_stations[self.cells[cell].parent].position
    }

    /// Places `layout` cells on each of the given sites.
    pub fn from_sites(sites: &[Point], layout: CellLayout) -> Result<Self> {
        let per_site = layout.cells_per_site();
        if per_site == 0 {
            return Err(Error::InvalidConfig("at least one cell per site required".into()));
        }
        let base_stations: Vec<BaseStation> = sites
            .iter()
            .enumerate()
            .map(|(id, &position)| BaseStation { id, position })
            .collect();
        let mut cells = Vec::with_capacity(sites.len() * per_site);
        for l in 0..sites.len() {
            for k in 0..per_site {
                let (azimuth_deg, cell_type) = match layout {
                    CellLayout::Sectored { sectors } if sectors > 1 => {
                        (Some(360.0 * k as f64 / sectors as f64), CellType::Type1)
                    }
                    CellLayout::Sectored { .. } => (None, CellType::Type1),
                    CellLayout::CoLocated { .. } => {
                        (None, if k == 0 { CellType::Type1 } else { CellType::Type2 })
                    }
                };
                cells.push(Cell {
                    id: cells.len(),
                    parent: l,
                    azimuth_deg,
                    cell_type,
                });
            }
        }
        Self::new(base_stations, cells)
    }

    /// Tags every odd-numbered cell as type 2 (random-deployment heterogeneity).
    pub fn alternate_types(&mut self) {
        for c in &mut self.cells {
            c.cell_type = if c.id % 2 == 1 { CellType::Type2 } else { CellType::Type1 };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub n_tps: usize,
    pub hotspot_count: usize,
    pub hotspot_prob: f64,
    pub hotspot_radius_m: f64,
    /// Mean TP rate in bit/s.
    pub rate_mean: f64,
    /// Standard deviation of the TP rate in bit/s.
    pub rate_spread: f64,
    pub rate_floor: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            n_tps: 100,
            hotspot_count: 3,
            hotspot_prob: 0.3,
            hotspot_radius_m: 250.0,
            rate_mean: 128e3,
            rate_spread: 32e3,
            rate_floor: 1e3,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tps == 0 {
            return Err(Error::InvalidConfig("n_tps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hotspot_prob) {
            return Err(Error::InvalidConfig(format!(
                "hotspot_prob {} outside [0, 1]",
                self.hotspot_prob
            )));
        }
        if self.hotspot_prob > 0.0 && self.hotspot_count == 0 {
            return Err(Error::InvalidConfig("hotspot_prob > 0 needs hotspot_count >= 1".into()));
        }
        if !(self.rate_floor > 0.0) {
            return Err(Error::InvalidConfig("rate_floor must be positive".into()));
        }
        if !(self.rate_spread >= 0.0) || !self.rate_mean.is_finite() {
            return Err(Error::InvalidConfig("rate distribution parameters invalid".into()));
        }
        if !(self.hotspot_radius_m >= 0.0) {
            return Err(Error::InvalidConfig("hotspot_radius_m must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPointSet {
    pub positions: Vec<Point>,
    /// Minimum rate per TP in bit/s.
    pub rates: Vec<f64>,
    /// Hot spot each TP belongs to, `None` for standard TPs.
    pub hotspot: Vec<Option<usize>>,
}

impl TestPointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area: AreaConfig,
    pub topology: Topology,
    pub hotspot_centers: Vec<Point>,
    pub tps: TestPointSet,
    pub seed: u64,
}

impl Scenario {
    pub fn n_cells(&self) -> usize {
        self.topology.n_cells()
    }

    pub fn n_tps(&self) -> usize {
        self.tps.len()
    }

    /// Cell-to-TP distances in meters (site position, wrap-around aware).
    pub fn distance_matrix(&self) -> Grid {
        let m = self.n_cells();
        let n = self.n_tps();
        Grid::from_shape_fn((m, n), |(i, j)| {
            wrap_distance(self.topology.cell_position(i), self.tps.positions[j], &self.area)
        })
    }
}

/// Generates sites uniformly over the area with `sectors_per_bs` cells each.
pub fn generate_scenario(
    area: &AreaConfig,
    n_bs: usize,
    sectors_per_bs: usize,
    traffic: &TrafficConfig,
    seed: u64,
) -> Result<Scenario> {
    generate_scenario_with_layout(
        area,
        n_bs,
        CellLayout::Sectored {
            sectors: sectors_per_bs,
        },
        traffic,
        seed,
    )
}

pub fn generate_scenario_with_layout(
    area: &AreaConfig,
    n_bs: usize,
    layout: CellLayout,
    traffic: &TrafficConfig,
    seed: u64,
) -> Result<Scenario> {
    area.validate()?;
    traffic.validate()?;
    if n_bs == 0 {
        return Err(Error::InvalidConfig("n_bs must be at least 1".into()));
    }

    let mut site_rng = stream(seed, STREAM_SITES);
    let sites: Vec<Point> = (0..n_bs)
        .map(|_| uniform_point(&mut site_rng, area))
        .collect();
    let topology = Topology::from_sites(&sites, layout)?;

    let mut rng = stream(seed, STREAM_TRAFFIC);
    let hotspot_centers: Vec<Point> = (0..traffic.hotspot_count)
        .map(|_| uniform_point(&mut rng, area))
        .collect();
    let radial = Normal::new(0.0, traffic.hotspot_radius_m / 2.0)
        .map_err(|e| Error::InvalidConfig(format!("hot-spot radius: {e}")))?;
    let rate = Normal::new(traffic.rate_mean, traffic.rate_spread)
        .map_err(|e| Error::InvalidConfig(format!("rate distribution: {e}")))?;

    let mut positions = Vec::with_capacity(traffic.n_tps);
    let mut hotspot = Vec::with_capacity(traffic.n_tps);
    let mut rates = Vec::with_capacity(traffic.n_tps);
    for _ in 0..traffic.n_tps {
        let is_hot = traffic.hotspot_prob > 0.0 && rng.random::<f64>() < traffic.hotspot_prob;
        if is_hot {
            let h = rng.random_range(0..traffic.hotspot_count);
            let r = radial.sample(&mut rng).abs();
            let phi = rng.random::<f64>() * 2.0 * PI;
            let c = hotspot_centers[h];
            positions.push(area.fold(Point::new(c.x + r * phi.cos(), c.y + r * phi.sin())));
            hotspot.push(Some(h));
        } else {
            positions.push(uniform_point(&mut rng, area));
            hotspot.push(None);
        }
        rates.push(rate.sample(&mut rng).max(traffic.rate_floor));
    }

    Ok(Scenario {
        area: area.clone(),
        topology,
        hotspot_centers,
        tps: TestPointSet {
            positions,
            rates,
            hotspot,
        },
        seed,
    })
}

fn uniform_point(rng: &mut ChaCha8Rng, area: &AreaConfig) -> Point {
    let x = rng.random::<f64>() * area.width_m;
    let y = rng.random::<f64>() * area.height_m;
    Point::new(x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    /// Path loss at 1 km in dB (carrier-dependent constants folded in).
    pub pathloss_intercept_db: f64,
    /// dB per decade of distance.
    pub pathloss_slope_db: f64,
    pub shadowing_sigma_db: f64,
    pub antenna_theta3db_deg: f64,
    pub antenna_max_atten_db: f64,
    pub min_distance_m: f64,
    /// Share one shadowing draw between all cells of a site.
    pub shadowing_per_site: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.6,
            shadowing_sigma_db: 8.0,
            antenna_theta3db_deg: 70.0,
            antenna_max_atten_db: 20.0,
            min_distance_m: 10.0,
            shadowing_per_site: true,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::InvalidConfig("shadowing_sigma_db must be >= 0".into()));
        }
        if !(self.min_distance_m > 0.0) {
            return Err(Error::InvalidConfig("min_distance_m must be > 0".into()));
        }
        if !(self.antenna_theta3db_deg > 0.0) {
            return Err(Error::InvalidConfig("antenna_theta3db_deg must be > 0".into()));
        }
        Ok(())
    }

    /// Distance-dependent loss in dB.
    pub fn pathloss_db(&self, distance_m: f64) -> f64 {
        let d_km = distance_m.max(self.min_distance_m) / 1000.0;
        self.pathloss_intercept_db + self.pathloss_slope_db * d_km.log10()
    }

    /// Horizontal sector pattern attenuation in dB for an offset from boresight.
    pub fn antenna_attenuation_db(&self, offset_deg: f64) -> f64 {
        let ratio = offset_deg / self.antenna_theta3db_deg;
        (12.0 * ratio * ratio).min(self.antenna_max_atten_db)
    }
}

/// Wraps an angle difference into (-180, 180].
pub fn angle_offset_deg(bearing_deg: f64, azimuth_deg: f64) -> f64 {
    let d = (bearing_deg - azimuth_deg).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Linear-scale long-term gains `g[i, j]` from cell `i` to TP `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossMatrix {
    pub gains: Grid,
}

impl PathLossMatrix {
    pub fn new(gains: Grid) -> Result<Self> {
        if let Some(((i, j), g)) = gains.indexed_iter().find(|(_, g)| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig(format!("gain g[{i},{j}] = {g} is not strictly positive")));
        }
        Ok(Self { gains })
    }

    pub fn n_cells(&self) -> usize {
        self.gains.nrows()
    }

    pub fn n_tps(&self) -> usize {
        self.gains.ncols()
    }

    /// Dense CSV, one row per cell, one column per TP.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_grid_csv(&self.gains, out)
    }
}

pub(crate) fn write_grid_csv<W: Write>(grid: &Grid, mut out: W) -> std::io::Result<()> {
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Total loss in dB for one link, excluding shadowing.
pub fn link_loss_db(scenario: &Scenario, prop: &PropagationConfig, cell: usize, tp: usize) -> f64 {
    let cell_info = &scenario.topology.cells[cell];
    let site = scenario.topology.base_stations[cell_info.parent].position;
    let (dx, dy) = wrap_displacement(site, scenario.tps.positions[tp], &scenario.area);
    let pl = prop.pathloss_db(dx.hypot(dy));
    let atten = match cell_info.azimuth_deg {
        Some(az) => {
            let bearing = dy.atan2(dx).to_degrees();
            prop.antenna_attenuation_db(angle_offset_deg(bearing, az))
        }
        None => 0.0,
    };
    pl + atten
}

/// Computes the gain matrix; shadowing is drawn from the seed's shadowing stream.
pub fn path_loss(scenario: &Scenario, prop: &PropagationConfig, seed: u64) -> Result<PathLossMatrix> {
    prop.validate()?;
    let topo = &scenario.topology;
    let m = topo.n_cells();
    let n = scenario.n_tps();
    let mut rng = stream(seed, STREAM_SHADOWING);
    let shadow = Normal::new(0.0, prop.shadowing_sigma_db)
        .map_err(|e| Error::InvalidConfig(format!("shadowing: {e}")))?;

    // Row-major draw order: per site (or per cell), then per TP.
    let shadow_rows = if prop.shadowing_per_site { topo.n_bs() } else { m };
    let mut shadowing = Grid::zeros((shadow_rows, n));
    if prop.shadowing_sigma_db > 0.0 {
        for v in shadowing.iter_mut() {
            *v = shadow.sample(&mut rng);
        }
    }

    let gains = Grid::from_shape_fn((m, n), |(i, j)| {
        let row = if prop.shadowing_per_site { topo.parent(i) } else { i };
        let loss_db = link_loss_db(scenario, prop, i, j) + shadowing[[row, j]];
        10f64.powf(-loss_db / 10.0)
    });
    PathLossMatrix::new(gains)
}

/// Serializable snapshot of a scenario together with its propagation constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub area: AreaConfig,
    pub base_stations: Vec<BaseStation>,
    pub cells: Vec<Cell>,
    pub hotspots: Vec<Point>,
    pub tps: Vec<Point>,
    pub tp_hotspot: Vec<Option<usize>>,
    pub rates: Vec<f64>,
    pub propagation: PropagationConfig,
    pub seed: u64,
}

impl ScenarioDocument {
    pub fn new(scenario: &Scenario, propagation: &PropagationConfig) -> Self {
        Self {
            area: scenario.area.clone(),
            base_stations: scenario.topology.base_stations.clone(),
            cells: scenario.topology.cells.clone(),
            hotspots: scenario.hotspot_centers.clone(),
            tps: scenario.tps.positions.clone(),
            tp_hotspot: scenario.tps.hotspot.clone(),
            rates: scenario.tps.rates.clone(),
            propagation: propagation.clone(),
            seed: scenario.seed,
        }
    }

    pub fn into_parts(self) -> Result<(Scenario, PropagationConfig)> {
        if self.tps.len() != self.rates.len() || self.tps.len() != self.tp_hotspot.len() {
            return Err(Error::Dimension("tps, rates and tp_hotspot lengths differ".into()));
        }
        let topology = Topology::new(self.base_stations, self.cells)?;
        Ok((
            Scenario {
                area: self.area,
                topology,
                hotspot_centers: self.hotspots,
                tps: TestPointSet {
                    positions: self.tps,
                    rates: self.rates,
                    hotspot: self.tp_hotspot,
                },
                seed: self.seed,
            },
            self.propagation,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("scenario document: {e}")))
    }
}
