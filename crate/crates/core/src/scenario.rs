//! Vehicle snapshot generation.
//!
//! Urban scenarios live on a Manhattan grid of square blocks. Every grid line
//! carries two opposite lanes discretised into automaton cells, and vehicles
//! move with Nagel-Schreckenberg rules, turning uniformly at intersections.
//! Lanes wrap around at the map edge so the vehicle count is conserved.
//!
//! Highway scenarios are one-dimensional Poisson placements.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// Lateral offset between adjacent highway lanes.
pub const LANE_WIDTH_M: f64 = 3.5;

const ON_GRID_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Street {
    /// Urban street along `y = index * block_size`.
    Horizontal(u32),
    /// Urban street along `x = index * block_size`.
    Vertical(u32),
    /// Highway lane.
    Lane(u32),
}

impl fmt::Display for Street {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Street::Horizontal(i) => write!(f, "h{i}"),
            Street::Vertical(i) => write!(f, "v{i}"),
            Street::Lane(i) => write!(f, "l{i}"),
        }
    }
}

impl FromStr for Street {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("street id {s:?}"));
        let (kind, idx) = s.split_at(s.len().min(1));
        let idx: u32 = idx.parse().map_err(|_| bad())?;
        match kind {
            "h" => Ok(Street::Horizontal(idx)),
            "v" => Ok(Street::Vertical(idx)),
            "l" => Ok(Street::Lane(idx)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    pub fn unit(self) -> (f64, f64) {
        match self {
            Heading::East => (1.0, 0.0),
            Heading::North => (0.0, 1.0),
            Heading::West => (-1.0, 0.0),
            Heading::South => (0.0, -1.0),
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heading::East => "E",
            Heading::North => "N",
            Heading::West => "W",
            Heading::South => "S",
        })
    }
}

impl FromStr for Heading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" => Ok(Heading::East),
            "N" => Ok(Heading::North),
            "W" => Ok(Heading::West),
            "S" => Ok(Heading::South),
            _ => Err(Error::Parse(format!("heading {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: NodeId,
    pub pos: Point,
    pub street: Street,
    pub heading: Heading,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaParams {
    pub cell_len_m: f64,
    pub v_max_cells: u32,
    pub slowdown_prob: f64,
    pub step_s: f64,
}

impl Default for CaParams {
    fn default() -> Self {
        CaParams {
            cell_len_m: 5.0,
            v_max_cells: 3,
            slowdown_prob: 0.2,
            step_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    UniformOnStreets,
    CaWarmed,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::UniformOnStreets => "uniform_on_streets",
            Placement::CaWarmed => "ca_warmed",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_on_streets" | "uniform" => Ok(Placement::UniformOnStreets),
            "ca_warmed" | "ca" => Ok(Placement::CaWarmed),
            _ => Err(Error::Parse(format!("placement mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrbanConfig {
    pub area_km2: f64,
    pub block_size_m: f64,
    pub density_veh_km2: f64,
    pub ca: CaParams,
    pub placement: Placement,
    pub warmup_s: f64,
}

impl UrbanConfig {
    pub fn new(area_km2: f64, density_veh_km2: f64) -> Self {
        UrbanConfig {
            area_km2,
            block_size_m: 125.0,
            density_veh_km2,
            ca: CaParams::default(),
            placement: Placement::CaWarmed,
            warmup_s: 900.0,
        }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.area_km2 > 0.0 && self.area_km2.is_finite()) {
            return bad(format!("area_km2 must be positive, got {}", self.area_km2));
        }
        if !(self.density_veh_km2 >= 0.0 && self.density_veh_km2.is_finite()) {
            return bad(format!("density must be non-negative, got {}", self.density_veh_km2));
        }
        if !(self.block_size_m > 0.0) {
            return bad("block_size_m must be positive".into());
        }
        let ca = &self.ca;
        if !(ca.cell_len_m > 0.0) || ca.v_max_cells == 0 || !(ca.step_s > 0.0) {
            return bad("cell length, v_max and step must be positive".into());
        }
        if !(0.0..=1.0).contains(&ca.slowdown_prob) {
            return bad(format!("slowdown_prob {} outside [0, 1]", ca.slowdown_prob));
        }
        let ratio = self.block_size_m / ca.cell_len_m;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("block size must be a whole number of cells".into());
        }
        if !(self.warmup_s >= 0.0) {
            return bad("warmup_s must be non-negative".into());
        }
        Ok(())
    }

    pub fn vehicle_count(&self) -> usize {
        (self.density_veh_km2 * self.area_km2).round() as usize
    }

    pub fn grid(&self) -> Result<UrbanGrid> {
        self.validate()?;
        let nominal_side = self.area_km2.sqrt() * 1000.0;
        let blocks = ((nominal_side / self.block_size_m).round() as u32).max(1);
        Ok(UrbanGrid {
            block_m: self.block_size_m,
            blocks,
            side_m: blocks as f64 * self.block_size_m,
            cell_len_m: self.ca.cell_len_m,
            cells_per_block: (self.block_size_m / self.ca.cell_len_m).round() as u32,
        })
    }
}

/// Resolved Manhattan-grid geometry: `blocks + 1` lines per axis spanning
/// `[0, side_m]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UrbanGrid {
    pub block_m: f64,
    pub blocks: u32,
    pub side_m: f64,
    pub cell_len_m: f64,
    pub cells_per_block: u32,
}

impl UrbanGrid {
    pub fn lines_per_axis(&self) -> u32 {
        self.blocks + 1
    }

    pub fn cells_per_lane(&self) -> u32 {
        self.blocks * self.cells_per_block + 1
    }

    pub fn lane_count(&self) -> usize {
        2 * 2 * self.lines_per_axis() as usize
    }

    pub fn total_cells(&self) -> usize {
        self.lane_count() * self.cells_per_lane() as usize
    }

    pub fn total_street_length_m(&self) -> f64 {
        2.0 * self.lines_per_axis() as f64 * self.side_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighwayConfig {
    pub length_km: f64,
    pub density_veh_km: f64,
    pub lanes: u32,
}

impl HighwayConfig {
    pub fn new(length_km: f64, density_veh_km: f64) -> Self {
        HighwayConfig {
            length_km,
            density_veh_km,
            lanes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0 && self.length_km.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "length_km must be positive, got {}",
                self.length_km
            )));
        }
        if !(self.density_veh_km >= 0.0 && self.density_veh_km.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "density must be non-negative, got {}",
                self.density_veh_km
            )));
        }
        if self.lanes == 0 {
            return Err(Error::InvalidConfig("at least one lane required".into()));
        }
        Ok(())
    }

    pub fn expected_count(&self) -> f64 {
        self.density_veh_km * self.length_km
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Urban(UrbanConfig),
    Highway(HighwayConfig),
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Urban(_) => "urban",
            Topology::Highway(_) => "highway",
        }
    }

    pub fn density(&self) -> f64 {
        match self {
            Topology::Urban(c) => c.density_veh_km2,
            Topology::Highway(c) => c.density_veh_km,
        }
    }

    /// Area in km² for urban maps, length in km for highways.
    pub fn scale_param(&self) -> f64 {
        match self {
            Topology::Urban(c) => c.area_km2,
            Topology::Highway(c) => c.length_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_s: f64,
    pub seed: u64,
    pub vehicles: Vec<VehicleState>,
    pub topology: Topology,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Map extent `(width_m, height_m)`.
    pub fn bounds(&self) -> Result<(f64, f64)> {
        Ok(match &self.topology {
            Topology::Urban(c) => {
                let g = c.grid()?;
                (g.side_m, g.side_m)
            }
            Topology::Highway(c) => (
                c.length_km * 1000.0,
                (c.lanes.saturating_sub(1)) as f64 * LANE_WIDTH_M,
            ),
        })
    }

    /// Unique ids and every position inside the map.
    pub fn check_well_formed(&self) -> Result<()> {
        let (w, h) = self.bounds()?;
        let mut ids: Vec<NodeId> = self.vehicles.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidConfig("duplicate vehicle id".into()));
        }
        let eps = ON_GRID_TOLERANCE_M;
        for v in &self.vehicles {
            if v.pos.x < -eps || v.pos.x > w + eps || v.pos.y < -eps || v.pos.y > h + eps {
                return Err(Error::InvalidConfig(format!("vehicle {} out of bounds", v.id)));
            }
        }
        Ok(())
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn generate_urban(config: &UrbanConfig, seed: u64) -> Result<Snapshot> {
    let grid = config.grid()?;
    let n = config.vehicle_count();
    if n > grid.total_cells() {
        return Err(Error::Capacity {
            vehicles: n,
            cells: grid.total_cells(),
        });
    }
    let mut rng = rng_from_seed(seed);
    match config.placement {
        Placement::UniformOnStreets => {
            let lines = grid.lines_per_axis();
            let vehicles = (0..n as NodeId)
                .map(|id| {
                    let line = rng.gen_range(0..2 * lines);
                    let along = rng.gen_range(0.0..=grid.side_m);
                    let forward: bool = rng.gen();
                    let (pos, street, heading) = if line < lines {
                        let y = line as f64 * grid.block_m;
                        let h = if forward { Heading::East } else { Heading::West };
                        (Point::new(along, y), Street::Horizontal(line), h)
                    } else {
                        let l = line - lines;
                        let x = l as f64 * grid.block_m;
                        let h = if forward { Heading::North } else { Heading::South };
                        (Point::new(x, along), Street::Vertical(l), h)
                    };
                    VehicleState {
                        id,
                        pos,
                        street,
                        heading,
                        speed_mps: 0.0,
                    }
                })
                .collect();
            Ok(Snapshot {
                time_s: 0.0,
                seed,
                vehicles,
                topology: Topology::Urban(config.clone()),
            })
        }
        Placement::CaWarmed => {
            let mut world = CaWorld::random(grid, config.ca, n, &mut rng);
            let steps = (config.warmup_s / config.ca.step_s).round() as u64;
            for _ in 0..steps {
                world.step(&mut rng);
            }
            Ok(world.to_snapshot(steps as f64 * config.ca.step_s, seed, config))
        }
    }
}

/// Advance a CA-mode snapshot by one automaton step.
pub fn step_urban<R: Rng + ?Sized>(
    snapshot: &Snapshot,
    config: &UrbanConfig,
    rng: &mut R,
) -> Result<Snapshot> {
    let mut world = CaWorld::from_snapshot(snapshot, config)?;
    world.step(rng);
    Ok(world.to_snapshot(snapshot.time_s + config.ca.step_s, snapshot.seed, config))
}

pub fn generate_highway(config: &HighwayConfig, seed: u64) -> Result<Snapshot> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let length_m = config.length_km * 1000.0;
    let mut vehicles = Vec::new();
    if config.density_veh_km > 0.0 {
        let gaps = Exp::new(config.density_veh_km / 1000.0)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut x = 0.0;
        loop {
            x += gaps.sample(&mut rng);
            if x > length_m {
                break;
            }
            let lane = rng.gen_range(0..config.lanes);
            vehicles.push(VehicleState {
                id: vehicles.len() as NodeId,
                pos: Point::new(x, lane as f64 * LANE_WIDTH_M),
                street: Street::Lane(lane),
                heading: Heading::East,
                speed_mps: 0.0,
            });
        }
    }
    Ok(Snapshot {
        time_s: 0.0,
        seed,
        vehicles,
        topology: Topology::Highway(*config),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lane {
    vertical: bool,
    line: u32,
    forward: bool,
}

#[derive(Debug, Clone, Copy)]
struct Car {
    id: NodeId,
    lane: Lane,
    cell: u32,
    speed: u32,
}

const EMPTY: u32 = u32::MAX;

/// Cellular-automaton state of an urban grid.
#[derive(Debug, Clone)]
pub struct CaWorld {
    grid: UrbanGrid,
    params: CaParams,
    cars: Vec<Car>,
    occupancy: Vec<u32>,
    order: Vec<usize>,
}

impl CaWorld {
    fn empty(grid: UrbanGrid, params: CaParams) -> Self {
        CaWorld {
            grid,
            params,
            cars: Vec::new(),
            occupancy: vec![EMPTY; grid.total_cells()],
            order: Vec::new(),
        }
    }

    fn lane_index(&self, lane: Lane) -> usize {
        let axis = lane.vertical as usize;
        ((axis * self.grid.lines_per_axis() as usize + lane.line as usize) * 2)
            + lane.forward as usize
    }

    fn lane_from_index(&self, idx: usize) -> Lane {
        let lines = self.grid.lines_per_axis() as usize;
        let forward = idx % 2 == 1;
        let rest = idx / 2;
        Lane {
            vertical: rest >= lines,
            line: (rest % lines) as u32,
            forward,
        }
    }

    fn slot(&self, lane: Lane, cell: u32) -> usize {
        self.lane_index(lane) * self.grid.cells_per_lane() as usize + cell as usize
    }

    /// Place `n` vehicles on distinct random cells at rest.
    pub fn random<R: Rng + ?Sized>(grid: UrbanGrid, params: CaParams, n: usize, rng: &mut R) -> Self {
        let mut world = CaWorld::empty(grid, params);
        let per_lane = grid.cells_per_lane() as usize;
        let mut slots = index::sample(rng, grid.total_cells(), n).into_vec();
        slots.sort_unstable();
        for (id, slot) in slots.into_iter().enumerate() {
            let lane = world.lane_from_index(slot / per_lane);
            world.insert(Car {
                id: id as NodeId,
                lane,
                cell: (slot % per_lane) as u32,
                speed: 0,
            });
        }
        world
    }

    fn insert(&mut self, car: Car) {
        let slot = self.slot(car.lane, car.cell);
        self.occupancy[slot] = self.cars.len() as u32;
        self.order.push(self.cars.len());
        self.cars.push(car);
    }

    pub fn from_snapshot(snapshot: &Snapshot, config: &UrbanConfig) -> Result<Self> {
        let grid = config.grid()?;
        let mut world = CaWorld::empty(grid, config.ca);
        let cell_of = |coord: f64| -> Result<u32> {
            let c = coord / grid.cell_len_m;
            if (c - c.round()).abs() * grid.cell_len_m > ON_GRID_TOLERANCE_M
                || c.round() < 0.0
                || c.round() as u32 >= grid.cells_per_lane()
            {
                return Err(Error::InvalidConfig(format!("coordinate {coord} is not a cell")));
            }
            Ok(c.round() as u32)
        };
        for v in &snapshot.vehicles {
            let (lane, along, across) = match (v.street, v.heading) {
                (Street::Horizontal(line), Heading::East | Heading::West) => (
                    Lane { vertical: false, line, forward: v.heading == Heading::East },
                    v.pos.x,
                    v.pos.y,
                ),
                (Street::Vertical(line), Heading::North | Heading::South) => (
                    Lane { vertical: true, line, forward: v.heading == Heading::North },
                    v.pos.y,
                    v.pos.x,
                ),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "vehicle {} is not on an urban lane",
                        v.id
                    )))
                }
            };
            if lane.line >= grid.lines_per_axis()
                || (across - lane.line as f64 * grid.block_m).abs() > ON_GRID_TOLERANCE_M
            {
                return Err(Error::InvalidConfig(format!("vehicle {} off its street", v.id)));
            }
            let cell = cell_of(along)?;
            if world.occupancy[world.slot(lane, cell)] != EMPTY {
                return Err(Error::InvalidConfig(format!("vehicle {} shares a cell", v.id)));
            }
            let speed = (v.speed_mps * config.ca.step_s / grid.cell_len_m).round() as u32;
            world.insert(Car {
                id: v.id,
                lane,
                cell,
                speed: speed.min(config.ca.v_max_cells),
            });
        }
        Ok(world)
    }

    fn is_intersection(&self, cell: u32) -> bool {
        cell % self.grid.cells_per_block == 0
    }

    fn advance(&self, lane: Lane, cell: u32) -> u32 {
        let n = self.grid.cells_per_lane();
        if lane.forward {
            (cell + 1) % n
        } else {
            (cell + n - 1) % n
        }
    }

    /// Next cell along the path; at an intersection the vehicle goes
    /// straight or turns onto the crossing street, uniformly (no U-turns).
    fn next_cell<R: Rng + ?Sized>(&self, lane: Lane, cell: u32, rng: &mut R) -> (Lane, u32) {
        if !self.is_intersection(cell) {
            return (lane, self.advance(lane, cell));
        }
        match rng.gen_range(0..3u8) {
            0 => (lane, self.advance(lane, cell)),
            choice => {
                let crossing = Lane {
                    vertical: !lane.vertical,
                    line: cell / self.grid.cells_per_block,
                    forward: choice == 1,
                };
                let entry = lane.line * self.grid.cells_per_block;
                (crossing, self.advance(crossing, entry))
            }
        }
    }

    /// One Nagel-Schreckenberg update in random sequential order:
    /// accelerate, brake to the free path, randomly slow down, move.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        use rand::seq::SliceRandom;
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(rng);
        let mut path: Vec<(Lane, u32)> = Vec::with_capacity(self.params.v_max_cells as usize);
        for &i in &order {
            let car = self.cars[i];
            let target = (car.speed + 1).min(self.params.v_max_cells);
            path.clear();
            let (mut lane, mut cell) = (car.lane, car.cell);
            for _ in 0..target {
                let (nl, nc) = self.next_cell(lane, cell, rng);
                if self.occupancy[self.slot(nl, nc)] != EMPTY {
                    break;
                }
                path.push((nl, nc));
                lane = nl;
                cell = nc;
            }
            let mut v = path.len();
            if rng.gen::<f64>() < self.params.slowdown_prob {
                v = v.saturating_sub(1);
            }
            if v > 0 {
                let (nl, nc) = path[v - 1];
                let old = self.slot(car.lane, car.cell);
                self.occupancy[old] = EMPTY;
                let new = self.slot(nl, nc);
                self.occupancy[new] = i as u32;
                self.cars[i].lane = nl;
                self.cars[i].cell = nc;
            }
            self.cars[i].speed = v as u32;
        }
        self.order = order;
    }

    pub fn len(&self) -> usize {
        self.cars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cars.is_empty()
    }

    pub fn grid(&self) -> &UrbanGrid {
        &self.grid
    }

    /// Vehicle states ordered by id.
    pub fn vehicles(&self) -> Vec<VehicleState> {
        let mut out: Vec<VehicleState> = self.cars.iter().map(|c| self.state_of(c)).collect();
        out.sort_by_key(|v| v.id);
        out
    }

    fn state_of(&self, car: &Car) -> VehicleState {
        let along = car.cell as f64 * self.grid.cell_len_m;
        let across = car.lane.line as f64 * self.grid.block_m;
        let (pos, street, heading) = if car.lane.vertical {
            let h = if car.lane.forward { Heading::North } else { Heading::South };
            (Point::new(across, along), Street::Vertical(car.lane.line), h)
        } else {
            let h = if car.lane.forward { Heading::East } else { Heading::West };
            (Point::new(along, across), Street::Horizontal(car.lane.line), h)
        };
        VehicleState {
            id: car.id,
            pos,
            street,
            heading,
            speed_mps: car.speed as f64 * self.grid.cell_len_m / self.params.step_s,
        }
    }

    pub fn to_snapshot(&self, time_s: f64, seed: u64, config: &UrbanConfig) -> Snapshot {
        Snapshot {
            time_s,
            seed,
            vehicles: self.vehicles(),
            topology: Topology::Urban(config.clone()),
        }
    }

    /// Number of occupied cells; equals `len()` whenever no two vehicles
    /// share a cell.
    pub fn occupied_cells(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o != EMPTY).count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRow {
    id: NodeId,
    x_m: f64,
    y_m: f64,
    street: String,
    heading: String,
    speed_mps: f64,
}

pub fn write_snapshot_csv<W: Write>(snapshot: &Snapshot, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in &snapshot.vehicles {
        w.serialize(SnapshotRow {
            id: v.id,
            x_m: v.pos.x,
            y_m: v.pos.y,
            street: v.street.to_string(),
            heading: v.heading.to_string(),
            speed_mps: v.speed_mps,
        })?;
    }
    if snapshot.vehicles.is_empty() {
        w.write_record(["id", "x_m", "y_m", "street", "heading", "speed_mps"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_csv<R: Read>(input: R) -> Result<Vec<VehicleState>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: SnapshotRow = row?;
        out.push(VehicleState {
            id: row.id,
            pos: Point::new(row.x_m, row.y_m),
            street: row.street.parse()?,
            heading: row.heading.parse()?,
            speed_mps: row.speed_mps,
        });
    }
    Ok(out)
}

/// Sidecar `key=value` description of the snapshot's generating setup.
pub fn sidecar_text(snapshot: &Snapshot) -> String {
    let mut kv: Vec<(&str, String)> = vec![("topology", snapshot.topology.name().to_string())];
    match &snapshot.topology {
        Topology::Urban(c) => {
            kv.push(("area_km2", c.area_km2.to_string()));
            kv.push(("block_size_m", c.block_size_m.to_string()));
            kv.push(("density", c.density_veh_km2.to_string()));
            kv.push(("placement", c.placement.to_string()));
            kv.push(("cell_len_m", c.ca.cell_len_m.to_string()));
            kv.push(("v_max_cells", c.ca.v_max_cells.to_string()));
            kv.push(("slowdown_prob", c.ca.slowdown_prob.to_string()));
            kv.push(("step_s", c.ca.step_s.to_string()));
            kv.push(("warmup_s", c.warmup_s.to_string()));
        }
        Topology::Highway(c) => {
            kv.push(("length_km", c.length_km.to_string()));
            kv.push(("density", c.density_veh_km.to_string()));
            kv.push(("lanes", c.lanes.to_string()));
        }
    }
    kv.push(("seed", snapshot.seed.to_string()));
    kv.push(("time_s", snapshot.time_s.to_string()));
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parse flat `key=value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", no + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn topology_from_sidecar(kv: &BTreeMap<String, String>) -> Result<(Topology, u64, f64)> {
    fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
        kv.get(key)
            .ok_or_else(|| Error::Parse(format!("missing key {key}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad value for {key}")))
    }
    let topology = match kv.get("topology").map(String::as_str) {
        Some("urban") => Topology::Urban(UrbanConfig {
            area_km2: get(kv, "area_km2")?,
            block_size_m: get(kv, "block_size_m")?,
            density_veh_km2: get(kv, "density")?,
            ca: CaParams {
                cell_len_m: get(kv, "cell_len_m")?,
                v_max_cells: get(kv, "v_max_cells")?,
                slowdown_prob: get(kv, "slowdown_prob")?,
                step_s: get(kv, "step_s")?,
            },
            placement: get::<String>(kv, "placement")?.parse()?,
            warmup_s: get(kv, "warmup_s")?,
        }),
        Some("highway") => Topology::Highway(HighwayConfig {
            length_km: get(kv, "length_km")?,
            density_veh_km: get(kv, "density")?,
            lanes: get(kv, "lanes")?,
        }),
        other => return Err(Error::Parse(format!("unknown topology {other:?}"))),
    };
    Ok((topology, get(kv, "seed")?, get(kv, "time_s")?))
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("cfg")
}

/// Write `<path>` (vehicle CSV) and its `.cfg` sidecar.
pub fn save_snapshot(snapshot: &Snapshot, csv_path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_snapshot_csv(snapshot, &mut buf)?;
    fs::write(csv_path, buf)?;
    fs::write(sidecar_path(csv_path), sidecar_text(snapshot))?;
    Ok(())
}

pub fn load_snapshot(csv_path: &Path) -> Result<Snapshot> {
    let vehicles = read_snapshot_csv(fs::File::open(csv_path)?)?;
    let kv = parse_key_values(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let (topology, seed, time_s) = topology_from_sidecar(&kv)?;
    let snapshot = Snapshot {
        time_s,
        seed,
        vehicles,
        topology,
    };
    snapshot.check_well_formed()?;
    Ok(snapshot)
}
