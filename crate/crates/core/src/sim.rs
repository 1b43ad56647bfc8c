//! Seeded discrete-event simulation of warning dissemination over a mobile
//! urban grid.
//!
//! Each run warms the traffic automaton up, lets one vehicle near the centre
//! of the region of interest originate a message and then processes beacons,
//! receptions, timers and mobility steps in a fixed total order. Receptions
//! are instantaneous and lossless to every current one-hop neighbour.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::comm_graph::{build_graph_from_points, CommGraph, LinkScenario, RangeModel, SpatialIndex};
use crate::error::{Error, Result};
use crate::scenario::{CaWorld, NodeId, Point, UrbanConfig};
use crate::uvcast::{
    duplicate_statistics, Action, Ctx, MessageId, ProtocolParams, Roi, TraceEvent,
    VehicleProtocolState, WarningMessage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Baseline,
    POnly,
    SOnly,
    PAndS,
    FloodingOracle,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Baseline,
        Mechanism::POnly,
        Mechanism::SOnly,
        Mechanism::PAndS,
        Mechanism::FloodingOracle,
    ];

    /// `(enable_p, enable_s)`; the oracle uses neither.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Mechanism::POnly => (true, false),
            Mechanism::SOnly => (false, true),
            Mechanism::PAndS => (true, true),
            Mechanism::Baseline | Mechanism::FloodingOracle => (false, false),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Baseline => "baseline",
            Mechanism::POnly => "p_only",
            Mechanism::SOnly => "s_only",
            Mechanism::PAndS => "p_and_s",
            Mechanism::FloodingOracle => "flooding_oracle",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => Mechanism::Baseline,
            "p" | "p_only" => Mechanism::POnly,
            "s" | "s_only" => Mechanism::SOnly,
            "ps" | "p_and_s" => Mechanism::PAndS,
            "oracle" | "flooding_oracle" => Mechanism::FloodingOracle,
            _ => return Err(Error::Parse(format!("mechanism {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: UrbanConfig,
    pub range: RangeModel,
    pub protocol: ProtocolParams,
    pub warmup_s: f64,
    pub collect_s: f64,
    pub runs: usize,
    pub base_seed: u64,
    /// Vehicles keep their initial cells for the whole run.
    pub static_mobility: bool,
}

impl SimConfig {
    /// A square region of interest of `roi_side_m` surrounded by one block of
    /// map on every side, populated at `density_veh_km2`.
    pub fn urban(density_veh_km2: f64, roi_side_m: f64) -> Self {
        let block = 125.0;
        let side = roi_side_m + 2.0 * block;
        let scenario = UrbanConfig::new(side * side / 1e6, density_veh_km2);
        let range = RangeModel::default();
        let protocol = ProtocolParams {
            relay_range_m: range.los_range_m,
            roi: Roi {
                x_min: block,
                y_min: block,
                side_m: roi_side_m,
            },
            ..ProtocolParams::default()
        };
        SimConfig {
            scenario,
            range,
            protocol,
            warmup_s: 900.0,
            collect_s: 120.0,
            runs: 10,
            base_seed: 1,
            static_mobility: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.range.validate()?;
        self.protocol.validate()?;
        if !(self.warmup_s > 0.0) || !(self.collect_s > 0.0) {
            return Err(Error::InvalidConfig("warmup_s and collect_s must be positive".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed_of(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub reachability: f64,
    pub avg_received_distance_m: f64,
    pub avg_msgs_received: f64,
    pub avg_msgs_transmitted: f64,
    pub mean_duplicates: f64,
    /// Vehicles inside the region at some point during collection.
    pub population: usize,
    pub informed: usize,
    /// Size of the source's component at origination over all vehicles.
    pub source_component_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceEvent>,
    pub source: NodeId,
    /// Link-layer deliveries, including to receivers outside the region.
    pub deliveries: u64,
    /// Sum over transmissions of the transmitter's neighbour count.
    pub neighbors_at_tx: u64,
    pub transmissions: u64,
    pub informed_vehicles: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation; `std` is 0 for a single value.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub mechanism: Mechanism,
    pub density: f64,
    pub per_run: Vec<RunMetrics>,
    /// Seeds of runs with no vehicle inside the region at origination.
    pub discarded_seeds: Vec<u64>,
    pub reachability: Stat,
    pub avg_received_distance_m: Stat,
    pub avg_msgs_received: Stat,
    pub avg_msgs_transmitted: Stat,
    pub mean_duplicates: Stat,
}

impl SimMetrics {
    pub fn from_runs(mechanism: Mechanism, density: f64, per_run: Vec<RunMetrics>, discarded_seeds: Vec<u64>) -> Self {
        let stat = |f: fn(&RunMetrics) -> f64| Stat::of(&per_run.iter().map(f).collect::<Vec<_>>());
        SimMetrics {
            mechanism,
            density,
            reachability: stat(|r| r.reachability),
            avg_received_distance_m: stat(|r| r.avg_received_distance_m),
            avg_msgs_received: stat(|r| r.avg_msgs_received),
            avg_msgs_transmitted: stat(|r| r.avg_msgs_transmitted),
            mean_duplicates: stat(|r| r.mean_duplicates),
            per_run,
            discarded_seeds,
        }
    }
}

pub fn run_simulation(config: &SimConfig, mechanism: Mechanism) -> Result<SimMetrics> {
    config.validate()?;
    let outcomes: Vec<(u64, Option<RunOutcome>)> = (0..config.runs)
        .into_par_iter()
        .map(|run| run_once(config, mechanism, run).map(|o| (config.seed_of(run), o)))
        .collect::<Result<_>>()?;
    let mut per_run = Vec::new();
    let mut discarded = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Some(o) => per_run.push(o.metrics),
            None => discarded.push(seed),
        }
    }
    Ok(SimMetrics::from_runs(
        mechanism,
        config.scenario.density_veh_km2,
        per_run,
        discarded,
    ))
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_BEACON: u64 = 4;
/// Vehicle `v` draws protocol decisions from stream `STREAM_PROTOCOL_BASE + v`.
const STREAM_PROTOCOL_BASE: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One run with CA placement. `None` when the run is discarded.
pub fn run_once(config: &SimConfig, mechanism: Mechanism, run: usize) -> Result<Option<RunOutcome>> {
    config.validate()?;
    let seed = config.seed_of(run);
    let grid = config.scenario.grid()?;
    let n = config.scenario.vehicle_count();
    if n > grid.total_cells() {
        return Err(Error::Capacity {
            vehicles: n,
            cells: grid.total_cells(),
        });
    }
    let world = CaWorld::random(grid, config.scenario.ca, n, &mut stream(seed, STREAM_PLACEMENT));
    Engine::new(config, mechanism, run, seed, Mobility::Ca(Box::new(world))).run()
}

/// One run over fixed positions that never move.
pub fn run_static(
    config: &SimConfig,
    positions: &[Point],
    mechanism: Mechanism,
    run: usize,
) -> Result<Option<RunOutcome>> {
    config.validate()?;
    let seed = config.seed_of(run);
    Engine::new(config, mechanism, run, seed, Mobility::Static(positions.to_vec())).run()
}

enum Mobility {
    Ca(Box<CaWorld>),
    Static(Vec<Point>),
}

impl Mobility {
    fn positions(&self) -> Vec<Point> {
        match self {
            Mobility::Ca(w) => w.vehicles().into_iter().map(|v| v.pos).collect(),
            Mobility::Static(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Mobility,
    Beacon,
    Originate,
    Timer(MessageId),
    Echo(MessageId),
    End,
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::Mobility => 0,
            EventKind::Beacon => 1,
            EventKind::Originate => 2,
            EventKind::Timer(_) => 3,
            EventKind::Echo(_) => 4,
            EventKind::End => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time_us: u64,
    vehicle: NodeId,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u8, NodeId, u64) {
        (self.time_us, self.kind.rank(), self.vehicle, self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn to_us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

const MSG: MessageId = 0;

struct Engine<'a> {
    config: &'a SimConfig,
    params: ProtocolParams,
    mechanism: Mechanism,
    run: usize,
    seed: u64,
    mobility: Mobility,
    scenario: LinkScenario,
    positions: Vec<Point>,
    index: SpatialIndex,
    in_roi: Vec<bool>,
    ever_in_roi: Vec<bool>,
    states: Vec<VehicleProtocolState>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    trace: Vec<TraceEvent>,
    mobility_rng: ChaCha8Rng,
    protocol_rngs: Vec<ChaCha8Rng>,
    t0_us: u64,
    end_us: u64,
    collecting: bool,
    source: Option<NodeId>,
    origin: Point,
    deliveries: u64,
    neighbors_at_tx: u64,
    transmissions: u64,
    source_component_fraction: f64,
    // flooding oracle bookkeeping
    oracle_informed_pos: Vec<Option<Point>>,
    oracle_tx: Vec<u32>,
    oracle_rx: Vec<u32>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, mechanism: Mechanism, run: usize, seed: u64, mobility: Mobility) -> Self {
        let (enable_p, enable_s) = mechanism.flags();
        let params = config.protocol.with_mechanisms(enable_p, enable_s);
        let scenario = LinkScenario::Urban {
            block_m: config.scenario.block_size_m,
        };
        let positions = mobility.positions();
        let n = positions.len();
        let index = SpatialIndex::new(&positions, config.range.max_range(scenario));
        let in_roi = positions.iter().map(|p| params.roi.contains(p)).collect();
        let t0_us = to_us(config.warmup_s);
        Engine {
            config,
            params,
            mechanism,
            run,
            seed,
            mobility,
            scenario,
            positions,
            index,
            in_roi,
            ever_in_roi: vec![false; n],
            states: vec![VehicleProtocolState::new(); n],
            queue: BinaryHeap::new(),
            seq: 0,
            trace: Vec::new(),
            mobility_rng: stream(seed, STREAM_MOBILITY),
            protocol_rngs: (0..n as u64).map(|v| stream(seed, STREAM_PROTOCOL_BASE + v)).collect(),
            t0_us,
            end_us: t0_us + to_us(config.collect_s),
            collecting: false,
            source: None,
            origin: Point::default(),
            deliveries: 0,
            neighbors_at_tx: 0,
            transmissions: 0,
            source_component_fraction: 0.0,
            oracle_informed_pos: vec![None; n],
            oracle_tx: vec![0; n],
            oracle_rx: vec![0; n],
        }
    }

    fn push(&mut self, time_us: u64, vehicle: NodeId, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time_us,
            vehicle,
            seq: self.seq,
            kind,
        }));
    }

    fn is_oracle(&self) -> bool {
        self.mechanism == Mechanism::FloodingOracle
    }

    fn run(mut self) -> Result<Option<RunOutcome>> {
        let step_us = to_us(self.config.scenario.ca.step_s);
        let moving = matches!(self.mobility, Mobility::Ca(_)) && !self.config.static_mobility;
        if moving && step_us > 0 {
            self.push(step_us, 0, EventKind::Mobility);
        }
        if !self.is_oracle() {
            let interval = self.params.beacon_interval_s;
            let mut phase_rng = stream(self.seed, STREAM_BEACON);
            for v in 0..self.positions.len() as NodeId {
                let phase = phase_rng.gen_range(0.0..interval);
                self.push(to_us(phase), v, EventKind::Beacon);
            }
        }
        self.push(self.t0_us, 0, EventKind::Originate);
        self.push(self.end_us, 0, EventKind::End);

        while let Some(Reverse(ev)) = self.queue.pop() {
            let now = ev.time_us as f64 / 1e6;
            match ev.kind {
                EventKind::Mobility => {
                    self.step_mobility();
                    if ev.time_us + step_us <= self.end_us {
                        self.push(ev.time_us + step_us, 0, EventKind::Mobility);
                    }
                }
                EventKind::Beacon => {
                    self.beacon(ev.vehicle, now);
                    let next = ev.time_us + to_us(self.params.beacon_interval_s);
                    if next <= self.end_us {
                        self.push(next, ev.vehicle, EventKind::Beacon);
                    }
                }
                EventKind::Originate => {
                    if !self.originate(now) {
                        return Ok(None);
                    }
                }
                EventKind::Timer(msg) => self.timer(ev.vehicle, msg, now),
                EventKind::Echo(msg) => self.echo(ev.vehicle, msg, now),
                EventKind::End => break,
            }
        }
        Ok(Some(self.finish()))
    }

    fn step_mobility(&mut self) {
        if let Mobility::Ca(world) = &mut self.mobility {
            world.step(&mut self.mobility_rng);
        }
        self.positions = self.mobility.positions();
        self.index = SpatialIndex::new(&self.positions, self.config.range.max_range(self.scenario));
        for (flag, p) in self.in_roi.iter_mut().zip(&self.positions) {
            *flag = self.params.roi.contains(p);
        }
        if self.collecting {
            self.mark_population();
            if self.is_oracle() {
                self.oracle_flood();
            }
        }
    }

    fn mark_population(&mut self) {
        for (ever, &now) in self.ever_in_roi.iter_mut().zip(&self.in_roi) {
            *ever |= now;
        }
    }

    fn at_intersection(&self, p: &Point) -> bool {
        let b = self.config.scenario.block_size_m;
        let zone = self.config.range.intersection_zone_m;
        let near = |c: f64| (c - (c / b).round() * b).abs() <= zone;
        near(p.x) && near(p.y)
    }

    fn neighbors(&self, v: NodeId) -> Vec<NodeId> {
        self.index.neighbors(&self.positions, v, &self.config.range, self.scenario)
    }

    fn schedule(&mut self, v: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Timer { msg_id, at } => self.push(to_us(at), v, EventKind::Timer(msg_id)),
                Action::EchoCheck { msg_id, at } => self.push(to_us(at), v, EventKind::Echo(msg_id)),
            }
        }
    }

    /// Split borrow of one vehicle's state alongside the trace and rng.
    fn with_state<T>(
        &mut self,
        v: NodeId,
        now: f64,
        f: impl FnOnce(&mut VehicleProtocolState, bool, &mut Ctx<'_>, &ProtocolParams, &mut ChaCha8Rng) -> T,
    ) -> T {
        let pos = self.positions[v as usize];
        let at_intersection = self.at_intersection(&pos);
        let in_roi = self.in_roi[v as usize];
        let mut ctx = Ctx {
            now,
            vehicle: v,
            pos,
            at_intersection,
            trace: &mut self.trace,
        };
        f(&mut self.states[v as usize], in_roi, &mut ctx, &self.params, &mut self.protocol_rngs[v as usize])
    }

    fn transmit(&mut self, v: NodeId, msg: WarningMessage, now: f64) {
        let nbrs = self.neighbors(v);
        self.transmissions += 1;
        self.neighbors_at_tx += nbrs.len() as u64;
        for u in nbrs {
            self.deliveries += 1;
            let actions = self.with_state(u, now, |st, in_roi, ctx, params, rng| {
                st.on_receive(&msg, in_roi, ctx, params, rng)
            });
            self.schedule(u, actions);
        }
    }

    fn beacon(&mut self, v: NodeId, now: f64) {
        let params = self.params;
        self.states[v as usize].on_beacon_epoch(now, &params);
        for u in self.neighbors(v) {
            let carried = self.with_state(u, now, |st, in_roi, ctx, params, _| {
                st.on_beacon_heard(v, in_roi, ctx, params)
            });
            for msg in carried {
                self.transmit(u, msg, now);
            }
        }
    }

    fn originate(&mut self, now: f64) -> bool {
        self.collecting = true;
        self.mark_population();
        let center = self.params.roi.center();
        let source = (0..self.positions.len())
            .filter(|&i| self.in_roi[i])
            .min_by(|&a, &b| {
                let da = self.positions[a].dist(&center);
                let db = self.positions[b].dist(&center);
                da.total_cmp(&db).then(a.cmp(&b))
            });
        let Some(source) = source else {
            return false;
        };
        let source = source as NodeId;
        self.source = Some(source);
        self.origin = self.positions[source as usize];
        let graph = self.graph();
        self.source_component_fraction =
            graph.component_size_of(source) as f64 / graph.n() as f64;
        if self.is_oracle() {
            self.oracle_informed_pos[source as usize] = Some(self.origin);
            self.oracle_flood_on(&graph);
            return true;
        }
        let msg = WarningMessage::new(MSG, self.origin, now);
        let actions = self.with_state(source, now, |st, _, ctx, params, rng| {
            st.originate(msg, ctx, params, rng)
        });
        self.schedule(source, actions);
        self.transmit(source, msg, now);
        true
    }

    fn timer(&mut self, v: NodeId, msg: MessageId, now: f64) {
        let out = self.with_state(v, now, |st, in_roi, ctx, params, rng| {
            st.on_timer_expiry(msg, in_roi, ctx, params, rng)
        });
        if let Some(m) = out {
            self.transmit(v, m, now);
        }
    }

    fn echo(&mut self, v: NodeId, msg: MessageId, now: f64) {
        self.with_state(v, now, |st, in_roi, ctx, params, rng| {
            st.on_echo_check(msg, in_roi, ctx, params, rng)
        });
    }

    fn graph(&self) -> CommGraph {
        build_graph_from_points(&self.positions, &self.config.range, self.scenario)
    }

    fn oracle_flood(&mut self) {
        let graph = self.graph();
        self.oracle_flood_on(&graph);
    }

    /// Every component holding an informed vehicle becomes informed; each
    /// newly informed vehicle transmits once to its current neighbours.
    fn oracle_flood_on(&mut self, graph: &CommGraph) {
        let mut informed: Vec<bool> = self.oracle_informed_pos.iter().map(Option::is_some).collect();
        let newly = flood_step(graph, &mut informed, &mut self.oracle_tx, &mut self.oracle_rx);
        for v in newly {
            self.oracle_informed_pos[v as usize] = Some(self.positions[v as usize]);
        }
    }

    fn finish(self) -> RunOutcome {
        let source = self.source.expect("finish runs only after origination");
        let population: Vec<usize> = (0..self.positions.len()).filter(|&i| self.ever_in_roi[i]).collect();
        let pop = population.len().max(1) as f64;
        let oracle = self.is_oracle();
        let informed_pos = |i: usize| -> Option<Point> {
            if oracle {
                self.oracle_informed_pos[i]
            } else {
                self.states[i].received.get(&MSG).map(|r| r.first_rx_pos)
            }
        };
        let informed: Vec<usize> = population.iter().copied().filter(|&i| informed_pos(i).is_some()).collect();
        let distances: Vec<f64> = informed
            .iter()
            .filter(|&&i| i != source as usize)
            .map(|&i| informed_pos(i).unwrap().dist(&self.origin))
            .collect();
        let avg_distance = if distances.is_empty() {
            0.0
        } else {
            distances.iter().sum::<f64>() / distances.len() as f64
        };
        let (rx, tx): (f64, f64) = population
            .iter()
            .map(|&i| {
                if oracle {
                    (self.oracle_rx[i] as f64, self.oracle_tx[i] as f64)
                } else {
                    (self.states[i].rx_count as f64, self.states[i].tx_count as f64)
                }
            })
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (deliveries, neighbors_at_tx, transmissions) = if oracle {
            let d: u64 = self.oracle_rx.iter().map(|&r| r as u64).sum();
            let t: u64 = self.oracle_tx.iter().map(|&t| t as u64).sum();
            (d, d, t)
        } else {
            (self.deliveries, self.neighbors_at_tx, self.transmissions)
        };
        let metrics = RunMetrics {
            run: self.run,
            seed: self.seed,
            reachability: informed.len() as f64 / pop,
            avg_received_distance_m: avg_distance,
            avg_msgs_received: rx / pop,
            avg_msgs_transmitted: tx / pop,
            mean_duplicates: if oracle { 0.0 } else { duplicate_statistics(&self.trace) },
            population: population.len(),
            informed: informed.len(),
            source_component_fraction: self.source_component_fraction,
        };
        let informed_vehicles = (0..self.positions.len())
            .filter(|&i| informed_pos(i).is_some())
            .map(|i| i as NodeId)
            .collect();
        RunOutcome {
            metrics,
            trace: self.trace,
            source,
            deliveries,
            neighbors_at_tx,
            transmissions,
            informed_vehicles,
        }
    }
}

/// Inform every component of `graph` that holds an informed vertex. Each
/// newly informed vertex transmits once; its neighbours each count one
/// reception. Returns the newly informed vertices in increasing order.
fn flood_step(graph: &CommGraph, informed: &mut [bool], tx: &mut [u32], rx: &mut [u32]) -> Vec<NodeId> {
    let mut hot = vec![false; graph.component_sizes().len()];
    for v in 0..graph.n() as NodeId {
        if informed[v as usize] {
            hot[graph.component_of(v) as usize] = true;
        }
    }
    let mut newly = Vec::new();
    for v in 0..graph.n() as NodeId {
        if hot[graph.component_of(v) as usize] && !informed[v as usize] {
            informed[v as usize] = true;
            newly.push(v);
        }
    }
    // vertices informed in an earlier step that have never transmitted
    // (the source) transmit now as well
    for v in 0..graph.n() as NodeId {
        if informed[v as usize] && tx[v as usize] == 0 {
            tx[v as usize] = 1;
            for &u in graph.neighbors(v) {
                rx[u as usize] += 1;
            }
        }
    }
    newly
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    /// Index of the first graph in which each vertex was informed.
    pub informed_at: Vec<Option<usize>>,
    pub tx: Vec<u32>,
    pub rx: Vec<u32>,
}

impl OracleOutcome {
    pub fn informed(&self) -> usize {
        self.informed_at.iter().filter(|s| s.is_some()).count()
    }

    pub fn reachability(&self) -> f64 {
        self.informed() as f64 / self.informed_at.len().max(1) as f64
    }
}

/// Lossless flood over a time-ordered sequence of graphs on the same
/// vertex set.
pub fn run_flooding_oracle(graphs: &[CommGraph], source: NodeId) -> Result<OracleOutcome> {
    let n = graphs
        .first()
        .map(CommGraph::n)
        .ok_or_else(|| Error::InsufficientData("empty graph sequence".into()))?;
    if graphs.iter().any(|g| g.n() != n) {
        return Err(Error::InvalidConfig("graphs differ in vertex count".into()));
    }
    if source as usize >= n {
        return Err(Error::InvalidConfig(format!("source {source} out of range")));
    }
    let mut informed = vec![false; n];
    let mut informed_at = vec![None; n];
    informed[source as usize] = true;
    informed_at[source as usize] = Some(0);
    let mut tx = vec![0; n];
    let mut rx = vec![0; n];
    for (step, g) in graphs.iter().enumerate() {
        for v in flood_step(g, &mut informed, &mut tx, &mut rx) {
            informed_at[v as usize] = Some(step);
        }
    }
    Ok(OracleOutcome { informed_at, tx, rx })
}

pub const RESULTS_CSV_HEADER: &str =
    "density,mechanism,run,reachability,avg_recv_dist_m,avg_msgs_rx,avg_msgs_tx";
pub const AGGREGATE_CSV_HEADER: &str = "density,mechanism,runs,discarded,reachability_mean,reachability_std,avg_recv_dist_m_mean,avg_recv_dist_m_std,avg_msgs_rx_mean,avg_msgs_rx_std,avg_msgs_tx_mean,avg_msgs_tx_std";

pub fn write_results<W: Write>(results: &[SimMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_CSV_HEADER.split(','))?;
    for m in results {
        for r in &m.per_run {
            w.write_record([
                m.density.to_string(),
                m.mechanism.to_string(),
                r.run.to_string(),
                format!("{:.6}", r.reachability),
                format!("{:.6}", r.avg_received_distance_m),
                format!("{:.6}", r.avg_msgs_received),
                format!("{:.6}", r.avg_msgs_transmitted),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate<W: Write>(results: &[SimMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_CSV_HEADER.split(','))?;
    for m in results {
        let mut row = vec![
            m.density.to_string(),
            m.mechanism.to_string(),
            m.per_run.len().to_string(),
            m.discarded_seeds.len().to_string(),
        ];
        for s in [
            m.reachability,
            m.avg_received_distance_m,
            m.avg_msgs_received,
            m.avg_msgs_transmitted,
        ] {
            row.push(format!("{:.6}", s.mean));
            row.push(format!("{:.6}", s.std));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::bfs_hops;
    use crate::uvcast::TraceKind;

    fn small(density: f64) -> SimConfig {
        let mut c = SimConfig::urban(density, 500.0);
        c.warmup_s = 60.0;
        c.collect_s = 30.0;
        c.runs = 3;
        c
    }

    /// ROI covering a 1 km static map.
    fn static_config() -> SimConfig {
        let mut c = SimConfig::urban(10.0, 1000.0);
        c.protocol.roi = Roi {
            x_min: -1.0,
            y_min: -1.0,
            side_m: 1252.0,
        };
        c.warmup_s = 5.0;
        c.collect_s = 10.0;
        c
    }

    #[test]
    fn mechanism_names() {
        for m in Mechanism::ALL {
            assert_eq!(m.to_string().parse::<Mechanism>().unwrap(), m);
        }
        assert_eq!("ps".parse::<Mechanism>().unwrap(), Mechanism::PAndS);
        assert!("q".parse::<Mechanism>().is_err());
    }

    #[test]
    fn sample_statistics() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).std, 0.0);
        assert!(Stat::of(&[]).mean.is_nan());
    }

    #[test]
    fn event_order() {
        let e = |t, kind, v, seq| Event { time_us: t, vehicle: v, seq, kind };
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(e(5, EventKind::Timer(0), 1, 1)));
        heap.push(Reverse(e(5, EventKind::Beacon, 9, 2)));
        heap.push(Reverse(e(5, EventKind::Timer(0), 0, 3)));
        heap.push(Reverse(e(4, EventKind::End, 0, 4)));
        heap.push(Reverse(e(5, EventKind::Mobility, 0, 5)));
        let order: Vec<_> = std::iter::from_fn(|| heap.pop().map(|r| (r.0.kind.rank(), r.0.vehicle))).collect();
        assert_eq!(order, [(5, 0), (0, 0), (1, 9), (3, 0), (3, 1)]);
    }

    #[test]
    fn oracle_on_connected_static_network() {
        let cfg = static_config();
        let positions: Vec<Point> = (0..10).map(|i| Point::new(500.0 + 10.0 * i as f64, 500.0)).collect();
        let out = run_static(&cfg, &positions, Mechanism::FloodingOracle, 0).unwrap().unwrap();
        assert_eq!(out.metrics.reachability, 1.0);
        assert_eq!(out.metrics.source_component_fraction, 1.0);
    }

    #[test]
    fn oracle_with_isolated_source() {
        let cfg = static_config();
        let mut positions: Vec<Point> = (0..9).map(|i| Point::new(10.0 * i as f64, 0.0)).collect();
        positions.push(cfg.protocol.roi.center());
        let out = run_static(&cfg, &positions, Mechanism::FloodingOracle, 0).unwrap().unwrap();
        assert_eq!(out.source, 9);
        assert_eq!(out.metrics.reachability, 0.1);
    }

    #[test]
    fn oracle_two_components() {
        let mut edges = vec![];
        for i in 0..5 {
            edges.push((i, i + 1));
        }
        edges.extend([(6, 7), (7, 8), (8, 9)]);
        let g = CommGraph::from_edges(10, edges);
        let out = run_flooding_oracle(&[g.clone()], 2).unwrap();
        assert_eq!(out.reachability(), 0.6);
        assert_eq!(run_flooding_oracle(&[g], 7).unwrap().reachability(), 0.4);
        // later graphs join the second component
        let g2 = CommGraph::from_edges(10, [(5, 6)]);
        let seq = [CommGraph::from_edges(10, []), g2];
        let out = run_flooding_oracle(&seq, 5).unwrap();
        assert_eq!(out.informed_at[6], Some(1));
        assert_eq!(out.informed(), 2);
        assert!(run_flooding_oracle(&[], 0).is_err());
    }

    #[test]
    fn no_vehicle_in_roi_discards() {
        let mut cfg = static_config();
        cfg.protocol.roi = Roi {
            x_min: 2000.0,
            y_min: 2000.0,
            side_m: 10.0,
        };
        let positions = vec![Point::new(0.0, 0.0), Point::new(5.0, 0.0)];
        assert!(run_static(&cfg, &positions, Mechanism::Baseline, 0).unwrap().is_none());
        cfg.runs = 2;
        cfg.scenario.density_veh_km2 = 5.0;
        let m = run_simulation(&cfg, Mechanism::Baseline).unwrap();
        assert_eq!(m.discarded_seeds, vec![cfg.base_seed, cfg.base_seed + 1]);
        assert!(m.per_run.is_empty());
    }

    #[test]
    fn static_protocol_conservation_and_containment() {
        let cfg = static_config();
        for seed in 0..5u64 {
            let snap_cfg = UrbanConfig::new(1.5625, 40.0)
                .with_placement(crate::scenario::Placement::UniformOnStreets);
            let snap = crate::scenario::generate_urban(&snap_cfg, seed).unwrap();
            let positions: Vec<Point> = snap.vehicles.iter().map(|v| v.pos).collect();
            let graph = build_graph_from_points(&positions, &cfg.range, LinkScenario::Urban { block_m: 125.0 });
            for mech in [Mechanism::Baseline, Mechanism::PAndS] {
                let out = run_static(&cfg, &positions, mech, seed as usize).unwrap().unwrap();
                let src = out.source;
                let hops = bfs_hops(&graph, src);
                for &v in &out.informed_vehicles {
                    assert!(hops[v as usize] != u32::MAX);
                }
                let tx_events: Vec<_> = out
                    .trace
                    .iter()
                    .filter(|e| matches!(e.kind, TraceKind::Tx | TraceKind::ScfTx))
                    .collect();
                assert_eq!(tx_events.len() as u64, out.transmissions);
                let expected: u64 = tx_events.iter().map(|e| graph.degree(e.vehicle) as u64).sum();
                assert_eq!(out.deliveries, expected);
                let rx = out.trace.iter().filter(|e| e.kind == TraceKind::Rx).count() as u64;
                assert_eq!(rx, out.deliveries);
                let timer_tx = out.trace.iter().filter(|e| e.kind == TraceKind::Tx).count();
                assert!(timer_tx <= positions.len());
            }
        }
    }

    #[test]
    fn deterministic_and_oracle_dominates() {
        let cfg = small(40.0);
        for run in 0..cfg.runs {
            let oracle = run_once(&cfg, Mechanism::FloodingOracle, run).unwrap().unwrap();
            for mech in [Mechanism::Baseline, Mechanism::PAndS, Mechanism::SOnly] {
                let a = run_once(&cfg, mech, run).unwrap().unwrap();
                let b = run_once(&cfg, mech, run).unwrap().unwrap();
                assert_eq!(a, b);
                assert_eq!(a.deliveries, a.neighbors_at_tx);
                assert!(a.metrics.reachability <= oracle.metrics.reachability);
                for v in &a.informed_vehicles {
                    assert!(oracle.informed_vehicles.contains(v));
                }
                assert_eq!(a.metrics.population, oracle.metrics.population);
            }
        }
    }

    #[test]
    fn baseline_ignores_protocol_stream() {
        let cfg = small(60.0);
        let a = run_once(&cfg, Mechanism::Baseline, 0).unwrap().unwrap();
        let mut inert = cfg.clone();
        inert.protocol.k_low = 0.0;
        inert.protocol.k_high = f64::INFINITY;
        let mut base_inert = inert.clone();
        let b = run_once(&inert, Mechanism::PAndS, 0).unwrap().unwrap();
        base_inert.protocol.enable_p = false;
        let c = run_once(&base_inert, Mechanism::Baseline, 0).unwrap().unwrap();
        assert_eq!(b.trace, c.trace);
        assert!(!a.trace.is_empty());
    }

    #[test]
    fn results_csv_shape() {
        let cfg = small(30.0);
        let m = run_simulation(&cfg, Mechanism::Baseline).unwrap();
        let mut buf = Vec::new();
        write_results(&[m.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + m.per_run.len());
        assert!(text.starts_with(RESULTS_CSV_HEADER));
        let mut buf = Vec::new();
        write_aggregate(&[m], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 12);
    }
}
