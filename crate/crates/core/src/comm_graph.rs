//! One-hop communication graphs over vehicle snapshots.
//!
//! Urban links follow a line-of-sight rule: two vehicles on the same street
//! axis reach each other up to `los_range_m`, any other pair only up to
//! `nlos_range_m`. Highway links compare longitudinal distance only.

use std::collections::HashMap;
use std::io::Write;

use crate::error::Result;
use crate::scenario::{NodeId, Point, Snapshot, Topology, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeModel {
    pub los_range_m: f64,
    pub nlos_range_m: f64,
    pub highway_range_m: f64,
    /// A vehicle within this distance of a grid line counts as being on it.
    /// Vehicles at a crossing therefore belong to both streets.
    pub intersection_zone_m: f64,
}

impl Default for RangeModel {
    fn default() -> Self {
        RangeModel {
            los_range_m: 250.0,
            nlos_range_m: 140.0,
            highway_range_m: 250.0,
            intersection_zone_m: 2.5,
        }
    }
}

impl RangeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.nlos_range_m > 0.0 && self.nlos_range_m <= self.los_range_m) {
            return Err(crate::Error::InvalidConfig(
                "require 0 < nlos_range_m <= los_range_m".into(),
            ));
        }
        if !(self.highway_range_m > 0.0) || !(self.intersection_zone_m >= 0.0) {
            return Err(crate::Error::InvalidConfig("ranges must be positive".into()));
        }
        Ok(())
    }

    /// Largest distance at which any link can exist in `scenario`.
    pub fn max_range(&self, scenario: LinkScenario) -> f64 {
        match scenario {
            LinkScenario::Urban { .. } => self.los_range_m.max(self.nlos_range_m),
            LinkScenario::Highway => self.highway_range_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkScenario {
    Urban { block_m: f64 },
    Highway,
}

impl LinkScenario {
    pub fn of(snapshot: &Snapshot) -> Self {
        match &snapshot.topology {
            Topology::Urban(c) => LinkScenario::Urban {
                block_m: c.block_size_m,
            },
            Topology::Highway(_) => LinkScenario::Highway,
        }
    }
}

/// Grid line index a coordinate sits on, if within `zone` of it.
fn street_line(coord: f64, block_m: f64, zone: f64) -> Option<i64> {
    let idx = (coord / block_m).round();
    ((coord - idx * block_m).abs() <= zone).then_some(idx as i64)
}

/// Whether two vehicles share a horizontal or vertical street axis.
pub fn line_of_sight(a: &Point, b: &Point, block_m: f64, zone: f64) -> bool {
    let shared = |ca: f64, cb: f64| match (street_line(ca, block_m, zone), street_line(cb, block_m, zone)) {
        (Some(i), Some(j)) => i == j,
        _ => false,
    };
    shared(a.y, b.y) || shared(a.x, b.x)
}

pub fn is_link_pos(a: &Point, b: &Point, model: &RangeModel, scenario: LinkScenario) -> bool {
    match scenario {
        LinkScenario::Highway => (a.x - b.x).abs() <= model.highway_range_m,
        LinkScenario::Urban { block_m } => {
            let d = a.dist(b);
            d <= model.nlos_range_m
                || (d <= model.los_range_m
                    && line_of_sight(a, b, block_m, model.intersection_zone_m))
        }
    }
}

pub fn is_link(a: &VehicleState, b: &VehicleState, model: &RangeModel, scenario: LinkScenario) -> bool {
    is_link_pos(&a.pos, &b.pos, model, scenario)
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Undirected simple graph with its connected-component partition.
///
/// Node `i` is the `i`-th vehicle of the snapshot it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: Vec<Vec<NodeId>>,
    component_id: Vec<u32>,
    component_sizes: Vec<usize>,
}

impl CommGraph {
    /// Build from an edge list; duplicate edges and self-loops are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (u, v) in edges {
            if u != v {
                adjacency[u as usize].push(v);
                adjacency[v as usize].push(u);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Self::from_sorted_adjacency(adjacency)
    }

    fn from_sorted_adjacency(adjacency: Vec<Vec<NodeId>>) -> Self {
        let n = adjacency.len();
        let mut uf = UnionFind::new(n);
        for (u, adj) in adjacency.iter().enumerate() {
            for &v in adj {
                if (u as u32) < v {
                    uf.union(u as u32, v);
                }
            }
        }
        // Components numbered in order of their smallest node.
        let mut label: HashMap<u32, u32> = HashMap::new();
        let mut component_id = Vec::with_capacity(n);
        let mut component_sizes = Vec::new();
        for u in 0..n as u32 {
            let root = uf.find(u);
            let next = label.len() as u32;
            let id = *label.entry(root).or_insert(next);
            if id as usize == component_sizes.len() {
                component_sizes.push(0);
            }
            component_sizes[id as usize] += 1;
            component_id.push(id);
        }
        CommGraph {
            adjacency,
            component_id,
            component_sizes,
        }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.adjacency[u as usize]
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adjacency[u as usize].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u as usize].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(u, v)` with `u < v` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, adj)| {
            adj.iter()
                .copied()
                .filter(move |&v| (u as NodeId) < v)
                .map(move |v| (u as NodeId, v))
        })
    }

    pub fn component_of(&self, u: NodeId) -> u32 {
        self.component_id[u as usize]
    }

    pub fn component_sizes(&self) -> &[usize] {
        &self.component_sizes
    }

    pub fn component_size_of(&self, u: NodeId) -> usize {
        self.component_sizes[self.component_of(u) as usize]
    }

    /// Symmetric, sorted and free of self-loops.
    pub fn is_well_formed(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(u, adj)| {
            adj.windows(2).all(|w| w[0] < w[1])
                && adj.iter().all(|&v| v as usize != u && self.has_edge(v, u as NodeId))
        })
    }

    pub fn write_edge_list<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v"])?;
        for (u, v) in self.edges() {
            w.write_record([u.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Partition of the nodes into maximal connected sets, each sorted,
/// ordered by smallest member.
pub fn components(graph: &CommGraph) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new(); graph.component_sizes.len()];
    for u in 0..graph.n() as NodeId {
        out[graph.component_of(u) as usize].push(u);
    }
    out
}

/// Uniform bucket grid over planar points for range queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<NodeId>>,
}

impl SpatialIndex {
    pub fn new(points: &[Point], cell: f64) -> Self {
        let cell = cell.max(f64::MIN_POSITIVE);
        let mut index = SpatialIndex {
            cell,
            buckets: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = index.key(p);
            index.buckets.entry(key).or_default().push(i as NodeId);
        }
        index
    }

    fn key(&self, p: &Point) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Every point that may lie within `cell` of `p` (a superset).
    pub fn candidates(&self, p: &Point) -> impl Iterator<Item = NodeId> + '_ {
        let (bx, by) = self.key(p);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (bx + dx, by + dy)))
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
    }

    /// Sorted ids of the one-hop neighbours of point `i`.
    pub fn neighbors(
        &self,
        points: &[Point],
        i: NodeId,
        model: &RangeModel,
        scenario: LinkScenario,
    ) -> Vec<NodeId> {
        let p = &points[i as usize];
        let mut out: Vec<NodeId> = self
            .candidates(p)
            .filter(|&j| j != i && is_link_pos(p, &points[j as usize], model, scenario))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Graph over `points` using a bucket grid of cell size `max_range`.
pub fn build_graph_from_points(
    points: &[Point],
    model: &RangeModel,
    scenario: LinkScenario,
) -> CommGraph {
    let index = SpatialIndex::new(points, model.max_range(scenario));
    let adjacency = (0..points.len() as NodeId)
        .map(|i| index.neighbors(points, i, model, scenario))
        .collect();
    CommGraph::from_sorted_adjacency(adjacency)
}

pub fn build_graph(snapshot: &Snapshot, model: &RangeModel) -> CommGraph {
    let points: Vec<Point> = snapshot.vehicles.iter().map(|v| v.pos).collect();
    build_graph_from_points(&points, model, LinkScenario::of(snapshot))
}

/// Exhaustive pair check; the reference for `build_graph`.
pub fn build_graph_brute(snapshot: &Snapshot, model: &RangeModel) -> CommGraph {
    let scenario = LinkScenario::of(snapshot);
    let vs = &snapshot.vehicles;
    let mut edges = Vec::new();
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            if is_link(&vs[i], &vs[j], model, scenario) {
                edges.push((i as NodeId, j as NodeId));
            }
        }
    }
    CommGraph::from_edges(vs.len(), edges)
}

/// Random geometric graphs on a torus, free of border effects.
pub mod torus {
    use super::*;

    fn wrapped(d: f64, side: f64) -> f64 {
        let d = d.abs() % side;
        d.min(side - d)
    }

    /// Points in `[0, side)²`, linked when toroidal distance is at most `range`.
    pub fn graph_2d(points: &[Point], side: f64, range: f64) -> CommGraph {
        let cells = ((side / range).floor() as i64).max(1);
        let cell = side / cells as f64;
        let key = |p: &Point| {
            (
                ((p.x / cell).floor() as i64).rem_euclid(cells),
                ((p.y / cell).floor() as i64).rem_euclid(cells),
            )
        };
        let mut buckets: HashMap<(i64, i64), Vec<NodeId>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p)).or_default().push(i as NodeId);
        }
        let r2 = range * range;
        let mut edges = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let (bx, by) = key(p);
            let mut seen = Vec::with_capacity(9);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let k = ((bx + dx).rem_euclid(cells), (by + dy).rem_euclid(cells));
                    if seen.contains(&k) {
                        continue;
                    }
                    seen.push(k);
                    for &j in buckets.get(&k).map(Vec::as_slice).unwrap_or(&[]) {
                        if (j as usize) > i {
                            let q = &points[j as usize];
                            let ddx = wrapped(p.x - q.x, side);
                            let ddy = wrapped(p.y - q.y, side);
                            if ddx * ddx + ddy * ddy <= r2 {
                                edges.push((i as NodeId, j));
                            }
                        }
                    }
                }
            }
        }
        CommGraph::from_edges(points.len(), edges)
    }

    /// Points on a ring of circumference `length`.
    pub fn graph_1d(xs: &[f64], length: f64, range: f64) -> CommGraph {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let n = order.len();
        let mut edges = Vec::new();
        for (rank, &i) in order.iter().enumerate() {
            for step in 1..n {
                let j = order[(rank + step) % n];
                if wrapped(xs[i] - xs[j], length) > range {
                    break;
                }
                edges.push((i as NodeId, j as NodeId));
            }
        }
        CommGraph::from_edges(n, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_urban, HighwayConfig, Heading, Street, UrbanConfig};

    fn urban_at(x: f64, y: f64) -> VehicleState {
        VehicleState {
            id: 0,
            pos: Point::new(x, y),
            street: Street::Horizontal(0),
            heading: Heading::East,
            speed_mps: 0.0,
        }
    }

    const URBAN: LinkScenario = LinkScenario::Urban { block_m: 125.0 };

    #[test]
    fn same_street_uses_los_range() {
        let m = RangeModel::default();
        assert!(is_link(&urban_at(250.0, 100.0), &urban_at(250.0, 300.0), &m, URBAN));
        assert!(is_link(&urban_at(10.0, 375.0), &urban_at(260.0, 375.0), &m, URBAN));
        assert!(!is_link(&urban_at(10.0, 375.0), &urban_at(261.0, 375.0), &m, URBAN));
    }

    #[test]
    fn different_streets_use_nlos_range() {
        let m = RangeModel::default();
        // (125, 40) on vertical street 1, (35, 125) on horizontal street 1:
        // no shared axis, distance 127.3 m.
        let a = urban_at(125.0, 40.0);
        let b = urban_at(35.0, 125.0);
        assert!(is_link(&a, &b, &m, URBAN));
        // 150 m apart off-axis
        let c = urban_at(250.0, 30.0);
        let d = urban_at(160.0, 150.0);
        assert!((c.pos.dist(&d.pos) - 150.0).abs() < 1e-9);
        assert!(!is_link(&c, &d, &m, URBAN));
    }

    #[test]
    fn vehicle_at_crossing_sees_both_streets() {
        let m = RangeModel::default();
        let corner = urban_at(250.0, 250.0);
        assert!(is_link(&corner, &urban_at(250.0, 20.0), &m, URBAN));
        assert!(is_link(&corner, &urban_at(20.0, 250.0), &m, URBAN));
    }

    #[test]
    fn coincident_positions_link() {
        let m = RangeModel::default();
        assert!(is_link(&urban_at(3.0, 4.0), &urban_at(3.0, 4.0), &m, URBAN));
        assert!(is_link(&urban_at(3.0, 0.0), &urban_at(3.0, 0.0), &m, LinkScenario::Highway));
    }

    #[test]
    fn collinear_highway_chain() {
        let mut s = crate::scenario::generate_highway(&HighwayConfig::new(1.0, 0.0), 0).unwrap();
        for (i, x) in [0.0, 200.0, 400.0].into_iter().enumerate() {
            let mut v = urban_at(x, 0.0);
            v.id = i as NodeId;
            s.vehicles.push(v);
        }
        let g = build_graph(&s, &RangeModel::default());
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.component_sizes(), &[3]);
    }

    #[test]
    fn empty_snapshot_gives_empty_graph() {
        let s = generate_urban(&UrbanConfig::new(1.0, 0.0), 0).unwrap();
        let g = build_graph(&s, &RangeModel::default());
        assert_eq!(g.n(), 0);
        assert!(components(&g).is_empty());
    }

    #[test]
    fn index_matches_brute_force() {
        for seed in 0..5 {
            let s = generate_urban(&UrbanConfig::new(4.0, 50.0), seed).unwrap();
            assert_eq!(s.len(), 200);
            let m = RangeModel::default();
            let fast = build_graph(&s, &m);
            assert!(fast.is_well_formed());
            assert_eq!(fast, build_graph_brute(&s, &m));
        }
    }

    #[test]
    fn components_of_small_graphs() {
        let g = CommGraph::from_edges(5, []);
        assert_eq!(components(&g).len(), 5);
        let p = CommGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        assert_eq!(components(&p), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn edge_list_is_canonical() {
        let g = CommGraph::from_edges(4, [(3, 1), (1, 0), (2, 1), (0, 1)]);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u,v\n0,1\n1,2\n1,3\n");
    }

    #[test]
    fn torus_graphs_wrap() {
        let pts = [Point::new(0.01, 0.5), Point::new(0.99, 0.5), Point::new(0.5, 0.5)];
        let g = torus::graph_2d(&pts, 1.0, 0.05);
        assert!(g.has_edge(0, 1));
        assert_eq!(g.edge_count(), 1);
        let g = torus::graph_1d(&[0.0, 9.9, 5.0, 5.05], 10.0, 0.2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
    }
}
