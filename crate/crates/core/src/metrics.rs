//! Network-science parameters of a communication graph: degree
//! distribution, clustering, average shortest path length and connectivity.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rayon::prelude::*;

use crate::comm_graph::CommGraph;
use crate::error::{Error, Result};
use crate::scenario::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeHistogram {
    pub counts: BTreeMap<usize, usize>,
    pub n: usize,
}

impl DegreeHistogram {
    pub fn from_degrees(degrees: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut n = 0;
        for d in degrees {
            *counts.entry(d).or_insert(0) += 1;
            n += 1;
        }
        if n == 0 {
            return Err(Error::UndefinedMetric("degree distribution of an empty graph"));
        }
        Ok(DegreeHistogram { counts, n })
    }

    /// Pool several histograms into one.
    pub fn merge(hists: &[DegreeHistogram]) -> Result<Self> {
        Self::from_degrees(
            hists
                .iter()
                .flat_map(|h| h.counts.iter().flat_map(|(&k, &c)| std::iter::repeat(k).take(c))),
        )
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.counts.get(&k).copied().unwrap_or(0) as f64 / self.n as f64
    }

    /// `(k, P(k))` for every observed degree.
    pub fn probs(&self) -> Vec<(f64, f64)> {
        self.counts
            .iter()
            .map(|(&k, &c)| (k as f64, c as f64 / self.n as f64))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(&k, &c)| (k * c) as f64).sum::<f64>() / self.n as f64
    }
}

pub fn degree_distribution(graph: &CommGraph) -> Result<DegreeHistogram> {
    DegreeHistogram::from_degrees((0..graph.n() as NodeId).map(|u| graph.degree(u)))
}

/// Number of edges among the neighbours of `u`.
fn neighbour_links(graph: &CommGraph, u: NodeId) -> usize {
    let adj = graph.neighbors(u);
    let mut links = 0;
    for (i, &a) in adj.iter().enumerate() {
        // both lists sorted: count common elements of adj(a) and adj[i+1..]
        let (mut p, mut q) = (0, i + 1);
        let na = graph.neighbors(a);
        while p < na.len() && q < adj.len() {
            match na[p].cmp(&adj[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    links += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
    }
    links
}

/// Fraction of neighbour pairs of `u` that are linked; 0 below degree 2.
pub fn node_clustering(graph: &CommGraph, u: NodeId) -> f64 {
    let d = graph.degree(u);
    if d < 2 {
        return 0.0;
    }
    neighbour_links(graph, u) as f64 / (d * (d - 1) / 2) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusteringMode {
    /// Mean local coefficient over nodes of degree at least 2.
    NodeAverage,
    /// `3 × triangles / connected triples`.
    Transitivity,
}

pub fn network_clustering(graph: &CommGraph, mode: ClusteringMode) -> Result<f64> {
    let eligible = (0..graph.n() as NodeId).filter(|&u| graph.degree(u) >= 2);
    match mode {
        ClusteringMode::NodeAverage => {
            let (sum, count) = eligible.fold((0.0, 0usize), |(s, c), u| (s + node_clustering(graph, u), c + 1));
            if count == 0 {
                return Err(Error::UndefinedMetric("clustering needs a node of degree >= 2"));
            }
            Ok(sum / count as f64)
        }
        ClusteringMode::Transitivity => {
            let (closed, triples) = triangle_counts(graph);
            if triples == 0 {
                return Err(Error::UndefinedMetric("clustering needs a node of degree >= 2"));
            }
            Ok(closed as f64 / triples as f64)
        }
    }
}

/// `(closed triples, connected triples)`; closed triples = 3 × triangles.
pub fn triangle_counts(graph: &CommGraph) -> (u64, u64) {
    (0..graph.n() as NodeId).fold((0, 0), |(c, t), u| {
        let d = graph.degree(u) as u64;
        if d < 2 {
            (c, t)
        } else {
            (c + neighbour_links(graph, u) as u64, t + d * (d - 1) / 2)
        }
    })
}

/// Hop distances from `src`; `u32::MAX` marks unreachable nodes.
pub fn bfs_hops(graph: &CommGraph, src: NodeId) -> Vec<u32> {
    let mut dist = vec![u32::MAX; graph.n()];
    let mut queue = VecDeque::new();
    dist[src as usize] = 0;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        for &v in graph.neighbors(u) {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Mean hop count over connected pairs; pairs in different components are
/// left out.
pub fn average_shortest_path(graph: &CommGraph) -> Result<f64> {
    let (hops, pairs) = (0..graph.n() as NodeId)
        .into_par_iter()
        .filter(|&u| graph.degree(u) > 0)
        .map(|u| {
            bfs_hops(graph, u)
                .into_iter()
                .filter(|&d| d != u32::MAX && d > 0)
                .fold((0u64, 0u64), |(h, p), d| (h + d as u64, p + 1))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no connected pair"));
    }
    Ok(hops as f64 / pairs as f64)
}

/// Fraction of node pairs joined by a multi-hop path.
pub fn connectivity_fraction(graph: &CommGraph) -> Result<f64> {
    let n = graph.n();
    if n < 2 {
        return Err(Error::UndefinedMetric("connectivity needs at least two nodes"));
    }
    let connected: u64 = graph
        .component_sizes()
        .iter()
        .map(|&s| (s as u64) * (s as u64 - 1))
        .sum();
    Ok(connected as f64 / (n as u64 * (n as u64 - 1)) as f64)
}

pub fn node_connectivity(graph: &CommGraph, u: NodeId) -> Result<f64> {
    let n = graph.n();
    if n < 2 {
        return Err(Error::UndefinedMetric("connectivity needs at least two nodes"));
    }
    Ok((graph.component_size_of(u) - 1) as f64 / (n - 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenario: String,
    pub density: f64,
    /// Area in km² (urban) or length in km (highway).
    pub scale_param: f64,
    pub n: usize,
    pub aspl: Option<f64>,
    pub clustering_network: Option<f64>,
    pub clustering_node_avg: Option<f64>,
    pub connectivity: Option<f64>,
    pub component_count: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn compute(graph: &CommGraph, scenario: &str, density: f64, scale_param: f64, seed: u64) -> Self {
        MetricReport {
            scenario: scenario.to_string(),
            density,
            scale_param,
            n: graph.n(),
            aspl: average_shortest_path(graph).ok(),
            clustering_network: network_clustering(graph, ClusteringMode::Transitivity).ok(),
            clustering_node_avg: network_clustering(graph, ClusteringMode::NodeAverage).ok(),
            connectivity: connectivity_fraction(graph).ok(),
            component_count: graph.component_sizes().len(),
            seed,
        }
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "scenario",
        "density",
        "scale_param",
        "n",
        "aspl",
        "clust_trans",
        "clust_node_avg",
        "connectivity",
        "components",
        "seed",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NaN".into());
        vec![
            self.scenario.clone(),
            self.density.to_string(),
            self.scale_param.to_string(),
            self.n.to_string(),
            opt(self.aspl),
            opt(self.clustering_network),
            opt(self.clustering_node_avg),
            opt(self.connectivity),
            self.component_count.to_string(),
            self.seed.to_string(),
        ]
    }
}

pub fn write_reports<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle() -> CommGraph {
        CommGraph::from_edges(3, [(0, 1), (1, 2), (0, 2)])
    }

    fn star3() -> CommGraph {
        CommGraph::from_edges(4, [(0, 1), (0, 2), (0, 3)])
    }

    fn path(n: u32) -> CommGraph {
        CommGraph::from_edges(n as usize, (1..n).map(|i| (i - 1, i)))
    }

    #[test]
    fn degree_histograms() {
        let h = degree_distribution(&triangle()).unwrap();
        assert_eq!(h.prob(2), 1.0);
        let h = degree_distribution(&star3()).unwrap();
        assert_eq!(h.prob(1), 0.75);
        assert_eq!(h.prob(3), 0.25);
        assert!(degree_distribution(&CommGraph::from_edges(0, [])).is_err());
    }

    #[test]
    fn local_clustering() {
        assert_eq!(node_clustering(&triangle(), 0), 1.0);
        assert_eq!(node_clustering(&star3(), 0), 0.0);
        let g = CommGraph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2)]);
        assert!((node_clustering(&g, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn network_clustering_modes() {
        let k4 = CommGraph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let p3 = path(3);
        for mode in [ClusteringMode::NodeAverage, ClusteringMode::Transitivity] {
            assert_eq!(network_clustering(&k4, mode).unwrap(), 1.0);
            assert_eq!(network_clustering(&p3, mode).unwrap(), 0.0);
            assert!(network_clustering(&CommGraph::from_edges(2, [(0, 1)]), mode).is_err());
        }
        // 4-cycle 0-1-2-3 with chord 0-2: two triangles, triples 3+1+3+1 = 8
        let g = CommGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        let mut closed = 0;
        let mut triples = 0;
        for c in 0..4 {
            for a in 0..4 {
                for b in a + 1..4 {
                    if a != c && b != c && g.has_edge(c, a) && g.has_edge(c, b) {
                        triples += 1;
                        closed += g.has_edge(a, b) as u32;
                    }
                }
            }
        }
        assert_eq!((closed, triples), (6, 8));
        let t = network_clustering(&g, ClusteringMode::Transitivity).unwrap();
        assert_eq!(t, closed as f64 / triples as f64);
    }

    #[test]
    fn shortest_paths() {
        assert!((average_shortest_path(&path(3)).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_shortest_path(&star3()).unwrap(), 1.5);
        assert!(average_shortest_path(&CommGraph::from_edges(3, [])).is_err());
    }

    #[test]
    fn connectivity() {
        let g = CommGraph::from_edges(5, [(0, 1), (2, 3), (3, 4)]);
        assert_eq!(connectivity_fraction(&g).unwrap(), 0.4);
        assert_eq!(node_connectivity(&g, 2).unwrap(), 0.5);
        assert_eq!(connectivity_fraction(&path(4)).unwrap(), 1.0);
        assert_eq!(node_connectivity(&path(4), 3).unwrap(), 1.0);
        let empty = CommGraph::from_edges(4, []);
        assert_eq!(connectivity_fraction(&empty).unwrap(), 0.0);
        assert_eq!(node_connectivity(&empty, 0).unwrap(), 0.0);
        assert!(connectivity_fraction(&CommGraph::from_edges(1, [])).is_err());
        assert!(node_connectivity(&CommGraph::from_edges(1, []), 0).is_err());
    }

    #[test]
    fn report_csv_shape() {
        let r = MetricReport::compute(&path(3), "urban", 10.0, 4.0, 1);
        let mut buf = Vec::new();
        write_reports(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "scenario,density,scale_param,n,aspl,clust_trans,clust_node_avg,connectivity,components,seed\n"
        ));
        assert!(text.contains("urban,10,4,3,"));
    }

    fn arb_graph() -> impl Strategy<Value = CommGraph> {
        (2usize..40).prop_flat_map(|n| {
            proptest::collection::vec((0..n as u32, 0..n as u32), 0..120)
                .prop_map(move |edges| CommGraph::from_edges(n, edges))
        })
    }

    proptest! {
        #[test]
        fn connectivity_is_mean_node_connectivity(g in arb_graph()) {
            let mean = (0..g.n() as u32).map(|u| node_connectivity(&g, u).unwrap()).sum::<f64>() / g.n() as f64;
            prop_assert!((connectivity_fraction(&g).unwrap() - mean).abs() < 1e-12);
        }

        #[test]
        fn clustering_invariant_under_relabeling(g in arb_graph(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<u32> = (0..g.n() as u32).collect();
            perm.shuffle(&mut crate::scenario::rng_from_seed(seed));
            let h = CommGraph::from_edges(g.n(), g.edges().map(|(u, v)| (perm[u as usize], perm[v as usize])));
            for mode in [ClusteringMode::NodeAverage, ClusteringMode::Transitivity] {
                match (network_clustering(&g, mode), network_clustering(&h, mode)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false),
                }
            }
        }

        #[test]
        fn aspl_ignores_isolated_nodes(g in arb_graph(), extra in 1usize..10) {
            let h = CommGraph::from_edges(g.n() + extra, g.edges());
            match (average_shortest_path(&g), average_shortest_path(&h)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn histogram_is_normalised(g in arb_graph()) {
            let h = degree_distribution(&g).unwrap();
            let total: f64 = h.probs().iter().map(|p| p.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
