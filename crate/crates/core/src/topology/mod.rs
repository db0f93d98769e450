//! Time-varying communication graphs.
//!
//! An arc `(j, i)` means node `j` is a neighbor of node `i`: information
//! flows from `j` to `i`.

mod certify;

pub use certify::{certify_ijc, certify_ujsc, min_ujsc_window, CertificationReport, Condition, Coverage};

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack on dwell-time comparisons, absorbing rounding in switch
/// times built from sums of piece lengths.
const DWELL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct DigraphSnapshot {
    n: usize,
    arcs: BTreeSet<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    n: usize,
    arcs: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for DigraphSnapshot {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        DigraphSnapshot::new(r.n, r.arcs.iter().map(|a| (a[0], a[1])))
    }
}

impl From<DigraphSnapshot> for GraphRepr {
    fn from(g: DigraphSnapshot) -> Self {
        GraphRepr {
            n: g.n,
            arcs: g.arcs.iter().map(|&(j, i)| [j, i]).collect(),
        }
    }
}

impl DigraphSnapshot {
    pub fn new(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let arcs: BTreeSet<(usize, usize)> = arcs.into_iter().collect();
        for &(j, i) in &arcs {
            if j >= n || i >= n {
                return Err(Error::NodeOutOfRange { node: j.max(i), n });
            }
            if j == i {
                return Err(Error::InvalidTopology(format!("self-loop at node {j}")));
            }
        }
        let mut in_neighbors = vec![Vec::new(); n];
        for &(j, i) in &arcs {
            in_neighbors[i].push(j);
        }
        Ok(DigraphSnapshot { n, arcs, in_neighbors })
    }

    pub fn empty(n: usize) -> Self {
        DigraphSnapshot::new(n, []).expect("empty graph is valid")
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn directed_ring(n: usize) -> Self {
        let arcs = if n > 1 { (0..n).map(|k| (k, (k + 1) % n)).collect() } else { vec![] };
        DigraphSnapshot::new(n, arcs).expect("ring is valid")
    }

    /// Both arcs of every listed edge.
    pub fn bidirectional(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        DigraphSnapshot::new(n, edges.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arcs(&self) -> &BTreeSet<(usize, usize)> {
        &self.arcs
    }

    pub fn is_bidirectional(&self) -> bool {
        self.arcs.iter().all(|&(j, i)| self.arcs.contains(&(i, j)))
    }

    /// `{j : (j, i) is an arc}`, sorted.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.in_neighbors
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange { node: i, n: self.n })
    }

    pub(crate) fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn union(&self, other: &DigraphSnapshot) -> DigraphSnapshot {
        DigraphSnapshot::new(self.n.max(other.n), self.arcs.iter().chain(other.arcs.iter()).copied())
            .expect("union of valid graphs is valid")
    }

    fn out_adjacency(&self, reversed: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(j, i) in &self.arcs {
            if reversed {
                adj[i].push(j);
            } else {
                adj[j].push(i);
            }
        }
        adj
    }
}

fn reaches_all(adj: &[Vec<usize>], root: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// Every ordered pair of nodes is joined by a directed path.
pub fn is_strongly_connected(g: &DigraphSnapshot) -> bool {
    if g.n <= 1 {
        return true;
    }
    reaches_all(&g.out_adjacency(false), 0) && reaches_all(&g.out_adjacency(true), 0)
}

/// Connectivity of the underlying undirected graph of a bidirectional graph.
pub fn is_connected_bidirectional(g: &DigraphSnapshot) -> Result<bool> {
    if !g.is_bidirectional() {
        return Err(Error::Precondition("graph is not bidirectional".into()));
    }
    Ok(g.n <= 1 || reaches_all(&g.out_adjacency(false), 0))
}

/// Piecewise-constant graph signal on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingTopology {
    starts: Vec<f64>,
    graphs: Vec<DigraphSnapshot>,
    dwell: f64,
    horizon: f64,
}

impl SwitchingTopology {
    /// Pieces starting at or after `horizon` are dropped.
    pub fn new(pieces: Vec<(f64, DigraphSnapshot)>, dwell: f64, horizon: f64) -> Result<Self> {
        if !(dwell > 0.0 && dwell.is_finite()) {
            return Err(Error::InvalidTopology(format!("dwell time must be positive, got {dwell}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidTopology(format!("horizon must be positive, got {horizon}")));
        }
        let Some((first, g0)) = pieces.first() else {
            return Err(Error::InvalidTopology("signal has no pieces".into()));
        };
        if *first != 0.0 {
            return Err(Error::InvalidTopology(format!("first piece starts at {first}, not 0")));
        }
        let n = g0.n();
        let mut starts = Vec::with_capacity(pieces.len());
        let mut graphs = Vec::with_capacity(pieces.len());
        for (s, g) in pieces {
            if s >= horizon && !starts.is_empty() {
                break;
            }
            if g.n() != n {
                return Err(Error::InvalidTopology("pieces disagree on node count".into()));
            }
            if let Some(&prev) = starts.last() {
                let gap: f64 = s - prev;
                if !(gap > 0.0) {
                    return Err(Error::InvalidTopology(format!("switch times not increasing at {s}")));
                }
                if gap < dwell * (1.0 - DWELL_SLACK) - DWELL_SLACK * s.abs() {
                    return Err(Error::InvalidTopology(format!(
                        "switch gap {gap} at t = {s} is shorter than dwell time {dwell}"
                    )));
                }
            }
            starts.push(s);
            graphs.push(g);
        }
        Ok(SwitchingTopology {
            starts,
            graphs,
            dwell,
            horizon,
        })
    }

    pub fn static_graph(graph: DigraphSnapshot, dwell: f64, horizon: f64) -> Result<Self> {
        Self::new(vec![(0.0, graph)], dwell, horizon)
    }

    pub fn n(&self) -> usize {
        self.graphs[0].n()
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn piece_count(&self) -> usize {
        self.starts.len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &DigraphSnapshot)> + '_ {
        (0..self.starts.len()).map(move |k| (self.starts[k], self.piece_end(k), &self.graphs[k]))
    }

    /// Start times of all pieces after the first.
    pub fn switch_times(&self) -> &[f64] {
        &self.starts[1..]
    }

    pub fn piece_end(&self, k: usize) -> f64 {
        self.starts.get(k + 1).copied().unwrap_or(self.horizon)
    }

    /// Index of the piece in force at `t` (right-continuous).
    pub fn piece_index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(self.starts.partition_point(|&s| s <= t) - 1)
    }

    pub fn graph(&self, k: usize) -> &DigraphSnapshot {
        &self.graphs[k]
    }

    pub fn snapshot_at(&self, t: f64) -> Result<&DigraphSnapshot> {
        Ok(&self.graphs[self.piece_index_at(t)?])
    }

    /// Union of the arc sets of every piece meeting `[t1, t2)`.
    pub fn joint_graph(&self, t1: f64, t2: f64) -> Result<DigraphSnapshot> {
        if !(0.0 <= t1 && t1 < t2 && t2 <= self.horizon) {
            return Err(Error::InvalidInterval { t1, t2 });
        }
        let first = self.starts.partition_point(|&s| s <= t1) - 1;
        let last = self.starts.partition_point(|&s| s < t2);
        let arcs = self.graphs[first..last].iter().flat_map(|g| g.arcs.iter().copied());
        DigraphSnapshot::new(self.n(), arcs)
    }

    pub fn all_bidirectional(&self) -> bool {
        self.graphs.iter().all(DigraphSnapshot::is_bidirectional)
    }
}

/// Topology section of a scenario: dwell time, optional horizon (defaults
/// to the integration end time) and the signal description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub dwell: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub signal: TopologySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPiece {
    pub start: f64,
    pub graph: DigraphSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Static {
        graph: DigraphSnapshot,
    },
    /// Graphs repeat in order, each held for `piece_length`.
    PeriodicCycle {
        graphs: Vec<DigraphSnapshot>,
        piece_length: f64,
    },
    /// Graphs repeat in order; every piece of the k-th pass through the list
    /// lasts `base * growth^k`.
    GrowingIntervals {
        graphs: Vec<DigraphSnapshot>,
        base: f64,
        growth: f64,
    },
    Scripted {
        pieces: Vec<ScriptedPiece>,
    },
    /// Pieces of random length in `[min_length, max_length]`, each showing a
    /// graph drawn from a fixed palette of `palette_size` random graphs.
    RandomDwell {
        seed: u64,
        n: usize,
        arc_probability: f64,
        palette_size: usize,
        min_length: f64,
        max_length: f64,
        #[serde(default)]
        bidirectional: bool,
    },
}

impl TopologySpec {
    /// Node count implied by the description.
    pub fn node_count(&self) -> Option<usize> {
        match self {
            TopologySpec::Static { graph } => Some(graph.n()),
            TopologySpec::PeriodicCycle { graphs, .. } | TopologySpec::GrowingIntervals { graphs, .. } => {
                graphs.first().map(DigraphSnapshot::n)
            }
            TopologySpec::Scripted { pieces } => pieces.first().map(|p| p.graph.n()),
            TopologySpec::RandomDwell { n, .. } => Some(*n),
        }
    }

    /// The finite set of graphs the signal can show.
    pub fn palette(&self) -> Vec<DigraphSnapshot> {
        match self {
            TopologySpec::Static { graph } => vec![graph.clone()],
            TopologySpec::PeriodicCycle { graphs, .. } | TopologySpec::GrowingIntervals { graphs, .. } => graphs.clone(),
            TopologySpec::Scripted { pieces } => pieces.iter().map(|p| p.graph.clone()).collect(),
            TopologySpec::RandomDwell {
                seed,
                n,
                arc_probability,
                palette_size,
                bidirectional,
                ..
            } => random_palette(*seed, *n, *arc_probability, *palette_size, *bidirectional),
        }
    }

    pub fn realize(&self, dwell: f64, horizon: f64) -> Result<SwitchingTopology> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidTopology(format!("{what} must be positive, got {v}")))
            }
        };
        let pieces = match self {
            TopologySpec::Static { graph } => vec![(0.0, graph.clone())],
            TopologySpec::PeriodicCycle { graphs, piece_length } => {
                positive(*piece_length, "piece_length")?;
                if graphs.is_empty() {
                    return Err(Error::InvalidTopology("periodic cycle needs graphs".into()));
                }
                let count = (horizon / piece_length).ceil() as usize;
                (0..count.max(1))
                    .map(|k| (k as f64 * piece_length, graphs[k % graphs.len()].clone()))
                    .collect()
            }
            TopologySpec::GrowingIntervals { graphs, base, growth } => {
                positive(*base, "base")?;
                if !(*growth >= 1.0 && growth.is_finite()) {
                    return Err(Error::InvalidTopology(format!("growth must be >= 1, got {growth}")));
                }
                if graphs.is_empty() {
                    return Err(Error::InvalidTopology("growing intervals need graphs".into()));
                }
                let mut out = Vec::new();
                let mut t = 0.0;
                let mut pass = 0;
                while t < horizon {
                    let len = base * growth.powi(pass);
                    for g in graphs {
                        if t >= horizon {
                            break;
                        }
                        out.push((t, g.clone()));
                        t += len;
                    }
                    pass += 1;
                }
                out
            }
            TopologySpec::Scripted { pieces } => pieces.iter().map(|p| (p.start, p.graph.clone())).collect(),
            TopologySpec::RandomDwell {
                seed,
                min_length,
                max_length,
                ..
            } => {
                positive(*min_length, "min_length")?;
                if !(max_length >= min_length) {
                    return Err(Error::InvalidTopology("max_length below min_length".into()));
                }
                if *min_length < dwell {
                    return Err(Error::InvalidTopology(format!(
                        "min_length {min_length} is below the dwell time {dwell}"
                    )));
                }
                let palette = self.palette();
                if palette.is_empty() {
                    return Err(Error::InvalidTopology("palette_size must be positive".into()));
                }
                // Separate stream from the palette draw.
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
                let mut out = Vec::new();
                let mut t = 0.0;
                while t < horizon {
                    let g = palette[rng.random_range(0..palette.len())].clone();
                    out.push((t, g));
                    t += if max_length > min_length {
                        rng.random_range(*min_length..*max_length)
                    } else {
                        *min_length
                    };
                }
                out
            }
        };
        SwitchingTopology::new(pieces, dwell, horizon)
    }
}

fn random_palette(seed: u64, n: usize, p: f64, size: usize, bidirectional: bool) -> Vec<DigraphSnapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| {
            let mut arcs = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    if i == j || (bidirectional && i < j) {
                        continue;
                    }
                    if rng.random::<f64>() < p {
                        arcs.push((j, i));
                        if bidirectional {
                            arcs.push((i, j));
                        }
                    }
                }
            }
            DigraphSnapshot::new(n, arcs).expect("palette arcs are in range")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, arcs: &[(usize, usize)]) -> DigraphSnapshot {
        DigraphSnapshot::new(n, arcs.iter().copied()).unwrap()
    }

    fn two_piece() -> SwitchingTopology {
        SwitchingTopology::new(vec![(0.0, g(2, &[(0, 1)])), (5.0, g(2, &[(1, 0)]))], 0.5, 10.0).unwrap()
    }

    #[test]
    fn snapshot_right_continuous() {
        let single = SwitchingTopology::static_graph(g(2, &[(0, 1)]), 0.5, 100.0).unwrap();
        assert_eq!(single.snapshot_at(73.0).unwrap(), &g(2, &[(0, 1)]));
        let topo = two_piece();
        assert_eq!(topo.snapshot_at(5.0).unwrap(), &g(2, &[(1, 0)]));
        assert_eq!(topo.snapshot_at(4.999).unwrap(), &g(2, &[(0, 1)]));
        assert!(topo.snapshot_at(10.5).is_err());
    }

    #[test]
    fn joint_graph_union() {
        let topo = SwitchingTopology::new(vec![(0.0, g(2, &[(0, 1)])), (1.0, g(2, &[(1, 0)]))], 0.5, 2.0).unwrap();
        assert_eq!(topo.joint_graph(0.0, 2.0).unwrap(), g(2, &[(0, 1), (1, 0)]));
        assert_eq!(topo.joint_graph(0.2, 0.8).unwrap(), g(2, &[(0, 1)]));
        // [t1, t2) excludes the piece starting at t2
        assert_eq!(topo.joint_graph(0.0, 1.0).unwrap(), g(2, &[(0, 1)]));
        assert!(topo.joint_graph(1.0, 1.0).is_err());
        let single = SwitchingTopology::static_graph(g(3, &[(0, 2)]), 0.5, 4.0).unwrap();
        assert_eq!(single.joint_graph(0.0, 4.0).unwrap(), g(3, &[(0, 2)]));
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(is_strongly_connected(&DigraphSnapshot::directed_ring(4)));
        assert!(!is_strongly_connected(&g(3, &[(0, 1), (1, 2)])));
        assert!(is_strongly_connected(&DigraphSnapshot::empty(1)));
    }

    #[test]
    fn bidirectional_connectivity_examples() {
        let path = DigraphSnapshot::bidirectional(3, [(0, 1), (1, 2)]).unwrap();
        assert!(is_connected_bidirectional(&path).unwrap());
        let split = DigraphSnapshot::bidirectional(4, [(0, 1), (2, 3)]).unwrap();
        assert!(!is_connected_bidirectional(&split).unwrap());
        assert!(!is_connected_bidirectional(&DigraphSnapshot::empty(2)).unwrap());
        assert!(is_connected_bidirectional(&g(2, &[(0, 1)])).is_err());
    }

    #[test]
    fn neighbors_follow_arc_direction() {
        let one = g(2, &[(0, 1)]);
        assert_eq!(one.neighbors(1).unwrap(), &[0]);
        assert!(one.neighbors(0).unwrap().is_empty());
        let tri = DigraphSnapshot::bidirectional(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(tri.neighbors(2).unwrap(), &[0, 1]);
        assert!(one.neighbors(2).is_err());
    }

    #[test]
    fn construction_rejects_bad_graphs_and_signals() {
        assert!(DigraphSnapshot::new(2, [(0, 0)]).is_err());
        assert!(DigraphSnapshot::new(2, [(0, 2)]).is_err());
        let e = DigraphSnapshot::empty(2);
        assert!(SwitchingTopology::new(vec![(0.0, e.clone()), (0.3, e.clone())], 0.5, 5.0).is_err());
        assert!(SwitchingTopology::new(vec![(1.0, e.clone())], 0.5, 5.0).is_err());
        assert!(SwitchingTopology::new(vec![(0.0, e.clone()), (2.0, e.clone()), (1.0, e)], 0.5, 5.0).is_err());
    }

    #[test]
    fn growing_intervals_lengths() {
        let spec = TopologySpec::GrowingIntervals {
            graphs: vec![g(2, &[(0, 1), (1, 0)])],
            base: 1.0,
            growth: 2.0,
        };
        let topo = spec.realize(0.5, 15.0).unwrap();
        let starts: Vec<f64> = topo.pieces().map(|(s, _, _)| s).collect();
        assert_eq!(starts, vec![0.0, 1.0, 3.0, 7.0]);
    }

    #[test]
    fn random_dwell_respects_dwell_and_palette() {
        let spec = TopologySpec::RandomDwell {
            seed: 9,
            n: 4,
            arc_probability: 0.4,
            palette_size: 4,
            min_length: 0.5,
            max_length: 2.0,
            bidirectional: true,
        };
        let topo = spec.realize(0.5, 50.0).unwrap();
        let palette = spec.palette();
        for (s, e, graph) in topo.pieces() {
            assert!(palette.contains(graph));
            assert!(graph.is_bidirectional());
            if e < topo.horizon() {
                assert!(e - s >= 0.5 - 1e-12);
            }
        }
        assert_eq!(topo, spec.realize(0.5, 50.0).unwrap());
    }

    #[test]
    fn graph_serde_shape() {
        let text = "n = 3\narcs = [[0, 1], [2, 1]]\n";
        let parsed: DigraphSnapshot = toml::from_str(text).unwrap();
        assert_eq!(parsed.neighbors(1).unwrap(), &[0, 2]);
        assert!(toml::from_str::<DigraphSnapshot>("n = 2\narcs = [[0, 5]]\n").is_err());
    }
}
