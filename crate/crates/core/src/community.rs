//! Undirected community detection: modularity and a seeded Leiden
//! implementation (local moving, refinement, aggregation).
//!
//! The knowledge graph is symmetrized before detection: parallel edges
//! collapse to simple ones and self-loops are dropped, so the adjacency is
//! 0/1 and node degrees exclude loops.

use std::collections::{BTreeMap, HashMap, VecDeque};

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Internal restarts per `leiden` call; best modularity wins, earliest
/// restart on ties. Enough to hit the global optimum on small graphs.
const LEIDEN_RESTARTS: usize = 12;
const MAX_OUTER_ITERATIONS: usize = 100;
const EPS: f64 = 1e-12;

/// Simple undirected graph: no self-loops, no parallel edges.
#[derive(Debug, Clone, Default)]
pub struct UGraph {
    adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl UGraph {
    pub fn new(n: usize) -> Self {
        UGraph {
            adj: vec![Vec::new(); n],
            edge_count: 0,
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = UGraph::new(n);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Adds an undirected edge; self-loops and duplicates are ignored.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a == b || a >= self.adj.len() || b >= self.adj.len() {
            return;
        }
        if self.adj[a].contains(&b) {
            return;
        }
        self.adj[a].push(b);
        self.adj[b].push(a);
        self.adj[a].sort_unstable();
        self.adj[b].sort_unstable();
        self.edge_count += 1;
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Subgraph induced by `nodes`; returns it with the original index of
    /// each new node.
    pub fn induced(&self, nodes: &[usize]) -> (UGraph, Vec<usize>) {
        let mut sorted: Vec<usize> = nodes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let index: HashMap<usize, usize> =
            sorted.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut g = UGraph::new(sorted.len());
        for (new_v, &v) in sorted.iter().enumerate() {
            for &u in &self.adj[v] {
                if let Some(&new_u) = index.get(&u) {
                    if new_v < new_u {
                        g.add_edge(new_v, new_u);
                    }
                }
            }
        }
        (g, sorted)
    }
}

/// A total assignment of nodes to communities, renumbered contiguously in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    count: usize,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
            count: n,
        }
    }

    pub fn from_assignment(raw: Vec<usize>) -> Self {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut assignment = Vec::with_capacity(raw.len());
        for c in raw {
            let next = map.len();
            assignment.push(*map.entry(c).or_insert(next));
        }
        let count = map.len();
        Partition { assignment, count }
    }

    pub fn community_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Member lists per community, each sorted ascending.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

/// Modularity of a partition (resolution 1): intra-community edge density
/// against the degree-preserving random baseline.
pub fn modularity<T: Float>(graph: &UGraph, partition: &Partition) -> Result<T> {
    modularity_with_resolution(graph, partition, T::one())
}

/// Modularity with a resolution factor scaling the null-model term.
pub fn modularity_with_resolution<T: Float>(
    graph: &UGraph,
    partition: &Partition,
    resolution: T,
) -> Result<T> {
    if partition.assignment.len() != graph.node_count() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} nodes but the graph has {}",
            partition.assignment.len(),
            graph.node_count()
        )));
    }
    let m = graph.edge_count();
    if m == 0 {
        return Err(Error::UndefinedModularity(
            "graph has no edges (m = 0)".into(),
        ));
    }
    let m_t = T::from(m).unwrap();
    let twom = T::from(2 * m).unwrap();
    let mut internal = vec![0usize; partition.count];
    let mut degree_sum = vec![0usize; partition.count];
    for v in 0..graph.node_count() {
        let c = partition.assignment[v];
        degree_sum[c] += graph.degree(v);
        for &u in graph.neighbors(v) {
            if u > v && partition.assignment[u] == c {
                internal[c] += 1;
            }
        }
    }
    let mut q = T::zero();
    for c in 0..partition.count {
        let l_c = T::from(internal[c]).unwrap();
        let k_c = T::from(degree_sum[c]).unwrap();
        q = q + l_c / m_t - resolution * (k_c / twom) * (k_c / twom);
    }
    Ok(q)
}

/// Weighted working graph for the aggregation phases. Degrees count
/// self-loop weight twice; `twom` stays constant across aggregation.
#[derive(Clone)]
struct WGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
    /// Original node ids folded into each super-node.
    groups: Vec<Vec<usize>>,
    twom: f64,
}

impl WGraph {
    fn from_ugraph(g: &UGraph) -> Self {
        WGraph {
            adj: g
                .adj
                .iter()
                .map(|ns| ns.iter().map(|&u| (u, 1.0)).collect())
                .collect(),
            self_w: vec![0.0; g.node_count()],
            groups: (0..g.node_count()).map(|v| vec![v]).collect(),
            twom: 2.0 * g.edge_count() as f64,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn degrees(&self) -> Vec<f64> {
        (0..self.len())
            .map(|v| self.adj[v].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self.self_w[v])
            .collect()
    }
}

fn renumber(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut out = Vec::with_capacity(raw.len());
    for &c in raw {
        let next = map.len();
        out.push(*map.entry(c).or_insert(next));
    }
    let count = map.len();
    (out, count)
}

/// Queue-based local moving. Returns whether any node moved.
fn local_move(
    g: &WGraph,
    assignment: &mut [usize],
    rng: &mut ChaCha8Rng,
    gamma: f64,
) -> bool {
    let n = g.len();
    let degrees = g.degrees();
    let comm_cap = assignment.iter().copied().max().map_or(1, |m| m + 1);
    let mut comm_deg = vec![0.0f64; comm_cap];
    for v in 0..n {
        comm_deg[assignment[v]] += degrees[v];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut moved_any = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let v_comm = assignment[v];
        let mut weight_to: BTreeMap<usize, f64> = BTreeMap::new();
        for &(u, w) in &g.adj[v] {
            *weight_to.entry(assignment[u]).or_insert(0.0) += w;
        }
        comm_deg[v_comm] -= degrees[v];
        let gain = |c: usize, w: f64, comm_deg: &[f64]| -> f64 {
            w - gamma * degrees[v] * comm_deg.get(c).copied().unwrap_or(0.0) / g.twom
        };
        let mut best_comm = v_comm;
        let mut best_gain = gain(v_comm, weight_to.get(&v_comm).copied().unwrap_or(0.0), &comm_deg);
        for (&c, &w) in &weight_to {
            if c == v_comm {
                continue;
            }
            let f = gain(c, w, &comm_deg);
            if f > best_gain + EPS {
                best_gain = f;
                best_comm = c;
            }
        }
        // a fresh singleton community has gain 0
        if 0.0 > best_gain + EPS {
            best_comm = comm_deg.len();
            comm_deg.push(0.0);
        }
        if best_comm != v_comm {
            assignment[v] = best_comm;
            comm_deg[best_comm] += degrees[v];
            moved_any = true;
            for &(u, _) in &g.adj[v] {
                if assignment[u] != best_comm && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        } else {
            comm_deg[v_comm] += degrees[v];
        }
    }
    moved_any
}

/// Refinement: inside each community of `assignment`, greedily merge
/// singleton refined communities wherever the move does not lower quality.
fn refine(g: &WGraph, assignment: &[usize], rng: &mut ChaCha8Rng, gamma: f64) -> Vec<usize> {
    let n = g.len();
    let degrees = g.degrees();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut refined_deg = degrees.clone();
    let mut refined_size = vec![1usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    for v in order {
        if refined_size[refined[v]] > 1 {
            continue;
        }
        let mut weight_to: BTreeMap<usize, f64> = BTreeMap::new();
        for &(u, w) in &g.adj[v] {
            if assignment[u] == assignment[v] {
                *weight_to.entry(refined[u]).or_insert(0.0) += w;
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for (&r, &w) in &weight_to {
            if r == refined[v] {
                continue;
            }
            let f = w - gamma * degrees[v] * refined_deg[r] / g.twom;
            if f >= -EPS {
                let better = match best {
                    Some((bf, _)) => f > bf + EPS,
                    None => true,
                };
                if better {
                    best = Some((f, r));
                }
            }
        }
        if let Some((_, r)) = best {
            refined_deg[r] += degrees[v];
            refined_size[r] += 1;
            refined[v] = r;
        }
    }
    refined
}

/// Collapses each refined community into a super-node, summing edge
/// weights; internal edges become self-loop weight.
fn aggregate(g: &WGraph, refined: &[usize]) -> (WGraph, Vec<usize>) {
    let (renumbered, k) = renumber(refined);
    let mut adj_maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
    let mut self_w = vec![0.0f64; k];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for v in 0..g.len() {
        let cv = renumbered[v];
        groups[cv].extend(g.groups[v].iter().copied());
        self_w[cv] += g.self_w[v];
        for &(u, w) in &g.adj[v] {
            if u > v {
                let cu = renumbered[u];
                if cu == cv {
                    self_w[cv] += w;
                } else {
                    *adj_maps[cv].entry(cu).or_insert(0.0) += w;
                    *adj_maps[cu].entry(cv).or_insert(0.0) += w;
                }
            }
        }
    }
    for group in groups.iter_mut() {
        group.sort_unstable();
    }
    let adj = adj_maps
        .into_iter()
        .map(|m| m.into_iter().collect())
        .collect();
    (
        WGraph {
            adj,
            self_w,
            groups,
            twom: g.twom,
        },
        renumbered,
    )
}

fn leiden_once(base: &WGraph, gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let original_n = base
        .groups
        .iter()
        .map(|g| g.iter().copied().max().map_or(0, |m| m + 1))
        .max()
        .unwrap_or(0);
    let mut g = base.clone();
    let mut assignment: Vec<usize> = (0..g.len()).collect();

    for _ in 0..MAX_OUTER_ITERATIONS {
        let moved = local_move(&g, &mut assignment, rng, gamma);
        let (renumbered, count) = renumber(&assignment);
        assignment = renumbered;
        if count == g.len() && !moved {
            break;
        }
        let refined = refine(&g, &assignment, rng, gamma);
        let (refined, refined_count) = renumber(&refined);
        if refined_count == g.len() {
            break;
        }
        let (agg, refined_map) = aggregate(&g, &refined);
        // super-nodes inherit the partition community of their members
        let mut agg_assignment = vec![0usize; agg.len()];
        for v in 0..g.len() {
            agg_assignment[refined_map[v]] = assignment[v];
        }
        g = agg;
        let (renumbered, count) = renumber(&agg_assignment);
        assignment = renumbered;
        if g.len() <= 1 || count <= 1 {
            break;
        }
    }

    let mut result = vec![0usize; original_n];
    for (super_node, &c) in assignment.iter().enumerate() {
        for &orig in &g.groups[super_node] {
            result[orig] = c;
        }
    }
    result
}

/// Seeded Leiden community detection.
///
/// Runs local moving, refinement, and aggregation to convergence, with a
/// fixed number of seeded restarts; the partition with the best modularity
/// (at the given resolution) wins. Deterministic given `seed`; an edgeless
/// graph yields singletons.
pub fn leiden(graph: &UGraph, resolution: f64, seed: u64) -> Partition {
    let n = graph.node_count();
    if n == 0 || graph.edge_count() == 0 {
        return Partition::singletons(n);
    }
    let base = WGraph::from_ugraph(graph);
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Partition)> = None;
    for _ in 0..LEIDEN_RESTARTS {
        let sub_seed: u64 = seeder.gen();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
        let assignment = leiden_once(&base, resolution, &mut rng);
        let partition = Partition::from_assignment(assignment);
        let q: f64 = modularity_with_resolution(graph, &partition, resolution)
            .expect("edge count checked above");
        let better = match &best {
            Some((bq, _)) => q > *bq + EPS,
            None => true,
        };
        if better {
            best = Some((q, partition));
        }
    }
    best.expect("at least one restart").1
}
