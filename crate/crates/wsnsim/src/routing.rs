//! Energy-aware routing topology.
//!
//! Two weightings are computed over the communication graph and linearly
//! fused into the single topology agents are allowed to route on:
//!
//! - energy weights: each directed arc (i -> j) costs the inverse of j's
//!   normalized residual charge, so routes drift toward energy-rich nodes;
//! - spanning-tree weights: euclidean distance for edges on a minimum
//!   spanning tree, distance times a penalty for the rest, damping
//!   congestion without disconnecting off-tree pairs.
//!
//! The fused weight per arc is `lambda * energy + (1 - lambda) * tree`.
//! Arcs into dead nodes carry an infinite sentinel and are pruned along
//! with anything above the cost cutoff. Candidate routes are the k
//! cheapest simple paths under a hop bound; the route actually preferred
//! is the one minimizing the sample variance of on-path charge.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::energy::EnergyLedger;
use crate::error::ConfigError;
use crate::topology::CommGraph;

/// Directed per-arc weights keyed by (from, to).
pub type ArcWeights = BTreeMap<(usize, usize), f64>;

/// Tuning for graph fusion and candidate-path search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingParams {
    /// Fusion coefficient in [0, 1]: 1 = pure energy weights, 0 = pure tree.
    pub lambda: f64,
    /// Multiplier applied to distances of non-tree edges.
    pub off_tree_penalty: f64,
    /// Prune arcs whose fused weight exceeds this multiple of the median.
    pub cutoff_multiplier: f64,
    /// Candidate paths kept per (source, destination) pair.
    pub k_max: usize,
    /// Per-hop signal attenuation, percent.
    pub attenuation_pct: f64,
    /// Minimum end-to-end signal integrity fraction.
    pub integrity_floor: f64,
    /// Absolute ceiling on the hop bound.
    pub hop_cap: u32,
}

impl Default for RoutingParams {
    fn default() -> Self {
        RoutingParams {
            lambda: 0.5,
            off_tree_penalty: 3.0,
            cutoff_multiplier: 5.0,
            k_max: 32,
            attenuation_pct: 5.0,
            integrity_floor: 0.70,
            hop_cap: 10,
        }
    }
}

impl RoutingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::invalid("routing.lambda", "must be in [0, 1]"));
        }
        if self.off_tree_penalty < 1.0 {
            return Err(ConfigError::invalid(
                "routing.off_tree_penalty",
                "must be >= 1",
            ));
        }
        if self.cutoff_multiplier <= 0.0 {
            return Err(ConfigError::invalid(
                "routing.cutoff_multiplier",
                "must be > 0",
            ));
        }
        if self.k_max == 0 {
            return Err(ConfigError::invalid("routing.k_max", "must be >= 1"));
        }
        if !(0.0 < self.attenuation_pct && self.attenuation_pct < 100.0) {
            return Err(ConfigError::invalid(
                "routing.attenuation_pct",
                "must be in (0, 100)",
            ));
        }
        if !(0.0 < self.integrity_floor && self.integrity_floor < 1.0) {
            return Err(ConfigError::invalid(
                "routing.integrity_floor",
                "must be in (0, 1)",
            ));
        }
        if self.hop_cap == 0 {
            return Err(ConfigError::invalid("routing.hop_cap", "must be >= 1"));
        }
        Ok(())
    }
}

/// Energy weights: arc (i -> j) costs 1 / E_j with E_j the destination's
/// SoC normalized to (0, 1]. Dead destinations get the infinite sentinel.
pub fn mera_weights(graph: &CommGraph, ledger: &EnergyLedger) -> ArcWeights {
    let mut weights = ArcWeights::new();
    for &(i, j, _) in &graph.edges {
        for (from, to) in [(i, j), (j, i)] {
            let e = ledger.soc(to) / 100.0;
            let w = if e > 0.0 { 1.0 / e } else { f64::INFINITY };
            weights.insert((from, to), w);
        }
    }
    weights
}

/// Tree weights: Kruskal over euclidean distances; tree edges keep their
/// distance, off-tree edges pay `off_tree_penalty` times theirs. Both arc
/// directions carry the same value. On a disconnected graph this yields a
/// spanning forest.
pub fn mst_weights(graph: &CommGraph, off_tree_penalty: f64) -> (ArcWeights, Vec<(usize, usize)>) {
    let tree = kruskal(graph.node_count(), &graph.edges);
    let tree_set: std::collections::BTreeSet<(usize, usize)> = tree.iter().cloned().collect();
    let mut weights = ArcWeights::new();
    for &(i, j, d) in &graph.edges {
        let w = if tree_set.contains(&(i, j)) {
            d
        } else {
            d * off_tree_penalty
        };
        weights.insert((i, j), w);
        weights.insert((j, i), w);
    }
    (weights, tree)
}

/// Minimum spanning forest, edges returned as (i, j) with i < j.
/// Equal-weight edges are taken in (distance, i, j) order so the tree is
/// deterministic.
fn kruskal(n: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    let mut sorted: Vec<&(usize, usize, f64)> = edges.iter().collect();
    sorted.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut dsu = DisjointSet::new(n);
    let mut tree = Vec::new();
    for &&(i, j, _) in &sorted {
        if dsu.union(i, j) {
            tree.push((i, j));
            if tree.len() == n.saturating_sub(1) {
                break;
            }
        }
    }
    tree
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// One directed arc of the fused graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedArc {
    pub from: usize,
    pub to: usize,
    pub w_mera: f64,
    pub w_mst: f64,
    pub w_final: f64,
    pub retained: bool,
}

/// The fused routing topology: per-arc energy, tree, and fused weights,
/// with pruning applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedGraph {
    pub node_count: usize,
    pub lambda: f64,
    pub arcs: Vec<FusedArc>,
    /// Arc indices per source node, sorted by destination id.
    adjacency: Vec<Vec<usize>>,
    /// Retained out-arcs per node as (weight, destination), sorted by
    /// weight then destination. Rebuilt after pruning; the path search
    /// walks this directly.
    route_index: Vec<Vec<(f64, usize)>>,
    pub pruned_arc_count: usize,
    pub cost_cutoff: Option<f64>,
}

impl FusedGraph {
    /// Retained out-arcs of `node`.
    pub fn out_arcs(&self, node: usize) -> impl Iterator<Item = &FusedArc> + '_ {
        self.adjacency[node]
            .iter()
            .map(|&idx| &self.arcs[idx])
            .filter(|a| a.retained)
    }

    /// Retained neighbors of `node`, ascending by id.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.out_arcs(node).map(|a| a.to).collect()
    }

    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.out_arcs(from)
            .find(|a| a.to == to)
            .map(|a| a.w_final)
    }

    fn rebuild_route_index(&mut self) {
        let mut index = vec![Vec::new(); self.node_count];
        for arc in &self.arcs {
            if arc.retained {
                index[arc.from].push((arc.w_final, arc.to));
            }
        }
        for list in &mut index {
            list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        }
        self.route_index = index;
    }

    /// Dump all arcs (including pruned ones) as CSV for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from,to,w_mera,w_mst,w_final,retained\n");
        for a in &self.arcs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.from, a.to, a.w_mera, a.w_mst, a.w_final, a.retained
            ));
        }
        out
    }
}

/// Linear fusion of the two weight maps. Infinite energy weights propagate
/// to the fused value.
pub fn fuse(
    node_count: usize,
    w_mera: &ArcWeights,
    w_mst: &ArcWeights,
    lambda: f64,
) -> Result<FusedGraph, ConfigError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ConfigError::invalid("routing.lambda", "must be in [0, 1]"));
    }
    debug_assert_eq!(w_mera.len(), w_mst.len(), "weight maps must cover the same arcs");
    let mut arcs = Vec::with_capacity(w_mera.len());
    let mut adjacency = vec![Vec::new(); node_count];
    for (&(from, to), &wm) in w_mera {
        let ws = *w_mst
            .get(&(from, to))
            .expect("arc present in one weight map but not the other");
        let w_final = if wm.is_infinite() {
            f64::INFINITY
        } else {
            lambda * wm + (1.0 - lambda) * ws
        };
        adjacency[from].push(arcs.len());
        arcs.push(FusedArc {
            from,
            to,
            w_mera: wm,
            w_mst: ws,
            w_final,
            retained: true,
        });
    }
    let mut fg = FusedGraph {
        node_count,
        lambda,
        arcs,
        adjacency,
        route_index: Vec::new(),
        pruned_arc_count: 0,
        cost_cutoff: None,
    };
    fg.rebuild_route_index();
    Ok(fg)
}

/// Median of the finite fused weights; the pruning cutoff is a multiple of
/// this. `None` when no finite arc exists.
pub fn median_finite_weight(fg: &FusedGraph) -> Option<f64> {
    let mut finite: Vec<f64> = fg
        .arcs
        .iter()
        .map(|a| a.w_final)
        .filter(|w| w.is_finite())
        .collect();
    if finite.is_empty() {
        return None;
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = finite.len() / 2;
    Some(if finite.len() % 2 == 1 {
        finite[mid]
    } else {
        (finite[mid - 1] + finite[mid]) / 2.0
    })
}

/// Drop arcs with infinite fused weight, arcs over the cutoff, and arcs
/// touching dead nodes. Returns the number of arcs removed.
pub fn prune(fg: &mut FusedGraph, cost_cutoff: f64, ledger: &EnergyLedger) -> usize {
    assert!(cost_cutoff > 0.0, "cost cutoff must be > 0");
    let mut removed = 0;
    for arc in &mut fg.arcs {
        if !arc.retained {
            continue;
        }
        let dead_end = !ledger.is_alive(arc.from) || !ledger.is_alive(arc.to);
        if arc.w_final.is_infinite() || arc.w_final > cost_cutoff || dead_end {
            arc.retained = false;
            removed += 1;
        }
    }
    fg.pruned_arc_count += removed;
    fg.cost_cutoff = Some(cost_cutoff);
    fg.rebuild_route_index();
    removed
}

/// Largest hop count H such that (1 - attenuation/100)^H stays at or above
/// the integrity floor, capped at `hop_cap`. Errors when even a single hop
/// violates the floor.
pub fn max_hops(attenuation_pct: f64, integrity_floor: f64, hop_cap: u32) -> Result<u32, ConfigError> {
    if !(0.0 < attenuation_pct && attenuation_pct < 100.0) {
        return Err(ConfigError::invalid(
            "routing.attenuation_pct",
            "must be in (0, 100)",
        ));
    }
    if !(0.0 < integrity_floor && integrity_floor < 1.0) {
        return Err(ConfigError::invalid(
            "routing.integrity_floor",
            "must be in (0, 1)",
        ));
    }
    let per_hop = 1.0 - attenuation_pct / 100.0;
    let mut best = None;
    for h in 1..=hop_cap {
        if per_hop.powi(h as i32) >= integrity_floor {
            best = Some(h);
        } else {
            break;
        }
    }
    best.ok_or_else(|| {
        ConfigError::invalid(
            "routing",
            format!(
                "a single hop at {attenuation_pct}% attenuation already drops below \
                 integrity floor {integrity_floor}"
            ),
        )
    })
}

/// A simple path through the fused graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePath {
    /// Ordered node ids, source first, destination last.
    pub nodes: Vec<usize>,
    /// Sum of fused arc weights along the path.
    pub fused_weight: f64,
}

impl CandidatePath {
    pub fn hop_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// All simple paths from `src` to `dst` with at most `h_max` hops, truncated
/// to the `k_max` lowest-fused-weight paths. Order: ascending total weight,
/// ties by lexicographic node list.
///
/// The search is a depth-first walk with branch-and-bound: once `k_max`
/// complete paths are known, partial paths strictly heavier than the current
/// k-th best cannot contribute and are cut. Weights are nonnegative so the
/// bound is sound, and equal-weight partials are kept for the lexicographic
/// tie rule.
pub fn enumerate_paths(
    fg: &FusedGraph,
    src: usize,
    dst: usize,
    h_max: u32,
    k_max: usize,
) -> Vec<CandidatePath> {
    assert_ne!(src, dst, "enumerate_paths requires src != dst");
    if k_max == 0 || h_max == 0 {
        return Vec::new();
    }

    // Hop distance to the destination over retained arcs (followed
    // backwards). Subtrees that cannot reach it within the budget are
    // skipped; the prune is exact, so the result set is unaffected.
    let hops_to_dst = {
        let mut reverse = vec![Vec::new(); fg.node_count];
        for arc in fg.arcs.iter().filter(|a| a.retained) {
            reverse[arc.to].push(arc.from);
        }
        let mut dist = vec![u32::MAX; fg.node_count];
        dist[dst] = 0;
        let mut frontier = std::collections::VecDeque::from([dst]);
        while let Some(u) = frontier.pop_front() {
            for &v in &reverse[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    frontier.push_back(v);
                }
            }
        }
        dist
    };
    if hops_to_dst[src] > h_max {
        return Vec::new();
    }

    struct Search<'a> {
        fg: &'a FusedGraph,
        dst: usize,
        h_max: u32,
        k_max: usize,
        hops_to_dst: &'a [u32],
        visited: Vec<bool>,
        path: Vec<usize>,
        weight: f64,
        found: Vec<CandidatePath>,
        bound: f64,
    }

    impl Search<'_> {
        fn worst_kept(&self) -> f64 {
            self.bound
        }

        fn push_found(&mut self) {
            self.found.push(CandidatePath {
                nodes: self.path.clone(),
                fused_weight: self.weight,
            });
            if self.found.len() >= self.k_max {
                // Track the k-th smallest weight currently held.
                let mut ws: Vec<f64> = self.found.iter().map(|p| p.fused_weight).collect();
                ws.sort_by(|a, b| a.partial_cmp(b).unwrap());
                self.bound = ws[self.k_max - 1];
            }
        }

        fn dfs(&mut self, node: usize) {
            if node == self.dst {
                self.push_found();
                return;
            }
            if self.path.len() as u32 > self.h_max {
                return;
            }
            // Cheaper arcs first so the bound tightens early.
            for idx in 0..self.fg.route_index[node].len() {
                let (w, next) = self.fg.route_index[node][idx];
                if self.visited[next] {
                    continue;
                }
                if self.hops_to_dst[next] == u32::MAX
                    || self.path.len() as u32 + self.hops_to_dst[next] > self.h_max
                {
                    continue;
                }
                let total = self.weight + w;
                if self.found.len() >= self.k_max && total > self.worst_kept() {
                    continue;
                }
                self.visited[next] = true;
                self.path.push(next);
                self.weight = total;
                self.dfs(next);
                self.weight -= w;
                self.path.pop();
                self.visited[next] = false;
            }
        }
    }

    let mut search = Search {
        fg,
        dst,
        h_max,
        k_max,
        hops_to_dst: &hops_to_dst,
        visited: vec![false; fg.node_count],
        path: vec![src],
        weight: 0.0,
        found: Vec::new(),
        bound: f64::INFINITY,
    };
    search.visited[src] = true;
    search.dfs(src);

    let mut paths = search.found;
    paths.sort_by(|a, b| {
        a.fused_weight
            .partial_cmp(&b.fused_weight)
            .unwrap()
            .then_with(|| a.nodes.cmp(&b.nodes))
    });
    paths.truncate(k_max);
    paths
}

/// Sample variance (n - 1 denominator) of the SoC of every node on the
/// path, endpoints included. A 2-node path is the base case.
pub fn path_soc_variance(path: &CandidatePath, ledger: &EnergyLedger) -> f64 {
    let socs: Vec<f64> = path.nodes.iter().map(|&n| ledger.soc(n)).collect();
    assert!(socs.len() >= 2, "path variance needs at least 2 nodes");
    let mean = socs.iter().sum::<f64>() / socs.len() as f64;
    socs.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (socs.len() - 1) as f64
}

/// The candidate minimizing on-path SoC variance; ties go to fewer hops,
/// then the lexicographically smaller node list. `None` on empty input
/// (no-route signal).
pub fn select_min_variance_path<'a>(
    paths: &'a [CandidatePath],
    ledger: &EnergyLedger,
) -> Option<(&'a CandidatePath, f64)> {
    paths
        .iter()
        .map(|p| (p, path_soc_variance(p, ledger)))
        .min_by(|(pa, va), (pb, vb)| {
            va.partial_cmp(vb)
                .unwrap()
                .then_with(|| pa.hop_count().cmp(&pb.hop_count()))
                .then_with(|| pa.nodes.cmp(&pb.nodes))
        })
}

/// Betweenness centrality of every node over the retained fused arcs
/// (Brandes' accumulation with Dijkstra, arc weights = fused weights).
/// Endpoints are excluded, as usual.
pub fn betweenness(fg: &FusedGraph) -> Vec<f64> {
    let n = fg.node_count;
    let mut centrality = vec![0.0; n];

    for source in 0..n {
        // Dijkstra with path counting.
        let mut dist = vec![f64::INFINITY; n];
        let mut sigma = vec![0.0f64; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut order: Vec<usize> = Vec::new();
        let mut done = vec![false; n];
        dist[source] = 0.0;
        sigma[source] = 1.0;

        let mut heap = std::collections::BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if done[u] || d > dist[u] {
                continue;
            }
            done[u] = true;
            order.push(u);
            for arc in fg.out_arcs(u) {
                let nd = dist[u] + arc.w_final;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    sigma[arc.to] = sigma[u];
                    preds[arc.to] = vec![u];
                    heap.push(HeapEntry {
                        dist: nd,
                        node: arc.to,
                    });
                } else if nd == dist[arc.to] && nd.is_finite() {
                    sigma[arc.to] += sigma[u];
                    preds[arc.to].push(u);
                }
            }
        }

        let mut delta = vec![0.0f64; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                if sigma[w] > 0.0 {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
            }
            if w != source {
                centrality[w] += delta[w];
            }
        }
    }
    centrality
}

struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on distance, ties by node id for determinism.
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.node.cmp(&self.node))
    }
}

/// Percentile of a value set by nearest rank (ascending).
pub fn percentile(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::to_millis;
    use crate::topology::{build_comm_graph, NodeRecord, Role};
    use proptest::prelude::*;

    fn line_graph(spacing: f64, count: usize) -> CommGraph {
        let nodes: Vec<NodeRecord> = (0..count)
            .map(|id| NodeRecord {
                id,
                position: [id as f64 * spacing, 0.0, 0.0],
                role: Role::Sensor,
                buffer_len: 0,
            })
            .collect();
        build_comm_graph(nodes, spacing * 1.01, 0).unwrap()
    }

    fn square_with_diagonal() -> CommGraph {
        let nodes: Vec<NodeRecord> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| NodeRecord {
                id,
                position: [x, y, 0.0],
                role: Role::Sensor,
                buffer_len: 0,
            })
            .collect();
        // Radius covers sides and the 0-2 diagonal.
        build_comm_graph(nodes, 1.5, 0).unwrap()
    }

    fn fused_uniform(graph: &CommGraph, ledger: &EnergyLedger, lambda: f64) -> FusedGraph {
        let mera = mera_weights(graph, ledger);
        let (mst, _) = mst_weights(graph, 3.0);
        fuse(graph.node_count(), &mera, &mst, lambda).unwrap()
    }

    #[test]
    fn mera_inverse_energy() {
        let g = line_graph(1.0, 2);
        let mut ledger = EnergyLedger::new(2);
        let w = mera_weights(&g, &ledger);
        assert_eq!(w[&(0, 1)], 1.0);

        ledger.apply_cost(1, to_millis(50.0)).unwrap();
        let w = mera_weights(&g, &ledger);
        assert_eq!(w[&(0, 1)], 2.0);
        assert_eq!(w[&(1, 0)], 1.0);

        ledger.apply_cost(1, to_millis(50.0)).unwrap();
        let w = mera_weights(&g, &ledger);
        assert!(w[&(0, 1)].is_infinite());
    }

    #[test]
    fn mst_line_keeps_unit_edges() {
        let g = line_graph(1.0, 3);
        let (_, tree) = mst_weights(&g, 3.0);
        assert_eq!(tree, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn mst_square_excludes_diagonal() {
        let g = square_with_diagonal();
        let (w, tree) = mst_weights(&g, 3.0);
        assert_eq!(tree.len(), 3);
        assert!(!tree.contains(&(0, 2)));
        // Off-tree diagonal is penalized, not dropped.
        let d = 2.0f64.sqrt();
        assert_eq!(w[&(0, 2)], d * 3.0);
    }

    /// Exhaustive spanning-tree oracle: minimum total distance over all
    /// edge subsets of size n-1 that span the graph.
    pub(crate) fn brute_force_mst_weight(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
        let m = edges.len();
        if n == 0 || m < n - 1 {
            return None;
        }
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << m) {
            if (mask.count_ones() as usize) != n - 1 {
                continue;
            }
            let mut dsu = DisjointSet::new(n);
            let mut weight = 0.0;
            let mut acyclic = true;
            for (k, &(i, j, d)) in edges.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    if !dsu.union(i, j) {
                        acyclic = false;
                        break;
                    }
                    weight += d;
                }
            }
            if acyclic {
                let root = dsu.find(0);
                if (0..n).all(|v| dsu.find(v) == root) {
                    best = Some(match best {
                        Some(b) if b <= weight => b,
                        _ => weight,
                    });
                }
            }
        }
        best
    }

    #[test]
    fn mst_matches_exhaustive_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let n = rng.random_range(4..=7);
            let nodes: Vec<NodeRecord> = (0..n)
                .map(|id| NodeRecord {
                    id,
                    position: [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0, 0.0],
                    role: Role::Sensor,
                    buffer_len: 0,
                })
                .collect();
            let g = build_comm_graph(nodes, 8.0, 0).unwrap();
            let Some(oracle) = brute_force_mst_weight(n, &g.edges) else {
                continue;
            };
            let tree = kruskal(n, &g.edges);
            if tree.len() != n - 1 {
                continue; // disconnected instance, oracle was None anyway
            }
            let dist: std::collections::BTreeMap<(usize, usize), f64> = g
                .edges
                .iter()
                .map(|&(i, j, d)| ((i, j), d))
                .collect();
            let total: f64 = tree.iter().map(|e| dist[e]).sum();
            assert!((total - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let g = line_graph(4.0, 2);
        let mut ledger = EnergyLedger::new(2);
        ledger.apply_cost(1, to_millis(50.0)).unwrap(); // w_mera(0->1) = 2
        let mera = mera_weights(&g, &ledger);
        let (mst, _) = mst_weights(&g, 3.0); // w_mst = 4 (tree edge)

        let pure_mera = fuse(2, &mera, &mst, 1.0).unwrap();
        assert_eq!(pure_mera.weight(0, 1), Some(2.0));

        let pure_mst = fuse(2, &mera, &mst, 0.0).unwrap();
        assert_eq!(pure_mst.weight(0, 1), Some(4.0));

        let half = fuse(2, &mera, &mst, 0.5).unwrap();
        assert_eq!(half.weight(0, 1), Some(3.0));

        assert!(fuse(2, &mera, &mst, 1.5).is_err());
    }

    #[test]
    fn prune_rules() {
        let g = line_graph(1.0, 3);
        let mut ledger = EnergyLedger::new(3);
        ledger.apply_cost(2, to_millis(100.0)).unwrap(); // node 2 dead

        let mut fg = fused_uniform(&g, &ledger, 0.5);
        // Arc into dead node is infinite; both its directions must go.
        let removed = prune(&mut fg, 100.0, &ledger);
        assert_eq!(removed, 2);
        assert!(fg.weight(1, 2).is_none());
        assert!(fg.weight(2, 1).is_none());
        assert!(fg.weight(0, 1).is_some());

        // Cutoff below the minimum clears everything.
        let mut fg = fused_uniform(&g, &EnergyLedger::new(3), 0.5);
        prune(&mut fg, 1e-9, &EnergyLedger::new(3));
        assert_eq!(fg.neighbors(0).len(), 0);

        // Generous cutoff with everyone alive is a no-op.
        let mut fg = fused_uniform(&g, &EnergyLedger::new(3), 0.5);
        let removed = prune(&mut fg, 1e9, &EnergyLedger::new(3));
        assert_eq!(removed, 0);
    }

    #[test]
    fn prune_never_drops_cheap_finite_arcs() {
        let g = square_with_diagonal();
        let ledger = EnergyLedger::new(4);
        let mut fg = fused_uniform(&g, &ledger, 0.5);
        let cutoff = 2.0;
        let kept_before: Vec<(usize, usize, f64)> = fg
            .arcs
            .iter()
            .filter(|a| a.w_final.is_finite() && a.w_final <= cutoff)
            .map(|a| (a.from, a.to, a.w_final))
            .collect();
        prune(&mut fg, cutoff, &ledger);
        for (from, to, w) in kept_before {
            assert_eq!(fg.weight(from, to), Some(w));
        }
    }

    #[test]
    fn hop_bound_cases() {
        assert_eq!(max_hops(5.0, 0.70, 10).unwrap(), 6);
        assert_eq!(max_hops(30.0, 0.70, 10).unwrap(), 1);
        // A vanishing floor leaves the cap in charge.
        assert_eq!(max_hops(5.0, 1e-12, 10).unwrap(), 10);
        // One hop already below the floor: configuration error.
        assert!(max_hops(50.0, 0.70, 10).is_err());
    }

    #[test]
    fn enumerate_direct_and_blocked() {
        let g = line_graph(1.0, 3);
        let ledger = EnergyLedger::new(3);
        let fg = fused_uniform(&g, &ledger, 0.5);

        let direct = enumerate_paths(&fg, 0, 1, 1, 8);
        assert_eq!(direct.len(), 1);
        assert_eq!(direct[0].nodes, vec![0, 1]);

        // a-b-c with a 1-hop budget: the only path needs 2 hops.
        let blocked = enumerate_paths(&fg, 0, 2, 1, 8);
        assert!(blocked.is_empty());
    }

    #[test]
    fn enumerate_square_corner_to_corner() {
        let nodes: Vec<NodeRecord> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| NodeRecord {
                id,
                position: [x, y, 0.0],
                role: Role::Sensor,
                buffer_len: 0,
            })
            .collect();
        let g = build_comm_graph(nodes, 1.0, 0).unwrap(); // sides only
        let fg = fused_uniform(&g, &EnergyLedger::new(4), 0.5);
        let paths = enumerate_paths(&fg, 0, 2, 2, 8);
        assert_eq!(paths.len(), 2);
        for p in &paths {
            assert_eq!(p.hop_count(), 2);
        }
    }

    #[test]
    fn path_variance_cases() {
        let ledger = {
            let mut l = EnergyLedger::new(3);
            // SoCs 100, 60 for the 2-node case below.
            l.apply_cost(1, to_millis(40.0)).unwrap();
            l
        };
        let two = CandidatePath {
            nodes: vec![0, 1],
            fused_weight: 0.0,
        };
        assert_eq!(path_soc_variance(&two, &ledger), 800.0);

        let mut uniform = EnergyLedger::new(3);
        for i in 0..3 {
            uniform.apply_cost(i, to_millis(20.0)).unwrap();
        }
        let three = CandidatePath {
            nodes: vec![0, 1, 2],
            fused_weight: 0.0,
        };
        assert_eq!(path_soc_variance(&three, &uniform), 0.0);

        let mut sloped = EnergyLedger::new(3);
        sloped.apply_cost(0, to_millis(10.0)).unwrap(); // 90
        sloped.apply_cost(1, to_millis(30.0)).unwrap(); // 70
        sloped.apply_cost(2, to_millis(50.0)).unwrap(); // 50
        assert_eq!(path_soc_variance(&three, &sloped), 400.0);
    }

    #[test]
    fn select_prefers_low_variance_then_fewer_hops() {
        let mut ledger = EnergyLedger::new(5);
        ledger.apply_cost(3, to_millis(40.0)).unwrap(); // node 3 at 60

        let flat = CandidatePath {
            nodes: vec![0, 1, 2],
            fused_weight: 1.0,
        };
        let spread = CandidatePath {
            nodes: vec![0, 3],
            fused_weight: 0.5,
        };
        let paths = vec![spread.clone(), flat.clone()];
        let (best, var) = select_min_variance_path(&paths, &ledger).unwrap();
        assert_eq!(best.nodes, flat.nodes);
        assert_eq!(var, 0.0);

        // Equal variance: fewer hops wins.
        let short = CandidatePath {
            nodes: vec![0, 1],
            fused_weight: 9.0,
        };
        let long = CandidatePath {
            nodes: vec![0, 1, 2],
            fused_weight: 1.0,
        };
        let paths = vec![long, short];
        let (best, _) = select_min_variance_path(&paths, &ledger).unwrap();
        assert_eq!(best.nodes, vec![0, 1]);

        // Singleton input returns that candidate.
        let only = vec![flat.clone()];
        let (best, _) = select_min_variance_path(&only, &ledger).unwrap();
        assert_eq!(best.nodes, flat.nodes);

        // Empty input: no-route signal.
        assert!(select_min_variance_path(&[], &ledger).is_none());
    }

    #[test]
    fn betweenness_line_center_dominates() {
        let g = line_graph(1.0, 3);
        let fg = fused_uniform(&g, &EnergyLedger::new(3), 0.0);
        let c = betweenness(&fg);
        // Node 1 sits on both (0,2) shortest paths (one per direction).
        assert_eq!(c, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn percentile_nearest_rank_rule() {
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 80.0), Some(4.0));
        assert_eq!(percentile(&v, 100.0), Some(5.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    proptest! {
        #[test]
        fn fuse_is_symmetric_in_lambda(lambda in 0.0f64..=1.0, wm in 0.01f64..10.0, ws in 0.01f64..10.0) {
            let mut a = ArcWeights::new();
            a.insert((0, 1), wm);
            let mut b = ArcWeights::new();
            b.insert((0, 1), ws);
            let fused_ab = fuse(2, &a, &b, lambda).unwrap();
            let fused_ba = fuse(2, &b, &a, 1.0 - lambda).unwrap();
            let x = fused_ab.weight(0, 1).unwrap();
            let y = fused_ba.weight(0, 1).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn enumerated_paths_are_simple_and_bounded(seed in 0u64..500, h_max in 1u32..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4usize..9);
            let nodes: Vec<NodeRecord> = (0..n).map(|id| NodeRecord {
                id,
                position: [rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0, 0.0],
                role: Role::Sensor,
                buffer_len: 0,
            }).collect();
            let g = build_comm_graph(nodes, 4.0, 0).unwrap();
            let fg = fused_uniform(&g, &EnergyLedger::new(n), 0.5);
            let paths = enumerate_paths(&fg, 0, n - 1, h_max, 16);
            for p in &paths {
                prop_assert!(p.hop_count() as u32 <= h_max);
                let mut seen = std::collections::BTreeSet::new();
                prop_assert!(p.nodes.iter().all(|x| seen.insert(*x)));
                for w in p.nodes.windows(2) {
                    prop_assert!(fg.weight(w[0], w[1]).is_some());
                }
            }
            // Sorted by weight.
            for w in paths.windows(2) {
                prop_assert!(w[0].fused_weight <= w[1].fused_weight + 1e-12);
            }
        }
    }
}
