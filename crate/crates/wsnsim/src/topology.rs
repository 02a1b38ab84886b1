//! Node deployment and the range-limited communication graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Rectangular (2D) or box (3D) deployment region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Length per axis; two or three entries.
    pub extents: Vec<f64>,
}

impl Region {
    pub fn new(extents: Vec<f64>) -> Result<Self, ConfigError> {
        let region = Region { extents };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.extents.len() != 2 && self.extents.len() != 3 {
            return Err(ConfigError::invalid(
                "region.extents",
                format!("must have 2 or 3 axes, got {}", self.extents.len()),
            ));
        }
        if self.extents.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(ConfigError::invalid(
                "region.extents",
                "every extent must be finite and > 0",
            ));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> usize {
        self.extents.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.extents.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (i, e) in self.extents.iter().enumerate() {
            c[i] = e / 2.0;
        }
        c
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        for axis in 0..3 {
            let extent = self.extents.get(axis).copied().unwrap_or(0.0);
            if p[axis] < 0.0 || p[axis] > extent {
                return false;
            }
        }
        true
    }
}

/// Role a node can hold. Exactly one node holds `Transmitter` after each
/// election.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Sensor,
    Forwarder,
    Transmitter,
}

/// One sensor node: identity, position, role, and buffer occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    /// Coordinates; unused axes are zero.
    pub position: [f64; 3],
    pub role: Role,
    /// Packets held this episode.
    pub buffer_len: u32,
}

pub fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Place `n` nodes uniformly at random in the region. One coordinate draw
/// per axis per node, in node-id order, so a fixed seed reproduces the same
/// layout bit-for-bit.
pub fn deploy_nodes<R: Rng>(
    region: &Region,
    n: usize,
    rng: &mut R,
) -> Result<Vec<NodeRecord>, ConfigError> {
    region.validate()?;
    if n < 2 {
        return Err(ConfigError::invalid(
            "nodes",
            format!("need at least 2 nodes, got {n}"),
        ));
    }
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let mut position = [0.0; 3];
        for (axis, extent) in region.extents.iter().enumerate() {
            position[axis] = rng.random::<f64>() * extent;
        }
        nodes.push(NodeRecord {
            id,
            position,
            role: Role::Sensor,
            buffer_len: 0,
        });
    }
    Ok(nodes)
}

/// Build nodes from explicit coordinates (regression fixtures).
pub fn nodes_from_placements(
    region: &Region,
    placements: &[Vec<f64>],
) -> Result<Vec<NodeRecord>, ConfigError> {
    region.validate()?;
    if placements.len() < 2 {
        return Err(ConfigError::invalid(
            "placements",
            format!("need at least 2 nodes, got {}", placements.len()),
        ));
    }
    let mut nodes = Vec::with_capacity(placements.len());
    for (id, coords) in placements.iter().enumerate() {
        if coords.len() != region.dimensions() {
            return Err(ConfigError::invalid(
                "placements",
                format!(
                    "node {id} has {} coordinates but the region has {} axes",
                    coords.len(),
                    region.dimensions()
                ),
            ));
        }
        let mut position = [0.0; 3];
        for (axis, c) in coords.iter().enumerate() {
            position[axis] = *c;
        }
        if !region.contains(position) {
            return Err(ConfigError::invalid(
                "placements",
                format!("node {id} at {position:?} lies outside the region"),
            ));
        }
        nodes.push(NodeRecord {
            id,
            position,
            role: Role::Sensor,
            buffer_len: 0,
        });
    }
    Ok(nodes)
}

/// The disk-model communication graph: an undirected edge joins every pair
/// within the coverage radius (inclusive threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub nodes: Vec<NodeRecord>,
    /// Undirected edges (i < j) with their euclidean distance.
    pub edges: Vec<(usize, usize, f64)>,
    /// Adjacency: for each node, (neighbor, distance) sorted by neighbor id.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub sink: usize,
    pub radius: f64,
}

impl CommGraph {
    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// BFS hop distance from every node to `target`, restricted to nodes
    /// where `usable` is true. `None` marks unreachable nodes.
    pub fn hop_distances(&self, target: usize, usable: &[bool]) -> Vec<Option<u32>> {
        let n = self.node_count();
        let mut dist = vec![None; n];
        if !usable[target] {
            return dist;
        }
        dist[target] = Some(0);
        let mut frontier = std::collections::VecDeque::new();
        frontier.push_back(target);
        while let Some(u) = frontier.pop_front() {
            let d = dist[u].unwrap();
            for &(v, _) in &self.adjacency[u] {
                if usable[v] && dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    frontier.push_back(v);
                }
            }
        }
        dist
    }

    /// Ids of nodes with no path to the sink (full graph, everything usable).
    pub fn disconnected_from_sink(&self) -> Vec<usize> {
        let usable = vec![true; self.node_count()];
        let dist = self.hop_distances(self.sink, &usable);
        (0..self.node_count())
            .filter(|&i| dist[i].is_none())
            .collect()
    }
}

/// Connect every pair of nodes at euclidean distance <= `radius`.
pub fn build_comm_graph(
    nodes: Vec<NodeRecord>,
    radius: f64,
    sink: usize,
) -> Result<CommGraph, ConfigError> {
    if !radius.is_finite() || radius <= 0.0 {
        return Err(ConfigError::invalid("coverage", "radius must be > 0"));
    }
    if sink >= nodes.len() {
        return Err(ConfigError::invalid(
            "sink",
            format!("node id {sink} out of range (have {} nodes)", nodes.len()),
        ));
    }
    let n = nodes.len();
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(nodes[i].position, nodes[j].position);
            if d <= radius {
                edges.push((i, j, d));
                adjacency[i].push((j, d));
                adjacency[j].push((i, d));
            }
        }
    }
    Ok(CommGraph {
        nodes,
        edges,
        adjacency,
        sink,
        radius,
    })
}
