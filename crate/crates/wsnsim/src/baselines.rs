//! Reference protocols run under the same configs as the learning agents:
//! shortest-path multi-hop, single-hop, and a LEACH variant deep enough
//! for the delay comparison.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyLedger;
use crate::topology::CommGraph;

/// Minimum-hop path from `src` to `dst` over alive nodes, ignoring energy.
/// Among equal-hop paths the lexicographically smallest node list wins:
/// hop distances to `dst` are computed once, then the walk greedily takes
/// the smallest-id neighbor that still decreases the distance.
pub fn spmh_route(
    graph: &CommGraph,
    alive: &[bool],
    src: usize,
    dst: usize,
) -> Option<Vec<usize>> {
    if !alive[src] || !alive[dst] {
        return None;
    }
    if src == dst {
        return Some(vec![src]);
    }
    let dist = graph.hop_distances(dst, alive);
    dist[src]?;
    let mut path = vec![src];
    let mut current = src;
    while current != dst {
        let d = dist[current].unwrap();
        let next = graph
            .neighbors(current)
            .iter()
            .map(|&(v, _)| v)
            .filter(|&v| alive[v] && dist[v] == Some(d - 1))
            .min()?;
        path.push(next);
        current = next;
    }
    Some(path)
}

/// Whether the single-hop fallback may exceed the coverage radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SingleHopTarget {
    #[default]
    Transmitter,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleHopParams {
    /// Drop out-of-range sources instead of allowing a long-range attempt.
    pub strict_range: bool,
    pub target: SingleHopTarget,
}

impl Default for SingleHopParams {
    fn default() -> Self {
        SingleHopParams {
            strict_range: false,
            target: SingleHopTarget::Transmitter,
        }
    }
}

/// Outcome of a single-hop transmission attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum SingleHopOutcome {
    /// Within coverage: a plain one-hop transmission.
    InRange,
    /// Beyond coverage: a long-range blast whose energy cost scales with
    /// distance over the coverage radius.
    LongRange { cost_multiplier: f64 },
    Dropped,
}

pub fn single_hop_route(
    graph: &CommGraph,
    src: usize,
    target: usize,
    strict_range: bool,
) -> SingleHopOutcome {
    if src == target {
        return SingleHopOutcome::InRange;
    }
    let d = crate::topology::euclidean(graph.nodes[src].position, graph.nodes[target].position);
    if d <= graph.radius {
        SingleHopOutcome::InRange
    } else if strict_range {
        SingleHopOutcome::Dropped
    } else {
        SingleHopOutcome::LongRange {
            cost_multiplier: d / graph.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeachParams {
    /// Desired cluster-head fraction per round.
    pub ch_probability: f64,
    /// Setup time paid every round, seconds.
    pub base_setup_s: f64,
    /// Extra setup time at cycle-start rounds (eligibility reset), seconds.
    pub cycle_setup_s: f64,
}

impl Default for LeachParams {
    fn default() -> Self {
        LeachParams {
            ch_probability: 0.1,
            base_setup_s: 0.008,
            cycle_setup_s: 0.040,
        }
    }
}

impl LeachParams {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        if !(0.0 < self.ch_probability && self.ch_probability < 1.0) {
            return Err(crate::error::ConfigError::invalid(
                "leach.ch_probability",
                "must be in (0, 1)",
            ));
        }
        Ok(())
    }

    /// Rounds per election cycle.
    pub fn cycle_len(&self) -> u32 {
        (1.0 / self.ch_probability).ceil() as u32
    }
}

/// Rotating-eligibility election state.
#[derive(Debug, Clone)]
pub struct LeachState {
    served_this_cycle: Vec<bool>,
}

impl LeachState {
    pub fn new(node_count: usize) -> Self {
        LeachState {
            served_this_cycle: vec![false; node_count],
        }
    }
}

/// One round's clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct LeachRound {
    pub cluster_heads: Vec<usize>,
    /// For each node: its cluster head (heads map to themselves, dead
    /// nodes to None).
    pub assignment: Vec<Option<usize>>,
    /// True when the eligibility window reset this round.
    pub cycle_start: bool,
}

/// Classic threshold election: an eligible node becomes cluster head when
/// its uniform draw falls below p / (1 - p * (round mod cycle)). Nodes
/// that already served this cycle have threshold zero. If nobody wins, the
/// highest-SoC alive node is forced. Members join their nearest head.
/// Draws are taken in node-id order.
pub fn leach_round<R: Rng>(
    graph: &CommGraph,
    ledger: &EnergyLedger,
    state: &mut LeachState,
    round: u32,
    params: &LeachParams,
    rng: &mut R,
) -> LeachRound {
    let n = graph.node_count();
    let cycle = params.cycle_len();
    let phase = round % cycle;
    let cycle_start = phase == 0;
    if cycle_start {
        state.served_this_cycle.iter_mut().for_each(|s| *s = false);
    }
    let p = params.ch_probability;
    let threshold = p / (1.0 - p * phase as f64);

    let mut heads = Vec::new();
    for node in 0..n {
        if !ledger.is_alive(node) {
            continue;
        }
        let draw = rng.random::<f64>();
        if !state.served_this_cycle[node] && draw < threshold {
            heads.push(node);
            state.served_this_cycle[node] = true;
        }
    }
    if heads.is_empty() {
        // Forced election of the richest alive node, ties to the lowest id.
        let forced = ledger
            .alive_nodes()
            .max_by(|&a, &b| {
                ledger
                    .soc_millis(a)
                    .cmp(&ledger.soc_millis(b))
                    .then(b.cmp(&a))
            })
            .expect("leach_round requires at least one alive node");
        heads.push(forced);
        state.served_this_cycle[forced] = true;
    }

    let mut assignment = vec![None; n];
    for node in 0..n {
        if !ledger.is_alive(node) {
            continue;
        }
        if heads.contains(&node) {
            assignment[node] = Some(node);
            continue;
        }
        // Nearest head by euclidean distance, ties to the lower id. Range
        // is not enforced here: heads advertise at election power.
        let nearest = heads
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = crate::topology::euclidean(
                    graph.nodes[node].position,
                    graph.nodes[a].position,
                );
                let db = crate::topology::euclidean(
                    graph.nodes[node].position,
                    graph.nodes[b].position,
                );
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        assignment[node] = Some(nearest);
    }

    LeachRound {
        cluster_heads: heads,
        assignment,
        cycle_start,
    }
}
