//! Tabular Q-learning agents: state observation, feasible actions,
//! epsilon-greedy selection, the composed reward schedule, and value
//! updates.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

use crate::energy::{discretize_soc, EnergyLedger, SocLevel};
use crate::error::ConfigError;
use crate::routing::FusedGraph;
use crate::topology::{euclidean, CommGraph, Role};

/// Discretized observation for one node. Every field lives in a small
/// finite bin set so the joint space is enumerable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateVector {
    pub soc_level: SocLevel,
    /// Distance to sink, normalized by region diagonal, 5 bins.
    pub dist_sink: u8,
    /// Distance to current transmitter, normalized, 5 bins.
    pub dist_tx: u8,
    /// Buffer occupancy: empty / at most half capacity / heavier.
    pub queue: u8,
    /// Estimated hop count to sink: 1 / 2 / 3 / >=4 (unreachable maps to the top bin).
    pub hops_est: u8,
    /// Route-usage counter: 0 / 1-3 / >=4.
    pub hotspot: u8,
    /// Mean SoC of alive neighbors.
    pub neigh_energy: SocLevel,
    pub role: Role,
}

impl StateVector {
    /// Compact key for the flat-file dump: one digit per field.
    pub fn key_string(&self) -> String {
        let role = match self.role {
            Role::Sensor => 0,
            Role::Forwarder => 1,
            Role::Transmitter => 2,
        };
        format!(
            "{}{}{}{}{}{}{}{}",
            self.soc_level.index(),
            self.dist_sink,
            self.dist_tx,
            self.queue,
            self.hops_est,
            self.hotspot,
            self.neigh_energy.index(),
            role
        )
    }
}

/// One routing decision. Ordering is the deterministic tie-break order:
/// TransmitTo by neighbor id, then Sleep, Drop, RequestTransmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutingAction {
    TransmitTo(usize),
    Sleep,
    Drop,
    RequestTransmitter,
}

impl fmt::Display for RoutingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutingAction::TransmitTo(j) => write!(f, "tx:{j}"),
            RoutingAction::Sleep => write!(f, "sleep"),
            RoutingAction::Drop => write!(f, "drop"),
            RoutingAction::RequestTransmitter => write!(f, "reqtx"),
        }
    }
}

impl RoutingAction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sleep" => Some(RoutingAction::Sleep),
            "drop" => Some(RoutingAction::Drop),
            "reqtx" => Some(RoutingAction::RequestTransmitter),
            other => other
                .strip_prefix("tx:")
                .and_then(|id| id.parse().ok())
                .map(RoutingAction::TransmitTo),
        }
    }
}

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Multiplicative per-episode decay applied to epsilon.
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.3,
            epsilon_decay: 0.98,
            epsilon_floor: 0.05,
        }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError::invalid("rl.alpha", "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ConfigError::invalid("rl.gamma", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ConfigError::invalid("rl.epsilon", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return Err(ConfigError::invalid("rl.epsilon_decay", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) {
            return Err(ConfigError::invalid("rl.epsilon_floor", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Action-value table. Absent entries read as zero; one table per node in
/// local mode, one shared table in cloud mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QStore {
    table: HashMap<(StateVector, RoutingAction), f64>,
}

impl QStore {
    pub fn new() -> Self {
        QStore::default()
    }

    pub fn get(&self, s: &StateVector, a: &RoutingAction) -> f64 {
        self.table.get(&(*s, *a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: StateVector, a: RoutingAction, v: f64) {
        self.table.insert((s, a), v);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn max_over(&self, s: &StateVector, actions: &[RoutingAction]) -> f64 {
        if actions.is_empty() {
            return 0.0;
        }
        actions
            .iter()
            .map(|a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_value(&self) -> f64 {
        self.table.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flat text dump, one `state<TAB>action<TAB>value` line, sorted.
    pub fn to_flat_file(&self) -> String {
        let mut rows: Vec<(String, String, f64)> = self
            .table
            .iter()
            .map(|((s, a), v)| (s.key_string(), a.to_string(), *v))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut out = String::new();
        for (s, a, v) in rows {
            out.push_str(&format!("{s}\t{a}\t{v}\n"));
        }
        out
    }

    pub fn from_flat_file(text: &str) -> Option<Self> {
        let mut store = QStore::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split('\t');
            let key = parts.next()?;
            let action = RoutingAction::parse(parts.next()?)?;
            let value: f64 = parts.next()?.parse().ok()?;
            store.set(state_from_key(key)?, action, value);
        }
        Some(store)
    }
}

fn state_from_key(key: &str) -> Option<StateVector> {
    let digits: Vec<u8> = key
        .chars()
        .map(|c| c.to_digit(10).map(|d| d as u8))
        .collect::<Option<_>>()?;
    if digits.len() != 8 {
        return None;
    }
    let level = |d: u8| match d {
        0 => Some(SocLevel::VeryLow),
        1 => Some(SocLevel::Low),
        2 => Some(SocLevel::Medium),
        3 => Some(SocLevel::High),
        4 => Some(SocLevel::VeryHigh),
        _ => None,
    };
    let role = match digits[7] {
        0 => Role::Sensor,
        1 => Role::Forwarder,
        2 => Role::Transmitter,
        _ => return None,
    };
    Some(StateVector {
        soc_level: level(digits[0])?,
        dist_sink: digits[1],
        dist_tx: digits[2],
        queue: digits[3],
        hops_est: digits[4],
        hotspot: digits[5],
        neigh_energy: level(digits[6])?,
        role,
    })
}

/// Everything observation needs from the run, frozen for the decision.
pub struct EnvSnapshot<'a> {
    pub comm: &'a CommGraph,
    pub ledger: &'a EnergyLedger,
    pub roles: &'a [Role],
    pub transmitter: usize,
    pub buffer_len: &'a [u32],
    pub buffer_capacity: u32,
    /// BFS hop distance to the sink over alive nodes.
    pub hops_to_sink: &'a [Option<u32>],
    pub region_diagonal: f64,
}

fn distance_bin(normalized: f64) -> u8 {
    ((normalized * 5.0).floor() as i64).clamp(0, 4) as u8
}

fn queue_bin(len: u32, capacity: u32) -> u8 {
    // Empty is its own bin: a node holding traffic must never alias the
    // state it sleeps in when idle.
    if len == 0 {
        0
    } else if len <= capacity.max(1) / 2 {
        1
    } else {
        2
    }
}

fn hops_bin(hops: Option<u32>) -> u8 {
    match hops {
        Some(0) | Some(1) => 0,
        Some(2) => 1,
        Some(3) => 2,
        _ => 3, // >= 4 or unreachable
    }
}

fn hotspot_bin(usage: u32) -> u8 {
    match usage {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

/// Build the node's discretized state. Distances are normalized by the
/// region diagonal; the neighbor mean runs over alive neighbors only, and
/// a node with no alive neighbors observes VeryLow there.
pub fn observe_state(node: usize, env: &EnvSnapshot) -> StateVector {
    let pos = env.comm.nodes[node].position;
    let sink_pos = env.comm.nodes[env.comm.sink].position;
    let tx_pos = env.comm.nodes[env.transmitter].position;

    let alive_neighbor_socs: Vec<f64> = env
        .comm
        .neighbors(node)
        .iter()
        .filter(|(v, _)| env.ledger.is_alive(*v))
        .map(|(v, _)| env.ledger.soc(*v))
        .collect();
    let neigh_energy = if alive_neighbor_socs.is_empty() {
        SocLevel::VeryLow
    } else {
        discretize_soc(
            alive_neighbor_socs.iter().sum::<f64>() / alive_neighbor_socs.len() as f64,
        )
    };

    StateVector {
        soc_level: discretize_soc(env.ledger.soc(node)),
        dist_sink: distance_bin(euclidean(pos, sink_pos) / env.region_diagonal),
        dist_tx: distance_bin(euclidean(pos, tx_pos) / env.region_diagonal),
        queue: queue_bin(env.buffer_len[node], env.buffer_capacity),
        hops_est: hops_bin(env.hops_to_sink[node]),
        hotspot: hotspot_bin(env.ledger.usage_count(node)),
        neigh_energy,
        role: env.roles[node],
    }
}

/// The action set for a node: one TransmitTo per alive fused-graph
/// neighbor, Sleep and Drop always, RequestTransmitter when the node's SoC
/// reaches the 70th percentile of alive nodes. Sorted in the deterministic
/// tie-break order.
pub fn feasible_actions(
    node: usize,
    fg: &FusedGraph,
    ledger: &EnergyLedger,
) -> Vec<RoutingAction> {
    let mut actions: Vec<RoutingAction> = fg
        .neighbors(node)
        .into_iter()
        .filter(|&v| ledger.is_alive(v))
        .map(RoutingAction::TransmitTo)
        .collect();
    actions.push(RoutingAction::Sleep);
    actions.push(RoutingAction::Drop);
    if let Some(threshold) = ledger.alive_soc_percentile(70.0) {
        if ledger.soc(node) >= threshold {
            actions.push(RoutingAction::RequestTransmitter);
        }
    }
    actions.sort();
    actions
}

/// Epsilon-greedy selection: with probability epsilon the action is drawn
/// uniformly; otherwise the max-Q action wins, exact ties resolved by the
/// deterministic action order.
pub fn select_action<R: Rng>(
    q: &QStore,
    s: &StateVector,
    actions: &[RoutingAction],
    epsilon: f64,
    rng: &mut R,
) -> RoutingAction {
    assert!(!actions.is_empty(), "action set must be non-empty");
    if rng.random::<f64>() < epsilon {
        return actions[rng.random_range(0..actions.len())];
    }
    let best = actions
        .iter()
        .map(|a| q.get(s, a))
        .fold(f64::NEG_INFINITY, f64::max);
    *actions
        .iter()
        .find(|a| q.get(s, a) == best)
        .expect("non-empty action set has a maximizer")
}

/// Routing-decision policy for a node holding a packet. Transmit targets
/// are Q-equivalent by construction (the composed episode reward cannot
/// tell neighbors apart), so exploitation compares action kinds: the
/// transmit family is valued at its maximal entry against Sleep, Drop, and
/// RequestTransmitter. When the transmit kind wins, the packet goes to the
/// successor on the minimum-variance candidate path; without one, to the
/// max-Q transmit entry (ties to the lowest neighbor id). Exploration is
/// uniform over the full action set, exactly as in `select_action`.
pub fn route_action<R: Rng>(
    q: &QStore,
    s: &StateVector,
    actions: &[RoutingAction],
    epsilon: f64,
    rng: &mut R,
    preferred: Option<usize>,
) -> RoutingAction {
    assert!(!actions.is_empty(), "action set must be non-empty");
    if rng.random::<f64>() < epsilon {
        return actions[rng.random_range(0..actions.len())];
    }
    let transmit_max = actions
        .iter()
        .filter(|a| matches!(a, RoutingAction::TransmitTo(_)))
        .map(|a| q.get(s, a))
        .fold(f64::NEG_INFINITY, f64::max);
    // Kind candidates in deterministic order: the transmit family first,
    // then the singleton kinds.
    let mut best: Option<(f64, usize)> = if transmit_max.is_finite() {
        Some((transmit_max, 0))
    } else {
        None
    };
    let mut kind_action: [Option<RoutingAction>; 4] = [None; 4];
    for a in actions {
        let rank = match a {
            RoutingAction::TransmitTo(_) => continue,
            RoutingAction::Sleep => 1,
            RoutingAction::Drop => 2,
            RoutingAction::RequestTransmitter => 3,
        };
        kind_action[rank] = Some(*a);
        let v = q.get(s, a);
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, rank));
        }
    }
    let (_, rank) = best.expect("non-empty action set has a kind");
    if rank == 0 {
        if let Some(p) = preferred {
            if actions.contains(&RoutingAction::TransmitTo(p)) {
                return RoutingAction::TransmitTo(p);
            }
        }
        return *actions
            .iter()
            .filter(|a| matches!(a, RoutingAction::TransmitTo(_)))
            .max_by(|a, b| {
                q.get(s, a)
                    .partial_cmp(&q.get(s, b))
                    .unwrap()
                    .then_with(|| b.cmp(a))
            })
            .expect("transmit kind won, so a transmit action exists");
    }
    kind_action[rank].expect("winning kind was recorded")
}

/// Reward magnitudes for each behavior, plus the grant thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSchedule {
    pub sink_delivery: f64,
    pub forward: f64,
    pub sense: f64,
    pub sleep: f64,
    pub drop: f64,
    pub avoid_hotspot: f64,
    /// Subtracted when a node's usage counter reaches the overuse threshold.
    /// Set to zero to recover a strictly non-negative schedule.
    pub overuse_penalty: f64,
    pub no_failure: f64,
    pub variance_decrease: f64,
    pub high_mean: f64,
    /// Network mean SoC must exceed this (percent) for the high-mean bonus.
    pub mean_threshold_pct: f64,
    /// Usage count at which the overuse penalty starts to apply.
    pub overuse_usage_threshold: u32,
    /// Paths whose max betweenness sits below this percentile count as
    /// hotspot-avoiding.
    pub centrality_percentile: f64,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        RewardSchedule {
            sink_delivery: 10.0,
            forward: 5.0,
            sense: 3.0,
            sleep: 1.0,
            drop: 0.0,
            avoid_hotspot: 2.0,
            overuse_penalty: 4.0,
            no_failure: 3.0,
            variance_decrease: 2.0,
            high_mean: 2.0,
            mean_threshold_pct: 40.0,
            // Twice the top hotspot-bin edge: the penalty is for nodes
            // that sit on overloaded paths repeatedly, not for everyone
            // hovering around ordinary relay duty.
            overuse_usage_threshold: 8,
            centrality_percentile: 80.0,
        }
    }
}

/// What one node did during an episode. Components are conditions, so each
/// reward row is granted at most once no matter how many packets the node
/// touched.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeEvents {
    pub sensed: bool,
    pub forwarded: bool,
    pub delivered_to_sink: bool,
    pub slept: bool,
    pub dropped: bool,
    /// Selected paths the node sat on whose max centrality was below the cut.
    pub low_centrality_paths: u32,
    /// Paths the node sat on that crossed the centrality cut.
    pub high_centrality_paths: u32,
    /// Usage counter at reward time.
    pub usage_count: u32,
}

/// Episode-wide outcomes shared by every agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GlobalOutcome {
    pub no_failure: bool,
    pub variance_decreased: bool,
    pub mean_above_threshold: bool,
}

/// Compose the episode reward for one node: the best role outcome, the
/// hotspot terms, and the shared global bonuses. Pure in its inputs, so
/// event ordering cannot matter.
pub fn compute_reward(events: &NodeEvents, global: &GlobalOutcome, schedule: &RewardSchedule) -> f64 {
    let role = if events.delivered_to_sink {
        schedule.sink_delivery
    } else if events.forwarded {
        schedule.forward
    } else if events.sensed {
        schedule.sense
    } else if events.slept {
        schedule.sleep
    } else if events.dropped {
        schedule.drop
    } else {
        0.0
    };

    let mut hotspot = 0.0;
    if events.low_centrality_paths > 0 && events.high_centrality_paths == 0 {
        hotspot += schedule.avoid_hotspot;
    }
    if events.usage_count >= schedule.overuse_usage_threshold {
        hotspot -= schedule.overuse_penalty;
    }

    let mut global_reward = 0.0;
    if global.no_failure {
        global_reward += schedule.no_failure;
    }
    if global.variance_decreased {
        global_reward += schedule.variance_decrease;
    }
    if global.mean_above_threshold {
        global_reward += schedule.high_mean;
    }

    role + hotspot + global_reward
}

/// Standard one-step Q-learning update. `s_next` of `None` marks a
/// terminal transition (the max term reads zero).
pub fn q_update(
    q: &mut QStore,
    s: &StateVector,
    a: &RoutingAction,
    reward: f64,
    s_next: Option<&StateVector>,
    actions_next: &[RoutingAction],
    params: &RlParams,
) {
    let current = q.get(s, a);
    let max_next = match s_next {
        Some(sn) if !actions_next.is_empty() => actions_next
            .iter()
            .map(|an| q.get(sn, an))
            .fold(f64::NEG_INFINITY, f64::max),
        _ => 0.0,
    };
    let updated = current + params.alpha * (reward + params.gamma * max_next - current);
    q.set(*s, *a, updated);
}
