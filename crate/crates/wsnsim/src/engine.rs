//! The episode loop.
//!
//! One run owns a single RNG stream consumed in a fixed order, so a
//! (config, seed) pair fully determines the report: deployment draws
//! first, then per episode the source draws, then per-agent draws in
//! packet/node order (for LEACH, the election draws sit between sources
//! and routing). Log output never touches the stream.
//!
//! Each episode executes, in order:
//!
//! 1. usage decay on its cadence, buffer/role reset, cloud report costs
//! 2. weight refresh: energy + tree weights, fusion, median-based pruning
//! 3. transmitter election (requests collected last episode)
//! 4. betweenness refresh and the path-selection ledger snapshot
//! 5. sensing at uniformly drawn alive sources
//! 6. per-packet hop-by-hop agent decisions (the learning protocol) or
//!    the baseline router
//! 7. the transmitter's aggregate send to the sink
//! 8. idle decisions for nodes that never acted
//! 9. idle/sleep costs, rewards, value updates, epsilon decay
//! 10. metrics snapshot and the exact energy audit
//!
//! The learning protocol's per-hop decision ranks next hops by Q-value;
//! exact ties are resolved toward the successor on the minimum-SoC-variance
//! candidate path, then by the deterministic action order. Hop budgets come
//! from the attenuation bound, and every routed hop uses a retained arc of
//! the episode's pruned fused graph.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::baselines::{self, LeachState, SingleHopOutcome, SingleHopTarget};
use crate::config::{Protocol, SimConfig};
use crate::delay::{self, Mode};
use crate::energy::{to_millis, EnergyLedger};
use crate::error::{ConfigError, SimError};
use crate::metrics::{
    EpisodeAudit, EpisodeMetrics, NodeSoc, RunReport, SocSnapshot, Termination,
};
use crate::rl::{
    self, compute_reward, observe_state, q_update, EnvSnapshot, GlobalOutcome, NodeEvents, QStore,
    RoutingAction, StateVector,
};
use crate::routing::{
    self, enumerate_paths, select_min_variance_path, CandidatePath, FusedGraph,
};
use crate::topology::{self, euclidean, CommGraph, Role};

/// Q-table ownership: one per node locally, one shared in the cloud.
pub enum QBank {
    Global(QStore),
    PerNode(Vec<QStore>),
}

impl QBank {
    fn store(&self, node: usize) -> &QStore {
        match self {
            QBank::Global(q) => q,
            QBank::PerNode(qs) => &qs[node],
        }
    }

    fn store_mut(&mut self, node: usize) -> &mut QStore {
        match self {
            QBank::Global(q) => q,
            QBank::PerNode(qs) => &mut qs[node],
        }
    }

    fn max_abs_value(&self) -> f64 {
        match self {
            QBank::Global(q) => q.max_abs_value(),
            QBank::PerNode(qs) => qs.iter().map(|q| q.max_abs_value()).fold(0.0, f64::max),
        }
    }

    pub fn global(&self) -> Option<&QStore> {
        match self {
            QBank::Global(q) => Some(q),
            QBank::PerNode(_) => None,
        }
    }
}

/// Pick the transmitter: the highest-SoC node among valid requesters (alive
/// and at or above the 70th percentile), otherwise the highest-SoC alive
/// node. Ties go to the lowest id. `None` when nothing is alive.
pub fn elect_transmitter(ledger: &EnergyLedger, requests: &[usize]) -> Option<usize> {
    let threshold = ledger.alive_soc_percentile(70.0)?;
    let best = |candidates: &mut dyn Iterator<Item = usize>| -> Option<usize> {
        candidates.max_by(|&a, &b| {
            ledger
                .soc_millis(a)
                .cmp(&ledger.soc_millis(b))
                .then(b.cmp(&a)) // lower id wins ties
        })
    };
    let mut valid_requesters = requests
        .iter()
        .copied()
        .filter(|&n| ledger.is_alive(n) && ledger.soc(n) >= threshold);
    if let Some(winner) = best(&mut valid_requesters) {
        return Some(winner);
    }
    best(&mut ledger.alive_nodes())
}

/// The variance bonus requires the spread to sit below this fraction of
/// its running peak.
const VARIANCE_DECREASE_MARGIN: f64 = 0.95;

struct PacketOutcome {
    delivered: bool,
    path_taken: Vec<usize>,
    no_route: bool,
}

/// Mutable state of one run.
pub struct RunState {
    pub config: SimConfig,
    rng: ChaCha8Rng,
    pub comm: CommGraph,
    pub ledger: EnergyLedger,
    pub roles: Vec<Role>,
    pub transmitter: usize,
    qbank: QBank,
    epsilon: f64,
    hop_bound: u32,
    /// Transmitter requests collected during the previous episode.
    requests: Vec<usize>,
    /// Request decisions whose outcome (winning or losing the next
    /// election) materializes one episode later; updated with that
    /// episode's reward so delivery credit reaches the volunteering
    /// decision.
    pending_request_updates: Vec<(usize, StateVector, RoutingAction)>,
    /// Packets each node transmitted last episode, for arrival rates.
    routed_prev: Vec<u32>,
    /// High-water mark of the population SoC variance.
    peak_variance: f64,
    /// Latched once the spread first drops clearly below its peak.
    variance_reduced: bool,
    pub pruned_arc_events: u64,
    pub no_route_events: u64,
    warnings: Vec<String>,
    leach: LeachState,
}

impl RunState {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nodes = match &config.placements {
            Some(p) => topology::nodes_from_placements(&config.region, p)?,
            None => topology::deploy_nodes(&config.region, config.nodes, &mut rng)?,
        };
        let sink_coord = {
            let mut c = [0.0f64; 3];
            match &config.sink_position {
                Some(sp) => {
                    for (axis, v) in sp.iter().enumerate() {
                        c[axis] = *v;
                    }
                }
                None => c = config.region.center(),
            }
            c
        };
        let sink = nodes
            .iter()
            .map(|n| (n.id, euclidean(n.position, sink_coord)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(id, _)| id)
            .expect("at least two nodes deployed");
        let comm = topology::build_comm_graph(nodes, config.coverage, sink)?;
        let mut warnings = Vec::new();
        let disconnected = comm.disconnected_from_sink();
        if !disconnected.is_empty() {
            warnings.push(format!(
                "{} of {} nodes have no path to the sink (node {})",
                disconnected.len(),
                comm.node_count(),
                sink
            ));
        }
        let hop_bound = routing::max_hops(
            config.routing.attenuation_pct,
            config.routing.integrity_floor,
            config.routing.hop_cap,
        )?;
        let n = comm.node_count();
        let qbank = match config.mode {
            Mode::Cloud => QBank::Global(QStore::new()),
            Mode::Local => QBank::PerNode(vec![QStore::new(); n]),
        };
        let epsilon = config.rl.epsilon;
        let leach = LeachState::new(n);
        Ok(RunState {
            config,
            rng,
            comm,
            ledger: EnergyLedger::new(n),
            roles: vec![Role::Sensor; n],
            transmitter: sink,
            qbank,
            epsilon,
            hop_bound,
            requests: Vec::new(),
            pending_request_updates: Vec::new(),
            routed_prev: vec![0; n],
            peak_variance: 0.0,
            variance_reduced: false,
            pruned_arc_events: 0,
            no_route_events: 0,
            warnings,
            leach,
        })
    }

    pub fn qbank(&self) -> &QBank {
        &self.qbank
    }

    fn node_count(&self) -> usize {
        self.comm.node_count()
    }

    fn charge(
        &mut self,
        node: usize,
        points: f64,
        bucket: &mut u64,
        audit: &mut EpisodeAudit,
    ) -> Result<(), SimError> {
        let drawn = self.ledger.apply_cost(node, to_millis(points))?;
        *bucket += drawn;
        audit.total_drawn += drawn;
        Ok(())
    }

    /// Arrival rate per node from last episode's routed counts.
    fn arrival_rates(&self) -> Vec<f64> {
        self.routed_prev
            .iter()
            .map(|&c| f64::from(c) / self.config.delay.episode_duration_s)
            .collect()
    }

    /// One full episode. Returns the metrics row and the audit record.
    pub fn run_episode(&mut self, episode: usize) -> Result<(EpisodeMetrics, EpisodeAudit), SimError> {
        let mut audit = EpisodeAudit {
            episode,
            ..Default::default()
        };
        let ledger_before = self.ledger.total_millis();
        let alive_at_start = self.ledger.alive_count();
        let n = self.node_count();
        let is_marl = self.config.protocol == Protocol::Marl;

        // Phase 1: cadence bookkeeping and per-episode resets.
        if episode > 0 && episode.is_multiple_of(self.config.usage_halving_period) {
            self.ledger.decay_usage();
        }
        let mut buffer = vec![0u32; n];
        for role in self.roles.iter_mut() {
            *role = Role::Sensor;
        }

        // Cloud mode: every alive node reports its state before decisions.
        if is_marl && self.config.mode == Mode::Cloud {
            let report = self.config.costs.report_cost;
            for node in 0..n {
                if self.ledger.is_alive(node) {
                    let mut bucket = 0;
                    self.charge(node, report, &mut bucket, &mut audit)?;
                    audit.report += bucket;
                }
            }
        }

        // Phase 2: refresh and prune the fused routing graph.
        let fused = if is_marl {
            let mera = routing::mera_weights(&self.comm, &self.ledger);
            let (mst, _) = routing::mst_weights(&self.comm, self.config.routing.off_tree_penalty);
            let mut fg = routing::fuse(n, &mera, &mst, self.config.routing.lambda)?;
            if let Some(median) = routing::median_finite_weight(&fg) {
                let cutoff = self.config.routing.cutoff_multiplier * median;
                let removed = routing::prune(&mut fg, cutoff, &self.ledger);
                self.pruned_arc_events += removed as u64;
            }
            Some(fg)
        } else {
            None
        };

        // Phase 3: transmitter election (LEACH elects cluster heads instead).
        if self.config.protocol != Protocol::Leach {
            let requests = std::mem::take(&mut self.requests);
            match elect_transmitter(&self.ledger, &requests) {
                Some(tx) => {
                    self.transmitter = tx;
                    self.roles[tx] = Role::Transmitter;
                }
                None => {
                    return Ok((self.snapshot_metrics(episode, &[], 0, 0, 0, 0.0), audit));
                }
            }
        } else {
            self.transmitter = self.comm.sink;
        }
        debug_assert_eq!(
            self.roles
                .iter()
                .filter(|r| **r == Role::Transmitter)
                .count(),
            if self.config.protocol == Protocol::Leach { 0 } else { 1 }
        );

        // Phase 4: centrality for the episode's hotspot accounting.
        let (centrality, centrality_cut) = match &fused {
            Some(fg) => {
                let c = routing::betweenness(fg);
                let cut = routing::percentile(&c, self.config.rewards.centrality_percentile);
                (c, cut)
            }
            None => (Vec::new(), None),
        };
        let alive_mask: Vec<bool> = (0..n).map(|i| self.ledger.is_alive(i)).collect();
        let hops_to_sink = self.comm.hop_distances(self.comm.sink, &alive_mask);
        let rates_prev = self.arrival_rates();

        // Phase 5: sensing events at uniformly drawn alive sources.
        let alive_list: Vec<usize> = self.ledger.alive_nodes().collect();
        let mut sources = Vec::with_capacity(self.config.sources_per_episode);
        if !alive_list.is_empty() {
            for _ in 0..self.config.sources_per_episode {
                let idx = self.rng.random_range(0..alive_list.len());
                sources.push(alive_list[idx]);
            }
        }

        // LEACH clustering happens after the source draws so the stream
        // order stays: sources first, then per-agent draws.
        let leach_round = if self.config.protocol == Protocol::Leach {
            let round = baselines::leach_round(
                &self.comm,
                &self.ledger,
                &mut self.leach,
                episode as u32,
                &self.config.leach,
                &mut self.rng,
            );
            Some(round)
        } else {
            None
        };

        // Phase 6: route every packet.
        let mut events: Vec<NodeEvents> = vec![NodeEvents::default(); n];
        let mut decisions: Vec<(usize, StateVector, RoutingAction)> = Vec::new();
        let mut sleeping = vec![false; n];
        let mut routed_now = vec![0u32; n];
        let mut delivered = 0usize;
        let mut dropped = 0usize;
        let mut delays: Vec<f64> = Vec::new();
        let mut unstable = 0usize;
        let mut packets_at_transmitter = 0usize;
        let mut leach_pending: HashMap<usize, usize> = HashMap::new();
        let mut requests_next: Vec<usize> = Vec::new();

        for &source in &sources {
            if !self.ledger.is_alive(source) {
                // An earlier packet drained it this episode.
                dropped += 1;
                continue;
            }
            // Sensing always costs; the sensing reward is only credited
            // once the data actually leaves the source (or the source is
            // the destination itself).
            {
                let mut bucket = 0;
                self.charge(source, self.config.costs.sense_cost, &mut bucket, &mut audit)?;
                audit.sense += bucket;
            }
            buffer[source] += 1;
            if !self.ledger.is_alive(source) {
                events[source].dropped = true;
                dropped += 1;
                continue;
            }

            let outcome = match self.config.protocol {
                Protocol::Marl => self.route_marl(
                    source,
                    fused.as_ref().expect("fused graph exists for marl"),
                    &hops_to_sink,
                    &mut buffer,
                    &mut events,
                    &mut decisions,
                    &mut sleeping,
                    &mut routed_now,
                    &mut requests_next,
                    &mut audit,
                )?,
                Protocol::Spmh => self.route_spmh(source, &mut buffer, &mut routed_now, &mut events, &mut audit)?,
                Protocol::SingleHop => {
                    self.route_single_hop(source, &mut buffer, &mut routed_now, &mut events, &mut audit)?
                }
                Protocol::Leach => self.route_leach(
                    source,
                    leach_round.as_ref().expect("leach round exists"),
                    &mut buffer,
                    &mut routed_now,
                    &mut events,
                    &mut leach_pending,
                    &mut audit,
                )?,
            };

            if outcome.no_route {
                self.no_route_events += 1;
            }
            if outcome.delivered {
                delivered += 1;
                if self.config.protocol != Protocol::Leach {
                    packets_at_transmitter += 1;
                }
                // Hotspot credit is judged on the path actually taken.
                if let Some(cut) = centrality_cut {
                    let max_c = outcome
                        .path_taken
                        .iter()
                        .map(|&v| centrality[v])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let low = max_c < cut;
                    let participants = &outcome.path_taken[..outcome.path_taken.len() - 1];
                    for &v in participants {
                        if low {
                            events[v].low_centrality_paths += 1;
                        } else {
                            events[v].high_centrality_paths += 1;
                        }
                    }
                }
                let d = self.packet_delay(&outcome.path_taken, &rates_prev, leach_round.as_ref());
                if d.is_finite() {
                    delays.push(d);
                } else {
                    unstable += 1;
                }
            } else {
                dropped += 1;
            }
        }

        // Phase 7: aggregate sends.
        match self.config.protocol {
            Protocol::Leach => {
                // Each head with data pays the long send once.
                let mut heads: Vec<usize> = leach_pending.keys().copied().collect();
                heads.sort_unstable();
                for head in heads {
                    if self.ledger.is_alive(head) {
                        let mut bucket = 0;
                        self.charge(head, self.config.costs.sink_cost, &mut bucket, &mut audit)?;
                        audit.sink += bucket;
                    }
                }
            }
            Protocol::SingleHop if self.config.single_hop.target == SingleHopTarget::Sink => {
                // Sources blasted straight to the sink; nothing to aggregate.
            }
            Protocol::Spmh => {
                // Packets terminate at the base station itself.
            }
            _ => {
                if packets_at_transmitter > 0 && self.ledger.is_alive(self.transmitter) {
                    let mut bucket = 0;
                    self.charge(
                        self.transmitter,
                        self.config.costs.sink_cost,
                        &mut bucket,
                        &mut audit,
                    )?;
                    audit.sink += bucket;
                    events[self.transmitter].delivered_to_sink = true;
                    routed_now[self.transmitter] += packets_at_transmitter as u32;
                }
            }
        }

        // Phase 8: idle decisions for nodes that never acted. The elected
        // transmitter is on duty and never idles.
        if is_marl {
            let acted: Vec<bool> = {
                let mut acted = vec![false; n];
                for (node, _, _) in &decisions {
                    acted[*node] = true;
                }
                acted
            };
            let fg = fused.as_ref().expect("fused graph exists for marl");
            for node in 0..n {
                if !self.ledger.is_alive(node) || acted[node] || node == self.transmitter {
                    continue;
                }
                let env = EnvSnapshot {
                    comm: &self.comm,
                    ledger: &self.ledger,
                    roles: &self.roles,
                    transmitter: self.transmitter,
                    buffer_len: &buffer,
                    buffer_capacity: self.config.buffer_capacity,
                    hops_to_sink: &hops_to_sink,
                    region_diagonal: self.config.region.diagonal(),
                };
                let s = observe_state(node, &env);
                // No packet in hand: transmit actions are off the table.
                let actions: Vec<RoutingAction> = rl::feasible_actions(node, fg, &self.ledger)
                    .into_iter()
                    .filter(|a| !matches!(a, RoutingAction::TransmitTo(_)))
                    .collect();
                let a = rl::select_action(
                    self.qbank.store(node),
                    &s,
                    &actions,
                    self.epsilon,
                    &mut self.rng,
                );
                decisions.push((node, s, a));
                if self.config.mode == Mode::Local {
                    let mut bucket = 0;
                    self.charge(
                        node,
                        self.config.costs.local_compute_cost,
                        &mut bucket,
                        &mut audit,
                    )?;
                    audit.compute += bucket;
                }
                if !self.ledger.is_alive(node) {
                    continue;
                }
                match a {
                    RoutingAction::Sleep => {
                        sleeping[node] = true;
                        events[node].slept = true;
                    }
                    RoutingAction::Drop => events[node].dropped = true,
                    RoutingAction::RequestTransmitter => {
                        // Volunteering is a control message, not an
                        // activity: the idle node still powers down while
                        // its request waits for the next election.
                        requests_next.push(node);
                        sleeping[node] = true;
                        events[node].slept = true;
                    }
                    RoutingAction::TransmitTo(_) => unreachable!("filtered above"),
                }
            }
        }

        // Phase 9: end-of-episode idle/sleep costs for every alive node.
        for node in 0..n {
            if !self.ledger.is_alive(node) {
                continue;
            }
            let (points, is_sleep) = if sleeping[node] {
                (self.config.costs.sleep_cost, true)
            } else {
                (self.config.costs.idle_cost, false)
            };
            let mut bucket = 0;
            self.charge(node, points, &mut bucket, &mut audit)?;
            if is_sleep {
                audit.sleep += bucket;
            } else {
                audit.idle += bucket;
            }
        }

        // Phase 10: global outcomes, rewards, and value updates. The
        // variance bonus latches once the spread first drops clearly below
        // its high-water mark: per-episode comparisons are knife-edged
        // near the plateau and flood the cooperative reward with sampling
        // noise instead of signalling that balancing took hold.
        let stats = self.ledger.soc_stats();
        if stats.variance < VARIANCE_DECREASE_MARGIN * self.peak_variance {
            self.variance_reduced = true;
        }
        self.peak_variance = self.peak_variance.max(stats.variance);
        let global = GlobalOutcome {
            no_failure: self.ledger.alive_count() == alive_at_start,
            variance_decreased: self.variance_reduced,
            mean_above_threshold: stats.mean > self.config.rewards.mean_threshold_pct,
        };

        let mut total_reward = 0.0;
        if is_marl {
            let mut rewards = vec![0.0f64; n];
            for node in 0..n {
                events[node].usage_count = self.ledger.usage_count(node);
            }
            for node in 0..n {
                // Every node alive at episode start earns its composed reward.
                if alive_mask[node] {
                    rewards[node] = compute_reward(&events[node], &global, &self.config.rewards);
                    total_reward += rewards[node];
                }
            }

            let fg = fused.as_ref().expect("fused graph exists for marl");
            let env_end = EnvSnapshot {
                comm: &self.comm,
                ledger: &self.ledger,
                roles: &self.roles,
                transmitter: self.transmitter,
                buffer_len: &buffer,
                buffer_capacity: self.config.buffer_capacity,
                hops_to_sink: &hops_to_sink,
                region_diagonal: self.config.region.diagonal(),
            };
            // Last episode's request decisions resolve now that the
            // election they influenced has played out.
            let carried = std::mem::take(&mut self.pending_request_updates);
            let mut to_update: Vec<(usize, StateVector, RoutingAction)> = carried;
            for (node, s, a) in decisions {
                if a == RoutingAction::RequestTransmitter {
                    self.pending_request_updates.push((node, s, a));
                } else {
                    to_update.push((node, s, a));
                }
            }
            for (node, s, a) in &to_update {
                let (s_next, actions_next) = if self.ledger.is_alive(*node) {
                    (
                        Some(observe_state(*node, &env_end)),
                        rl::feasible_actions(*node, fg, &self.ledger),
                    )
                } else {
                    (None, Vec::new())
                };
                q_update(
                    self.qbank.store_mut(*node),
                    s,
                    a,
                    rewards[*node],
                    s_next.as_ref(),
                    &actions_next,
                    &self.config.rl,
                );
            }

            // Value boundedness follows from the reward bound; a breach
            // here means an accounting bug, not a tuning problem.
            let r = &self.config.rewards;
            let role_max = r
                .sink_delivery
                .max(r.forward + r.avoid_hotspot)
                .max(r.sense + r.avoid_hotspot);
            let r_max = role_max + r.no_failure + r.variance_decrease + r.high_mean;
            let bound = r_max / (1.0 - self.config.rl.gamma) + 1e-9;
            let observed = self.qbank.max_abs_value();
            assert!(
                observed <= bound,
                "Q-value {observed} exceeds bound {bound}"
            );

            self.epsilon =
                (self.epsilon * self.config.rl.epsilon_decay).max(self.config.rl.epsilon_floor);
        }
        self.requests = requests_next;
        self.routed_prev = routed_now;

        // Phase 11: exact energy audit.
        let ledger_after = self.ledger.total_millis();
        assert_eq!(
            ledger_before - ledger_after,
            audit.total_drawn,
            "energy audit mismatch"
        );
        assert_eq!(audit.categories_sum(), audit.total_drawn);

        let metrics =
            self.snapshot_metrics(episode, &delays, delivered, dropped, unstable, total_reward);
        Ok((metrics, audit))
    }

    fn snapshot_metrics(
        &self,
        episode: usize,
        delays: &[f64],
        delivered: usize,
        dropped: usize,
        unstable: usize,
        total_reward: f64,
    ) -> EpisodeMetrics {
        let stats = self.ledger.soc_stats();
        let (mean_d, min_d, max_d) = if delays.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                delays.iter().sum::<f64>() / delays.len() as f64,
                delays.iter().cloned().fold(f64::INFINITY, f64::min),
                delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        EpisodeMetrics {
            episode,
            mean_soc: stats.mean,
            var_soc: stats.variance,
            min_soc: stats.min,
            max_soc: stats.max,
            alive: stats.alive_count,
            total_reward,
            mean_delay_ms: mean_d * 1000.0,
            min_delay_ms: min_d * 1000.0,
            max_delay_ms: max_d * 1000.0,
            unstable_delays: unstable,
            dropped_packets: dropped,
            delivered_packets: delivered,
            transmitter: self.transmitter,
            decision_delay_ms: delay::decision_delay(&self.config.delay, self.config.mode) * 1000.0,
        }
    }

    fn packet_delay(
        &self,
        path: &[usize],
        rates: &[f64],
        leach: Option<&baselines::LeachRound>,
    ) -> f64 {
        let base = delay::end_to_end_delay(path, rates, &self.config.delay, self.config.mode);
        match leach {
            Some(round) => {
                let setup = self.config.leach.base_setup_s
                    + if round.cycle_start {
                        self.config.leach.cycle_setup_s
                    } else {
                        0.0
                    };
                base + setup
            }
            None => base,
        }
    }

    /// Hop-by-hop learning route. The minimum-variance candidate path is
    /// selected once at the source; each hop's epsilon-greedy decision
    /// either follows it (the transmit kind targets the path successor),
    /// refuses, or diverts, and the route is re-planned from wherever a
    /// diversion lands with whatever hop budget remains.
    #[allow(clippy::too_many_arguments)]
    fn route_marl(
        &mut self,
        source: usize,
        fused: &FusedGraph,
        hops_to_sink: &[Option<u32>],
        buffer: &mut [u32],
        events: &mut [NodeEvents],
        decisions: &mut Vec<(usize, StateVector, RoutingAction)>,
        sleeping: &mut [bool],
        routed_now: &mut [u32],
        requests_next: &mut Vec<usize>,
        audit: &mut EpisodeAudit,
    ) -> Result<PacketOutcome, SimError> {
        let tx = self.transmitter;
        let mut current = source;
        let mut budget = self.hop_bound;
        let mut path_taken = vec![source];
        // Planned remainder of the selected route (next hop first) and
        // whether the packet still sits on it.
        let mut plan: Vec<usize> = Vec::new();

        if current == tx {
            events[current].sensed = true;
            return Ok(PacketOutcome {
                delivered: true,
                path_taken,
                no_route: false,
            });
        }

        loop {
            let next_planned_alive = plan
                .first()
                .is_some_and(|&n| self.ledger.is_alive(n));
            if !next_planned_alive {
                // Fresh packet, diversion, or a dead successor: select a
                // new minimum-variance route from here against the live
                // ledger, so corridors drained by earlier packets this
                // episode already read as unbalanced and traffic rotates.
                let paths: Vec<CandidatePath> =
                    enumerate_paths(fused, current, tx, budget, self.config.routing.k_max);
                match select_min_variance_path(&paths, &self.ledger) {
                    Some((p, _)) => {
                        plan = p.nodes[1..].to_vec();
                    }
                    None => {
                        // No candidate within the remaining budget: the
                        // packet is undeliverable from here.
                        events[current].dropped = true;
                        return Ok(PacketOutcome {
                            delivered: false,
                            path_taken,
                            no_route: true,
                        });
                    }
                }
            }
            let preferred = plan.first().copied();

            let env = EnvSnapshot {
                comm: &self.comm,
                ledger: &self.ledger,
                roles: &self.roles,
                transmitter: tx,
                buffer_len: buffer,
                buffer_capacity: self.config.buffer_capacity,
                hops_to_sink,
                region_diagonal: self.config.region.diagonal(),
            };
            let s = observe_state(current, &env);
            let actions = rl::feasible_actions(current, fused, &self.ledger);
            let a = rl::route_action(
                self.qbank.store(current),
                &s,
                &actions,
                self.epsilon,
                &mut self.rng,
                preferred,
            );
            decisions.push((current, s, a));

            if self.config.mode == Mode::Local {
                let mut bucket = 0;
                self.charge(
                    current,
                    self.config.costs.local_compute_cost,
                    &mut bucket,
                    audit,
                )?;
                audit.compute += bucket;
                if !self.ledger.is_alive(current) {
                    // Died computing; the packet dies with it.
                    events[current].dropped = true;
                    return Ok(PacketOutcome {
                        delivered: false,
                        path_taken,
                        no_route: false,
                    });
                }
            }

            match a {
                RoutingAction::TransmitTo(next) => {
                    debug_assert!(
                        fused.weight(current, next).is_some(),
                        "routed hop must use a retained fused-graph arc"
                    );
                    let mut bucket = 0;
                    self.charge(current, self.config.costs.hop_cost, &mut bucket, audit)?;
                    audit.hop += bucket;
                    if current != source {
                        events[current].forwarded = true;
                        if self.roles[current] == Role::Sensor {
                            self.roles[current] = Role::Forwarder;
                        }
                    } else {
                        // Sensing credit requires the data to actually
                        // leave the source.
                        events[current].sensed = true;
                    }
                    self.ledger.record_usage(current);
                    routed_now[current] += 1;
                    buffer[next] += 1;
                    path_taken.push(next);
                    budget -= 1;
                    if plan.first() == Some(&next) {
                        plan.remove(0);
                    } else {
                        plan.clear(); // diverted; re-plan from the new node
                    }
                    current = next;
                    if current == tx {
                        debug_assert!(
                            path_taken.len() - 1 <= self.hop_bound as usize,
                            "delivered packet exceeded the integrity hop bound"
                        );
                        return Ok(PacketOutcome {
                            delivered: true,
                            path_taken,
                            no_route: false,
                        });
                    }
                    if budget == 0 {
                        // Integrity bound exhausted short of the transmitter.
                        events[current].dropped = true;
                        return Ok(PacketOutcome {
                            delivered: false,
                            path_taken,
                            no_route: false,
                        });
                    }
                }
                RoutingAction::Sleep => {
                    // Refusing mid-route discards the packet; the node is
                    // not idle, so no sleep credit, but it does power down.
                    sleeping[current] = true;
                    events[current].dropped = true;
                    return Ok(PacketOutcome {
                        delivered: false,
                        path_taken,
                        no_route: false,
                    });
                }
                RoutingAction::Drop => {
                    events[current].dropped = true;
                    return Ok(PacketOutcome {
                        delivered: false,
                        path_taken,
                        no_route: false,
                    });
                }
                RoutingAction::RequestTransmitter => {
                    requests_next.push(current);
                    events[current].dropped = true;
                    return Ok(PacketOutcome {
                        delivered: false,
                        path_taken,
                        no_route: false,
                    });
                }
            }
        }
    }

    /// Shortest-path routing straight to the base station: the energy
    /// hole around a static sink is exactly the failure mode the adaptive
    /// protocol exists to avoid.
    fn route_spmh(
        &mut self,
        source: usize,
        buffer: &mut [u32],
        routed_now: &mut [u32],
        events: &mut [NodeEvents],
        audit: &mut EpisodeAudit,
    ) -> Result<PacketOutcome, SimError> {
        let alive: Vec<bool> = (0..self.node_count())
            .map(|i| self.ledger.is_alive(i))
            .collect();
        let Some(path) = baselines::spmh_route(&self.comm, &alive, source, self.comm.sink)
        else {
            events[source].dropped = true;
            return Ok(PacketOutcome {
                delivered: false,
                path_taken: vec![source],
                no_route: true,
            });
        };
        let mut taken = vec![source];
        for w in path.windows(2) {
            let (from, to) = (w[0], w[1]);
            if !self.ledger.is_alive(from) {
                return Ok(PacketOutcome {
                    delivered: false,
                    path_taken: taken,
                    no_route: false,
                });
            }
            let mut bucket = 0;
            self.charge(from, self.config.costs.hop_cost, &mut bucket, audit)?;
            audit.hop += bucket;
            if from != source {
                events[from].forwarded = true;
            } else {
                events[from].sensed = true;
            }
            self.ledger.record_usage(from);
            routed_now[from] += 1;
            buffer[to] += 1;
            taken.push(to);
        }
        if path.len() == 1 {
            events[source].sensed = true; // source is the base station
        }
        Ok(PacketOutcome {
            delivered: *taken.last().unwrap() == self.comm.sink,
            path_taken: taken,
            no_route: false,
        })
    }

    fn route_single_hop(
        &mut self,
        source: usize,
        buffer: &mut [u32],
        routed_now: &mut [u32],
        events: &mut [NodeEvents],
        audit: &mut EpisodeAudit,
    ) -> Result<PacketOutcome, SimError> {
        let target = match self.config.single_hop.target {
            SingleHopTarget::Transmitter => self.transmitter,
            SingleHopTarget::Sink => self.comm.sink,
        };
        if source == target {
            events[source].sensed = true;
            return Ok(PacketOutcome {
                delivered: true,
                path_taken: vec![source],
                no_route: false,
            });
        }
        match baselines::single_hop_route(
            &self.comm,
            source,
            target,
            self.config.single_hop.strict_range,
        ) {
            SingleHopOutcome::InRange => {
                let mut bucket = 0;
                self.charge(source, self.config.costs.hop_cost, &mut bucket, audit)?;
                audit.hop += bucket;
                events[source].sensed = true;
                self.ledger.record_usage(source);
                routed_now[source] += 1;
                buffer[target] += 1;
                Ok(PacketOutcome {
                    delivered: true,
                    path_taken: vec![source, target],
                    no_route: false,
                })
            }
            SingleHopOutcome::LongRange { cost_multiplier } => {
                let points = self.config.costs.sink_cost * cost_multiplier;
                let mut bucket = 0;
                self.charge(source, points, &mut bucket, audit)?;
                audit.long_range += bucket;
                events[source].sensed = true;
                self.ledger.record_usage(source);
                routed_now[source] += 1;
                buffer[target] += 1;
                Ok(PacketOutcome {
                    delivered: true,
                    path_taken: vec![source, target],
                    no_route: false,
                })
            }
            SingleHopOutcome::Dropped => {
                events[source].dropped = true;
                Ok(PacketOutcome {
                    delivered: false,
                    path_taken: vec![source],
                    no_route: true,
                })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn route_leach(
        &mut self,
        source: usize,
        round: &baselines::LeachRound,
        buffer: &mut [u32],
        routed_now: &mut [u32],
        events: &mut [NodeEvents],
        pending: &mut HashMap<usize, usize>,
        audit: &mut EpisodeAudit,
    ) -> Result<PacketOutcome, SimError> {
        let Some(head) = round.assignment[source] else {
            events[source].dropped = true;
            return Ok(PacketOutcome {
                delivered: false,
                path_taken: vec![source],
                no_route: true,
            });
        };
        let mut taken = vec![source];
        events[source].sensed = true;
        if head != source {
            let mut bucket = 0;
            self.charge(source, self.config.costs.hop_cost, &mut bucket, audit)?;
            audit.hop += bucket;
            self.ledger.record_usage(source);
            routed_now[source] += 1;
            buffer[head] += 1;
            taken.push(head);
            routed_now[head] += 1; // the head services this packet onward
        } else {
            routed_now[head] += 1;
        }
        // The head-to-sink leg is what the packet experiences as its final
        // hop; the energy for it is paid once per head in the aggregate
        // phase.
        if head != self.comm.sink {
            taken.push(self.comm.sink);
        }
        *pending.entry(head).or_insert(0) += 1;
        Ok(PacketOutcome {
            delivered: true,
            path_taken: taken,
            no_route: false,
        })
    }
}

impl RunState {
    /// Run all configured episodes (or stop early when the network dies)
    /// and assemble the report.
    pub fn run(&mut self) -> Result<RunReport, SimError> {
        let episodes_configured = self.config.episodes;
        let mut episodes = Vec::with_capacity(episodes_configured);
        let mut checkpoints = Vec::new();
        let mut audits = Vec::with_capacity(episodes_configured);
        let mut termination = Termination::Completed;

        for episode in 0..episodes_configured {
            let (metrics, audit) = self.run_episode(episode)?;
            let alive = metrics.alive;
            episodes.push(metrics);
            audits.push(audit);
            if self.config.soc_checkpoints.contains(&episode) {
                checkpoints.push(SocSnapshot {
                    episode,
                    nodes: soc_rows(&self.ledger),
                });
            }
            if alive == 0 {
                termination = Termination::NetworkDead { episode };
                break;
            }
        }

        Ok(RunReport {
            config: self.config.clone(),
            seed: self.config.seed,
            episodes,
            final_soc: soc_rows(&self.ledger),
            soc_checkpoints: checkpoints,
            pruned_arc_events: self.pruned_arc_events,
            no_route_events: self.no_route_events,
            termination,
            warnings: self.warnings.clone(),
            energy_audit: audits,
        })
    }

    /// Build the fused routing graph for the current ledger state and
    /// dump it as CSV (one arc per row with all three weights), for
    /// debugging weight and pruning behavior.
    pub fn fused_graph_csv(&self) -> Result<String, SimError> {
        let mera = routing::mera_weights(&self.comm, &self.ledger);
        let (mst, _) = routing::mst_weights(&self.comm, self.config.routing.off_tree_penalty);
        let mut fg = routing::fuse(self.node_count(), &mera, &mst, self.config.routing.lambda)?;
        if let Some(median) = routing::median_finite_weight(&fg) {
            routing::prune(
                &mut fg,
                self.config.routing.cutoff_multiplier * median,
                &self.ledger,
            );
        }
        Ok(fg.to_csv())
    }

    /// Flat dump of every learned table: `owner<TAB>state<TAB>action<TAB>value`
    /// lines, sorted, with `global` as the shared-table owner.
    pub fn qbank_flat_dump(&self) -> String {
        let mut out = String::new();
        match &self.qbank {
            QBank::Global(q) => {
                for line in q.to_flat_file().lines() {
                    out.push_str("global\t");
                    out.push_str(line);
                    out.push('\n');
                }
            }
            QBank::PerNode(qs) => {
                for (node, q) in qs.iter().enumerate() {
                    for line in q.to_flat_file().lines() {
                        out.push_str(&format!("{node}\t{line}\n"));
                    }
                }
            }
        }
        out
    }
}

/// Run the full simulation: `episodes` episodes or fewer when the network
/// dies. Deterministic for a fixed (config, seed).
pub fn run_simulation(config: &SimConfig) -> Result<RunReport, SimError> {
    RunState::new(config.clone())?.run()
}

fn soc_rows(ledger: &EnergyLedger) -> Vec<NodeSoc> {
    (0..ledger.len())
        .map(|node| NodeSoc {
            node,
            soc: ledger.soc(node),
            alive: ledger.is_alive(node),
        })
        .collect()
}
