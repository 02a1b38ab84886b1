//! Per-node State of Charge tracking.
//!
//! SoC is stored in fixed-point millipoints (1 SoC point = 1000 millis,
//! full charge = 100_000) so that the per-episode energy audit is exact
//! integer arithmetic: the sum of effective deductions always equals the
//! drop in total stored charge.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Fixed-point scale: SoC points to millipoints.
pub const SOC_SCALE: f64 = 1000.0;
/// Full charge (100 SoC points) in millipoints.
pub const FULL_SOC_MILLIS: u64 = 100_000;

/// Convert a cost in SoC points to millipoints.
pub fn to_millis(points: f64) -> u64 {
    (points * SOC_SCALE).round() as u64
}

/// The five ordered charge levels used for state discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SocLevel {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl SocLevel {
    pub fn index(self) -> u8 {
        match self {
            SocLevel::VeryLow => 0,
            SocLevel::Low => 1,
            SocLevel::Medium => 2,
            SocLevel::High => 3,
            SocLevel::VeryHigh => 4,
        }
    }
}

/// Map a SoC percentage to its level. Uniform quintile boundaries:
/// [0,20) / [20,40) / [40,60) / [60,80) / [80,100].
///
/// Panics if `soc` is outside [0, 100]; callers own that contract.
pub fn discretize_soc(soc: f64) -> SocLevel {
    assert!(
        (0.0..=100.0).contains(&soc),
        "SoC {soc} outside [0, 100]"
    );
    if soc < 20.0 {
        SocLevel::VeryLow
    } else if soc < 40.0 {
        SocLevel::Low
    } else if soc < 60.0 {
        SocLevel::Medium
    } else if soc < 80.0 {
        SocLevel::High
    } else {
        SocLevel::VeryHigh
    }
}

/// Energy cost of each simulated event, in SoC points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSchedule {
    /// Forwarding one packet one hop.
    pub hop_cost: f64,
    /// Transmitter sending the aggregated payload to the sink.
    pub sink_cost: f64,
    /// Sensing one event at a source node.
    pub sense_cost: f64,
    /// Staying awake through an episode without sleeping.
    pub idle_cost: f64,
    /// Sleeping through an episode.
    pub sleep_cost: f64,
    /// One state report to the cloud (cloud mode).
    pub report_cost: f64,
    /// One on-node routing decision (local mode).
    pub local_compute_cost: f64,
}

impl Default for CostSchedule {
    fn default() -> Self {
        CostSchedule {
            hop_cost: 2.0,
            sink_cost: 8.0,
            sense_cost: 1.0,
            idle_cost: 0.0,
            sleep_cost: 0.0,
            report_cost: 0.1,
            local_compute_cost: 0.05,
        }
    }
}

impl CostSchedule {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        for (key, v) in [
            ("costs.hop_cost", self.hop_cost),
            ("costs.sink_cost", self.sink_cost),
            ("costs.sense_cost", self.sense_cost),
            ("costs.idle_cost", self.idle_cost),
            ("costs.sleep_cost", self.sleep_cost),
            ("costs.report_cost", self.report_cost),
            ("costs.local_compute_cost", self.local_compute_cost),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::error::ConfigError::invalid(
                    key,
                    format!("must be a finite value >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Population statistics over every node (dead nodes contribute SoC 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocStats {
    pub mean: f64,
    /// Population variance (divide by n).
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub alive_count: usize,
}

/// Per-node charge state, alive flags, and route-usage counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    soc_millis: Vec<u64>,
    alive: Vec<bool>,
    usage_count: Vec<u32>,
}

impl EnergyLedger {
    /// All nodes start fully charged and alive.
    pub fn new(node_count: usize) -> Self {
        EnergyLedger {
            soc_millis: vec![FULL_SOC_MILLIS; node_count],
            alive: vec![true; node_count],
            usage_count: vec![0; node_count],
        }
    }

    pub fn len(&self) -> usize {
        self.soc_millis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc_millis.is_empty()
    }

    /// SoC as a percentage in [0, 100].
    pub fn soc(&self, node: usize) -> f64 {
        self.soc_millis[node] as f64 / SOC_SCALE
    }

    pub fn soc_millis(&self, node: usize) -> u64 {
        self.soc_millis[node]
    }

    pub fn is_alive(&self, node: usize) -> bool {
        self.alive[node]
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn alive_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.alive[i])
    }

    pub fn usage_count(&self, node: usize) -> u32 {
        self.usage_count[node]
    }

    pub fn record_usage(&mut self, node: usize) {
        self.usage_count[node] += 1;
    }

    /// Halve every usage counter (integer floor). Called on the decay cadence.
    pub fn decay_usage(&mut self) {
        for u in &mut self.usage_count {
            *u /= 2;
        }
    }

    /// Total stored charge across all nodes, in millipoints.
    pub fn total_millis(&self) -> u64 {
        self.soc_millis.iter().sum()
    }

    /// Subtract `cost_millis` from a node, flooring at zero. A node reaching
    /// zero is marked dead and never revives. Returns the charge actually
    /// drawn, which callers accumulate for the episode energy audit.
    pub fn apply_cost(&mut self, node: usize, cost_millis: u64) -> Result<u64, SimError> {
        if !self.alive[node] {
            return Err(SimError::DeadNode(node));
        }
        let before = self.soc_millis[node];
        let drawn = before.min(cost_millis);
        self.soc_millis[node] = before - drawn;
        if self.soc_millis[node] == 0 {
            self.alive[node] = false;
        }
        Ok(drawn)
    }

    /// Mean/variance/min/max over all nodes plus the alive count.
    pub fn soc_stats(&self) -> SocStats {
        assert!(!self.is_empty(), "stats over an empty ledger");
        let n = self.len() as f64;
        let socs: Vec<f64> = (0..self.len()).map(|i| self.soc(i)).collect();
        let mean = socs.iter().sum::<f64>() / n;
        let variance = socs.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let min = socs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = socs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        SocStats {
            mean,
            variance,
            min,
            max,
            alive_count: self.alive_count(),
        }
    }

    /// The SoC value at the given percentile of alive nodes (nearest-rank on
    /// the ascending order). Used for the transmitter-eligibility cut.
    pub fn alive_soc_percentile(&self, pct: f64) -> Option<f64> {
        let mut socs: Vec<u64> = (0..self.len())
            .filter(|&i| self.alive[i])
            .map(|i| self.soc_millis[i])
            .collect();
        if socs.is_empty() {
            return None;
        }
        socs.sort_unstable();
        let rank = ((pct / 100.0) * socs.len() as f64).ceil() as usize;
        let idx = rank.clamp(1, socs.len()) - 1;
        Some(socs[idx] as f64 / SOC_SCALE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn apply_cost_basic() {
        let mut ledger = EnergyLedger::new(1);
        let drawn = ledger.apply_cost(0, to_millis(2.0)).unwrap();
        assert_eq!(drawn, 2000);
        assert_eq!(ledger.soc(0), 98.0);
    }

    #[test]
    fn apply_cost_near_empty() {
        let mut ledger = EnergyLedger::new(1);
        ledger.apply_cost(0, to_millis(90.0)).unwrap();
        let drawn = ledger.apply_cost(0, to_millis(8.0)).unwrap();
        assert_eq!(drawn, 8000);
        assert_eq!(ledger.soc(0), 2.0);
        assert!(ledger.is_alive(0));
    }

    #[test]
    fn apply_cost_floors_at_zero_and_kills() {
        let mut ledger = EnergyLedger::new(1);
        ledger.apply_cost(0, to_millis(99.0)).unwrap();
        let drawn = ledger.apply_cost(0, to_millis(8.0)).unwrap();
        assert_eq!(drawn, 1000); // only 1 point remained
        assert_eq!(ledger.soc(0), 0.0);
        assert!(!ledger.is_alive(0));
    }

    #[test]
    fn cost_on_dead_node_is_an_error() {
        let mut ledger = EnergyLedger::new(1);
        ledger.apply_cost(0, to_millis(100.0)).unwrap();
        assert!(matches!(
            ledger.apply_cost(0, 1),
            Err(SimError::DeadNode(0))
        ));
    }

    #[test]
    fn dead_nodes_never_revive() {
        let mut ledger = EnergyLedger::new(1);
        ledger.apply_cost(0, to_millis(100.0)).unwrap();
        assert!(!ledger.is_alive(0));
        // Zero-cost application is still rejected: dead means dead.
        assert!(ledger.apply_cost(0, 0).is_err());
    }

    #[test]
    fn discretize_endpoints_and_middle() {
        assert_eq!(discretize_soc(100.0), SocLevel::VeryHigh);
        assert_eq!(discretize_soc(0.0), SocLevel::VeryLow);
        assert_eq!(discretize_soc(50.0), SocLevel::Medium);
        assert_eq!(discretize_soc(20.0), SocLevel::Low);
        assert_eq!(discretize_soc(80.0), SocLevel::VeryHigh);
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn discretize_rejects_out_of_range() {
        discretize_soc(100.5);
    }

    #[test]
    fn stats_uniform_population() {
        let ledger = {
            let mut l = EnergyLedger::new(3);
            for i in 0..3 {
                l.apply_cost(i, to_millis(2.0)).unwrap();
            }
            l
        };
        let s = ledger.soc_stats();
        assert_eq!(s.mean, 98.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.alive_count, 3);
    }

    #[test]
    fn stats_two_point() {
        let mut ledger = EnergyLedger::new(2);
        ledger.apply_cost(1, to_millis(40.0)).unwrap();
        let s = ledger.soc_stats();
        assert_eq!(s.mean, 80.0);
        assert_eq!(s.variance, 400.0);
        assert_eq!(s.min, 60.0);
        assert_eq!(s.max, 100.0);
    }

    #[test]
    fn stats_five_point_mean() {
        let targets = [98.0, 68.0, 49.0, 36.0, 21.0];
        let mut ledger = EnergyLedger::new(5);
        for (i, t) in targets.iter().enumerate() {
            ledger.apply_cost(i, to_millis(100.0 - t)).unwrap();
        }
        let s = ledger.soc_stats();
        assert!((s.mean - 54.4).abs() < 1e-12);
    }

    #[test]
    fn percentile_nearest_rank() {
        // 10 alive nodes at 10, 20, ..., 100: the 70th percentile is the
        // 7th smallest value.
        let mut ledger = EnergyLedger::new(10);
        for i in 0..10 {
            ledger
                .apply_cost(i, to_millis(100.0 - 10.0 * (i + 1) as f64))
                .unwrap();
        }
        assert_eq!(ledger.alive_soc_percentile(70.0), Some(70.0));
    }

    #[test]
    fn conservation_audit() {
        let mut ledger = EnergyLedger::new(4);
        let start = ledger.total_millis();
        let mut drawn = 0;
        drawn += ledger.apply_cost(0, to_millis(2.0)).unwrap();
        drawn += ledger.apply_cost(1, to_millis(8.0)).unwrap();
        drawn += ledger.apply_cost(2, to_millis(150.0)).unwrap(); // floors
        assert_eq!(start - ledger.total_millis(), drawn);
    }

    proptest! {
        #[test]
        fn discretize_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize_soc(lo) <= discretize_soc(hi));
        }

        #[test]
        fn apply_cost_conserves_charge(costs in proptest::collection::vec(0u64..200_000, 1..40)) {
            let mut ledger = EnergyLedger::new(5);
            let start = ledger.total_millis();
            let mut drawn = 0u64;
            for (k, c) in costs.iter().enumerate() {
                let node = k % 5;
                if ledger.is_alive(node) {
                    drawn += ledger.apply_cost(node, *c).unwrap();
                }
            }
            prop_assert_eq!(start - ledger.total_millis(), drawn);
        }
    }
}
