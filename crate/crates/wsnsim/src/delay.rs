//! End-to-end delay models.
//!
//! Per hop a packet pays transmission time (L/R), processing time, and an
//! M/M/1 waiting term driven by the carrying node's arrival rate. On top
//! of the hop sum comes the routing-decision time: a small constant for
//! on-node decisions, or uplink + compute + downlink when decisions are
//! made in the cloud.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};

/// How the per-hop queue-wait term enters the hop sum. `HopAveraged` adds
/// the mean wait across the path's hops once per hop; `PerHop` adds each
/// hop's own wait. The two totals coincide analytically; both routes exist
/// for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QueueSumMode {
    #[default]
    HopAveraged,
    PerHop,
}

/// Execution mode for routing decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    Local,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayParams {
    /// Packet length, bits.
    pub packet_bits: f64,
    /// Transmission rate, bits/s.
    pub rate_bps: f64,
    /// Per-node processing time, seconds.
    pub processing_s: f64,
    /// Node service rate, packets/s.
    pub service_rate: f64,
    /// On-node decision time, seconds.
    pub decision_local_s: f64,
    /// State report size, bits.
    pub state_bits: f64,
    /// Action/command size, bits.
    pub action_bits: f64,
    /// Uplink/downlink rate, bits/s.
    pub link_bps: f64,
    /// Cloud computation time, seconds.
    pub cloud_compute_s: f64,
    /// Wall-clock duration of one episode, used to turn per-episode packet
    /// counts into arrival rates.
    pub episode_duration_s: f64,
    pub queue_sum_mode: QueueSumMode,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            packet_bits: 4000.0,
            rate_bps: 250_000.0,
            processing_s: 0.004,
            service_rate: 50.0,
            decision_local_s: 0.002,
            state_bits: 8000.0,
            action_bits: 2000.0,
            link_bps: 1_000_000.0,
            cloud_compute_s: 0.005,
            episode_duration_s: 1.0,
            queue_sum_mode: QueueSumMode::HopAveraged,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("delay.packet_bits", self.packet_bits),
            ("delay.rate_bps", self.rate_bps),
            ("delay.service_rate", self.service_rate),
            ("delay.link_bps", self.link_bps),
            ("delay.episode_duration_s", self.episode_duration_s),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::invalid(key, "must be finite and > 0"));
            }
        }
        for (key, v) in [
            ("delay.processing_s", self.processing_s),
            ("delay.decision_local_s", self.decision_local_s),
            ("delay.state_bits", self.state_bits),
            ("delay.action_bits", self.action_bits),
            ("delay.cloud_compute_s", self.cloud_compute_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::invalid(key, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// M/M/1 waiting time: lambda / (mu^2 (1 - lambda/mu)). Errors when the
/// queue is unstable (lambda >= mu).
pub fn queue_wait(lambda: f64, mu: f64) -> Result<f64, SimError> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(SimError::UnstableQueue { lambda, mu });
    }
    if lambda >= mu {
        return Err(SimError::UnstableQueue { lambda, mu });
    }
    Ok(lambda / (mu * mu * (1.0 - lambda / mu)))
}

/// Cloud decision time: (state + action bits) / link rate + compute time.
pub fn cloud_decision_delay(params: &DelayParams) -> f64 {
    (params.state_bits + params.action_bits) / params.link_bps + params.cloud_compute_s
}

/// The decision-time term by mode.
pub fn decision_delay(params: &DelayParams, mode: Mode) -> f64 {
    match mode {
        Mode::Local => params.decision_local_s,
        Mode::Cloud => cloud_decision_delay(params),
    }
}

/// End-to-end delay in seconds for a delivered path. `path_nodes` lists
/// every node source-first; the queue waits are those of the transmitting
/// nodes (all but the last). `arrival_rates` is indexed by node id.
/// Returns the infinite sentinel when any wait is unstable; callers flag
/// the episode.
pub fn end_to_end_delay(
    path_nodes: &[usize],
    arrival_rates: &[f64],
    params: &DelayParams,
    mode: Mode,
) -> f64 {
    let decision = decision_delay(params, mode);
    if path_nodes.len() < 2 {
        // Degenerate case: the source already is the destination.
        return decision;
    }
    let hops = path_nodes.len() - 1;
    let mut waits = Vec::with_capacity(hops);
    for &node in &path_nodes[..hops] {
        match queue_wait(arrival_rates[node], params.service_rate) {
            Ok(w) => waits.push(w),
            Err(_) => return f64::INFINITY,
        }
    }
    let per_hop_fixed = params.packet_bits / params.rate_bps + params.processing_s;
    let queue_total = match params.queue_sum_mode {
        QueueSumMode::HopAveraged => {
            let mean = waits.iter().sum::<f64>() / hops as f64;
            mean * hops as f64
        }
        QueueSumMode::PerHop => waits.iter().sum::<f64>(),
    };
    per_hop_fixed * hops as f64 + queue_total + decision
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn queue_wait_cases() {
        assert_eq!(queue_wait(0.0, 10.0).unwrap(), 0.0);
        assert!((queue_wait(5.0, 10.0).unwrap() - 0.1).abs() < 1e-12);
        // Also equals the closed form lambda / (mu (mu - lambda)).
        let w = queue_wait(9.0, 10.0).unwrap();
        assert!((w - 0.9).abs() < 1e-12);
        assert!((w - 9.0 / (10.0 * (10.0 - 9.0))).abs() < 1e-12);
    }

    #[test]
    fn queue_wait_unstable() {
        assert!(matches!(
            queue_wait(10.0, 10.0),
            Err(SimError::UnstableQueue { .. })
        ));
        assert!(queue_wait(11.0, 10.0).is_err());
    }

    #[test]
    fn single_hop_delay() {
        let params = DelayParams {
            packet_bits: 1000.0,
            rate_bps: 250_000.0,
            processing_s: 0.001,
            decision_local_s: 0.002,
            ..Default::default()
        };
        let d = end_to_end_delay(&[0, 1], &[0.0, 0.0], &params, Mode::Local);
        assert!((d - 0.007).abs() < 1e-12);
    }

    #[test]
    fn degenerate_path_is_decision_only() {
        let params = DelayParams::default();
        let d = end_to_end_delay(&[0], &[0.0], &params, Mode::Local);
        assert_eq!(d, params.decision_local_s);
    }

    #[test]
    fn cloud_minus_local_is_decision_difference() {
        let params = DelayParams::default();
        let rates = vec![3.0; 4];
        let local = end_to_end_delay(&[0, 1, 2, 3], &rates, &params, Mode::Local);
        let cloud = end_to_end_delay(&[0, 1, 2, 3], &rates, &params, Mode::Cloud);
        let expected = cloud_decision_delay(&params) - params.decision_local_s;
        assert!((cloud - local - expected).abs() < 1e-12);
    }

    #[test]
    fn cloud_decision_cases() {
        let mut params = DelayParams {
            state_bits: 0.0,
            action_bits: 0.0,
            cloud_compute_s: 0.005,
            ..Default::default()
        };
        assert_eq!(cloud_decision_delay(&params), 0.005);

        params.state_bits = 8000.0;
        params.action_bits = 2000.0;
        params.link_bps = 1e6;
        assert!((cloud_decision_delay(&params) - 0.015).abs() < 1e-12);

        // Doubling the link rate halves only the transfer component.
        params.link_bps = 2e6;
        assert!((cloud_decision_delay(&params) - 0.010).abs() < 1e-12);
    }

    #[test]
    fn unstable_hop_yields_sentinel() {
        let params = DelayParams {
            service_rate: 10.0,
            ..Default::default()
        };
        let d = end_to_end_delay(&[0, 1], &[10.0, 0.0], &params, Mode::Local);
        assert!(d.is_infinite());
    }

    #[test]
    fn path_concatenation_identity() {
        // Joining two paths at a shared node double-counts nothing except
        // that node's decision constant: delay(a..b) + delay(b..c) equals
        // delay(a..c) plus one extra decision term.
        let params = DelayParams::default();
        let rates = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let left = end_to_end_delay(&[0, 1, 2], &rates, &params, Mode::Local);
        let right = end_to_end_delay(&[2, 3, 4], &rates, &params, Mode::Local);
        let whole = end_to_end_delay(&[0, 1, 2, 3, 4], &rates, &params, Mode::Local);
        assert!((left + right - whole - params.decision_local_s).abs() < 1e-12);
    }

    #[test]
    fn queue_sum_modes_agree() {
        let per_hop = DelayParams {
            queue_sum_mode: QueueSumMode::PerHop,
            ..Default::default()
        };
        let averaged = DelayParams::default();
        let rates = vec![1.0, 7.0, 13.0, 2.0];
        let a = end_to_end_delay(&[0, 1, 2, 3], &rates, &averaged, Mode::Local);
        let b = end_to_end_delay(&[0, 1, 2, 3], &rates, &per_hop, Mode::Local);
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn queue_wait_strictly_increasing(mu in 1.0f64..100.0, frac_a in 0.01f64..0.98, step in 0.001f64..0.01) {
            let la = mu * frac_a;
            let lb = mu * (frac_a + step).min(0.99);
            let wa = queue_wait(la, mu).unwrap();
            let wb = queue_wait(lb, mu).unwrap();
            prop_assert!(wb > wa);
        }

        #[test]
        fn queue_wait_diverges_near_saturation(mu in 1.0f64..100.0) {
            let near = queue_wait(mu * 0.9999, mu).unwrap();
            let mid = queue_wait(mu * 0.5, mu).unwrap();
            prop_assert!(near > mid * 100.0);
        }
    }
}
