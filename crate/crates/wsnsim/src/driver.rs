//! Batch experiment driver: protocol comparisons and parameter sweeps.
//!
//! Cells are dispatched to a worker pool; aggregation is a deterministic
//! fold over results sorted by cell key, so output does not depend on
//! completion order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::config::{Protocol, SimConfig};
use crate::engine::run_simulation;
use crate::error::{ConfigError, SimError};
use crate::metrics::RunReport;

/// One (config, protocol, seed) execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub protocol: Protocol,
    pub seed: u64,
    pub report: RunReport,
}

/// Summary row: average SoC at the reference checkpoints, worst-episode
/// variance, and the survival counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub protocol: Protocol,
    /// `None` marks the per-protocol mean row.
    pub seed: Option<u64>,
    /// Mean SoC at episodes 1, 25, 50, 75, 99 where available.
    pub soc_checkpoints: Vec<Option<f64>>,
    pub max_variance: f64,
    pub eliminated: usize,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cells: Vec<CompareCell>,
    pub summary: Vec<SummaryRow>,
}

pub const SUMMARY_CHECKPOINTS: [usize; 5] = [1, 25, 50, 75, 99];

/// Run every (config, seed) combination. All configs must share the same
/// episode horizon, and the grid must contain at least two cells.
pub fn compare(configs: &[SimConfig], seeds: &[u64]) -> Result<Comparison, SimError> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(ConfigError::invalid("compare", "need at least one config and one seed").into());
    }
    if configs.len() * seeds.len() < 2 {
        return Err(ConfigError::invalid(
            "compare",
            "need at least two cells (more configs, protocols, or seeds)",
        )
        .into());
    }
    let horizon = configs[0].episodes;
    if configs.iter().any(|c| c.episodes != horizon) {
        return Err(ConfigError::invalid(
            "compare",
            "episode horizons differ between configs",
        )
        .into());
    }

    let mut jobs: Vec<SimConfig> = Vec::new();
    for config in configs {
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            jobs.push(c);
        }
    }

    let mut cells: Vec<CompareCell> = jobs
        .par_iter()
        .map(|config| {
            run_simulation(config).map(|report| CompareCell {
                protocol: config.protocol,
                seed: config.seed,
                report,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    cells.sort_by(|a, b| {
        a.protocol
            .to_string()
            .cmp(&b.protocol.to_string())
            .then(a.seed.cmp(&b.seed))
    });

    let summary = summarize(&cells);
    Ok(Comparison { cells, summary })
}

fn summarize(cells: &[CompareCell]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let mut protocols: Vec<Protocol> = cells.iter().map(|c| c.protocol).collect();
    protocols.dedup();

    for cell in cells {
        rows.push(summary_row(cell));
    }
    // Per-protocol mean rows.
    for protocol in protocols {
        let members: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| r.protocol == protocol && r.seed.is_some())
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let checkpoint_count = members[0].soc_checkpoints.len();
        let mut mean_checkpoints = Vec::with_capacity(checkpoint_count);
        for i in 0..checkpoint_count {
            let vals: Vec<f64> = members
                .iter()
                .filter_map(|r| r.soc_checkpoints[i])
                .collect();
            mean_checkpoints.push(if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            });
        }
        rows.push(SummaryRow {
            protocol,
            seed: None,
            soc_checkpoints: mean_checkpoints,
            max_variance: members.iter().map(|r| r.max_variance).sum::<f64>() / k,
            eliminated: (members.iter().map(|r| r.eliminated).sum::<usize>() as f64 / k).round()
                as usize,
            active: (members.iter().map(|r| r.active).sum::<usize>() as f64 / k).round() as usize,
        });
    }
    rows
}

fn summary_row(cell: &CompareCell) -> SummaryRow {
    let report = &cell.report;
    let soc_checkpoints = SUMMARY_CHECKPOINTS
        .iter()
        .map(|&ep| report.episodes.get(ep).map(|m| m.mean_soc))
        .collect();
    let max_variance = report
        .episodes
        .iter()
        .map(|m| m.var_soc)
        .fold(0.0, f64::max);
    let total = report.final_soc.len();
    let active = report.final_soc.iter().filter(|n| n.alive).count();
    SummaryRow {
        protocol: cell.protocol,
        seed: Some(cell.seed),
        soc_checkpoints,
        max_variance,
        eliminated: total - active,
        active,
    }
}

/// Long-format per-episode CSV across all cells, aligned by episode.
pub fn write_compare_csv<W: Write>(comparison: &Comparison, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "seed",
        "episode",
        "mean_soc",
        "var_soc",
        "min_soc",
        "max_soc",
        "alive",
        "total_reward",
        "mean_delay_ms",
        "min_delay_ms",
        "max_delay_ms",
        "dropped_packets",
        "delivered_packets",
    ])?;
    for cell in &comparison.cells {
        for m in &cell.report.episodes {
            w.write_record(&[
                cell.protocol.to_string(),
                cell.seed.to_string(),
                m.episode.to_string(),
                m.mean_soc.to_string(),
                m.var_soc.to_string(),
                m.min_soc.to_string(),
                m.max_soc.to_string(),
                m.alive.to_string(),
                m.total_reward.to_string(),
                m.mean_delay_ms.to_string(),
                m.min_delay_ms.to_string(),
                m.max_delay_ms.to_string(),
                m.dropped_packets.to_string(),
                m.delivered_packets.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary table CSV.
pub fn write_summary_csv<W: Write>(comparison: &Comparison, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "seed",
        "soc_ep1",
        "soc_ep25",
        "soc_ep50",
        "soc_ep75",
        "soc_ep99",
        "max_variance",
        "eliminated",
        "active",
    ])?;
    for row in &comparison.summary {
        let mut record = vec![
            row.protocol.to_string(),
            row.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
        ];
        for cp in &row.soc_checkpoints {
            record.push(cp.map_or_else(String::new, |v| v.to_string()));
        }
        record.push(row.max_variance.to_string());
        record.push(row.eliminated.to_string());
        record.push(row.active.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep cell result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
    pub final_mean_soc: f64,
    pub max_variance: f64,
    pub eliminated: usize,
    pub mean_reward_last_quarter: f64,
}

/// Grid sweep over the fusion coefficient, exploration rate, and learning
/// rate.
pub fn sweep(
    base: &SimConfig,
    lambdas: &[f64],
    epsilons: &[f64],
    alphas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SimError> {
    if lambdas.is_empty() || epsilons.is_empty() || alphas.is_empty() || seeds.is_empty() {
        return Err(
            ConfigError::invalid("sweep", "every grid axis needs at least one value").into(),
        );
    }
    let mut jobs = Vec::new();
    for &lambda in lambdas {
        for &epsilon in epsilons {
            for &alpha in alphas {
                for &seed in seeds {
                    let mut c = base.clone();
                    c.routing.lambda = lambda;
                    c.rl.epsilon = epsilon;
                    c.rl.alpha = alpha;
                    c.seed = seed;
                    jobs.push((lambda, epsilon, alpha, seed, c));
                }
            }
        }
    }
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(lambda, epsilon, alpha, seed, config)| {
            run_simulation(config).map(|report| {
                let last = report.episodes.last();
                let quarter = report.episodes.len().saturating_sub(report.episodes.len() / 4);
                let tail = &report.episodes[quarter.min(report.episodes.len().saturating_sub(1))..];
                let mean_reward = if tail.is_empty() {
                    0.0
                } else {
                    tail.iter().map(|m| m.total_reward).sum::<f64>() / tail.len() as f64
                };
                SweepRow {
                    lambda: *lambda,
                    epsilon: *epsilon,
                    alpha: *alpha,
                    seed: *seed,
                    final_mean_soc: last.map_or(0.0, |m| m.mean_soc),
                    max_variance: report
                        .episodes
                        .iter()
                        .map(|m| m.var_soc)
                        .fold(0.0, f64::max),
                    eliminated: report.final_soc.iter().filter(|n| !n.alive).count(),
                    mean_reward_last_quarter: mean_reward,
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        a.lambda
            .partial_cmp(&b.lambda)
            .unwrap()
            .then(a.epsilon.partial_cmp(&b.epsilon).unwrap())
            .then(a.alpha.partial_cmp(&b.alpha).unwrap())
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lambda",
        "epsilon",
        "alpha",
        "seed",
        "final_mean_soc",
        "max_variance",
        "eliminated",
        "mean_reward_last_quarter",
    ])?;
    for r in rows {
        w.write_record(&[
            r.lambda.to_string(),
            r.epsilon.to_string(),
            r.alpha.to_string(),
            r.seed.to_string(),
            r.final_mean_soc.to_string(),
            r.max_variance.to_string(),
            r.eliminated.to_string(),
            r.mean_reward_last_quarter.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset_table2;

    fn small_config(protocol: Protocol) -> SimConfig {
        let mut c = preset_table2();
        c.episodes = 5;
        c.nodes = 20;
        c.sources_per_episode = 3;
        c.protocol = protocol;
        c
    }

    #[test]
    fn compare_rejects_degenerate_grids() {
        let c = small_config(Protocol::Marl);
        assert!(compare(std::slice::from_ref(&c), &[1]).is_err());
        assert!(compare(&[], &[1, 2]).is_err());
    }

    #[test]
    fn compare_rejects_mismatched_horizons() {
        let a = small_config(Protocol::Marl);
        let mut b = small_config(Protocol::Spmh);
        b.episodes = 7;
        assert!(compare(&[a, b], &[1]).is_err());
    }

    #[test]
    fn compare_two_protocols_row_structure() {
        let a = small_config(Protocol::Marl);
        let b = small_config(Protocol::Spmh);
        let cmp = compare(&[a, b], &[1, 2]).unwrap();
        assert_eq!(cmp.cells.len(), 4);
        // 4 seed rows + 2 mean rows.
        assert_eq!(cmp.summary.len(), 6);
        assert_eq!(cmp.summary.iter().filter(|r| r.seed.is_none()).count(), 2);
    }

    #[test]
    fn compare_is_seed_order_independent() {
        let a = small_config(Protocol::Marl);
        let b = small_config(Protocol::Spmh);
        let x = compare(&[a.clone(), b.clone()], &[1, 2]).unwrap();
        let y = compare(&[a, b], &[2, 1]).unwrap();
        assert_eq!(x.summary, y.summary);
        assert_eq!(x.cells, y.cells);
    }

    #[test]
    fn single_cell_summary_is_degenerate() {
        let a = small_config(Protocol::Marl);
        let cmp = compare(&[a], &[1, 2]).unwrap();
        assert_eq!(cmp.cells.len(), 2);
        let seeded: Vec<_> = cmp.summary.iter().filter(|r| r.seed.is_some()).collect();
        assert_eq!(seeded.len(), 2);
    }

    #[test]
    fn sweep_grid_rows() {
        let base = small_config(Protocol::Marl);
        let rows = sweep(&base, &[0.0, 1.0], &[0.1], &[0.1], &[1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].lambda < rows[1].lambda);
    }
}
