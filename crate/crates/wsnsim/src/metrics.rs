//! Per-episode metrics, the run report, and data export.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::config::SimConfig;
use crate::error::SimError;

/// One row of the per-episode series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub mean_soc: f64,
    pub var_soc: f64,
    pub min_soc: f64,
    pub max_soc: f64,
    pub alive: usize,
    pub total_reward: f64,
    /// Mean end-to-end delay over delivered packets, milliseconds; zero
    /// when nothing was delivered.
    pub mean_delay_ms: f64,
    pub min_delay_ms: f64,
    pub max_delay_ms: f64,
    /// Delivered packets whose delay hit the unstable-queue sentinel.
    pub unstable_delays: usize,
    pub dropped_packets: usize,
    pub delivered_packets: usize,
    pub transmitter: usize,
    /// Decision time in force this episode (local constant or cloud
    /// round-trip), milliseconds.
    pub decision_delay_ms: f64,
}

/// Per-node SoC snapshot row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSoc {
    pub node: usize,
    pub soc: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocSnapshot {
    pub episode: usize,
    pub nodes: Vec<NodeSoc>,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    /// Every node died; the run stopped after this episode.
    NetworkDead { episode: usize },
}

/// Exact per-episode energy accounting, in millipoints of SoC. The sum of
/// the category fields always equals `total_drawn`, which in turn equals
/// the drop in total stored charge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeAudit {
    pub episode: usize,
    pub hop: u64,
    pub sink: u64,
    pub sense: u64,
    pub idle: u64,
    pub sleep: u64,
    pub report: u64,
    pub compute: u64,
    pub long_range: u64,
    pub total_drawn: u64,
}

impl EpisodeAudit {
    pub fn categories_sum(&self) -> u64 {
        self.hop
            + self.sink
            + self.sense
            + self.idle
            + self.sleep
            + self.report
            + self.compute
            + self.long_range
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub final_soc: Vec<NodeSoc>,
    pub soc_checkpoints: Vec<SocSnapshot>,
    pub pruned_arc_events: u64,
    pub no_route_events: u64,
    pub termination: Termination,
    pub warnings: Vec<String>,
    pub energy_audit: Vec<EpisodeAudit>,
}

/// The documented episode-series CSV schema.
pub const EPISODE_CSV_HEADER: [&str; 9] = [
    "episode",
    "mean_soc",
    "var_soc",
    "min_soc",
    "max_soc",
    "alive",
    "total_reward",
    "mean_delay_ms",
    "dropped_packets",
];

/// Write the per-episode series as CSV: one row per completed episode.
pub fn write_episode_csv<W: Write>(report: &RunReport, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPISODE_CSV_HEADER)?;
    for m in &report.episodes {
        w.write_record(&[
            m.episode.to_string(),
            m.mean_soc.to_string(),
            m.var_soc.to_string(),
            m.min_soc.to_string(),
            m.max_soc.to_string(),
            m.alive.to_string(),
            m.total_reward.to_string(),
            m.mean_delay_ms.to_string(),
            m.dropped_packets.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write per-node SoC snapshots at the recorded checkpoints.
pub fn write_checkpoint_csv<W: Write>(report: &RunReport, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "node_id", "soc", "alive"])?;
    for snap in &report.soc_checkpoints {
        for n in &snap.nodes {
            w.write_record(&[
                snap.episode.to_string(),
                n.node.to_string(),
                n.soc.to_string(),
                n.alive.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = crate::error::ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(crate::error::ConfigError::invalid(
                "format",
                format!("unknown format `{other}` (csv, json)"),
            )),
        }
    }
}

/// Export the report's series to a file. CSV emits the episode table; JSON
/// emits the whole report. Output is byte-stable for a given report.
pub fn export_series(report: &RunReport, format: ExportFormat, path: &Path) -> Result<(), SimError> {
    match format {
        ExportFormat::Csv => {
            let file = std::fs::File::create(path)?;
            write_episode_csv(report, std::io::BufWriter::new(file))
        }
        ExportFormat::Json => {
            write_report_json(report, path)
        }
    }
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<RunReport, SimError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;

    fn tiny_report(episodes: usize) -> RunReport {
        let rows = (0..episodes)
            .map(|e| EpisodeMetrics {
                episode: e,
                mean_soc: 100.0 - e as f64,
                var_soc: e as f64,
                min_soc: 90.0,
                max_soc: 100.0,
                alive: 10,
                total_reward: 5.0 * e as f64,
                mean_delay_ms: 42.0,
                min_delay_ms: 40.0,
                max_delay_ms: 44.0,
                unstable_delays: 0,
                dropped_packets: 1,
                delivered_packets: 9,
                transmitter: 3,
                decision_delay_ms: 2.0,
            })
            .collect();
        RunReport {
            config: SimConfig::default(),
            seed: 7,
            episodes: rows,
            final_soc: vec![NodeSoc {
                node: 0,
                soc: 55.5,
                alive: true,
            }],
            soc_checkpoints: vec![
                SocSnapshot {
                    episode: 0,
                    nodes: (0..10)
                        .map(|n| NodeSoc {
                            node: n,
                            soc: 100.0,
                            alive: true,
                        })
                        .collect(),
                },
                SocSnapshot {
                    episode: 99,
                    nodes: (0..10)
                        .map(|n| NodeSoc {
                            node: n,
                            soc: 20.0,
                            alive: true,
                        })
                        .collect(),
                },
            ],
            pruned_arc_events: 4,
            no_route_events: 2,
            termination: Termination::Completed,
            warnings: vec![],
            energy_audit: vec![],
        }
    }

    #[test]
    fn episode_csv_row_count_and_header() {
        let report = tiny_report(100);
        let mut buf = Vec::new();
        write_episode_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 101); // header + 100 rows
        assert_eq!(
            lines[0],
            "episode,mean_soc,var_soc,min_soc,max_soc,alive,total_reward,mean_delay_ms,dropped_packets"
        );
    }

    #[test]
    fn checkpoint_csv_counts() {
        let report = tiny_report(3);
        let mut buf = Vec::new();
        write_checkpoint_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // header + 2 checkpoints x 10 nodes
        assert_eq!(text.trim_end().lines().count(), 21);
    }

    #[test]
    fn export_is_byte_stable() {
        let report = tiny_report(5);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_episode_csv(&report, &mut a).unwrap();
        write_episode_csv(&report, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_equality() {
        let report = tiny_report(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report_json(&report, &path).unwrap();
        let back = read_report_json(&path).unwrap();
        assert_eq!(report, back);
    }
}
