//! Command-line driver: single runs, protocol comparisons, parameter
//! sweeps, and report export.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use wsnsim::config::{self, Protocol, SimConfig};
use wsnsim::driver;
use wsnsim::error::SimError;
use wsnsim::metrics::{self, ExportFormat};

#[derive(Parser)]
#[command(name = "wsnsim", version, about = "Energy-aware WSN routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its report and episode series.
    Run(RunArgs),
    /// Run a protocol comparison across seeds.
    Compare(CompareArgs),
    /// Grid sweep over fusion, exploration, and learning rates.
    Sweep(SweepArgs),
    /// Re-export a saved report as CSV or JSON.
    Export(ExportArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Built-in preset: table1, table2, or delay_study.
    #[arg(long)]
    preset: Option<String>,
    /// JSON config file (overrides the preset as a base).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode-count override.
    #[arg(long)]
    episodes: Option<usize>,
    /// Protocol override: marl, spmh, single_hop, leach.
    #[arg(long)]
    protocol: Option<String>,
    /// Mode override: local or cloud.
    #[arg(long)]
    mode: Option<String>,
    /// Sources per episode override.
    #[arg(long)]
    sources: Option<usize>,
}

impl ConfigSource {
    /// Precedence: flag > file > preset default.
    fn resolve(&self) -> Result<SimConfig, wsnsim::ConfigError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => config::load_config(path)?,
            (None, Some(name)) => config::preset(name)?,
            (None, None) => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(episodes) = self.episodes {
            cfg.episodes = episodes;
        }
        if let Some(p) = &self.protocol {
            cfg.protocol = p.parse()?;
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        if let Some(s) = self.sources {
            cfg.sources_per_episode = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory (default: $WSNSIM_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the learned Q-tables as a flat file.
    #[arg(long)]
    qtable_out: Option<PathBuf>,
    /// Dump the initial fused routing graph (all arc weights) as CSV.
    #[arg(long)]
    fused_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Comma-separated protocol list.
    #[arg(long, default_value = "marl,spmh")]
    protocols: String,
    /// Comma-separated seed list.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, default_value = "0.0,0.5,1.0")]
    lambdas: String,
    #[arg(long, default_value = "0.1,0.3")]
    epsilons: String,
    #[arg(long, default_value = "0.1")]
    alphas: String,
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Saved report JSON.
    #[arg(long)]
    report: PathBuf,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output file for the episode series (or full report for json).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-node SoC checkpoint CSV.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("WSNSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn parse_list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>, wsnsim::ConfigError>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| wsnsim::ConfigError::invalid(key, format!("bad entry `{s}`: {e}")))
        })
        .collect()
}

fn cmd_run(args: &RunArgs) -> Result<(), SimError> {
    let cfg = args.source.resolve()?;
    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)?;
    let mut state = wsnsim::engine::RunState::new(cfg)?;
    if let Some(fpath) = &args.fused_out {
        std::fs::write(fpath, state.fused_graph_csv()?)?;
    }
    let report = state.run()?;

    let report_path = dir.join("report.json");
    metrics::write_report_json(&report, &report_path)?;
    let csv_path = dir.join("episodes.csv");
    metrics::export_series(&report, ExportFormat::Csv, &csv_path)?;
    let checkpoints_path = dir.join("soc_checkpoints.csv");
    let file = std::fs::File::create(&checkpoints_path)?;
    metrics::write_checkpoint_csv(&report, std::io::BufWriter::new(file))?;

    if let Some(qpath) = &args.qtable_out {
        std::fs::write(qpath, state.qbank_flat_dump())?;
    }

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let last = report.episodes.last();
    println!(
        "run complete: {} episodes, alive {}, mean SoC {:.2}",
        report.episodes.len(),
        last.map_or(0, |m| m.alive),
        last.map_or(0.0, |m| m.mean_soc)
    );
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), SimError> {
    let base = args.source.resolve()?;
    let protocols: Vec<Protocol> = parse_list(&args.protocols, "protocols")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seeds")?;
    let configs: Vec<SimConfig> = protocols
        .iter()
        .map(|&p| {
            let mut c = base.clone();
            c.protocol = p;
            c
        })
        .collect();
    let comparison = driver::compare(&configs, &seeds)?;

    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)?;
    let episodes_path = dir.join("compare_episodes.csv");
    driver::write_compare_csv(&comparison, std::fs::File::create(&episodes_path)?)?;
    let summary_path = dir.join("compare_summary.csv");
    driver::write_summary_csv(&comparison, std::fs::File::create(&summary_path)?)?;

    println!("comparison complete: {} cells", comparison.cells.len());
    for row in comparison.summary.iter().filter(|r| r.seed.is_none()) {
        println!(
            "  {}: eliminated {} of {}, max variance {:.2}",
            row.protocol,
            row.eliminated,
            row.eliminated + row.active,
            row.max_variance
        );
    }
    println!("series: {}", episodes_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), SimError> {
    let base = args.source.resolve()?;
    let lambdas: Vec<f64> = parse_list(&args.lambdas, "lambdas")?;
    let epsilons: Vec<f64> = parse_list(&args.epsilons, "epsilons")?;
    let alphas: Vec<f64> = parse_list(&args.alphas, "alphas")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seeds")?;
    let rows = driver::sweep(&base, &lambdas, &epsilons, &alphas, &seeds)?;

    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("sweep.csv");
    driver::write_sweep_csv(&rows, std::fs::File::create(&path)?)?;
    println!("sweep complete: {} cells -> {}", rows.len(), path.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<(), SimError> {
    let report = metrics::read_report_json(&args.report)?;
    let format: ExportFormat = args.format.parse()?;
    metrics::export_series(&report, format, &args.out)?;
    if let Some(cp) = &args.checkpoints {
        let file = std::fs::File::create(cp)?;
        metrics::write_checkpoint_csv(&report, std::io::BufWriter::new(file))?;
    }
    println!("exported {}", args.out.display());
    Ok(())
}

fn exit_code_for(err: &SimError) -> u8 {
    match err {
        SimError::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
