use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use entsim::config::{SimConfig, PRESETS};
use entsim::decoherence::CATALOG;
use entsim::engine::{run_with_traces, TraceSinks};
use entsim::metrics::{
    buffer_sweep, fidelity_curve_rows, linear_grid, output_file_name, rate_vs_timeout, write_csv_file, SweepSummary,
    QKD_FIDELITY_THRESHOLD,
};
use entsim::{Error, ErrorCategory, Result};

/// Entangled-pair distribution and verification simulator.
#[derive(Debug, Parser)]
#[command(name = "entsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file. Keys left out take their desk-scale values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, global = true, default_value = "desk-scale")]
    preset: String,
    /// Output directory.
    #[arg(long, global = true, env = "ENTSIM_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write message and event traces (single runs only).
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation of the configured node pair.
    Run,
    /// Fidelity versus idle time for memory technologies.
    FidelityCurve,
    /// Buffer occupancy versus classical latency per node pair.
    BufferSweep,
    /// Verified-pair rate versus fidelity threshold.
    RateSweep,
    /// Print the built-in memory technology catalog.
    ListTechnologies,
    /// Check a configuration without running it.
    ValidateConfig,
}

fn load_config(common: &Common) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} does not exist", path.display())));
            }
            SimConfig::load(path)?
        }
        None => SimConfig::preset(&common.preset)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Config as TOML-compatible JSON with file references inlined, so the echo
/// alone reproduces the run.
fn config_echo(cfg: &SimConfig) -> Result<serde_json::Value> {
    let mut echo = cfg.clone();
    if let Some(file) = echo.latency.samples_file.take() {
        let path = match &cfg.base_dir {
            Some(d) if file.is_relative() => d.join(&file),
            _ => file,
        };
        let samples = entsim::latency::LatencyModel::load_samples_ms(&path)?;
        echo.latency.samples_ms = Some(samples.iter().map(|s| s * 1000.0).collect());
    }
    serde_json::to_value(&echo).map_err(|e| Error::Config(e.to_string()))
}

struct Output {
    dir: PathBuf,
    stem: String,
    generated_at: String,
}

impl Output {
    fn new(dir: &Path, experiment: &str, seed: u64) -> Result<Output> {
        std::fs::create_dir_all(dir)?;
        let now = chrono::Utc::now();
        let stamp = now.format("%Y%m%dT%H%M%S%3fZ").to_string();
        let file = output_file_name(experiment, &stamp, seed);
        Ok(Output {
            dir: dir.to_path_buf(),
            stem: file.trim_end_matches(".csv").to_string(),
            generated_at: now.to_rfc3339(),
        })
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.stem))
    }

    fn summary(&self, experiment: &str, cfg: &SimConfig, metadata: serde_json::Value) -> Result<()> {
        let summary = SweepSummary {
            experiment: experiment.to_string(),
            generated_at: self.generated_at.clone(),
            seed: cfg.seed,
            csv_file: format!("{}.csv", self.stem),
            metadata,
            config: config_echo(cfg)?,
        };
        let path = self.path(".json");
        summary.write(&path)?;
        println!("wrote {}", self.path(".csv").display());
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn cmd_run(common: &Common, cfg: &SimConfig) -> Result<()> {
    let run_cfg = cfg.run_config()?;
    let out = Output::new(&common.out, "run", cfg.seed)?;
    let report = if common.trace {
        let mut messages = BufWriter::new(File::create(out.path("-messages.csv"))?);
        let mut events = BufWriter::new(File::create(out.path("-events.csv"))?);
        let r = run_with_traces(&run_cfg, TraceSinks { messages: Some(&mut messages), events: Some(&mut events) })?;
        std::io::Write::flush(&mut messages)?;
        std::io::Write::flush(&mut events)?;
        r
    } else {
        run_with_traces(&run_cfg, TraceSinks::default())?
    };
    if !report.conservation_holds() {
        return Err(Error::Protocol("pair accounting does not balance".into()));
    }
    write_csv_file(&out.path(".csv"), &[report.summary_row()])?;
    let metadata = serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?;
    out.summary("run", cfg, json!({ "report": metadata }))?;

    let o = &report.outcomes;
    println!(
        "emitted {} verified {} lost {} timed_out {} overflow {} in_flight {}",
        report.emitted, o.verified, o.lost, o.timed_out, o.overflow, o.in_flight
    );
    println!("verified rate {:.3} pairs/s, timeout {:.6} s", report.verified_rate_hz, report.timeout_s);
    if let Some(mean) = report.fidelity.mean {
        println!("fidelity mean {mean:.6} min {:.6}", report.fidelity.min.unwrap_or(mean));
    }
    for n in &report.nodes {
        println!("node {} occupancy mean {:.3} max {}", n.name, n.mean_occupancy, n.max_occupancy);
    }
    if common.trace {
        println!("wrote {}", out.path("-messages.csv").display());
        println!("wrote {}", out.path("-events.csv").display());
    }
    Ok(())
}

fn cmd_fidelity_curve(common: &Common, cfg: &SimConfig) -> Result<()> {
    let techs = cfg.curve_technologies()?;
    let grid = linear_grid(cfg.sweep.t_max_s, cfg.sweep.t_points);
    let rows = fidelity_curve_rows(&techs, cfg.memory.convention, &grid)?;
    let out = Output::new(&common.out, "fidelity-curve", cfg.seed)?;
    write_csv_file(&out.path(".csv"), &rows)?;
    out.summary(
        "fidelity-curve",
        cfg,
        json!({ "reference_fidelity": QKD_FIDELITY_THRESHOLD, "convention": cfg.memory.convention }),
    )
}

fn cmd_buffer_sweep(common: &Common, cfg: &SimConfig) -> Result<()> {
    let templates = cfg.sweep_templates()?;
    let rows = buffer_sweep(&templates, &cfg.sweep.latencies_s, cfg.sweep.seeding)?;
    let out = Output::new(&common.out, "buffer-sweep", cfg.seed)?;
    write_csv_file(&out.path(".csv"), &rows)?;
    let pairs: Vec<String> = templates.iter().map(|t| format!("{}-{}", t.arms[0].node, t.arms[1].node)).collect();
    out.summary("buffer-sweep", cfg, json!({ "pairs": pairs }))
}

fn cmd_rate_sweep(common: &Common, cfg: &SimConfig) -> Result<()> {
    let template = cfg.run_config()?;
    let rows = rate_vs_timeout(&template, &cfg.sweep.thresholds, cfg.sweep.seeding)?;
    let out = Output::new(&common.out, "rate-sweep", cfg.seed)?;
    write_csv_file(&out.path(".csv"), &rows)?;
    out.summary("rate-sweep", cfg, json!({ "arrival_skew_s": template.arrival_skew_s() }))
}

fn cmd_list_technologies() {
    println!("{:<18} {:<38} {:>12} {:>12}", "key", "technology", "T1 (s)", "T2 (s)");
    for e in CATALOG {
        println!("{:<18} {:<38} {:>12} {:>12}", e.key, e.label, e.t1_s, e.t2_s);
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    if let Command::ListTechnologies = cli.command {
        cmd_list_technologies();
        return Ok(());
    }
    if common.config.is_none() && !PRESETS.contains(&common.preset.as_str()) {
        return Err(Error::Config(format!("unknown preset {:?}; available: {}", common.preset, PRESETS.join(", "))));
    }
    let cfg = load_config(common)?;
    match cli.command {
        Command::Run => cmd_run(common, &cfg),
        Command::FidelityCurve => cmd_fidelity_curve(common, &cfg),
        Command::BufferSweep => cmd_buffer_sweep(common, &cfg),
        Command::RateSweep => cmd_rate_sweep(common, &cfg),
        Command::ValidateConfig => {
            cfg.validate()?;
            println!("configuration ok");
            Ok(())
        }
        Command::ListTechnologies => unreachable!(),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Io => 4,
        ErrorCategory::Internal => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("entsim: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
