//! Scenario-driven command line for the simulator.
//!
//! `run` executes one scenario file and writes the trace plus a metrics
//! report. `replay` re-executes the scenario embedded in a trace export and
//! verifies byte-identical output. `sweep` repeats a scenario across cluster
//! sizes and reports the consensus message-count scaling fit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bftsched::harness::{
    emit_report, fit_power_law, replay_trace, run_scenario, ReportFormat, RunOutput,
    ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "bftsched", about = "Byzantine-fault-tolerant scheduling simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file; write trace and report into --out-dir.
    Run {
        scenario_file: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Re-run the scenario embedded in a trace export and verify that the
    /// trace and CSV reproduce byte-identically.
    Replay { trace_file: PathBuf },
    /// Run the scenario at several cluster sizes and fit the consensus
    /// message-count growth exponent.
    Sweep {
        scenario_file: PathBuf,
        /// Comma-separated compute-node counts, e.g. 4,7,10,16.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 7, 10, 16])]
        nodes: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario_file, seed, out_dir, format } => cmd_run(&scenario_file, seed, &out_dir, format),
        Command::Replay { trace_file } => cmd_replay(&trace_file),
        Command::Sweep { scenario_file, nodes, seed, out_dir, format } => {
            cmd_sweep(&scenario_file, &nodes, seed, &out_dir, format)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let json = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut config = ScenarioConfig::from_json(&json).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

fn write_outputs(
    run: &RunOutput,
    out_dir: &Path,
    base: &str,
    format: Format,
) -> Result<(PathBuf, PathBuf), String> {
    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let trace_path = out_dir.join(format!("{base}.trace.jsonl"));
    std::fs::write(&trace_path, run.trace.to_jsonl()).map_err(|e| e.to_string())?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Text => "txt",
    };
    let report_path = out_dir.join(format!("{base}.report.{ext}"));
    std::fs::write(&report_path, emit_report(&run.report, format.into())).map_err(|e| e.to_string())?;
    // Per-transaction verdict log from one replica (all honest replicas fold
    // identical logs).
    if let Some((_, chain)) = run.chains.first() {
        let ledger_path = out_dir.join(format!("{base}.ledger.tsv"));
        std::fs::write(&ledger_path, chain.export_txn_log_tsv()).map_err(|e| e.to_string())?;
    }
    Ok((trace_path, report_path))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out_dir: &Path, format: Format) -> Result<ExitCode, String> {
    let config = load_scenario(scenario, seed)?;
    let run = run_scenario(&config).map_err(|e| e.to_string())?;
    let (trace_path, report_path) = write_outputs(&run, out_dir, &stem(scenario), format)?;
    println!("seed {} -> {} requests, {} trace records", config.seed, run.report.rows.len(), run.trace.records.len());
    println!("trace:  {}", trace_path.display());
    println!("report: {}", report_path.display());
    print!("{}", bftsched::harness::report_text(&run.report));
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(trace_file: &Path) -> Result<ExitCode, String> {
    let jsonl = std::fs::read_to_string(trace_file).map_err(|e| format!("{}: {e}", trace_file.display()))?;
    let verdict = replay_trace(&jsonl).map_err(|e| e.to_string())?;
    println!(
        "trace: {}  csv: {}",
        if verdict.trace_identical { "identical" } else { "MISMATCH" },
        if verdict.csv_identical { "identical" } else { "MISMATCH" },
    );
    if verdict.trace_identical && verdict.csv_identical {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_sweep(
    scenario: &Path,
    nodes: &[usize],
    seed: Option<u64>,
    out_dir: &Path,
    format: Format,
) -> Result<ExitCode, String> {
    let base_config = load_scenario(scenario, seed)?;
    let base = stem(scenario);
    // Independent seeded instances; safe to run in parallel.
    let mut results: Vec<(usize, RunOutput)> = std::thread::scope(|scope| {
        let handles: Vec<_> = nodes
            .iter()
            .map(|&n| {
                let config = base_config.clone();
                scope.spawn(move || {
                    let mut config = config;
                    config.compute_nodes = n;
                    config.f = config.f.min(n.saturating_sub(1) / 3);
                    config.validate().map_err(|e| e.to_string())?;
                    let run = run_scenario(&config).map_err(|e| e.to_string())?;
                    Ok::<(usize, RunOutput), String>((n, run))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by_key(|(n, _)| *n);

    let mut points = vec![];
    println!("nodes  msgs/request  rrt_mean_ms");
    for (n, run) in &results {
        let requests = run.report.rows.len().max(1) as f64;
        let per_request = run.trace.counters.total() as f64 / requests;
        points.push((*n as f64, per_request));
        println!("{n:>5}  {per_request:>12.1}  {:>11.2}", run.report.rrt.mean);
        write_outputs(run, out_dir, &format!("{base}.n{n:02}"), format)?;
    }
    if points.len() >= 2 {
        println!("message-count growth exponent: {:.3}", fit_power_law(&points));
    }
    Ok(ExitCode::SUCCESS)
}
