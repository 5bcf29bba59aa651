use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitedge_cli::config::LoadedConfig;
use splitedge_cli::error::CliResult;
use splitedge_cli::plan::{plan, write_plan, PlanFile};
use splitedge_cli::runner::{train, write_train, Overrides};
use splitedge_cli::{latency, plot, sweep};

/// Split-learning experiments on a simulated edge network.
#[derive(Parser)]
#[command(name = "splitedge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out` from the config, then `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured protocol and write trace.csv, links.csv and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pin the cut and allocation to a plan written by `plan`.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Latency of the three edge architectures over dataset sizes (latency.csv).
    Latency {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured planner and write plan.json and plan_report.csv.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG charts from trace.csv files.
    Plot {
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Train every (protocol, clients, seed) cell of the [sweep] section.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn load(c: &Common) -> CliResult<(LoadedConfig, Overrides, PathBuf)> {
    let loaded = LoadedConfig::from_file(&c.config)?;
    let out = c
        .out
        .clone()
        .or_else(|| loaded.config.out.clone())
        .unwrap_or_else(|| Path::new("out").to_path_buf());
    let ov = Overrides {
        seed: c.seed,
        ..Overrides::default()
    };
    Ok((loaded, ov, out))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common, plan: plan_path } => {
            let (loaded, ov, out) = load(&common)?;
            let plan_file = plan_path.as_deref().map(PlanFile::load).transpose()?;
            let result = train(&loaded, ov, plan_file.as_ref())?;
            write_train(&out, &result)?;
            let s = &result.summary;
            println!(
                "{}: {} rounds, accuracy {:.4}, latency {:.4} s, {} bytes -> {}",
                s.protocol.as_str(),
                s.rounds,
                s.final_accuracy,
                s.total_latency_s,
                s.total_bytes,
                out.display()
            );
        }
        Command::Latency { common } => {
            let (loaded, ov, out) = load(&common)?;
            let rows = latency::latency(&loaded, ov)?;
            latency::write_latency(&out, &rows)?;
            for r in &rows {
                println!("{:>10} {:<16} {:>12.4} s", r.dataset_size, r.architecture, r.total_latency_s);
            }
        }
        Command::Plan { common } => {
            let (loaded, ov, out) = load(&common)?;
            let (file, report) = plan(&loaded, ov)?;
            write_plan(&out, &file, &report)?;
            println!("{:?} plan: {:?} -> {}", file.planner, file.plan.cuts(), out.display());
        }
        Command::Plot { out, traces } => {
            for p in plot::plot(&traces, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep { common } => {
            let (loaded, ov, out) = load(&common)?;
            let runs = sweep::sweep(&loaded, ov)?;
            sweep::write_sweep(&out, &runs)?;
            for (name, r) in &runs {
                println!("{name}: accuracy {:.4}", r.summary.final_accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
