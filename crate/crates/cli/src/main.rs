//! `mpart`: dataset generation, single-stream training, repeated-trial
//! benchmarks, ablation sweeps and the session service.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mpart_core::datasets::{write_dataset, Dataset};
use mpart_core::harness::{
    ablation_csv, ablation_suite, graph_stats, run_benchmark, summary_csv, train_run, TrainRun,
};
use mpart_core::RunConfig;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "mpart",
    version,
    about = "Online active learning with message-passing ART graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set rho=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let Some((key, value)) = kv.split_once('=') else {
                bail!("override `{kv}` is not KEY=VALUE");
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset to a file.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one stream with the dataset oracle; writes trace.jsonl,
    /// snapshot.json, curve.csv and summary.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Trial index; the stream seed is `seed + trial`.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Skip the per-sample trace.
        #[arg(long)]
        no_trace: bool,
    },
    /// Repeated seeded trials; writes summary.csv, trials.jsonl, curve.csv
    /// and timing.csv.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Sweep layers, score mode and strategy; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.load()?;
            let data = Dataset::from_config(&cfg)?;
            write_dataset(&out, &data)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Train {
            cfg,
            out,
            trial,
            no_trace,
        } => train(&cfg.load()?, &out, trial, !no_trace)?,
        Command::Bench { cfg, out } => {
            let report = run_benchmark(&cfg.load()?)?;
            report.write(&out)?;
            print!("{}", summary_csv(&report.summary));
        }
        Command::Ablate { cfg, out } => {
            let rows = ablation_suite(&cfg.load()?)?;
            let csv = ablation_csv(&rows);
            create_dir(&out)?;
            fs::write(out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                mpart_server::serve(listener).await
            })?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train(cfg: &RunConfig, out: &Path, trial: usize, keep_trace: bool) -> Result<()> {
    let data = Dataset::from_config(cfg)?;
    let TrainRun {
        seed,
        engine,
        output: result,
    } = train_run(cfg, &data, trial, keep_trace)?;

    create_dir(out)?;
    if keep_trace {
        let mut trace = String::new();
        for record in &result.trace {
            trace.push_str(&serde_json::to_string(record)?);
            trace.push('\n');
        }
        fs::write(out.join("trace.jsonl"), trace)?;
    }
    let graph = engine.graph();
    fs::write(
        out.join("snapshot.json"),
        serde_json::to_string(&graph.snapshot())?,
    )?;
    let mut curve = String::from("samples,accuracy\n");
    for (n, acc) in &result.curve {
        let _ = writeln!(curve, "{n},{acc}");
    }
    fs::write(out.join("curve.csv"), curve)?;
    let summary = json!({
        "v": 1,
        "seed": seed,
        "samples": engine.t(),
        "accuracy": result.curve.last().map(|c| c.1),
        "queries": result.queries,
        "label_counts": result.label_counts,
        "graph": graph_stats(graph),
        "hash": graph.state_hash(),
        "mean_step_ms": result.mean_step_ms,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("summary.json"), &text)?;
    println!("{text}");
    Ok(())
}
