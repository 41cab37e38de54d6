//! `boolnet` — train binary-activation networks and compile their hidden
//! layers into optimized Boolean logic.
//!
//! The pipeline subcommands (`train`, `extract`, `minimize`, `optimize`,
//! `emit`, `eval`) share one JSON config and a run directory of artifact
//! files; `report` prints cost tables for a run or a published preset, and
//! `verify` runs the built-in oracle suites plus, with `--config`, the
//! artifact cross-checks.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use boolnet::cost::{self, Realization};
use boolnet::pipeline::{
    self, render_verify, run_emit, run_eval, run_extract, run_minimize, run_optimize, run_report,
    run_train, run_verify, PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "boolnet",
    version,
    about = "Compile binary-activation neural networks into Boolean logic",
    after_help = "Datasets are read from the local IDX paths named in the config; nothing is \
                  downloaded. Fetch MNIST once from http://yann.lecun.com/exdb/mnist/ (mirror: \
                  https://ossci-datasets.s3.amazonaws.com/mnist/) and gunzip the four files."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured network and write checkpoint.json + history.csv
    Train(ConfigArgs),
    /// Record or enumerate each binary block's ON/OFF sets (block_*_isf.pla)
    Extract(ConfigArgs),
    /// Minimize the recorded sets into two-level covers (block_*_cover.pla)
    Minimize(ConfigArgs),
    /// Build, optimize, and stitch stage netlists (stage_*.blif)
    Optimize(ConfigArgs),
    /// Emit straight-line Boolean programs (stage_*.prog)
    Emit(ConfigArgs),
    /// Compare arithmetic and hybrid accuracy on the test set
    Eval(ConfigArgs),
    /// Print MAC and memory-traffic cost tables
    Report(ReportArgs),
    /// Run the oracle suites and, with --config, artifact cross-checks
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the layer list (JSON array, e.g. '[{"kind":"dense","out_units":100}, ...]')
    #[arg(long)]
    layers: Option<String>,
    /// Override the enumeration fan-in cap
    #[arg(long)]
    enum_max: Option<usize>,
    /// Override the staging plan (JSON groups of block indices, e.g. '[[0],[1,2]]')
    #[arg(long)]
    stages: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::from_file(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(layers) = &self.layers {
            config.layers = serde_json::from_str(layers).context("parsing --layers")?;
        }
        if let Some(enum_max) = self.enum_max {
            config.extraction.enum_max = enum_max;
        }
        if let Some(stages) = &self.stages {
            config.stages = Some(serde_json::from_str(stages).context("parsing --stages")?);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Cost the artifacts of this pipeline run
    #[arg(long, conflicts_with = "net")]
    config: Option<PathBuf>,
    /// Published preset: net1.1b, net1.2, net2.1b, or net2.2
    #[arg(long)]
    net: Option<String>,
    /// Measured ALM count for a logic row: a bare count when only one row
    /// exists, or name=count (repeatable)
    #[arg(long)]
    alm: Vec<String>,
    /// ALMs equivalent to one full-precision MAC
    #[arg(long)]
    alm_per_mac: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Also cross-check this run's artifacts against each other
    #[arg(long)]
    config: Option<PathBuf>,
}

fn percent(x: f32) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn list_files(what: &str, files: &[PathBuf]) {
    println!("wrote {} {what} file(s):", files.len());
    for f in files {
        println!("  {}", f.display());
    }
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut table = match (&args.net, &args.config) {
        (Some(name), None) => cost::preset(name).ok_or_else(|| {
            anyhow!("unknown preset `{name}`; available: net1.1b, net1.2, net2.1b, net2.2")
        })?,
        (None, Some(path)) => {
            let config = PipelineConfig::from_file(path)?;
            run_report(&config)?
        }
        _ => bail!("report needs exactly one of --net or --config"),
    };
    if let Some(per) = args.alm_per_mac {
        table.alm_per_mac = per;
    }
    for spec in &args.alm {
        if let Some((name, count)) = spec.split_once('=') {
            let count: u64 = count.trim().parse().context("parsing --alm count")?;
            if !table.apply_alm(name.trim(), count) {
                bail!("no logic row named `{}`", name.trim());
            }
        } else {
            let count: u64 = spec.parse().context("parsing --alm count")?;
            let logic: Vec<String> = table
                .rows
                .iter()
                .filter(|r| matches!(r.realization, Realization::Logic { .. }))
                .map(|r| r.name.clone())
                .collect();
            match logic.as_slice() {
                [only] => {
                    table.apply_alm(only, count);
                }
                [] => bail!("--alm {spec}: the table has no logic rows"),
                many => bail!(
                    "--alm {spec} is ambiguous; use name=count with one of: {}",
                    many.join(", ")
                ),
            }
        }
    }
    print!("{}", table.render_table());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let config = args.load()?;
            let outcome = run_train(&config)?;
            if let Some(last) = outcome.history.last() {
                println!(
                    "trained {} epoch(s); final val accuracy {}, best {}",
                    outcome.history.len(),
                    percent(last.val_accuracy),
                    percent(outcome.best_val_accuracy),
                );
            }
            println!("checkpoint: {}", pipeline::Artifacts::new(&config.out_dir).checkpoint().display());
        }
        Command::Extract(args) => {
            list_files("ON/OFF-set", &run_extract(&args.load()?)?);
        }
        Command::Minimize(args) => {
            list_files("cover", &run_minimize(&args.load()?)?);
        }
        Command::Optimize(args) => {
            list_files("netlist", &run_optimize(&args.load()?)?);
        }
        Command::Emit(args) => {
            list_files("program", &run_emit(&args.load()?)?);
        }
        Command::Eval(args) => {
            let outcome = run_eval(&args.load()?)?;
            println!(
                "test samples {}   arithmetic {}   hybrid {}",
                outcome.samples,
                percent(outcome.arithmetic_accuracy),
                percent(outcome.hybrid_accuracy),
            );
        }
        Command::Report(args) => report(&args)?,
        Command::Verify(args) => {
            let config = match &args.config {
                Some(path) => Some(PipelineConfig::from_file(path)?),
                None => None,
            };
            let summary = run_verify(config.as_ref())?;
            print!("{}", render_verify(&summary));
            let failed = summary.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
            println!("all {} checks passed", summary.checks.len());
        }
    }
    Ok(())
}
