use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pgrl_core::data::{write_dataset, Dataset, PoisonedDataset};
use pgrl_harness::run::{metrics_row, write_summary, METRICS_HEADER};
use pgrl_harness::{plot, read_records, run_point, run_sweep, ExperimentSpec, Outcome, SpecErrors};

#[derive(Debug, Parser)]
#[command(name = "pgrl", version, about = "Backdoor-poisoning defense experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment spec file (dotted key = value); built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; overrides `out` from the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed; overrides `seeds` from the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the clean train / validation / test splits as CSV.
    GenData(Common),
    /// Write the poisoned training set (with provenance flags) and the clean splits as CSV.
    Poison(Common),
    /// Train the single point described by the spec.
    Train(Common),
    /// Print the metrics of every recorded run in the output directory.
    Eval(Common),
    /// Run every sweep point for every seed, skipping completed runs.
    Sweep(Common),
    /// Redraw the summary table and plots from recorded runs.
    Plot(Common),
}

fn load_spec(c: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &c.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
            ExperimentSpec::parse(&text)?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(out) = &c.out {
        spec.out = out.clone();
    }
    if let Some(seed) = c.seed {
        spec.seeds = vec![seed];
    }
    Ok(spec)
}

fn as_table(d: &Dataset) -> PoisonedDataset {
    PoisonedDataset::clean(d)
}

fn write_splits(spec: &ExperimentSpec, poisoned: bool) -> Result<()> {
    let point = spec.points().remove(0);
    for &seed in &spec.seeds {
        let dir = spec.out.join(format!("data-s{seed}"));
        fs::create_dir_all(&dir)?;
        let splits = point.splits(seed)?;
        let val = Dataset {
            in_dim: splits.val.in_dim,
            classes: splits.val.classes(),
            samples: splits.val.samples().collect(),
        };
        let train = if poisoned { point.poison(&splits.train, seed)? } else { as_table(&splits.train) };
        write_dataset(&dir.join("train.csv"), &train)?;
        write_dataset(&dir.join("val.csv"), &as_table(&val))?;
        write_dataset(&dir.join("test.csv"), &as_table(&splits.test))?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn print_records(out: &Path) -> Result<()> {
    let records = read_records(out)?;
    if records.is_empty() {
        eprintln!("no records in {}", out.display());
        return Ok(());
    }
    println!("{METRICS_HEADER}");
    for r in &records {
        println!("{}", metrics_row(r));
    }
    Ok(())
}

fn replot(out: &Path) -> Result<()> {
    let records = read_records(out)?;
    if records.is_empty() {
        eprintln!("no records in {}; nothing to plot", out.display());
        return Ok(());
    }
    write_summary(out, &records)?;
    for r in &records {
        if let Some(svg) = plot::loss_boxplot(&r.metrics.loss_groups) {
            let dir = out.join(r.dir_name());
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("losses.svg"), svg)?;
        }
    }
    println!("{}", out.join("scatter.svg").display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => write_splits(&load_spec(&c)?, false),
        Command::Poison(c) => write_splits(&load_spec(&c)?, true),
        Command::Train(c) => {
            let spec = load_spec(&c)?;
            let points = spec.points();
            if points.len() != 1 {
                bail!("spec has {} sweep points; use `sweep`", points.len());
            }
            fs::create_dir_all(&spec.out)?;
            for &seed in &spec.seeds {
                let outcome = run_point(&points[0], seed, &spec.out)?;
                if let Outcome::Skipped(_) = outcome {
                    eprintln!("seed {seed}: already complete");
                }
                println!("{}", metrics_row(outcome.record()));
            }
            Ok(())
        }
        Command::Eval(c) => print_records(&load_spec(&c)?.out),
        Command::Sweep(c) => {
            let spec = load_spec(&c)?;
            let s = run_sweep(&spec, &spec.out)?;
            eprintln!("{} computed, {} skipped", s.computed, s.skipped);
            print_records(&spec.out)
        }
        Command::Plot(c) => replot(&load_spec(&c)?.out),
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    if let Some(s) = err.downcast_ref::<SpecErrors>() {
        return serde_json::json!({ "error": { "kind": "spec", "message": s.to_string(), "violations": s.0 } });
    }
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<pgrl_core::Error>().map(|e| e.kind()))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("other");
    serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
