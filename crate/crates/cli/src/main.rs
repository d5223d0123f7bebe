//! driftbench command line.
//!
//! Subcommands:
//! * `run`         — execute an experiment suite from a JSON config
//! * `sample`      — carve domains out of a dataset and write them as CSV
//! * `schedule`    — audit a schedule: timeline and per-split set sizes
//! * `report`      — re-render report files from a finished run directory
//! * `demo-method` — reference implementation of the external-model
//!   protocol backed by the native model trainer
//!
//! Exit codes: 0 full success, 2 partial cell failures, 1 fatal error.
//! Log verbosity comes from the `RUST_LOG` environment variable.

mod demo_method;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use driftbench_core::dataset::{load_dataset, write_csv_file};
use driftbench_core::experiment::{load_store, run_suite, ExperimentConfig, RunOptions};
use driftbench_core::report::{emit_report, to_json_17};
use driftbench_core::sampler::{sample_domains, DomainSet, SamplerConfig};
use driftbench_core::schedule::{
    build_timeline, iterate_splits, ScheduleConfig, SchedulePreset,
};
use driftbench_core::schema::Schema;

#[derive(Parser)]
#[command(
    name = "driftbench",
    about = "Turn one labeled, timestamped tabular dataset into a multi-domain, \
             time-evolving transfer-learning benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment suite described by a JSON config file.
    Run(RunArgs),
    /// Sample k domains from a dataset and write them as CSV files.
    Sample(SampleArgs),
    /// Print the timeline and per-split set sizes for a schedule.
    Schedule(ScheduleArgs),
    /// Re-render the report files from a run directory.
    Report(ReportArgs),
    /// External-model protocol reference method (native logistic regression).
    DemoMethod(demo_method::DemoMethodArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for journal, manifest, and report files.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Reuse finished cells from an existing journal in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON.
    #[arg(long)]
    schema: PathBuf,
    /// Number of domains.
    #[arg(short, long, default_value_t = 4)]
    k: usize,
    /// Exponential decay rate.
    #[arg(long, conflicts_with = "target_size")]
    lambda: Option<f64>,
    /// Calibrate lambda for this expected domain size instead.
    #[arg(long)]
    target_size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Assign each row to at most one domain.
    #[arg(long)]
    disjoint: bool,
    /// Constant label delay applied at ingestion.
    #[arg(long, default_value_t = 0.0)]
    label_delay: f64,
    /// Output directory for the domain CSVs and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON.
    #[arg(long)]
    schema: PathBuf,
    /// Named preset (`baf` or `acquirers-shape`).
    #[arg(long, conflicts_with_all = ["t_beta", "t_gamma"])]
    preset: Option<String>,
    /// Source data start (also fixes the preset's random start).
    #[arg(long, default_value_t = 0.0)]
    t_alpha: f64,
    #[arg(long, requires = "t_gamma")]
    t_beta: Option<f64>,
    #[arg(long)]
    t_gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    delta_t: f64,
    /// Label delay (defaults to the preset's, or 0).
    #[arg(long)]
    delta_l: Option<f64>,
    /// Sample this many domains before auditing (default: one domain holding
    /// the whole dataset).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print without materializing anything (the only supported mode).
    #[arg(long)]
    dry_run: bool,
    /// Emit the table as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing manifest.json and journal.csv.
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the report files (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sample(args) => cmd_sample(args).map(|_| 0),
        Command::Schedule(args) => cmd_schedule(args).map(|_| 0),
        Command::Report(args) => cmd_report(args).map(|_| 0),
        Command::DemoMethod(args) => demo_method::run(args).map(|_| 0),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let config = ExperimentConfig::from_json_file(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    let opts = RunOptions {
        out_dir: args.out.clone(),
        workers: args.workers,
        resume: args.resume,
        max_cells: None,
    };
    let outcome = run_suite(&config, &opts)?;
    emit_report(&outcome.store, &args.out)?;
    let experiment_errors = outcome
        .store
        .manifest
        .experiments
        .iter()
        .filter(|e| e.error.is_some())
        .count();
    println!(
        "suite finished: {} records, {} ok, {} failed cells, {} experiment errors",
        outcome.store.records.len(),
        outcome.n_ok,
        outcome.n_failed,
        experiment_errors
    );
    println!("report written to {}", args.out.display());
    Ok(if outcome.n_failed > 0 || experiment_errors > 0 {
        2
    } else {
        0
    })
}

fn cmd_sample(args: SampleArgs) -> anyhow::Result<()> {
    let schema = Schema::from_json_file(&args.schema)?;
    let dataset = load_dataset(&args.data, &schema, args.label_delay)?;
    let lambda = match (args.lambda, args.target_size) {
        (Some(l), None) => l,
        (None, Some(target)) => {
            let anchors = driftbench_core::sampler::draw_anchors(&dataset, args.k, args.seed)?;
            driftbench_core::sampler::calibrate_lambda(&dataset, &anchors[0], target, 0.01)?
        }
        (None, None) => bail!("one of --lambda / --target-size is required"),
        _ => bail!("--lambda and --target-size are mutually exclusive"),
    };
    let config = SamplerConfig {
        k: args.k,
        lambda,
        seed: args.seed,
        target_index: 0,
        disjoint: args.disjoint,
    };
    let set = sample_domains(&dataset, &config)?;
    std::fs::create_dir_all(&args.out)?;
    for domain in &set.domains {
        let path = args.out.join(format!("domain_{}.csv", domain.domain_id));
        write_csv_file(&path, domain)?;
    }
    #[derive(serde::Serialize)]
    struct SampleManifest {
        k: usize,
        lambda: f64,
        seed: u64,
        disjoint: bool,
        anchor_rows: Vec<u64>,
        realized_sizes: Vec<usize>,
    }
    let manifest = SampleManifest {
        k: args.k,
        lambda,
        seed: args.seed,
        disjoint: args.disjoint,
        anchor_rows: set.anchor_rows(),
        realized_sizes: set.sizes(),
    };
    let path = args.out.join("sample_manifest.json");
    std::fs::write(&path, to_json_17(&manifest)?)?;
    println!(
        "wrote {} domains (sizes {:?}, lambda {lambda}) to {}",
        set.k(),
        set.sizes(),
        args.out.display()
    );
    Ok(())
}

fn cmd_schedule(args: ScheduleArgs) -> anyhow::Result<()> {
    if !args.dry_run {
        bail!("schedule currently supports only --dry-run");
    }
    let schema = Schema::from_json_file(&args.schema)?;
    let config: ScheduleConfig = match (&args.preset, args.t_beta, args.t_gamma) {
        (Some(name), _, _) => {
            let mut c = SchedulePreset::from_name(name)?.resolve(args.t_alpha);
            if let Some(dl) = args.delta_l {
                c.delta_l = dl;
            }
            c
        }
        (None, Some(t_beta), Some(t_gamma)) => ScheduleConfig {
            t_alpha: args.t_alpha,
            t_beta,
            t_gamma,
            delta_t: args.delta_t,
            delta_l: args.delta_l.unwrap_or(0.0),
        },
        _ => bail!("either --preset or both --t-beta and --t-gamma are required"),
    };
    let dataset = load_dataset(&args.data, &schema, config.delta_l)?;
    let timeline = build_timeline(&config)?;

    let set: DomainSet = match args.k {
        Some(k) => sample_domains(
            &dataset,
            &SamplerConfig {
                k,
                lambda: args.lambda,
                seed: args.seed,
                target_index: 0,
                disjoint: false,
            },
        )?,
        None => DomainSet {
            anchors: vec![dataset.instances[0].clone()],
            domains: vec![dataset],
            target_index: 0,
        },
    };

    let views = iterate_splits(&set, &timeline)?;
    #[derive(serde::Serialize)]
    struct SplitSizes {
        step: usize,
        t_start: f64,
        t_end: f64,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
        n_test: usize,
    }
    let rows: Vec<SplitSizes> = views
        .iter()
        .map(|v| SplitSizes {
            step: v.step,
            t_start: v.start,
            t_end: v.end,
            labeled: (0..set.k()).map(|d| v.n_labeled(d)).collect(),
            unlabeled: (0..set.k()).map(|d| v.n_unlabeled(d)).collect(),
            n_test: v.n_test(),
        })
        .collect();

    if args.json {
        #[derive(serde::Serialize)]
        struct DryRun<'a> {
            config: &'a ScheduleConfig,
            timestamps: &'a [f64],
            splits: &'a [SplitSizes],
        }
        println!(
            "{}",
            to_json_17(&DryRun {
                config: &config,
                timestamps: &timeline.timestamps,
                splits: &rows,
            })?
        );
    } else {
        println!(
            "timeline: {} points, {} test periods: {:?}",
            timeline.timestamps.len(),
            timeline.n_splits(),
            timeline.timestamps
        );
        println!(
            "{:>4} {:>10} {:>10} {:>24} {:>24} {:>8}",
            "step", "t_start", "t_end", "labeled/domain", "unlabeled/domain", "n_test"
        );
        for r in &rows {
            println!(
                "{:>4} {:>10.3} {:>10.3} {:>24} {:>24} {:>8}",
                r.step,
                r.t_start,
                r.t_end,
                format!("{:?}", r.labeled),
                format!("{:?}", r.unlabeled),
                r.n_test
            );
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let store = load_store(&args.input)?;
    let out = args.out.unwrap_or_else(|| args.input.clone());
    emit_report(&store, &out)?;
    println!("report written to {}", out.display());
    Ok(())
}
