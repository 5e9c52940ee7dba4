use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dqo_core::bench::bench;
use dqo_core::datagen::{write_star_schema, StarConfig, Violation};
use dqo_core::engine::{Engine, Mode};
use dqo_core::plan::{LogicalPlan, NamedPlan};
use dqo_core::storage::DEFAULT_CHUNK_CAPACITY;
use dqo_core::validation::ValidationConfig;

#[derive(Parser)]
#[command(name = "dqo", version, about = "Columnar mini query engine with dependency discovery")]
struct Cli {
    /// Directory holding `<table>.csv` and `<table>.schema` files.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_CAPACITY)]
    chunk_capacity: usize,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads for query execution; 1 runs single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Metrics::Table)]
    metrics: Metrics,
    /// Run discovery on a background thread while queries execute.
    #[arg(long = "async", global = true)]
    run_async: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metrics {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic star schema to the data directory.
    Generate {
        #[arg(long, default_value_t = 1)]
        scale: usize,
        /// Inject a violation of one dependency: ind, od, or ucc.
        #[arg(long)]
        violate: Option<Violation>,
    },
    /// Load the data directory and summarize its tables.
    Load,
    /// Execute a workload.
    Run {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value = "discovered")]
        mode: Mode,
        /// Print result rows as CSV.
        #[arg(long)]
        rows: bool,
    },
    /// Show optimized plans with cardinality estimates.
    Explain {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value = "discovered")]
        mode: Mode,
    },
    /// Generate and validate dependency candidates for a workload.
    Discover {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// List ordered candidates without validating them.
        #[arg(long)]
        dry_run: bool,
        /// Disable statistics shortcuts in the validators.
        #[arg(long)]
        fallback_only: bool,
        /// Validate candidates of one kind concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Compare workload latency across optimization modes.
    Bench {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, value_delimiter = ',', default_value = "baseline,schema,discovered")]
        modes: Vec<Mode>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
}

#[derive(clap::Args)]
struct WorkloadArgs {
    /// Workload file; defaults to `workload.txt` in the data directory.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Only this query of the workload.
    #[arg(long)]
    query: Option<String>,
}

impl WorkloadArgs {
    fn load(&self, engine: &Engine, data_dir: &Path) -> Result<Vec<NamedPlan>> {
        let path = self.workload.clone().unwrap_or_else(|| data_dir.join("workload.txt"));
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut plans = engine.workload(&text)?;
        if let Some(name) = &self.query {
            plans.retain(|q| &q.name == name);
            if plans.is_empty() {
                bail!("workload has no query `{name}`");
            }
        }
        Ok(plans)
    }
}

fn open(cli: &Cli) -> Result<Engine> {
    let mut engine = Engine::open(&cli.data_dir, cli.chunk_capacity)
        .with_context(|| format!("loading {}", cli.data_dir.display()))?;
    engine.exec.threads = cli.threads.max(1);
    engine.validation.seed = cli.seed;
    Ok(engine)
}

fn plans_of(workload: &[NamedPlan]) -> Vec<Arc<LogicalPlan>> {
    workload.iter().map(|q| q.plan.clone()).collect()
}

/// Runs discovery first when discovered mode is requested but nothing has
/// been discovered yet.
fn ensure_discovered(engine: &Engine, cli: &Cli, workload: &[NamedPlan], mode: Mode) -> Result<()> {
    if mode == Mode::Discovered && engine.catalog().store().is_empty() {
        let report = engine.discover(&plans_of(workload))?;
        eprintln!(
            "discovered {} of {} candidates in {:.1} us",
            report.valid_count(),
            report.candidates.len(),
            report.micros
        );
        engine.save_metadata(&cli.data_dir)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { scale, violate } => {
            if *scale == 0 {
                bail!("scale must be at least 1");
            }
            let config = StarConfig {
                scale: *scale,
                seed: cli.seed,
                violate: *violate,
                chunk_capacity: cli.chunk_capacity,
            };
            let db = write_star_schema(&config, &cli.data_dir)?;
            for t in db.tables() {
                println!("{}: {} rows", t.name(), t.row_count());
            }
        }
        Command::Load => {
            let engine = open(cli)?;
            for t in engine.db().tables() {
                let cols: Vec<String> = t
                    .schema()
                    .columns
                    .iter()
                    .map(|c| format!("{}:{}", c.name, c.dtype))
                    .collect();
                println!("{} rows={} chunks={} columns={}", t.name(), t.row_count(), t.chunks().len(), cols.join(","));
            }
            println!(
                "declared constraints: {}, known dependencies: {}",
                engine.constraints().len(),
                engine.catalog().store().len()
            );
        }
        Command::Run { workload, mode, rows } => {
            let engine = open(cli)?;
            let workload = workload.load(&engine, &cli.data_dir)?;
            let plans = plans_of(&workload);
            std::thread::scope(|s| -> Result<()> {
                let background = if cli.run_async && *mode == Mode::Discovered {
                    Some(s.spawn(|| engine.discover(&plans)))
                } else {
                    ensure_discovered(&engine, cli, &workload, *mode)?;
                    None
                };
                for q in &workload {
                    let exec = engine.run(&q.plan, *mode)?;
                    let m = &exec.result.metrics;
                    match cli.metrics {
                        Metrics::Json => {
                            let record = serde_json::json!({
                                "query": q.name,
                                "mode": mode.to_string(),
                                "rows": exec.result.row_count(),
                                "micros": m.micros,
                                "chunks_scanned": m.chunks_scanned,
                                "chunks_pruned_static": m.chunks_pruned_static,
                                "chunks_pruned_dynamic": m.chunks_pruned_dynamic,
                                "rows_read": m.rows_read,
                                "rows_per_operator": m.rows_per_operator,
                            });
                            println!("{record}");
                        }
                        Metrics::Table => println!(
                            "{:<16} rows={:<8} us={:<10.1} scanned={} pruned_static={} pruned_dynamic={} operator_rows={}",
                            q.name,
                            exec.result.row_count(),
                            m.micros,
                            m.chunks_scanned,
                            m.chunks_pruned_static,
                            m.chunks_pruned_dynamic,
                            m.total_rows()
                        ),
                    }
                    if *rows {
                        print!("{}", exec.result.to_csv());
                    }
                }
                if let Some(handle) = background {
                    let report = handle.join().map_err(|_| anyhow::anyhow!("discovery thread panicked"))??;
                    eprintln!(
                        "background discovery: {} of {} candidates valid, {} cached plans invalidated",
                        report.valid_count(),
                        report.candidates.len(),
                        report.invalidated_plans
                    );
                    engine.save_metadata(&cli.data_dir)?;
                }
                Ok(())
            })?;
        }
        Command::Explain { workload, mode } => {
            let engine = open(cli)?;
            let workload = workload.load(&engine, &cli.data_dir)?;
            ensure_discovered(&engine, cli, &workload, *mode)?;
            for q in &workload {
                println!("query {}", q.name);
                print!("{}", engine.explain(&q.plan, *mode));
                println!();
            }
        }
        Command::Discover {
            workload,
            dry_run,
            fallback_only,
            parallel,
        } => {
            let mut engine = open(cli)?;
            if *fallback_only {
                engine.validation = ValidationConfig {
                    seed: cli.seed,
                    ..ValidationConfig::fallback_only()
                };
            }
            engine.validation.parallel = *parallel;
            let workload = workload.load(&engine, &cli.data_dir)?;
            let plans = plans_of(&workload);
            if *dry_run {
                for c in engine.candidates(&plans) {
                    println!("{c}");
                }
                return Ok(());
            }
            let report = engine.discover(&plans)?;
            match cli.metrics {
                Metrics::Json => print!("{}", report.to_json_lines()),
                Metrics::Table => {
                    print!("{}", report.to_table());
                    println!(
                        "{} candidates, {} validated, {} valid, {:.1} us",
                        report.candidates.len(),
                        report.validated(),
                        report.valid_count(),
                        report.micros
                    );
                }
            }
            engine.save_metadata(&cli.data_dir)?;
        }
        Command::Bench {
            workload,
            modes,
            repetitions,
        } => {
            let mut engine = open(cli)?;
            let workload = workload.load(&engine, &cli.data_dir)?;
            let report = bench(&mut engine, &workload, modes, *repetitions)?;
            match cli.metrics {
                Metrics::Json => println!("{}", report.to_json()),
                Metrics::Table => print!("{}", report.to_table()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
