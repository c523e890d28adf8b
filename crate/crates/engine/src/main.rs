use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use srl_core::metrics::{evaluate, AlignmentResult, Rate};
use srl_core::process::trace_coverage;
use srl_core::session::Condition;
use srl_core::{compile_rules, run_offline, ActionRecord, ProcessEvent, RawTraceEvent, SessionState, StudyConfig};
use srl_engine::config::{resolve, CONFIG_ENV};
use srl_engine::formats::{read_events, read_jsonl, read_reference, write_jsonl, write_processes_csv};
use srl_engine::sim::{self, DriveOptions};
use srl_engine::{Engine, EngineOptions};

#[derive(Parser)]
#[command(name = "srl-engine", version, about = "Trace labelling, SRL process parsing and scaffolding service")]
struct Cli {
    /// Study configuration (TOML). The built-in essay study when omitted.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "srl.db")]
        db: PathBuf,
        /// Raw events held between acknowledgement and commit before
        /// ingest answers with a retry-after.
        #[arg(long, default_value_t = 100_000)]
        queue_capacity: usize,
        /// Skip fsync of the write-ahead journal.
        #[arg(long)]
        no_fsync: bool,
    },
    /// Label and parse a JSON-lines event file offline.
    Parse {
        events: PathBuf,
        /// Process events go here; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Also write the action records (JSON lines).
        #[arg(long)]
        actions: Option<PathBuf>,
        /// Session end for trailing idle detection, in ms from session start.
        /// Defaults to the task duration.
        #[arg(long)]
        session_end_ms: Option<u64>,
    },
    /// Compare parsed process events against reference segments.
    Metrics {
        /// Reference segments, comma-separated with a header row.
        #[arg(long)]
        reference: PathBuf,
        /// Process events, JSON lines as written by `parse`.
        #[arg(long)]
        processes: PathBuf,
        /// Action records, for trace coverage.
        #[arg(long)]
        actions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Generate a synthetic session and push it through the service.
    Simulate {
        /// Profile file, or good, average or poor.
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Inprocess)]
        mode: Mode,
        /// Service address for `--mode http`.
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long, default_value = "generalised")]
        condition: Condition,
        /// Store for `--mode inprocess`; a temporary one when omitted.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Also write the generated events (JSON lines).
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    Inprocess,
    Http,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Serve {
            addr,
            db,
            queue_capacity,
            no_fsync,
        } => serve(config, addr, db, queue_capacity, !no_fsync),
        Command::Parse {
            events,
            out,
            format,
            actions,
            session_end_ms,
        } => parse(config, &events, out.as_deref(), format, actions.as_deref(), session_end_ms),
        Command::Metrics {
            reference,
            processes,
            actions,
            format,
        } => metrics(&reference, &processes, actions.as_deref(), format),
        Command::Simulate {
            profile,
            seed,
            mode,
            url,
            condition,
            db,
            events_out,
        } => simulate(config, &profile, seed, mode, &url, condition, db, events_out.as_deref()),
    }
}

fn serve(config: StudyConfig, addr: SocketAddr, db: PathBuf, queue_capacity: usize, fsync: bool) -> Result<()> {
    let mut options = EngineOptions::new(db);
    options.queue_capacity = queue_capacity;
    options.fsync_journal = fsync;
    let engine = Arc::new(Engine::open(config, options)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        srl_engine::http::serve(listener, engine.clone(), async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
        tokio::task::spawn_blocking(move || engine.shutdown()).await??;
        Ok(())
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn parse(
    config: StudyConfig,
    events: &Path,
    out: Option<&Path>,
    format: Format,
    actions_out: Option<&Path>,
    session_end_ms: Option<u64>,
) -> Result<()> {
    let rules = Arc::new(compile_rules(&config)?);
    let end = session_end_ms.unwrap_or(config.task_duration_ms());
    let config = Arc::new(config);
    let mut sessions: BTreeMap<(String, String), Vec<RawTraceEvent>> = BTreeMap::new();
    for e in read_events(events)? {
        sessions.entry((e.session_id.clone(), e.user_id.clone())).or_default().push(e);
    }
    let mut processes = Vec::new();
    let mut actions = Vec::new();
    for ((session, user), events) in sessions {
        let run = run_offline(&events, config.clone(), rules.clone(), SessionState::new(&session, &user), Some(end));
        for r in &run.rejected {
            log::warn!("session {session}: {r}");
        }
        processes.extend(run.processes);
        actions.extend(run.actions);
    }
    let mut w = output(out)?;
    match format {
        Format::Json => write_jsonl(&mut w, &processes)?,
        Format::Csv => write_processes_csv(&mut w, &processes)?,
    }
    w.flush()?;
    if let Some(path) = actions_out {
        let mut w = output(Some(path))?;
        write_jsonl(&mut w, &actions)?;
        w.flush()?;
    }
    Ok(())
}

fn read_file_jsonl<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn rate(r: Rate) -> String {
    match r.get() {
        Some(v) => format!("{v:.3}"),
        None => "undefined".into(),
    }
}

fn metrics(reference: &Path, processes: &Path, actions: Option<&Path>, format: ReportFormat) -> Result<()> {
    let file = File::open(reference).with_context(|| format!("opening {}", reference.display()))?;
    let reference = read_reference(file)?;
    let processes: Vec<ProcessEvent> = read_file_jsonl(processes)?;
    let coverage = match actions {
        Some(p) => Some(trace_coverage(&read_file_jsonl::<ActionRecord>(p)?, &processes)),
        None => None,
    };
    let result = evaluate(&reference, &processes, coverage)?;
    let mut w = output(None)?;
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, &result)?;
            writeln!(w)?;
        }
        ReportFormat::Table => write_table(&mut w, &result)?,
    }
    w.flush()?;
    Ok(())
}

fn write_table(w: &mut impl Write, r: &AlignmentResult) -> Result<()> {
    writeln!(w, "segments         {}", r.pairs.len())?;
    writeln!(w, "match rate       {}", rate(r.match_rate))?;
    writeln!(w, "time match rate  {}", rate(r.time_match_rate))?;
    if let Some(c) = r.trace_coverage {
        writeln!(w, "trace coverage   {}", rate(c))?;
    }
    writeln!(w)?;
    writeln!(w, "{:<18} {:>4} {:>4} {:>4} {:>4}  {:>11} {:>11}", "label", "TP", "FN", "FP", "TN", "sensitivity", "specificity")?;
    for l in &r.per_label {
        let c = l.counts;
        writeln!(
            w,
            "{:<18} {:>4} {:>4} {:>4} {:>4}  {:>11} {:>11}",
            l.label.as_str(),
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            rate(l.sensitivity),
            rate(l.specificity)
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: StudyConfig,
    profile: &str,
    seed: u64,
    mode: Mode,
    url: &str,
    condition: Condition,
    db: Option<PathBuf>,
    events_out: Option<&Path>,
) -> Result<()> {
    let profile = sim::load_profile(profile)?.with_seed(seed);
    let options = DriveOptions {
        condition,
        ..DriveOptions::default()
    };
    if let Some(path) = events_out {
        let events = srl_core::generate_session(&profile, &config)?;
        let mut w = output(Some(path))?;
        write_jsonl(&mut w, &events)?;
        w.flush()?;
    }
    let report = match mode {
        Mode::Http => sim::simulate(&mut sim::Http::new(url)?, &profile, &config, &options)?,
        Mode::Inprocess => {
            let scratch;
            let db = match db {
                Some(p) => p,
                None => {
                    scratch = tempfile::tempdir()?;
                    scratch.path().join("simulate.db")
                }
            };
            let engine = Engine::open(config.clone(), EngineOptions::new(db))?;
            let report = sim::simulate(&mut sim::InProcess { engine: &engine }, &profile, &config, &options)?;
            engine.shutdown()?;
            report
        }
    };
    let mut w = output(None)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
