use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use trolley_core::dsl::{lint_simulation_with, parse_simulation_with_sources};
use trolley_core::protocol::{Hello, ModeName, Pacing, SessionConfig, SessionDefaults};
use trolley_core::record::{format_records, format_trace, read_records};
use trolley_core::scenario::Mode;
use trolley_core::sim::SimParams;
use trolley_core::stats::aggregate_stats;

use trolley_server::agent::{make_policy, run_in_process, run_remote, PolicyKind};
use trolley_server::catalog::{Catalog, ScenarioFile};
use trolley_server::params::params_from_env;
use trolley_server::replay::{read_traces, replay};
use trolley_server::sink::{open_append, Recorder, SinkTarget};
use trolley_server::{Server, ServerConfig};

/// Trolley-dilemma driving simulation and data-collection server.
///
/// Simulation parameters can be overridden with TROLLEY_DT, TROLLEY_A_AUTO,
/// TROLLEY_V_MAX, TROLLEY_OMEGA_MAX, TROLLEY_THETA_MAX,
/// TROLLEY_VEHICLE_RADIUS and TROLLEY_T_MAX_TICKS.
#[derive(Parser)]
#[command(name = "trolley", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve scenario files to agents (NDJSON over TCP) and browsers
    /// (WebSocket, plus `GET /scenarios`) on one port.
    Serve {
        /// Scenario files or directories of `.trly` files.
        #[arg(required = true)]
        file: Vec<PathBuf>,
        #[arg(long, env = "TROLLEY_ADDR", default_value = "127.0.0.1:7878")]
        addr: String,
        /// Default run mode when HELLO gives none: `all` or `single:<test_num>`.
        #[arg(long, default_value = "all", value_parser = parse_mode)]
        mode: Mode,
        /// Default pacing for agents when HELLO gives none.
        #[arg(long, default_value = "lockstep", value_parser = parse_pacing)]
        pacing: Pacing,
        /// Decision log: a file to append to, or `tcp://host:port`.
        #[arg(long, env = "TROLLEY_OUT", default_value = "decisions.tsv")]
        out: String,
        /// Optional action-trace file for replay.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check a scenario file. Prints `severity:line:col:code:message` per
    /// diagnostic; exits 1 on errors, 2 if the file cannot be read.
    Validate { file: PathBuf },
    /// Run a scripted lockstep agent and print one log line per episode.
    Agent {
        /// Scenario file to run in process.
        #[arg(long, conflicts_with = "addr", required_unless_present = "addr")]
        file: Option<PathBuf>,
        /// Server to connect to.
        #[arg(long, requires = "scenario_file")]
        addr: Option<String>,
        /// File name to request from the server.
        #[arg(long)]
        scenario_file: Option<String>,
        #[arg(long, default_value = "none", value_parser = parse_policy)]
        policy: PolicyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "all", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        session_id: Option<String>,
        /// Also append the log lines to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Append action traces to this file (in-process runs only).
        #[arg(long, conflicts_with = "addr")]
        trace: Option<PathBuf>,
    },
    /// Re-run episodes from an action trace and print their log lines.
    Replay { file: PathBuf, trace: PathBuf },
    /// Summarize a decision log as JSON.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        file: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "all" => Ok(Mode::All),
        _ => s
            .strip_prefix("single:")
            .and_then(|n| n.parse().ok())
            .map(Mode::Single)
            .ok_or_else(|| format!("expected `all` or `single:<test_num>`, got `{s}`")),
    }
}

fn parse_pacing(s: &str) -> Result<Pacing, String> {
    match s {
        "lockstep" => Ok(Pacing::Lockstep),
        "realtime" => Ok(Pacing::Realtime),
        _ => Err(format!("expected `lockstep` or `realtime`, got `{s}`")),
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

fn existing(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("{}: no such file or directory", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Validate { file } = &cli.command {
        return validate(file);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn validate(path: &Path) -> ExitCode {
    let text = match fs::read(path) {
        Ok(bytes) => match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(e) => {
                let at = e.utf8_error().valid_up_to();
                println!("error:1:1:SYNTAX:not valid UTF-8 at byte {at}");
                return ExitCode::from(1);
            }
        },
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let params = match params_from_env() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match parse_simulation_with_sources(&text) {
        Err(errors) => {
            for e in errors {
                println!("error:{}:{}:{}:{}", e.span.line, e.span.column, e.code.as_str(), e.message);
            }
            ExitCode::from(1)
        }
        Ok(parsed) => {
            let mut failed = false;
            for d in lint_simulation_with(&parsed.simulation, params.vehicle_radius) {
                let span = parsed.span_of(d.scenario, d.diagnostic.actor.as_deref());
                failed |= d.diagnostic.is_error();
                println!(
                    "{}:{}:{}:{}:{}",
                    d.diagnostic.severity.as_str(),
                    span.line,
                    span.column,
                    d.diagnostic.code.as_str(),
                    d.diagnostic.message
                );
            }
            ExitCode::from(u8::from(failed))
        }
    }
}

fn load(path: &Path) -> Result<ScenarioFile> {
    existing(path)?;
    Ok(ScenarioFile::load(path)?)
}

fn run(command: Command) -> Result<()> {
    let params: SimParams = params_from_env()?;
    match command {
        Command::Validate { .. } => unreachable!("handled before"),
        Command::Serve {
            file,
            addr,
            mode,
            pacing,
            out,
            trace,
        } => {
            for f in &file {
                existing(f)?;
            }
            let catalog = Catalog::load(&file)?;
            let target = SinkTarget::parse(&out);
            let records = target.open().with_context(|| format!("opening decision log {out}"))?;
            let traces = match &trace {
                Some(p) => Some(Box::new(open_append(p).with_context(|| format!("opening {}", p.display()))?) as _),
                None => None,
            };
            let recorder = Recorder::spawn(records, traces);
            let config = ServerConfig {
                params,
                defaults: SessionDefaults { mode, pacing },
                ..ServerConfig::default()
            };
            let server = Server::new(catalog, recorder, config);
            let listener = std::net::TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            info!("listening on {}", listener.local_addr()?);
            for f in &server.catalog().list().files {
                info!("  {} ({} scenarios, id {})", f.scenario_file, f.scenarios.len(), f.file_id);
            }
            server.serve(listener)?;
        }
        Command::Agent {
            file,
            addr,
            scenario_file,
            policy,
            seed,
            mode,
            session_id,
            log,
            trace,
        } => {
            let mut p = make_policy(policy, seed, &params);
            let records = match (file, addr) {
                (Some(path), _) => {
                    let f = load(&path)?;
                    let mut hello = Hello {
                        scenario_file: f.name.clone(),
                        pacing: Some(Pacing::Lockstep),
                        seed: Some(seed),
                        session_id: session_id.clone(),
                        ..Hello::default()
                    };
                    set_mode(&mut hello, mode);
                    let config = SessionConfig::from_hello(&hello, SessionDefaults::default(), &f.simulation)
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    let run = run_in_process(&f, &config, session_id, &params, &mut *p)?;
                    if let Some(path) = trace {
                        let mut out = open_append(&path)?;
                        for t in &run.traces {
                            out.write_all(format_trace(t).as_bytes())?;
                        }
                    }
                    run.records
                }
                (None, Some(addr)) => {
                    let mut hello = Hello {
                        scenario_file: scenario_file.unwrap_or_default(),
                        seed: Some(seed),
                        session_id,
                        ..Hello::default()
                    };
                    set_mode(&mut hello, mode);
                    run_remote(&addr, hello, &mut *p)?.records
                }
                (None, None) => bail!("either --file or --addr is required"),
            };
            let text = format_records(&records);
            print!("{text}");
            if let Some(path) = log {
                open_append(&path)?.write_all(text.as_bytes())?;
            }
        }
        Command::Replay { file, trace } => {
            let f = load(&file)?;
            existing(&trace)?;
            let entries = read_traces(&fs::read_to_string(&trace)?)?;
            let records = replay(&f, &entries, &params)?;
            print!("{}", format_records(&records));
        }
        Command::Stats { log, file } => {
            let f = load(&file)?;
            existing(&log)?;
            let read = read_records(&fs::read_to_string(&log)?);
            for e in &read.errors {
                eprintln!("warning: {}: line {}: {}", log.display(), e.line, e.message);
            }
            let stats = aggregate_stats(&read.records, &f.simulation.scenarios).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(())
}

fn set_mode(hello: &mut Hello, mode: Mode) {
    match mode {
        Mode::All => hello.mode = Some(ModeName::All),
        Mode::Single(n) => {
            hello.mode = Some(ModeName::Single);
            hello.test_num = Some(n);
        }
    }
}
