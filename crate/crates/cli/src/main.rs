use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use helps_core::harness::{place_target, run_batch, write_csv, BatchSpec, Placement};
use helps_core::orchestrator::{run_session_with, Policy, RunOptions};
use helps_core::protocol::server::{serve, ServerConfig};
use helps_core::protocol::write_event_log;
use helps_core::world::{load_scenario_file, scenarios, Scenario};

#[derive(Parser)]
#[command(name = "helps", version, about = "Uplink-RSSI emergency caller search simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search session and print its outcome.
    Run(RunArgs),
    /// Run a Monte Carlo batch and print the summary.
    Batch(BatchArgs),
    /// Check scenario files.
    Validate {
        /// Scenario files or bundled names.
        #[arg(required = true)]
        scenarios: Vec<String>,
    },
    /// Write the last contour grid of a session as CSV.
    ExportContour {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Bundled scenario (minimal, testbed, room-building) or a scenario file.
    #[arg(long, default_value = "testbed")]
    scenario: String,
    #[arg(long, default_value = "helps")]
    policy: Policy,
    /// Target placement: fixed, uniform-random-room or uniform-random-building.
    #[arg(long, default_value = "fixed")]
    placement: Placement,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the session event log (one JSON object per line).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Also serve the location server socket for consoles and SMEs.
    #[arg(long)]
    interactive: bool,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Shared bearer token expected in every hello.
    #[arg(long, env = "HELPS_TOKEN", default_value = "helps")]
    token: String,
    /// Persist live sessions under this directory.
    #[arg(long)]
    sessions_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 180.0)]
    deadline: f64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed_base: Option<u64>,
    /// End each trial once a building is identified.
    #[arg(long)]
    building_only: bool,
    /// Per-trial CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON; printed to stdout either way.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn load(name: &str) -> Result<Scenario> {
    match scenarios::by_name(name) {
        Some(s) => Ok(s),
        None => load_scenario_file(name).with_context(|| format!("scenario {name}")),
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let base = load(&args.common.scenario)?;
    let seed = args.seed.unwrap_or(base.seed);
    let scenario = place_target(&base, args.common.placement, seed)?;
    let server = if args.interactive {
        let mut cfg = ServerConfig::new(scenario.extent, args.token.clone());
        cfg.rf = scenario.rf.clone();
        cfg.lcs = scenario.lcs.clone();
        cfg.channel = scenario.target.tx_profile.clone();
        cfg.persist_root = args.sessions_dir.clone();
        let listener = TcpListener::bind(&args.listen).with_context(|| format!("bind {}", args.listen))?;
        let h = serve(listener, cfg)?;
        eprintln!("serving on {}", h.addr);
        Some(h)
    } else {
        None
    };
    let session = run_session_with(&scenario, args.common.policy, seed, &RunOptions::default());
    if let Some(path) = &args.events {
        let f = File::create(path).with_context(|| format!("create {}", path.display()))?;
        write_event_log(&session.session.events, BufWriter::new(f))?;
    }
    println!("{}", serde_json::to_string_pretty(&session.outcome)?);
    if let Some(h) = server {
        eprintln!("session done; still serving on {} (interrupt to stop)", h.addr);
        h.wait();
    }
    Ok(())
}

fn batch(args: BatchArgs) -> Result<()> {
    let scenario = load(&args.common.scenario)?;
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let mut spec = BatchSpec::new(scenario, args.common.policy, args.trials);
    spec.deadline_s = args.deadline;
    spec.placement = args.common.placement;
    spec.stop_after_building = args.building_only;
    if let Some(s) = args.seed_base {
        spec.seed_base = s;
    }
    spec.workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = run_batch(&spec)?;
    if let Some(path) = &args.out {
        let f = File::create(path).with_context(|| format!("create {}", path.display()))?;
        write_csv(&result.records, BufWriter::new(f))?;
    }
    let text = serde_json::to_string_pretty(&result.summary)?;
    if let Some(path) = &args.summary {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("write {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn validate(names: &[String]) -> Result<()> {
    let mut bad = 0;
    for name in names {
        match load(name).and_then(|s| s.validate().map_err(Into::into)) {
            Ok(()) => println!("{name}: ok"),
            Err(e) => {
                println!("{name}: {e:#}");
                bad += 1;
            }
        }
    }
    if bad > 0 {
        bail!("{bad} of {} scenarios invalid", names.len());
    }
    Ok(())
}

fn export_contour(common: Common, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let base = load(&common.scenario)?;
    let seed = seed.unwrap_or(base.seed);
    let scenario = place_target(&base, common.placement, seed)?;
    let session = run_session_with(&scenario, common.policy, seed, &RunOptions::default());
    let map = session.contours.last().ok_or_else(|| anyhow!("session produced no contour map"))?;
    map.write_csv(output(out.as_ref())?)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Batch(a) => batch(a),
        Command::Validate { scenarios } => validate(&scenarios),
        Command::ExportContour { common, seed, out } => export_contour(common, seed, out),
    }
}
