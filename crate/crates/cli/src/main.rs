//! `holoproxy`: serve sessions, ingest datasets, run scenarios, replay logs, drive a headless client.
//!
//! Exit codes: 0 success, 1 assertion or digest failure, 2 usage or IO error.

use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use holoproxy_core::protocol::{encode, Capability, ClientId, MessagePayload, Role, SessionId};
use holoproxy_core::{layout_chart, load_dataset_with, DataCube, ScreenConfig};
use holoproxy_server::{replay, Client, Hub, JitterConfig, Observed, ReplayError, ServerConfig, SessionCore};
use holoproxy_sim::{bundled, run_scenario_with, Action, RunOptions, Scenario, ScenarioError};
use tracing_subscriber::filter::LevelFilter;

#[derive(Parser)]
#[command(name = "holoproxy", version, about = "Smartphone-as-proxy session hub and study harness")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, start a session over it and accept clients.
    Serve(ServeArgs),
    /// Validate a dataset and print its shape and digest.
    Ingest(IngestArgs),
    /// Run a scenario file or bundled scenario through the simulator.
    Run(RunArgs),
    /// Rebuild a session from its log and check the recorded digest.
    Replay(ReplayArgs),
    /// Connect to a running hub and send scripted actions.
    Client(ClientArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct DatasetArgs {
    /// Long-format CSV: `location,year,value` header, one row per cell.
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    /// Name of the measure the value column holds.
    #[arg(long, default_value = "value")]
    measure: String,
    #[arg(long, default_value = "")]
    unit: String,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, env = "HOLOPROXY_PORT", default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Write one log per session here.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Serve static files from this directory over HTTP on the same port.
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Phone screen in pixels, `WIDTHxHEIGHT`.
    #[arg(long, default_value = "1200x600", value_parser = parse_screen)]
    screen: ScreenConfig,
    /// Standard deviation of simulated tracking noise on pose updates, in metres and radians.
    #[arg(long, default_value_t = 0.0)]
    seed_noise: f64,
    /// Seed for the tracking noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue a session from its log after a crash; repeatable.
    #[arg(long)]
    resume: Vec<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    heartbeat_ms: u64,
    #[arg(long, default_value_t = 15000)]
    silence_ms: u64,
}

#[derive(Args)]
struct IngestArgs {
    dataset: PathBuf,
    #[arg(long, default_value = "value")]
    measure: String,
    #[arg(long, default_value = "")]
    unit: String,
    /// Also write the dataset back out in canonical form.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    scenario: String,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the simulated hub's session log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "HOLOPROXY_PORT", default_value_t = 7878)]
    port: u16,
    #[arg(long)]
    session: String,
    #[arg(long, default_value = "cli-1")]
    id: String,
    #[arg(long, default_value = "proxy")]
    role: Role,
    /// One action in scenario syntax, e.g. `tap-cell 1:2`; repeatable, sent in order.
    #[arg(long = "do", value_name = "ACTION")]
    actions: Vec<String>,
    /// File with one action per line.
    #[arg(long)]
    script: Option<PathBuf>,
    /// The session's dataset; needed for `tap-cell`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "1200x600", value_parser = parse_screen)]
    screen: ScreenConfig,
    /// Keep listening this long after the last action.
    #[arg(long, default_value_t = 0)]
    linger_ms: u64,
    /// Print every inbound frame as received instead of a summary.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn parse_screen(s: &str) -> Result<ScreenConfig, String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    let h = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    ScreenConfig::landscape(w, h).map_err(|e| e.to_string())
}

/// Why a command stopped.
enum Failure {
    /// A check did not hold: assertion, digest, corrupt log. Exit 1.
    Check(anyhow::Error),
    /// Bad input or the environment got in the way. Exit 2.
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type Outcome = Result<(), Failure>;

fn load_cube(path: &Path, measure: &str, unit: &str) -> anyhow::Result<DataCube> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_dataset_with(file, measure, unit).with_context(|| format!("invalid dataset {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> Outcome {
    let cube = load_cube(&a.dataset, &a.measure, &a.unit)?;
    if let Some(out) = &a.out {
        std::fs::write(out, cube.to_csv_string()).with_context(|| format!("cannot write {}", out.display()))?;
    }
    let (lo, hi) = cube.value_range();
    let text = match a.format {
        Format::Json => serde_json::json!({
            "locations": cube.locations(),
            "years": cube.years(),
            "measure": cube.measure_name(),
            "unit": cube.measure_unit(),
            "min": lo,
            "max": hi,
            "digest": cube.digest(),
        })
        .to_string(),
        Format::Text => format!(
            "{} locations x {} years of {}\nrange {lo} .. {hi}\ndigest {}",
            cube.location_count(),
            cube.year_count(),
            cube.measure_name(),
            cube.digest()
        ),
    };
    emit(&text, None)?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Outcome {
    let path = Path::new(&a.scenario);
    let scenario = if path.exists() {
        Scenario::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?
    } else {
        bundled(&a.scenario).ok_or_else(|| anyhow!("no scenario file or bundled scenario named `{}`", a.scenario))?
    };
    let opts = RunOptions { seed: a.seed, log_path: a.log };
    let report = match run_scenario_with(&scenario, &opts) {
        Ok(r) => r,
        Err(e @ ScenarioError::Timeout { .. }) => return Err(Failure::Check(e.into())),
        Err(e) => return Err(Failure::Usage(e.into())),
    };
    let text = match a.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_string(),
    };
    emit(&text, a.out.as_deref())?;
    report.into_result().map(|_| ()).map_err(|e| Failure::Check(e.into()))
}

fn cmd_replay(a: ReplayArgs) -> Outcome {
    let outcome = match replay(&a.log) {
        Ok(o) => o,
        Err(ReplayError::Log(e)) => return Err(Failure::Usage(e.into())),
        Err(e) => return Err(Failure::Check(e.into())),
    };
    let verified = outcome.recorded.is_some();
    let text = match a.format {
        Format::Json => serde_json::json!({
            "session": outcome.session.as_str(),
            "applied": outcome.applied,
            "digest": outcome.digest,
            "verified": verified,
        })
        .to_string(),
        Format::Text => format!(
            "session {}\napplied {}\ndigest {}\n{}",
            outcome.session,
            outcome.applied,
            outcome.digest,
            if verified { "matches the recorded digest" } else { "log was not closed; nothing recorded to check against" }
        ),
    };
    emit(&text, None)?;
    Ok(())
}

async fn cmd_serve(a: ServeArgs) -> Outcome {
    let jitter = if a.seed_noise > 0.0 {
        holoproxy_core::anchor::PoseJitter::new(a.seed_noise).map_err(|e| anyhow!("--seed-noise: {e}"))?;
        Some(JitterConfig { sigma: a.seed_noise, seed: a.seed })
    } else if a.seed_noise < 0.0 || !a.seed_noise.is_finite() {
        return Err(anyhow!("--seed-noise must be a finite non-negative number").into());
    } else {
        None
    };
    if a.data.dataset.is_none() && a.resume.is_empty() {
        return Err(anyhow!("nothing to serve: pass --dataset or --resume").into());
    }
    if let Some(dir) = &a.log_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let cube = a.data.dataset.as_deref().map(|p| load_cube(p, &a.data.measure, &a.data.unit)).transpose()?;

    let hub = Hub::new(ServerConfig {
        heartbeat: Duration::from_millis(a.heartbeat_ms),
        silence: Duration::from_millis(a.silence_ms),
        log_dir: a.log_dir.clone(),
        ui_dir: a.ui.clone(),
        jitter,
    });
    let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
        .await
        .with_context(|| format!("cannot listen on {}:{}", a.host, a.port))?;
    let addr: SocketAddr = listener.local_addr().context("listener address")?;

    let mut lines = Vec::new();
    for log in &a.resume {
        let core = SessionCore::recover(log).map_err(|e| match e {
            ReplayError::Log(e) => Failure::Usage(e.into()),
            e => Failure::Check(anyhow!("{}: {e}", log.display())),
        })?;
        let applied = core.applied();
        let id = hub.install(core);
        lines.push(format!("session {id} resumed after {applied} messages"));
    }
    if let Some(cube) = cube {
        let id = hub.create_session(cube, a.screen).context("cannot create session log")?;
        lines.push(format!("session {id}"));
    }
    lines.push(format!("listening on {addr}"));
    if a.ui.is_some() {
        lines.push(format!("ui http://{addr}/"));
    }
    emit(&lines.join("\n"), None)?;

    let server = hub.clone();
    tokio::select! {
        r = server.serve(listener) => r.context("listener failed")?,
        r = tokio::signal::ctrl_c() => r.context("cannot wait for ctrl-c")?,
    }
    for id in hub.session_ids() {
        if let Some(Ok(Some(closed))) = hub.close_session(&id).await {
            emit(&format!("closed {id} after {} messages, digest {}", closed.applied, closed.digest), None)?;
        }
    }
    Ok(())
}

fn describe(obs: &Observed, payload: &MessagePayload, seq: u64) -> Option<String> {
    Some(match obs {
        Observed::Snapshot => format!("snapshot at {seq}"),
        Observed::Delta => match payload {
            MessagePayload::StateDelta { changes } => format!("delta {seq}: {} change(s)", changes.len()),
            _ => return None,
        },
        Observed::Haptic(c) => format!("haptic amplitude {:.3} for {} ms", c.amplitude, c.duration_ms),
        Observed::Ack(s) => format!("ack {s}"),
        Observed::Error { code, seq, detail } => format!("error {code:?} for {seq}: {detail}"),
        Observed::Heartbeat | Observed::Ignored => return None,
    })
}

async fn cmd_client(a: ClientArgs) -> Outcome {
    let mut actions = Vec::new();
    let mut sources: Vec<String> = Vec::new();
    if let Some(path) = &a.script {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        sources.extend(text.lines().map(|l| l.split('#').next().unwrap_or("").trim().to_string()).filter(|l| !l.is_empty()));
    }
    sources.extend(a.actions.iter().cloned());
    for s in &sources {
        actions.push(s.parse::<Action>().map_err(|e| anyhow!("{e}"))?);
    }
    let chart = a
        .dataset
        .as_deref()
        .map(|p| load_cube(p, "value", ""))
        .transpose()?
        .map(|cube| layout_chart(&cube));
    let payloads = actions
        .iter()
        .map(|act| act.payload(chart.as_ref().map(|l| (l, &a.screen))).ok_or_else(|| anyhow!("`{act}` needs --dataset")))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let session = SessionId::new(a.session.clone()).map_err(|e| anyhow!("--session: {e}"))?;
    let id = ClientId::new(a.id.clone()).map_err(|e| anyhow!("--id: {e}"))?;
    let caps = if a.role == Role::Proxy { Capability::phone() } else { Capability::headset() };
    let timeout = Duration::from_secs(10);
    let mut client = Client::connect((a.host.as_str(), a.port), session, id, a.role, caps)
        .await
        .with_context(|| format!("cannot connect to {}:{}", a.host, a.port))?;
    let print = |seen: &[(holoproxy_core::protocol::Envelope, Observed)]| -> anyhow::Result<()> {
        for (env, obs) in seen {
            let line = match a.format {
                Format::Json => Some(String::from_utf8_lossy(&encode(env)).into_owned()),
                Format::Text => describe(obs, &env.payload, env.seq),
            };
            if let Some(line) = line {
                emit(&line, None)?;
            }
        }
        Ok(())
    };
    let seen = client
        .recv_until(timeout, |_, o| matches!(o, Observed::Snapshot | Observed::Error { .. }))
        .await
        .context("no snapshot from hub")?;
    print(&seen)?;
    if let Some((_, Observed::Error { code, detail, .. })) = seen.last() {
        return Err(Failure::Usage(anyhow!("hub refused the join: {code:?} {detail}")));
    }

    let mut refused = 0;
    for payload in payloads {
        let seq = client.send(payload).await.context("send failed")?;
        let seen = client.await_reply(seq, timeout).await.context("no reply from hub")?;
        refused += usize::from(matches!(seen.last(), Some((_, Observed::Error { .. }))));
        print(&seen)?;
    }
    if a.linger_ms > 0 {
        let linger = Duration::from_millis(a.linger_ms);
        match client.recv_until(linger, |_, _| false).await {
            Ok(seen) => print(&seen)?,
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => return Err(anyhow::Error::from(e).context("connection lost").into()),
        }
    }
    let digest = client.replica().digest().unwrap_or_default();
    if a.format == Format::Text {
        emit(&format!("digest {digest}"), None)?;
    }
    client.close().await.ok();
    if refused > 0 {
        return Err(Failure::Check(anyhow!("hub refused {refused} request(s)")));
    }
    Ok(())
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().context("cannot start runtime")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        _ => LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();

    let outcome = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Serve(a) => runtime().map_err(Failure::from).and_then(|rt| rt.block_on(cmd_serve(a))),
        Command::Client(a) => runtime().map_err(Failure::from).and_then(|rt| rt.block_on(cmd_client(a))),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("holoproxy: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("holoproxy: {e:#}");
            ExitCode::from(2)
        }
    }
}
