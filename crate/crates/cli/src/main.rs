use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use openverse_bench::{
    density_sweep, payload_budget, run_scenario, sweep_json, sweep_table, BotProfile, Movement,
    ScenarioConfig,
};
use openverse_server::{start, ServerConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "openverse", version, about = "Serve shared 3D worlds and load-test them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the world server.
    Serve(ServeArgs),
    /// Load harness.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8443)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long)]
    cert: Option<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Overridden by OPENVERSE_PERSIST_DIR.
    #[arg(long, default_value = "data")]
    persist_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    tick_ms: u32,
    #[arg(long, default_value_t = 20)]
    max_room_size: u32,
    #[arg(long, default_value_t = 30_000)]
    heartbeat_timeout_ms: u32,
    /// Serve plain HTTP/WS. Meant for localhost testing only.
    #[arg(long)]
    dev_plaintext: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// One scenario at a fixed bot count.
    Run {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        bots: usize,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// One scenario per bot count, ascending.
    Sweep {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25")]
        counts: Vec<usize>,
        #[arg(long, default_value = "sweep.json")]
        out: PathBuf,
    },
    /// First-load bytes of a world document and its assets.
    Payload {
        #[arg(long, default_value = "hello-world")]
        world: String,
        /// Server base, e.g. https://host:8443
        #[arg(long)]
        url: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Sync endpoint, e.g. wss://host:8443/sync
    #[arg(long)]
    url: String,
    #[arg(long, default_value = "hello-world")]
    room: String,
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "orbit")]
    movement: Movement,
    #[arg(long, default_value_t = 0)]
    inject_delay_ms: u64,
}

impl ScenarioArgs {
    fn config(&self, bots: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(self.url.clone(), bots, self.duration);
        cfg.room = self.room.clone();
        cfg.seed = self.seed;
        cfg.inject_delay_ms = self.inject_delay_ms;
        cfg.profile = BotProfile {
            update_rate_hz: self.rate,
            movement: self.movement,
            ..BotProfile::default()
        };
        cfg
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match cli.command {
        Command::Serve(args) => runtime.block_on(serve(args)),
        Command::Bench(cmd) => match runtime.block_on(bench(cmd)) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

async fn serve(args: ServeArgs) -> ExitCode {
    let config = ServerConfig {
        bind: args.bind,
        port: args.port,
        cert: args.cert,
        key: args.key,
        dev_plaintext: args.dev_plaintext,
        persist_dir: args.persist_dir,
        tick_ms: args.tick_ms,
        max_room_size: args.max_room_size,
        heartbeat_timeout_ms: args.heartbeat_timeout_ms,
        ..ServerConfig::default()
    }
    .with_env_overrides();

    let server = match start(config).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    println!("serving {} (sync {})", server.http_url(), server.sync_url());
    let _ = tokio::signal::ctrl_c().await;
    server.shutdown().await;
    ExitCode::SUCCESS
}

async fn bench(cmd: BenchCommand) -> anyhow::Result<ExitCode> {
    match cmd {
        BenchCommand::Run { common, bots, out } => {
            let report = run_scenario(&common.config(bots)).await?;
            std::fs::write(&out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", sweep_table(std::slice::from_ref(&report)));
            Ok(if report.valid { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        BenchCommand::Sweep { common, counts, out } => {
            let reports = density_sweep(&common.config(2), &counts).await?;
            std::fs::write(&out, sweep_json(&reports)).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", sweep_table(&reports));
            Ok(if reports.iter().all(|r| r.valid) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        BenchCommand::Payload { world, url, out } => {
            let report = payload_budget(&url, &world).await?;
            let json = report.to_json();
            if let Some(out) = out {
                std::fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
            }
            println!("{json}");
            Ok(if report.complete && report.within_budget {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
