use casca_core::bus::tcp::{BusServer, TcpBusClient, DEFAULT_LISTEN as BUS_LISTEN};
use casca_core::bus::{Broker, BusConnector};
use casca_core::clock::{wall_ms, AcceleratedClock, Clock};
use casca_core::decision::{
    load_policy, rlds_train, run_gds, run_rds, DsOutcome, GdsRunConfig, RdsConfig, RldsConfig,
};
use casca_core::emma::{self, EmmaData, EmmaService};
use casca_core::hook::{load_hook_config, run_hook};
use casca_core::orchestrator::{
    measure_api_overhead, measure_reconfiguration, report_run_dir, run_scenario, RunOptions, ScenarioConfig,
};
use casca_core::service_api::{self, mock_service_controller, AliasMap, ServiceApi};
use casca_core::store::remote::{RemoteStore, StoreServer, DEFAULT_LISTEN as STORE_LISTEN};
use casca_core::store::MemoryStore;
use casca_core::workload::{run_reporter, run_service, ReporterKind, ReporterSpec, WorkloadModel};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use tracing::{error, info, warn};

type AnyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser)]
#[command(name = "casca", version, about = "Carbon-aware SLO control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Boot the whole stack from a scenario and run its decision system.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Run directory, overriding the scenario's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute report.json from a run directory.
    Report { run_dir: PathBuf },
    /// Time add/rename/remove edits of the scenario's SLO file.
    BenchReconfig {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        edits: usize,
    },
    /// Round-trip latency through the service API versus the control protocol.
    BenchOverhead {
        #[arg(long, default_value_t = 400)]
        n: usize,
    },
    /// Telemetry bus over TCP.
    Bus {
        #[arg(long, default_value = BUS_LISTEN)]
        listen: String,
    },
    /// Telemetry store over TCP.
    Store {
        #[arg(long, default_value = STORE_LISTEN)]
        listen: String,
        /// Append-only journal replayed at start.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Telemetry hook feeding a remote store. `CASCA_BUS` overrides the bus address.
    Hook {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = STORE_LISTEN)]
        store: String,
    },
    /// Energy-mix and carbon-intensity service.
    Emma {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        locations: PathBuf,
        #[arg(long, default_value = emma::DEFAULT_LISTEN)]
        listen: String,
    },
    /// SLO and service-control API. SIGHUP reloads the SLO file.
    ServiceApi {
        #[arg(long)]
        slos: PathBuf,
        /// `mock:<addr>` of the service control endpoint.
        #[arg(long)]
        controller: String,
        #[arg(long, default_value = STORE_LISTEN)]
        store: String,
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long, default_value = service_api::server::DEFAULT_LISTEN)]
        listen: String,
    },
    /// Simulated transcoding service with its control endpoint and reporters.
    MockService {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7815")]
        listen: String,
        #[arg(long, default_value_t = 1.0)]
        clock_multiplier: f64,
        /// Publish FPS (1 s) and power (10 s) readings to this bus.
        #[arg(long)]
        bus: Option<String>,
    },
    /// Random decision system.
    Rds(DsArgs),
    /// Greedy decision system.
    Gds(DsArgs),
    /// Reinforcement-learning decision system.
    Rlds(DsArgs),
}

#[derive(clap::Args)]
struct DsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Step log destination.
    #[arg(long, default_value = "steps.csv")]
    out: PathBuf,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AnyError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

async fn until_interrupted() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        warn!("cannot listen for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}

fn ds_clock(origin: Option<i64>, multiplier: f64) -> AcceleratedClock {
    AcceleratedClock::new(origin.unwrap_or_else(wall_ms), multiplier)
}

fn write_log(out: &Path, outcome: &DsOutcome) -> Result<(), AnyError> {
    let f = std::fs::File::create(out).map_err(|e| format!("{}: {e}", out.display()))?;
    outcome.log.write_csv(std::io::BufWriter::new(f))?;
    info!("{} steps written to {}", outcome.log.rows.len(), out.display());
    match &outcome.failure {
        Some(e) => Err(format!("decision loop stopped early: {e}").into()),
        None => Ok(()),
    }
}

async fn run(cmd: Cmd) -> Result<(), AnyError> {
    match cmd {
        Cmd::Run { scenario, out } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if out.is_some() {
                cfg.output = out;
            }
            let r = run_scenario(&cfg, RunOptions::default()).await?;
            println!("{}", serde_json::to_string_pretty(&r.report.metrics)?);
            println!("carbon {:.3} +/- {:.3} mg/min", r.report.carbon_mean, r.report.carbon_std);
            if let Some(d) = r.run_dir {
                println!("run directory {}", d.display());
            }
            if let Some(f) = r.report.failure {
                return Err(format!("run failed: {f}").into());
            }
        }
        Cmd::Report { run_dir } => {
            let r = report_run_dir(&run_dir)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::BenchReconfig { scenario, edits } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let dir = std::env::temp_dir().join(format!("casca-reconfig-{}", std::process::id()));
            let r = measure_reconfiguration(&cfg.slos, edits, &dir).await;
            let _ = std::fs::remove_dir_all(&dir);
            println!("{}", serde_json::to_string_pretty(&r?)?);
        }
        Cmd::BenchOverhead { n } => {
            let r = measure_api_overhead(n).await?;
            println!("{}", serde_json::to_string_pretty(&r.categories)?);
        }
        Cmd::Bus { listen } => {
            let broker = Broker::new();
            let server = BusServer::bind(&listen, broker.clone()).await?;
            info!("bus listening on {}", server.local_addr());
            until_interrupted().await;
            server.shutdown().await;
            broker.shutdown();
        }
        Cmd::Store { listen, journal } => {
            let store = Arc::new(match journal {
                Some(p) => MemoryStore::with_journal(p)?,
                None => MemoryStore::new(),
            });
            let server = StoreServer::bind(&listen, store.clone()).await?;
            info!("store listening on {}", server.local_addr());
            until_interrupted().await;
            server.shutdown().await;
            store.flush()?;
        }
        Cmd::Hook { config, store } => {
            let mut cfg = load_hook_config(&config)?;
            if let Ok(bus) = std::env::var("CASCA_BUS") {
                cfg.bus = bus;
            }
            let bus: Arc<dyn BusConnector> = Arc::new(TcpBusClient::new(cfg.bus.clone()));
            info!("hook {} on {} via {}", cfg.measurement, cfg.topic, cfg.bus);
            let h = run_hook(cfg, bus, Arc::new(RemoteStore::new(store)));
            until_interrupted().await;
            h.stop().await;
        }
        Cmd::Emma {
            sources,
            locations,
            listen,
        } => {
            let svc = EmmaService::new(EmmaData::load(sources, locations)?);
            let server = emma::serve_http(svc, &listen).await?;
            info!("EMMA listening on {}", server.local_addr());
            until_interrupted().await;
            server.shutdown().await;
        }
        Cmd::ServiceApi {
            slos,
            controller,
            store,
            aliases,
            listen,
        } => {
            let addr = controller
                .strip_prefix("mock:")
                .ok_or("controller must be given as mock:<addr>")?;
            let aliases = aliases.map(AliasMap::load).transpose()?;
            let clock: Arc<dyn Clock> = Arc::new(AcceleratedClock::realtime());
            let api = ServiceApi::from_file(
                slos,
                Arc::new(mock_service_controller(addr)),
                Arc::new(RemoteStore::new(store)),
                clock,
                aliases,
            )
            .await?;
            let server = service_api::serve_http(api.clone(), &listen).await?;
            info!("service API listening on {}", server.local_addr());
            let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
            loop {
                tokio::select! {
                    _ = until_interrupted() => break,
                    _ = hup.recv() => match api.reload().await {
                        Ok((s, p)) => info!("reloaded: {s} SLOs, {p} settings"),
                        Err(e) => error!("reload rejected, keeping the running configuration: {e}"),
                    },
                }
            }
            server.shutdown().await;
        }
        Cmd::MockService {
            model,
            listen,
            clock_multiplier,
            bus,
        } => {
            let model: WorkloadModel = match model {
                Some(p) => read_json(&p)?,
                None => WorkloadModel::default(),
            };
            let clock: Arc<dyn Clock> = Arc::new(AcceleratedClock::new(wall_ms(), clock_multiplier));
            let svc = run_service(model, &listen, clock.clone()).await?;
            info!("mock service control on {}", svc.control.local_addr());
            let mut reporters = Vec::new();
            if let Some(bus) = bus {
                let bus: Arc<dyn BusConnector> = Arc::new(TcpBusClient::new(bus));
                for (kind, topic, period_s) in [(ReporterKind::Fps, "fps/c1", 1.0), (ReporterKind::Power, "power/plug1", 10.0)] {
                    let spec = ReporterSpec {
                        kind,
                        topic: topic.into(),
                        period_s,
                    };
                    reporters.push(run_reporter(svc.service.clone(), bus.clone(), clock.clone(), spec));
                }
            }
            until_interrupted().await;
            for r in reporters {
                r.stop().await;
            }
            svc.control.shutdown().await;
        }
        Cmd::Rds(a) => {
            let cfg: RdsConfig = read_json(&a.config)?;
            let clock = ds_clock(cfg.control.origin_ms, cfg.control.clock_multiplier);
            let out = run_rds(&cfg, &cfg.control.client(), &clock).await?;
            write_log(&a.out, &out)?;
        }
        Cmd::Gds(a) => {
            let cfg: GdsRunConfig = read_json(&a.config)?;
            let clock = ds_clock(cfg.control.origin_ms, cfg.control.clock_multiplier);
            let out = run_gds(&cfg, &cfg.control.client(), &clock).await?;
            write_log(&a.out, &out)?;
        }
        Cmd::Rlds(a) => {
            let cfg: RldsConfig = read_json(&a.config)?;
            let clock = ds_clock(cfg.control.origin_ms, cfg.control.clock_multiplier);
            let initial = match &cfg.checkpoint {
                Some(p) if p.is_file() => Some(load_policy(p)?),
                _ => None,
            };
            let (_, out) = rlds_train(&cfg, &cfg.control.client(), &clock, initial).await?;
            write_log(&a.out, &out)?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().cmd).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
