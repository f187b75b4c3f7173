//! Boots the whole stack from one scenario document, runs a decision system
//! against it and writes the run directory.

pub mod bench;
pub mod report;

pub use bench::{measure_api_overhead, measure_reconfiguration, OverheadReport, ReconfigReport, Route};
pub use report::{compute_report, series_stats, LatencySummary, ReportParams, RunReport, Summary};

use crate::bus::tcp::BusServer;
use crate::bus::{Broker, BusConnector};
use crate::clock::{AcceleratedClock, Clock, VirtualClock};
use crate::decision::{
    rlds_train, run_gds, run_rds, ControlLoopConfig, DsOutcome, GdsConfig, GdsRunConfig, PolicyConfig,
    RdsConfig, Recorder, RldsConfig, StepLog,
};
use crate::emma::{self, EmmaData, EmmaService, Granularity};
use crate::hook::{load_hook_config, run_hook, HookConfig, HookHandle};
use crate::service_api::{self, mock_service_controller, AliasMap, ServiceApi, SloConfig};
use crate::store::remote::StoreServer;
use crate::store::{MemoryStore, TelemetryPoint};
use crate::workload::{attach_virtual, run_reporter, run_service, ReporterKind, ReporterSpec, WorkloadModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use tracing::info;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{component} failed to boot: {reason}")]
    Boot { component: &'static str, reason: String },
    #[error("report: {0}")]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Decision(#[from] crate::decision::DsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn boot(component: &'static str) -> impl Fn(String) -> OrchestratorError {
    move |reason| OrchestratorError::Boot { component, reason }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Discrete-event time: runs as fast as the stack can settle.
    Virtual,
    /// Wall time scaled by `clock_multiplier`.
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum DecisionConfig {
    Rds {
        param_id: String,
    },
    Gds(GdsConfig),
    Rlds {
        params: Vec<String>,
        slos: Vec<String>,
        #[serde(default)]
        policy: PolicyConfig,
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
}

impl DecisionConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rds { .. } => "rds",
            Self::Gds(_) => "gds",
            Self::Rlds { .. } => "rlds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmmaPaths {
    pub sources: PathBuf,
    pub locations: PathBuf,
}

fn d_clock() -> ClockMode {
    ClockMode::Virtual
}
fn d_multiplier() -> f64 {
    60.0
}
fn d_origin() -> i64 {
    1_704_067_200_000
}
fn d_tau() -> f64 {
    60.0
}
fn d_reporters() -> Vec<ReporterSpec> {
    vec![
        ReporterSpec {
            kind: ReporterKind::Fps,
            topic: "fps/c1".into(),
            period_s: 1.0,
        },
        ReporterSpec {
            kind: ReporterKind::Power,
            topic: "power/plug1".into(),
            period_s: 10.0,
        },
    ]
}
fn d_country() -> String {
    "AT".into()
}
fn d_granularity() -> Granularity {
    Granularity::Hourly
}
fn d_power() -> String {
    "Power".into()
}
fn d_warmup() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_clock")]
    pub clock: ClockMode,
    #[serde(default = "d_multiplier")]
    pub clock_multiplier: f64,
    /// Simulated start time, ms since the epoch.
    #[serde(default = "d_origin")]
    pub origin_ms: i64,
    /// Simulated run length in seconds.
    pub duration_s: f64,
    #[serde(default = "d_tau")]
    pub tau_s: f64,
    #[serde(default)]
    pub model: WorkloadModel,
    #[serde(default = "d_reporters")]
    pub reporters: Vec<ReporterSpec>,
    pub hooks: Vec<PathBuf>,
    pub slos: PathBuf,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
    pub decision: DecisionConfig,
    pub emma: EmmaPaths,
    #[serde(default = "d_country")]
    pub country: String,
    #[serde(default = "d_granularity")]
    pub granularity: Granularity,
    /// Power SLO id as the decision system sees it.
    #[serde(default = "d_power")]
    pub power_slo: String,
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    /// Run directory; nothing is written when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Also expose the bus over TCP.
    #[serde(default)]
    pub bus_listen: Option<String>,
    /// Also expose the store over TCP.
    #[serde(default)]
    pub store_listen: Option<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        serde_json::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))
    }

    /// Loads a scenario, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.hooks.iter_mut().for_each(fix);
        fix(&mut self.slos);
        if let Some(a) = &mut self.aliases {
            fix(a);
        }
        fix(&mut self.emma.sources);
        fix(&mut self.emma.locations);
        if let Some(o) = &mut self.output {
            fix(o);
        }
        if let DecisionConfig::Rlds {
            checkpoint: Some(c), ..
        } = &mut self.decision
        {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be positive".into());
        }
        if !(self.tau_s > 0.0) {
            return bad("tau_s must be positive".into());
        }
        if !(self.clock_multiplier > 0.0) {
            return bad("clock_multiplier must be positive".into());
        }
        if self.max_steps() == 0 {
            return bad("duration_s is shorter than one time-step".into());
        }
        let mut files: Vec<&PathBuf> = self.hooks.iter().collect();
        files.extend([&self.slos, &self.emma.sources, &self.emma.locations]);
        files.extend(self.aliases.iter());
        for f in files {
            if !f.is_file() {
                return bad(format!("referenced file {} does not exist", f.display()));
            }
        }
        self.model.validate().map_err(|e| OrchestratorError::Config(e.to_string()))
    }

    pub fn max_steps(&self) -> u64 {
        (self.duration_s / self.tau_s).floor() as u64
    }

    pub fn alias_map(&self) -> Result<Option<AliasMap>, OrchestratorError> {
        self.aliases
            .as_ref()
            .map(AliasMap::load)
            .transpose()
            .map_err(|e| OrchestratorError::Config(e.to_string()))
    }

    /// Internal id behind a public one.
    pub fn internal_id(&self, public: &str) -> Result<String, OrchestratorError> {
        let map = self.alias_map()?;
        let cfg = SloConfig::load(&self.slos).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        let from_file = Some(cfg.aliases).filter(|m| !m.is_empty());
        let map = map.or(from_file).unwrap_or_default();
        Ok(map
            .entries
            .iter()
            .find(|(_, e)| e.id == public)
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| public.to_string()))
    }
}

#[derive(Default, Clone)]
pub struct RunOptions {
    /// Captures API responses and the read/written value trajectory.
    pub recorder: Option<Arc<Recorder>>,
}

#[derive(Debug)]
pub struct RunResult {
    pub report: RunReport,
    pub log: StepLog,
    pub telemetry: Vec<TelemetryPoint>,
    pub run_dir: Option<PathBuf>,
}

/// The running stack, in boot order.
struct Stack {
    store: Arc<MemoryStore>,
    store_server: Option<StoreServer>,
    broker: Broker,
    bus_server: Option<BusServer>,
    hooks: Vec<Arc<HookHandle>>,
    emma: crate::http::HttpServer,
    emma_data: Arc<EmmaData>,
    service: crate::workload::MockServiceHandle,
    api: crate::http::HttpServer,
    reporters: Vec<crate::workload::ReporterHandle>,
    virtual_clock: Option<Arc<VirtualClock>>,
    clock: Arc<dyn Clock>,
}

impl Stack {
    async fn boot(cfg: &ScenarioConfig) -> Result<Self, OrchestratorError> {
        let hook_cfgs: Vec<HookConfig> = cfg
            .hooks
            .iter()
            .map(|p| load_hook_config(p).map_err(|e| boot("hook")(e.to_string())))
            .collect::<Result<_, _>>()?;
        let slo_cfg = SloConfig::load(&cfg.slos).map_err(|e| boot("service-api")(e.to_string()))?;
        let aliases = cfg.alias_map()?;

        let store = Arc::new(MemoryStore::new());
        let store_server = match &cfg.store_listen {
            Some(a) => Some(
                StoreServer::bind(a, store.clone())
                    .await
                    .map_err(|e| boot("store")(e.to_string()))?,
            ),
            None => None,
        };

        let broker = Broker::new();
        let bus_server = match &cfg.bus_listen {
            Some(a) => Some(
                BusServer::bind(a, broker.clone())
                    .await
                    .map_err(|e| boot("bus")(e.to_string()))?,
            ),
            None => None,
        };
        let bus: Arc<dyn BusConnector> = Arc::new(broker.clone());
        let hooks: Vec<Arc<HookHandle>> = hook_cfgs
            .into_iter()
            .map(|h| Arc::new(run_hook(h, bus.clone(), store.clone())))
            .collect();
        let want = hooks.len();
        let subscribed = async {
            while broker.subscriber_count() < want {
                tokio::time::sleep(Duration::from_millis(2)).await;
            }
        };
        tokio::time::timeout(Duration::from_secs(5), subscribed)
            .await
            .map_err(|_| boot("hook")("subscription timed out".into()))?;

        let emma_data = EmmaData::load(&cfg.emma.sources, &cfg.emma.locations)
            .map_err(|e| boot("emma")(e.to_string()))?;
        let emma_svc = EmmaService::new(emma_data);
        let emma_data = emma_svc.snapshot();
        let emma = emma::serve_http(emma_svc, "127.0.0.1:0")
            .await
            .map_err(|e| boot("emma")(e.to_string()))?;

        let (clock, virtual_clock): (Arc<dyn Clock>, _) = match cfg.clock {
            ClockMode::Virtual => {
                let vc = Arc::new(VirtualClock::new(cfg.origin_ms));
                (vc.clone(), Some(vc))
            }
            ClockMode::Accelerated => (Arc::new(AcceleratedClock::new(cfg.origin_ms, cfg.clock_multiplier)), None),
        };

        let service = run_service(cfg.model.clone(), "127.0.0.1:0", clock.clone())
            .await
            .map_err(|e| boot("mock-service")(e.to_string()))?;
        let controller = Arc::new(mock_service_controller(&service.control.local_addr().to_string()));
        let api = ServiceApi::new(slo_cfg, controller, store.clone(), clock.clone(), aliases)
            .await
            .map_err(|e| boot("service-api")(e.to_string()))?;
        let api = service_api::serve_http(api, "127.0.0.1:0")
            .await
            .map_err(|e| boot("service-api")(e.to_string()))?;

        let mut reporters = Vec::new();
        match &virtual_clock {
            Some(vc) => {
                for spec in &cfg.reporters {
                    attach_virtual(vc, service.service.clone(), broker.clone(), spec);
                }
                for h in &hooks {
                    vc.add_settler(h.clone());
                }
            }
            None => {
                for spec in &cfg.reporters {
                    reporters.push(run_reporter(service.service.clone(), bus.clone(), clock.clone(), spec.clone()));
                }
            }
        }

        Ok(Self {
            store,
            store_server,
            broker,
            bus_server,
            hooks,
            emma,
            emma_data,
            service,
            api,
            reporters,
            virtual_clock,
            clock,
        })
    }

    fn loop_config(&self, cfg: &ScenarioConfig) -> ControlLoopConfig {
        ControlLoopConfig {
            tau_s: cfg.tau_s,
            slo_api: self.api.base_url(),
            control_api: self.api.base_url(),
            emma_api: self.emma.base_url(),
            seed: cfg.seed,
            max_steps: cfg.max_steps(),
            country: cfg.country.clone(),
            granularity: cfg.granularity,
            power_slo: cfg.power_slo.clone(),
            clock_multiplier: cfg.clock_multiplier,
            origin_ms: Some(cfg.origin_ms),
        }
    }

    /// Stops everything in reverse boot order.
    async fn shutdown(self) {
        for r in self.reporters {
            r.stop().await;
        }
        if let Some(vc) = &self.virtual_clock {
            vc.clear_settlers();
        }
        self.api.shutdown().await;
        self.service.control.shutdown().await;
        self.emma.shutdown().await;
        for h in &self.hooks {
            h.stop().await;
        }
        if let Some(b) = self.bus_server {
            b.shutdown().await;
        }
        self.broker.shutdown();
        if let Some(s) = self.store_server {
            s.shutdown().await;
        }
    }
}

async fn run_decision(
    cfg: &ScenarioConfig,
    control: ControlLoopConfig,
    client: &crate::decision::ApiClient,
    clock: &dyn Clock,
) -> Result<DsOutcome, OrchestratorError> {
    let out = match &cfg.decision {
        DecisionConfig::Rds { param_id } => {
            let c = RdsConfig {
                control,
                param_id: param_id.clone(),
            };
            run_rds(&c, client, clock).await?
        }
        DecisionConfig::Gds(g) => {
            let c = GdsRunConfig {
                control,
                gds: g.clone(),
            };
            run_gds(&c, client, clock).await?
        }
        DecisionConfig::Rlds {
            params,
            slos,
            policy,
            checkpoint,
        } => {
            let c = RldsConfig {
                control,
                params: params.clone(),
                slos: slos.clone(),
                policy: policy.clone(),
                checkpoint: checkpoint.clone(),
                explore: true,
                train: true,
            };
            rlds_train(&c, client, clock, None).await?.1
        }
    };
    Ok(out)
}

/// Report over a finished run's raw artifacts.
pub fn report_for(
    cfg: &ScenarioConfig,
    log: &StepLog,
    telemetry: &[TelemetryPoint],
    emma_data: &EmmaData,
) -> Result<RunReport, OrchestratorError> {
    let slo_cfg = SloConfig::load(&cfg.slos).map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let power = cfg.internal_id(&cfg.power_slo)?;
    let power = slo_cfg.slos.iter().any(|s| s.id == power).then_some(power);
    let intensity = |t: i64| {
        emma_data
            .locations
            .location_intensity(&cfg.country, t, cfg.granularity)
            .ok()
    };
    let params = ReportParams {
        slos: &slo_cfg.slos,
        tau_s: cfg.tau_s,
        warmup_steps: cfg.warmup_steps,
        power_slo: power.as_deref(),
        intensity: &intensity,
    };
    Ok(compute_report(log, telemetry, &params)?)
}

/// Boots the stack, runs the configured decision system for the scenario's
/// duration, stops everything and writes the run directory if one is
/// configured.
pub async fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunResult, OrchestratorError> {
    cfg.validate()?;
    info!("booting {} scenario, {} steps", cfg.decision.name(), cfg.max_steps());
    let stack = Stack::boot(cfg).await?;
    let control = stack.loop_config(cfg);
    let mut client = control.client();
    if let Some(r) = &opts.recorder {
        client = client.with_recorder(r.clone());
    }
    let outcome = run_decision(cfg, control, &client, stack.clock.as_ref()).await;
    let telemetry = stack.store.points();
    let emma_data = stack.emma_data.clone();
    stack.shutdown().await;
    let outcome = outcome?;

    let mut report = report_for(cfg, &outcome.log, &telemetry, &emma_data)?;
    report.decision_latency_ms = Some(LatencySummary::of(&outcome.decision_ms));
    report.failure = outcome.failure.as_ref().map(|e| e.to_string());

    let run_dir = match &cfg.output {
        Some(dir) => {
            write_run_dir(dir, cfg, &outcome.log, &telemetry, &report)?;
            Some(dir.clone())
        }
        None => None,
    };
    Ok(RunResult {
        report,
        log: outcome.log,
        telemetry,
        run_dir,
    })
}

fn write_run_dir(
    dir: &Path,
    cfg: &ScenarioConfig,
    log: &StepLog,
    telemetry: &[TelemetryPoint],
    report: &RunReport,
) -> Result<(), OrchestratorError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("scenario.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).expect("scenario serializes")).map_err(io_err(&p))?;
    let p = dir.join("steps.csv");
    let f = std::fs::File::create(&p).map_err(io_err(&p))?;
    log.write_csv(std::io::BufWriter::new(f))?;
    let p = dir.join("telemetry.jsonl");
    let f = std::fs::File::create(&p).map_err(io_err(&p))?;
    let mut w = std::io::BufWriter::new(f);
    for pt in telemetry {
        use std::io::Write;
        serde_json::to_writer(&mut w, pt).expect("point serializes");
        w.write_all(b"\n").map_err(io_err(&p))?;
    }
    drop(w);
    write_report(dir, report)
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), OrchestratorError> {
    let p = dir.join("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(report).expect("report serializes")).map_err(io_err(&p))
}

/// Recomputes `report.json` from a run directory's raw files.
pub fn report_run_dir(dir: &Path) -> Result<RunReport, OrchestratorError> {
    let p = dir.join("scenario.json");
    let cfg = ScenarioConfig::from_json(&std::fs::read_to_string(&p).map_err(io_err(&p))?)?;
    let p = dir.join("steps.csv");
    let log = StepLog::read_csv(std::fs::File::open(&p).map_err(io_err(&p))?)?;
    let p = dir.join("telemetry.jsonl");
    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
    let telemetry = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| OrchestratorError::Config(format!("telemetry line {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<TelemetryPoint>, _>>()?;
    let data = EmmaData::load(&cfg.emma.sources, &cfg.emma.locations)
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let mut report = report_for(&cfg, &log, &telemetry, &data)?;
    if let Ok(old) = std::fs::read_to_string(dir.join("report.json")) {
        if let Ok(old) = serde_json::from_str::<RunReport>(&old) {
            report.decision_latency_ms = old.decision_latency_ms;
            report.reconfiguration_ms = old.reconfiguration_ms;
            report.failure = old.failure;
        }
    }
    write_report(dir, &report)?;
    Ok(report)
}
