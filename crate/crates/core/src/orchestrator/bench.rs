//! Timing harnesses for declarative reconfiguration and API round trips.

use super::report::Summary;
use super::OrchestratorError;
use crate::clock::{AcceleratedClock, Clock};
use crate::service_api::{self, mock_service_controller, LocalController, ServiceApi, SloConfig};
use crate::store::MemoryStore;
use crate::workload::{run_service, MockService, WorkloadModel, THREAD_SETTING};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

/// Give up on an edit that has not become visible after this long.
const OBSERVE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Add,
    Rename,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSample {
    pub kind: EditKind,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigReport {
    pub samples: Vec<EditSample>,
    pub failures: Vec<String>,
    pub summary: Summary,
    /// The invalid edit was refused and the SLO list stayed as it was.
    pub rollback_ok: bool,
}

fn bench_err(reason: impl std::fmt::Display) -> OrchestratorError {
    OrchestratorError::Boot {
        component: "bench",
        reason: reason.to_string(),
    }
}

async fn listed_ids(http: &reqwest::Client, base: &str) -> Result<BTreeSet<String>, reqwest::Error> {
    let v: Value = http.get(format!("{base}/slos")).send().await?.json().await?;
    Ok(v.as_array()
        .map(|a| a.iter().filter_map(|s| s["id"].as_str().map(String::from)).collect())
        .unwrap_or_default())
}

/// Cycles add, rename and remove edits of one extra SLO through
/// `POST /reconfigure`, timing each until `GET /slos` shows it. A final
/// unparsable edit checks that the running configuration survives.
pub async fn measure_reconfiguration(
    slos: &Path,
    edits: usize,
    work_dir: &Path,
) -> Result<ReconfigReport, OrchestratorError> {
    let text = std::fs::read_to_string(slos).map_err(|e| bench_err(format!("{}: {e}", slos.display())))?;
    let base_doc: Value = serde_json::from_str(&text).map_err(bench_err)?;
    let config = SloConfig::from_json(&text).map_err(bench_err)?;
    let template = base_doc["slos"]
        .as_array()
        .and_then(|a| a.first())
        .cloned()
        .ok_or_else(|| bench_err("configuration has no SLO to copy"))?;
    // public ids may differ from the file's when aliases are set
    let public = |id: &str| {
        config
            .aliases
            .entries
            .get(id)
            .map_or_else(|| id.to_string(), |e| e.id.clone())
    };

    let clock: Arc<dyn Clock> = Arc::new(AcceleratedClock::realtime());
    let store = Arc::new(MemoryStore::new());
    let service = MockService::new(WorkloadModel::default(), clock.clone()).map_err(bench_err)?;
    let api = ServiceApi::new(config.clone(), Arc::new(LocalController(service)), store, clock, None)
        .await
        .map_err(bench_err)?;
    let server = service_api::serve_http(api, "127.0.0.1:0").await.map_err(bench_err)?;
    let base = server.base_url();
    let http = reqwest::Client::new();
    std::fs::create_dir_all(work_dir).map_err(bench_err)?;

    let mut extra: Option<String> = None;
    let mut samples = Vec::with_capacity(edits);
    let mut failures = Vec::new();
    for i in 0..edits {
        let kind = match (i % 3, &extra) {
            (_, None) => EditKind::Add,
            (1, Some(_)) => EditKind::Rename,
            _ => EditKind::Remove,
        };
        let next = match kind {
            EditKind::Add => Some(format!("ExtraSlo{i}")),
            EditKind::Rename => Some(format!("RenamedSlo{i}")),
            EditKind::Remove => None,
        };
        let mut doc = base_doc.clone();
        if let Some(id) = &next {
            let mut s = template.clone();
            s["id"] = json!(id);
            s["description"] = json!(format!("edit {i}"));
            doc["slos"].as_array_mut().expect("checked above").push(s);
        }
        let path = work_dir.join(format!("slos-edit-{i}.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&doc).expect("json")).map_err(bench_err)?;
        let mut want: BTreeSet<String> = config.slos.iter().map(|s| public(&s.id)).collect();
        want.extend(next.iter().map(|id| public(id)));

        let start = Instant::now();
        let resp = http
            .post(format!("{base}/reconfigure"))
            .json(&json!({ "path": path }))
            .send()
            .await;
        match resp {
            Ok(r) if r.status().is_success() => {}
            Ok(r) => {
                failures.push(format!("edit {i}: {}", r.status()));
                continue;
            }
            Err(e) => {
                failures.push(format!("edit {i}: {e}"));
                continue;
            }
        }
        loop {
            if listed_ids(&http, &base).await.ok().as_ref() == Some(&want) {
                samples.push(EditSample {
                    kind,
                    latency_ms: start.elapsed().as_secs_f64() * 1000.0,
                });
                extra = next;
                break;
            }
            if start.elapsed() > OBSERVE_TIMEOUT {
                failures.push(format!("edit {i}: not observable after {OBSERVE_TIMEOUT:?}"));
                break;
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    }

    let before = listed_ids(&http, &base).await.map_err(bench_err)?;
    let broken = work_dir.join("slos-broken.json");
    std::fs::write(&broken, b"{\"slos\": [ {\"id\": ").map_err(bench_err)?;
    let refused = http
        .post(format!("{base}/reconfigure"))
        .json(&json!({ "path": broken }))
        .send()
        .await
        .map(|r| r.status().is_client_error())
        .unwrap_or(false);
    let after = listed_ids(&http, &base).await.map_err(bench_err)?;
    server.shutdown().await;

    let lat: Vec<f64> = samples.iter().map(|s| s.latency_ms).collect();
    Ok(ReconfigReport {
        summary: Summary::of(&lat),
        samples,
        failures,
        rollback_ok: refused && before == after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Casca,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Set,
    Get,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadSample {
    pub path: Route,
    pub op: Op,
    pub value: u32,
    pub ms: f64,
    /// Transport or protocol failure text, if the round trip failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub path: Route,
    pub op: Op,
    pub n: usize,
    pub failures: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub samples: Vec<OverheadSample>,
    pub categories: Vec<CategorySummary>,
}

impl OverheadReport {
    pub fn category(&self, path: Route, op: Op) -> Option<&CategorySummary> {
        self.categories.iter().find(|c| c.path == path && c.op == op)
    }

    /// Mean round trip over every successful sample on one path.
    pub fn path_mean(&self, path: Route) -> f64 {
        let v: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.path == path && s.error.is_none())
            .map(|s| s.ms)
            .collect();
        Summary::of(&v).mean
    }
}

const VALUES: std::ops::RangeInclusive<u32> = 1..=8;

struct Direct {
    addr: String,
    conn: Option<(BufReader<tokio::net::tcp::OwnedReadHalf>, tokio::net::tcp::OwnedWriteHalf)>,
}

impl Direct {
    async fn call(&mut self, req: &Value) -> Result<Value, String> {
        if self.conn.is_none() {
            let s = TcpStream::connect(&self.addr).await.map_err(|e| e.to_string())?;
            s.set_nodelay(true).ok();
            let (r, w) = s.into_split();
            self.conn = Some((BufReader::new(r), w));
        }
        let (r, w) = self.conn.as_mut().expect("connected");
        let mut line = serde_json::to_string(req).expect("json");
        line.push('\n');
        let out = async {
            w.write_all(line.as_bytes()).await?;
            let mut resp = String::new();
            if r.read_line(&mut resp).await? == 0 {
                return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof));
            }
            Ok(resp)
        }
        .await;
        let resp = match out {
            Ok(r) => r,
            Err(e) => {
                self.conn = None;
                return Err(e.to_string());
            }
        };
        let v: Value = serde_json::from_str(&resp).map_err(|e| e.to_string())?;
        if v["ok"] == json!(true) {
            Ok(v)
        } else {
            Err(v["error"].as_str().unwrap_or("refused").to_string())
        }
    }
}

async fn casca_call(http: &reqwest::Client, url: &str, op: Op, value: u32) -> Result<(), String> {
    let req = match op {
        Op::Set => http.put(url).json(&json!({ "value": value })),
        Op::Get => http.get(url),
    };
    let r = req.send().await.map_err(|e| e.to_string())?;
    if !r.status().is_success() {
        return Err(r.status().to_string());
    }
    r.bytes().await.map_err(|e| e.to_string())?;
    Ok(())
}

/// `n` sets and `n` gets of the thread count through the service API and as
/// many straight over the mock control protocol, values cycled over 1..=8.
pub async fn measure_api_overhead(n: usize) -> Result<OverheadReport, OrchestratorError> {
    let clock: Arc<dyn Clock> = Arc::new(AcceleratedClock::realtime());
    let svc = run_service(WorkloadModel::default(), "127.0.0.1:0", clock.clone())
        .await
        .map_err(bench_err)?;
    let control_addr = svc.control.local_addr().to_string();
    let config = SloConfig {
        slos: vec![],
        settings: vec![],
        aliases: Default::default(),
    };
    let api = ServiceApi::new(
        config,
        Arc::new(mock_service_controller(&control_addr)),
        Arc::new(MemoryStore::new()),
        clock,
        None,
    )
    .await
    .map_err(bench_err)?;
    let server = service_api::serve_http(api, "127.0.0.1:0").await.map_err(bench_err)?;
    let url = format!("{}/settings/{THREAD_SETTING}/value", server.base_url());
    let http = reqwest::Client::new();
    let mut direct = Direct {
        addr: control_addr,
        conn: None,
    };

    let values: Vec<u32> = VALUES.collect();
    let mut samples = Vec::with_capacity(4 * n);
    for i in 0..n {
        let value = values[i % values.len()];
        for (path, op) in [
            (Route::Casca, Op::Set),
            (Route::Casca, Op::Get),
            (Route::Direct, Op::Set),
            (Route::Direct, Op::Get),
        ] {
            let start = Instant::now();
            let res = match path {
                Route::Casca => casca_call(&http, &url, op, value).await,
                Route::Direct => {
                    let req = match op {
                        Op::Set => json!({ "op": "set", "setting": THREAD_SETTING, "value": value }),
                        Op::Get => json!({ "op": "get", "setting": THREAD_SETTING }),
                    };
                    direct.call(&req).await.map(drop)
                }
            };
            samples.push(OverheadSample {
                path,
                op,
                value,
                ms: start.elapsed().as_secs_f64() * 1000.0,
                error: res.err(),
            });
        }
    }
    server.shutdown().await;
    svc.control.shutdown().await;

    let mut categories = Vec::new();
    for path in [Route::Casca, Route::Direct] {
        for op in [Op::Set, Op::Get] {
            let all: Vec<&OverheadSample> = samples.iter().filter(|s| s.path == path && s.op == op).collect();
            let ok: Vec<f64> = all.iter().filter(|s| s.error.is_none()).map(|s| s.ms).collect();
            let s = Summary::of(&ok);
            categories.push(CategorySummary {
                path,
                op,
                n: all.len(),
                failures: all.len() - ok.len(),
                mean: s.mean,
                std: s.std,
                max: ok.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    Ok(OverheadReport { samples, categories })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn overhead_sample_counts() {
        let r = measure_api_overhead(16).await.unwrap();
        assert_eq!(r.samples.len(), 64);
        for c in &r.categories {
            assert_eq!((c.n, c.failures), (16, 0), "{c:?}");
        }
        let per_value = r.samples.iter().filter(|s| s.value == 3).count();
        assert_eq!(per_value, 8);
    }

    #[tokio::test]
    async fn reconfiguration_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let slos = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/slos.json");
        let r = measure_reconfiguration(&slos, 4, dir.path()).await.unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        let kinds: Vec<EditKind> = r.samples.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, [EditKind::Add, EditKind::Rename, EditKind::Remove, EditKind::Add]);
        assert!(r.samples.iter().all(|s| s.latency_ms > 0.0));
        assert!(r.rollback_ok);
    }
}
