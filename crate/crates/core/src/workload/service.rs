//! The simulated transcoding service and its line-delimited JSON control
//! endpoint.
//!
//! Requests: `{"op":"get"|"set"|"list","setting":..,"value":..}`.
//! Responses: `{"ok":true,...}` or `{"ok":false,"error":..}`.

use super::model::{fps_model, power_model, ModelError, WorkloadModel};
use crate::clock::Clock;
use crate::service_api::{SettingSpec, ValueType};
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::Arc;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

pub const THREAD_SETTING: &str = "EncodingThreadCount";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ControlRequest {
    Get { setting: String },
    Set { setting: String, value: f64 },
    List,
}

struct State {
    threads: u32,
    rng: ChaCha8Rng,
}

/// Shared handle to the simulation. All state changes go through one lock,
/// so reporters and control requests observe a single ordering.
#[derive(Clone)]
pub struct MockService {
    model: Arc<WorkloadModel>,
    state: Arc<Mutex<State>>,
    clock: Arc<dyn Clock>,
    origin_ms: i64,
}

impl MockService {
    pub fn new(model: WorkloadModel, clock: Arc<dyn Clock>) -> Result<Self, ModelError> {
        model.validate()?;
        let state = State {
            threads: model.initial_threads,
            rng: ChaCha8Rng::seed_from_u64(model.seed),
        };
        let origin_ms = clock.now_ms();
        Ok(Self {
            model: Arc::new(model),
            state: Arc::new(Mutex::new(state)),
            clock,
            origin_ms,
        })
    }

    pub fn model(&self) -> &WorkloadModel {
        &self.model
    }

    pub fn setting_spec(&self) -> SettingSpec {
        SettingSpec {
            id: THREAD_SETTING.to_string(),
            description: "Number of threads used by the transcoder".to_string(),
            value_type: ValueType::Integer,
            p_min: 0.0,
            p_max: self.model.max_threads as f64,
        }
    }

    pub fn threads(&self) -> u32 {
        self.state.lock().threads
    }

    pub fn set_threads(&self, value: f64) -> Result<u32, String> {
        self.setting_spec().check(value).map_err(|e| e.to_string())?;
        let t = value as u32;
        self.state.lock().threads = t;
        Ok(t)
    }

    /// Simulated seconds since the service started.
    pub fn sim_time_s(&self, now_ms: i64) -> f64 {
        (now_ms - self.origin_ms) as f64 / 1000.0
    }

    pub fn sample_fps(&self, now_ms: i64) -> f64 {
        let t = self.sim_time_s(now_ms);
        let mut st = self.state.lock();
        let threads = st.threads;
        fps_model(threads, t, &self.model, &mut st.rng)
    }

    pub fn sample_power(&self) -> f64 {
        let mut st = self.state.lock();
        let threads = st.threads;
        power_model(threads, &self.model, &mut st.rng)
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn handle(&self, req: ControlRequest) -> Value {
        let unknown = |s: &str| json!({"ok": false, "error": format!("unknown setting {s:?}")});
        match req {
            ControlRequest::List => json!({"ok": true, "settings": [self.setting_spec()]}),
            ControlRequest::Get { setting } if setting == THREAD_SETTING => {
                json!({"ok": true, "setting": setting, "value": self.threads()})
            }
            ControlRequest::Set { setting, value } if setting == THREAD_SETTING => {
                match self.set_threads(value) {
                    Ok(t) => json!({"ok": true, "setting": setting, "value": t}),
                    Err(e) => json!({"ok": false, "error": e}),
                }
            }
            ControlRequest::Get { setting } | ControlRequest::Set { setting, .. } => unknown(&setting),
        }
    }

    pub fn handle_line(&self, line: &str) -> Value {
        match serde_json::from_str::<ControlRequest>(line) {
            Ok(req) => self.handle(req),
            Err(e) => json!({"ok": false, "error": format!("bad request: {e}")}),
        }
    }
}

pub struct ControlServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl ControlServer {
    pub async fn bind(addr: &str, service: MockService) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let mut conns = tokio::task::JoinSet::new();
            while let Ok((stream, _)) = listener.accept().await {
                conns.spawn(serve(stream, service.clone()));
            }
        });
        Ok(Self { local_addr, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn shutdown(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}

async fn serve(stream: TcpStream, service: MockService) {
    let _ = stream.set_nodelay(true);
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        let mut out = service.handle_line(&line).to_string().into_bytes();
        out.push(b'\n');
        if w.write_all(&out).await.is_err() {
            break;
        }
    }
}

/// A running mock service: simulation plus control endpoint.
pub struct MockServiceHandle {
    pub service: MockService,
    pub control: ControlServer,
}

pub async fn run_service(
    model: WorkloadModel,
    control_addr: &str,
    clock: Arc<dyn Clock>,
) -> Result<MockServiceHandle, Box<dyn std::error::Error + Send + Sync>> {
    let service = MockService::new(model, clock)?;
    let control = ControlServer::bind(control_addr, service.clone()).await?;
    Ok(MockServiceHandle { service, control })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    fn svc() -> MockService {
        MockService::new(WorkloadModel::default(), Arc::new(VirtualClock::new(0))).unwrap()
    }

    #[test]
    fn read_your_writes_and_guards() {
        let s = svc();
        let r = s.handle_line(r#"{"op":"set","setting":"EncodingThreadCount","value":7}"#);
        assert_eq!(r["ok"], json!(true));
        let r = s.handle_line(r#"{"op":"get","setting":"EncodingThreadCount"}"#);
        assert_eq!(r["value"], json!(7));
        let r = s.handle_line(r#"{"op":"set","setting":"EncodingThreadCount","value":20}"#);
        assert_eq!(r["ok"], json!(false));
        assert_eq!(s.threads(), 7);
        let r = s.handle_line(r#"{"op":"set","setting":"EncodingThreadCount","value":3.5}"#);
        assert_eq!(r["ok"], json!(false));
        assert_eq!(s.threads(), 7);
        let r = s.handle_line(r#"{"op":"get","setting":"Bitrate"}"#);
        assert_eq!(r["ok"], json!(false));
        let r = s.handle_line("garbage");
        assert_eq!(r["ok"], json!(false));
    }

    #[test]
    fn list_describes_thread_count() {
        let r = svc().handle_line(r#"{"op":"list"}"#);
        let s = &r["settings"][0];
        assert_eq!(s["id"], json!("EncodingThreadCount"));
        assert_eq!(s["type"], json!("integer"));
        assert_eq!((s["min"].as_f64(), s["max"].as_f64()), (Some(0.0), Some(16.0)));
    }

    #[tokio::test]
    async fn control_over_tcp() {
        let h = run_service(WorkloadModel::default(), "127.0.0.1:0", Arc::new(VirtualClock::new(0)))
            .await
            .unwrap();
        let stream = TcpStream::connect(h.control.local_addr()).await.unwrap();
        let (r, mut w) = stream.into_split();
        let mut lines = BufReader::new(r).lines();
        w.write_all(b"{\"op\":\"set\",\"setting\":\"EncodingThreadCount\",\"value\":7}\n{\"op\":\"get\",\"setting\":\"EncodingThreadCount\"}\n")
            .await
            .unwrap();
        let _ = lines.next_line().await.unwrap().unwrap();
        let got: Value = serde_json::from_str(&lines.next_line().await.unwrap().unwrap()).unwrap();
        assert_eq!(got, json!({"ok": true, "setting": "EncodingThreadCount", "value": 7}));
        h.control.shutdown().await;
    }
}
