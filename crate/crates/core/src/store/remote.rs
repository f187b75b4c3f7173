//! Line-delimited JSON access to a [`MemoryStore`] from other processes.
//!
//! Requests: `{"op":"write","point":{..}}` and
//! `{"op":"query","q":"<dsl>","now":<ms>}`. Responses: `{"ok":true,...}` or
//! `{"ok":false,"error":".."}`.

use super::{MemoryStore, QuerySpec, StoreConnector, StoreError, TelemetryPoint};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::Arc;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Mutex;
use tokio::task::JoinHandle;
use tracing::debug;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7814";

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request {
    Write { point: TelemetryPoint },
    Query { q: String, now: i64 },
}

pub struct StoreServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl StoreServer {
    pub async fn bind(addr: &str, store: Arc<MemoryStore>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let mut conns = tokio::task::JoinSet::new();
            while let Ok((stream, _)) = listener.accept().await {
                conns.spawn(serve(stream, store.clone()));
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

async fn serve(stream: TcpStream, store: Arc<MemoryStore>) {
    let (r, mut w) = stream.into_split();
    let mut lines = BufReader::new(r).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Write { point }) => match store.write(point) {
                Ok(()) => json!({"ok": true}),
                Err(e) => json!({"ok": false, "error": e.to_string()}),
            },
            Ok(Request::Query { q, now }) => match QuerySpec::parse(&q) {
                Ok(spec) => json!({"ok": true, "value": store.query(&spec, now)}),
                Err(e) => json!({"ok": false, "error": e.to_string()}),
            },
            Err(e) => json!({"ok": false, "error": format!("bad request: {e}")}),
        };
        let mut out = resp.to_string().into_bytes();
        out.push(b'\n');
        if w.write_all(&out).await.is_err() {
            break;
        }
    }
    debug!("store connection closed");
}

type Conn = (Lines<BufReader<OwnedReadHalf>>, OwnedWriteHalf);

/// [`StoreConnector`] speaking to a [`StoreServer`].
pub struct RemoteStore {
    addr: String,
    conn: Mutex<Option<Conn>>,
}

impl RemoteStore {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            conn: Mutex::new(None),
        }
    }

    async fn call(&self, req: &Request) -> Result<Value, StoreError> {
        let mut line = serde_json::to_vec(req).map_err(|e| StoreError::Remote(e.to_string()))?;
        line.push(b'\n');
        let mut guard = self.conn.lock().await;
        for attempt in 0..2 {
            if guard.is_none() {
                let s = TcpStream::connect(&self.addr).await?;
                s.set_nodelay(true)?;
                let (r, w) = s.into_split();
                *guard = Some((BufReader::new(r).lines(), w));
            }
            let (lines, w) = guard.as_mut().expect("connected above");
            let res = async {
                w.write_all(&line).await?;
                lines.next_line().await
            }
            .await;
            match res {
                Ok(Some(resp)) => {
                    let v: Value = serde_json::from_str(&resp)
                        .map_err(|e| StoreError::Remote(e.to_string()))?;
                    if v["ok"] == Value::Bool(true) {
                        return Ok(v);
                    }
                    return Err(StoreError::Remote(
                        v["error"].as_str().unwrap_or("unknown error").to_string(),
                    ));
                }
                Ok(None) | Err(_) if attempt == 0 => *guard = None,
                Ok(None) => return Err(StoreError::Remote("connection closed".into())),
                Err(e) => return Err(e.into()),
            }
        }
        Err(StoreError::Remote("connection closed".into()))
    }
}

#[async_trait]
impl StoreConnector for RemoteStore {
    async fn write(&self, point: TelemetryPoint) -> Result<(), StoreError> {
        point.validate()?;
        self.call(&Request::Write { point }).await.map(|_| ())
    }

    async fn query(&self, q: &QuerySpec, now_ms: i64) -> Result<Option<f64>, StoreError> {
        let v = self
            .call(&Request::Query {
                q: q.to_string(),
                now: now_ms,
            })
            .await?;
        Ok(v["value"].as_f64())
    }
}
