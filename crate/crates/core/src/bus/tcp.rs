//! Newline-delimited JSON transport for the bus.
//!
//! A connection whose first line is `{"sub":"<pattern>"}` becomes a
//! subscriber and receives one envelope per line; on any other connection
//! every line is a publish.

use super::{Broker, BusConnector, BusError, Envelope, Subscription, TopicPattern};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::Duration;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch, Mutex};
use tokio::task::JoinHandle;
use tracing::{debug, warn};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7811";

#[derive(Serialize, Deserialize)]
struct SubRequest {
    sub: String,
}

pub struct BusServer {
    local_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    accept: JoinHandle<()>,
}

impl BusServer {
    pub async fn bind(addr: &str, broker: Broker) -> Result<Self, BusError> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let (shutdown, rx) = watch::channel(false);
        let accept = tokio::spawn(accept_loop(listener, broker, rx));
        Ok(Self {
            local_addr,
            shutdown,
            accept,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        self.accept.abort();
        let _ = self.accept.await;
    }
}

async fn accept_loop(listener: TcpListener, broker: Broker, shutdown: watch::Receiver<bool>) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(x) => x,
            Err(e) => {
                warn!("bus accept failed: {e}");
                continue;
            }
        };
        debug!("bus connection from {peer}");
        let broker = broker.clone();
        let mut stop = shutdown.clone();
        tokio::spawn(async move {
            tokio::select! {
                r = serve_connection(stream, broker) => {
                    if let Err(e) = r {
                        debug!("bus connection {peer} closed: {e}");
                    }
                }
                _ = stop.changed() => {}
            }
        });
    }
}

async fn serve_connection(stream: TcpStream, broker: Broker) -> Result<(), BusError> {
    let (read, write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    let Some(first) = lines.next_line().await? else {
        return Ok(());
    };
    if let Ok(req) = serde_json::from_str::<SubRequest>(&first) {
        let pattern = TopicPattern::parse(&req.sub)?;
        let mut sub = broker.subscribe(&pattern)?;
        let mut out = BufWriter::new(write);
        loop {
            tokio::select! {
                env = sub.recv() => {
                    let Some(env) = env else { return Ok(()) };
                    let mut line = serde_json::to_vec(&env)?;
                    line.push(b'\n');
                    out.write_all(&line).await?;
                    out.flush().await?;
                }
                // subscriber hung up
                l = lines.next_line() => {
                    if l?.is_none() { return Ok(()) }
                }
            }
        }
    }
    handle_publish_line(&broker, &first);
    while let Some(line) = lines.next_line().await? {
        handle_publish_line(&broker, &line);
    }
    Ok(())
}

fn handle_publish_line(broker: &Broker, line: &str) {
    if line.trim().is_empty() {
        return;
    }
    match serde_json::from_str::<Envelope>(line) {
        Ok(env) => {
            if let Err(e) = broker.publish(env) {
                warn!("rejected publish: {e}");
            }
        }
        Err(e) => warn!("undecodable bus line: {e}"),
    }
}

/// Client for a remote [`BusServer`].
pub struct TcpBusClient {
    addr: String,
    publisher: Mutex<Option<BufWriter<OwnedWriteHalf>>>,
    retries: u32,
}

impl TcpBusClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            publisher: Mutex::new(None),
            retries: 3,
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    async fn connect(&self) -> Result<TcpStream, BusError> {
        let mut delay = Duration::from_millis(50);
        let mut attempt = 0;
        loop {
            match TcpStream::connect(&self.addr).await {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) if attempt >= self.retries => return Err(e.into()),
                Err(e) => {
                    debug!("bus connect to {} failed ({e}), retrying", self.addr);
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

#[async_trait]
impl BusConnector for TcpBusClient {
    async fn publish(&self, envelope: Envelope) -> Result<(), BusError> {
        envelope.validate()?;
        let mut line = serde_json::to_vec(&envelope)?;
        line.push(b'\n');
        let mut guard = self.publisher.lock().await;
        for attempt in 0..=1 {
            if guard.is_none() {
                let (_, w) = self.connect().await?.into_split();
                *guard = Some(BufWriter::new(w));
            }
            let w = guard.as_mut().expect("connected above");
            let res = async {
                w.write_all(&line).await?;
                w.flush().await
            }
            .await;
            match res {
                Ok(()) => return Ok(()),
                Err(e) if attempt == 1 => return Err(e.into()),
                Err(_) => *guard = None,
            }
        }
        unreachable!("publish loop always returns")
    }

    async fn subscribe(&self, pattern: &TopicPattern) -> Result<Subscription, BusError> {
        let stream = self.connect().await?;
        let (read, mut write) = stream.into_split();
        let mut req = serde_json::to_vec(&SubRequest {
            sub: pattern.as_str().to_string(),
        })?;
        req.push(b'\n');
        write.write_all(&req).await?;
        write.flush().await?;
        let (tx, rx) = mpsc::unbounded_channel();
        let delivered = Arc::new(AtomicU64::new(0));
        let counter = delivered.clone();
        let task = tokio::spawn(async move {
            // keep the write half alive so the server does not see EOF
            let _write = write;
            let mut lines = BufReader::new(read).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                match serde_json::from_str::<Envelope>(&line) {
                    Ok(env) => {
                        if tx.send(env).is_err() {
                            break;
                        }
                        counter.fetch_add(1, std::sync::atomic::Ordering::AcqRel);
                    }
                    Err(e) => warn!("undecodable envelope from bus: {e}"),
                }
            }
        });
        Ok(Subscription::new(rx, delivered, Box::new(AbortOnDrop(task))))
    }
}

struct AbortOnDrop(JoinHandle<()>);

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        self.0.abort();
    }
}
