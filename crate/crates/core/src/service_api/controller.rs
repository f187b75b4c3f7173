//! Service controllers: anything that can list, read and write a service's
//! settings. Implementations are drop-in replaceable.

use super::spec::{SettingSpec, SettingValueError};
use crate::workload::{ControlRequest, MockService};
use async_trait::async_trait;
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::Mutex;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("controller unreachable: {0}")]
    Unreachable(String),
    #[error("controller rejected request: {0}")]
    Rejected(String),
    #[error("unknown setting {0:?}")]
    UnknownSetting(String),
    #[error("type error: {0}")]
    Type(SettingValueError),
}

#[async_trait]
pub trait ServiceController: Send + Sync {
    async fn get(&self, setting: &str) -> Result<f64, ControllerError>;
    async fn set(&self, setting: &str, value: f64) -> Result<(), ControllerError>;
    async fn list(&self) -> Result<Vec<SettingSpec>, ControllerError>;
}

fn type_guard(specs: &[SettingSpec], setting: &str, value: f64) -> Result<(), ControllerError> {
    let spec = specs
        .iter()
        .find(|s| s.id == setting)
        .ok_or_else(|| ControllerError::UnknownSetting(setting.to_string()))?;
    match spec.check(value) {
        Err(e @ SettingValueError::NotInteger(_)) => Err(ControllerError::Type(e)),
        Err(e) => Err(ControllerError::Rejected(e.to_string())),
        Ok(()) => Ok(()),
    }
}

/// Controller for an in-process [`MockService`].
pub struct LocalController(pub MockService);

#[async_trait]
impl ServiceController for LocalController {
    async fn get(&self, setting: &str) -> Result<f64, ControllerError> {
        let specs = self.list().await?;
        if !specs.iter().any(|s| s.id == setting) {
            return Err(ControllerError::UnknownSetting(setting.to_string()));
        }
        Ok(self.0.threads() as f64)
    }

    async fn set(&self, setting: &str, value: f64) -> Result<(), ControllerError> {
        type_guard(&self.list().await?, setting, value)?;
        self.0.set_threads(value).map(|_| ()).map_err(ControllerError::Rejected)
    }

    async fn list(&self) -> Result<Vec<SettingSpec>, ControllerError> {
        Ok(vec![self.0.setting_spec()])
    }
}

type Conn = (Lines<BufReader<OwnedReadHalf>>, OwnedWriteHalf);

/// Controller speaking the mock service's line-delimited JSON protocol.
pub struct MockServiceController {
    addr: String,
    conn: Mutex<Option<Conn>>,
    specs: Mutex<Option<Vec<SettingSpec>>>,
}

pub fn mock_service_controller(endpoint: &str) -> MockServiceController {
    MockServiceController {
        addr: endpoint.to_string(),
        conn: Mutex::new(None),
        specs: Mutex::new(None),
    }
}

impl MockServiceController {
    async fn call(&self, req: &ControlRequest) -> Result<Value, ControllerError> {
        let unreachable = |e: std::io::Error| ControllerError::Unreachable(e.to_string());
        let mut line = serde_json::to_vec(req).expect("request serializes");
        line.push(b'\n');
        let mut guard = self.conn.lock().await;
        for attempt in 0..2 {
            if guard.is_none() {
                let s = TcpStream::connect(&self.addr).await.map_err(unreachable)?;
                s.set_nodelay(true).map_err(unreachable)?;
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
                        .map_err(|e| ControllerError::Unreachable(format!("bad response: {e}")))?;
                    if v["ok"] == Value::Bool(true) {
                        return Ok(v);
                    }
                    let msg = v["error"].as_str().unwrap_or("unknown error").to_string();
                    return Err(ControllerError::Rejected(msg));
                }
                _ if attempt == 0 => *guard = None,
                Ok(None) => return Err(ControllerError::Unreachable("connection closed".into())),
                Err(e) => return Err(unreachable(e)),
            }
        }
        Err(ControllerError::Unreachable("connection closed".into()))
    }
}

#[async_trait]
impl ServiceController for MockServiceController {
    async fn get(&self, setting: &str) -> Result<f64, ControllerError> {
        let v = self
            .call(&ControlRequest::Get {
                setting: setting.to_string(),
            })
            .await?;
        v["value"]
            .as_f64()
            .ok_or_else(|| ControllerError::Rejected("response without value".into()))
    }

    async fn set(&self, setting: &str, value: f64) -> Result<(), ControllerError> {
        type_guard(&self.list().await?, setting, value)?;
        self.call(&ControlRequest::Set {
            setting: setting.to_string(),
            value,
        })
        .await
        .map(|_| ())
    }

    async fn list(&self) -> Result<Vec<SettingSpec>, ControllerError> {
        if let Some(specs) = self.specs.lock().await.clone() {
            return Ok(specs);
        }
        let v = self.call(&ControlRequest::List).await?;
        let specs: Vec<SettingSpec> = serde_json::from_value(v["settings"].clone())
            .map_err(|e| ControllerError::Rejected(format!("bad settings list: {e}")))?;
        *self.specs.lock().await = Some(specs.clone());
        Ok(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::workload::{run_service, WorkloadModel};
    use std::sync::Arc;

    #[tokio::test]
    async fn mock_controller_contract() {
        let h = run_service(WorkloadModel::default(), "127.0.0.1:0", Arc::new(VirtualClock::new(0)))
            .await
            .unwrap();
        let c = mock_service_controller(&h.control.local_addr().to_string());
        let list = c.list().await.unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].id, "EncodingThreadCount");
        assert_eq!((list[0].p_min, list[0].p_max), (0.0, 16.0));
        c.set("EncodingThreadCount", 7.0).await.unwrap();
        assert_eq!(c.get("EncodingThreadCount").await.unwrap(), 7.0);
        assert!(matches!(
            c.set("EncodingThreadCount", 3.5).await,
            Err(ControllerError::Type(_))
        ));
        assert!(matches!(
            c.set("EncodingThreadCount", 17.0).await,
            Err(ControllerError::Rejected(_))
        ));
        assert_eq!(c.get("EncodingThreadCount").await.unwrap(), 7.0);
        h.control.shutdown().await;
    }

    #[tokio::test]
    async fn unreachable_controller() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let c = mock_service_controller(&addr);
        assert!(matches!(c.list().await, Err(ControllerError::Unreachable(_))));
    }
}
