// SPDX-License-Identifier: Apache-2.0

//! Agentless command channels.
//!
//! CLI dialects speak a newline-delimited protocol: one command per line,
//! answered by `ok` or `err <reason>`. The show command is answered by the
//! configuration text followed by a line holding a single `.`. HTTP dialects
//! map a command line `METHOD /url [body]` onto one HTTP request.
//!
//! Real SSH would be another [`Connector`]; the seam is the trait.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::devsim::SimFleet;
use crate::dialect::{Dialect, DialectStyle};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok,
    Err(String),
    Output(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("connection to {0} refused")]
    Refused(String),
    #[error("timed out")]
    Timeout,
    #[error("connection closed by device")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[async_trait]
pub trait Channel: Send {
    async fn send(&mut self, command: &str) -> Result<Reply, ChannelError>;
}

#[async_trait]
pub trait Connector: Send + Sync {
    async fn connect(&self, endpoint: &str, dialect: &Arc<Dialect>) -> Result<Box<dyn Channel>, ChannelError>;
}

/// `host:port` with a non-empty host and a non-zero port.
pub fn validate_endpoint(endpoint: &str) -> Result<(), String> {
    let (host, port) = endpoint
        .rsplit_once(':')
        .ok_or_else(|| format!("{endpoint:?} is not host:port"))?;
    let host_ok = !host.is_empty()
        && host
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'));
    if !host_ok {
        return Err(format!("bad host in {endpoint:?}"));
    }
    match port.parse::<u16>() {
        Ok(p) if p > 0 => Ok(()),
        _ => Err(format!("bad port in {endpoint:?}")),
    }
}

pub struct TcpCliChannel {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    show_command: String,
}

impl TcpCliChannel {
    pub async fn connect(endpoint: &str, dialect: &Dialect) -> Result<Self, ChannelError> {
        let stream = TcpStream::connect(endpoint).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::ConnectionRefused => ChannelError::Refused(endpoint.to_string()),
            _ => ChannelError::Io(e.to_string()),
        })?;
        let _ = stream.set_nodelay(true);
        let (r, w) = stream.into_split();
        Ok(Self {
            reader: BufReader::new(r),
            writer: w,
            show_command: dialect.show_command().to_string(),
        })
    }

    async fn read_line(&mut self) -> Result<String, ChannelError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .await
            .map_err(|e| ChannelError::Io(e.to_string()))?;
        if n == 0 {
            return Err(ChannelError::Closed);
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }
}

#[async_trait]
impl Channel for TcpCliChannel {
    async fn send(&mut self, command: &str) -> Result<Reply, ChannelError> {
        if command.contains('\n') {
            return Err(ChannelError::Protocol("command contains a newline".into()));
        }
        self.writer
            .write_all(format!("{command}\n").as_bytes())
            .await
            .map_err(|e| ChannelError::Io(e.to_string()))?;
        let first = self.read_line().await?;
        if let Some(reason) = first.strip_prefix("err") {
            return Ok(Reply::Err(reason.trim_start().to_string()));
        }
        if command.trim() != self.show_command {
            return match first.as_str() {
                "ok" => Ok(Reply::Ok),
                other => Err(ChannelError::Protocol(format!("unexpected reply {other:?}"))),
            };
        }
        let mut out = String::new();
        let mut line = first;
        while line != "." {
            out.push_str(&line);
            out.push('\n');
            line = self.read_line().await?;
        }
        Ok(Reply::Output(out))
    }
}

pub struct HttpChannel {
    client: reqwest::Client,
    base: String,
    show_command: String,
}

impl HttpChannel {
    pub fn new(endpoint: &str, dialect: &Dialect) -> Self {
        Self {
            client: reqwest::Client::new(),
            base: format!("http://{endpoint}"),
            show_command: dialect.show_command().to_string(),
        }
    }
}

#[async_trait]
impl Channel for HttpChannel {
    async fn send(&mut self, command: &str) -> Result<Reply, ChannelError> {
        let command = command.trim();
        let mut parts = command.splitn(3, ' ');
        let (Some(method), Some(path)) = (parts.next(), parts.next()) else {
            return Err(ChannelError::Protocol(format!("not an http command: {command:?}")));
        };
        let body = parts.next().unwrap_or("").to_string();
        let method = reqwest::Method::from_bytes(method.as_bytes())
            .map_err(|_| ChannelError::Protocol(format!("bad method {method:?}")))?;
        let resp = self
            .client
            .request(method, format!("{}{}", self.base, path))
            .body(body)
            .send()
            .await
            .map_err(|e| {
                if e.is_connect() {
                    ChannelError::Refused(self.base.clone())
                } else if e.is_timeout() {
                    ChannelError::Timeout
                } else {
                    ChannelError::Io(e.to_string())
                }
            })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| ChannelError::Io(e.to_string()))?;
        if status == reqwest::StatusCode::SERVICE_UNAVAILABLE {
            return Err(ChannelError::Closed);
        }
        if !status.is_success() {
            return Ok(Reply::Err(text));
        }
        if command == self.show_command {
            Ok(Reply::Output(text))
        } else {
            Ok(Reply::Ok)
        }
    }
}

/// Connects to in-process simulators directly and to everything else over
/// the network, by dialect style.
#[derive(Clone)]
pub struct NetConnector {
    fleet: Option<Arc<SimFleet>>,
    connect_timeout: Duration,
}

impl NetConnector {
    pub fn new(fleet: Option<Arc<SimFleet>>) -> Self {
        Self {
            fleet,
            connect_timeout: Duration::from_secs(5),
        }
    }

    pub fn with_connect_timeout(mut self, timeout: Duration) -> Self {
        self.connect_timeout = timeout;
        self
    }
}

#[async_trait]
impl Connector for NetConnector {
    async fn connect(&self, endpoint: &str, dialect: &Arc<Dialect>) -> Result<Box<dyn Channel>, ChannelError> {
        if let Some(fleet) = &self.fleet {
            if let Some(channel) = fleet.in_process_channel(endpoint) {
                return Ok(Box::new(channel));
            }
            if SimFleet::is_in_process_endpoint(endpoint) {
                return Err(ChannelError::Refused(endpoint.to_string()));
            }
        }
        match dialect.style() {
            DialectStyle::Http => Ok(Box::new(HttpChannel::new(endpoint, dialect))),
            DialectStyle::Cli => {
                let fut = TcpCliChannel::connect(endpoint, dialect);
                let channel = tokio::time::timeout(self.connect_timeout, fut)
                    .await
                    .map_err(|_| ChannelError::Timeout)??;
                Ok(Box::new(channel))
            }
        }
    }
}
