// SPDX-License-Identifier: Apache-2.0

//! A small eBGP speaker.
//!
//! [`Speaker`] is the pure routing state machine: adjacency and local RIBs,
//! best-path selection and export computation. [`SimNet`] drives many
//! speakers in lock-step message rounds. [`Daemon`] runs one speaker over
//! TCP with a JSON-lines wire format (see [`wire`]).

mod daemon;
mod route;
mod simnet;
mod speaker;
pub mod wire;

pub use daemon::{BgpEvent, Daemon, DaemonConfig, EventSink, PeerStatus};
pub use route::{best_path, compare, Origin, Prefix, Route, Source};
pub use simnet::SimNet;
pub use speaker::{PeerState, RibChange, RibSnapshot, Speaker, Update};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BgpError {
    #[error("invalid prefix {0:?}")]
    InvalidPrefix(String),
    #[error("malformed update: {0}")]
    MalformedUpdate(String),
    #[error("unknown peer {0:?}")]
    UnknownPeer(String),
    #[error("session with {0:?} is not established")]
    NotEstablished(String),
    #[error("peer announced AS{announced}, expected AS{expected}")]
    AsnMismatch { expected: u32, announced: u32 },
    #[error("no OPEN from {0} in time")]
    OpenTimeout(String),
    #[error("i/o: {0}")]
    Io(String),
}
