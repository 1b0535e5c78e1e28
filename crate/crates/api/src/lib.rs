// SPDX-License-Identifier: Apache-2.0

//! The netorch service: an HTTP API over [`netorch_core::orchestrator`],
//! and a command-line client that talks to it.

pub mod cli;
pub mod client;
pub mod error;
pub mod server;

pub use error::ApiError;
