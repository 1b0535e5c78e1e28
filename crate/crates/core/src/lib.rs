// SPDX-License-Identifier: Apache-2.0

pub mod autoscaler;
pub mod config;
pub mod devsim;
pub mod dialect;
pub mod events;
pub mod fabric;
pub mod inventory;
pub mod orchestrator;
pub mod provisioner;
pub mod reconciler;
pub mod transport;
