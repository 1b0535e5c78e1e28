// SPDX-License-Identifier: Apache-2.0

//! JSON-lines session protocol. One message per line, tagged by `type`:
//!
//! ```text
//! {"type":"open","asn":65001,"id":"r1","hold_time":90,"next_hop":"10.0.0.1"}
//! {"type":"keepalive"}
//! {"type":"update","announce":[{"prefix":"10.1.0.0/24","next_hop":"10.0.0.1","as_path":[65001],"origin":"igp"}]}
//! {"type":"withdraw","prefixes":["10.1.0.0/24"]}
//! {"type":"notification","reason":"hold timer expired"}
//! ```
//!
//! This is not RFC 4271 framing.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::route::{Origin, Prefix};

/// A route as sent to a peer. The receiver supplies local_pref and source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Advert {
    pub prefix: Prefix,
    pub next_hop: Ipv4Addr,
    pub as_path: Vec<u32>,
    #[serde(default)]
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Open {
        asn: u32,
        id: String,
        hold_time: u64,
        next_hop: Ipv4Addr,
    },
    Keepalive,
    Update {
        announce: Vec<Advert>,
    },
    Withdraw {
        prefixes: Vec<Prefix>,
    },
    Notification {
        reason: String,
    },
}

impl Message {
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("message serializes");
        line.push('\n');
        line
    }

    pub fn decode(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}
