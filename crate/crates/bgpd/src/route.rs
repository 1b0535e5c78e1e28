// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::BgpError;

/// IPv4 CIDR block with no host bits set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    addr: Ipv4Addr,
    len: u8,
}

impl Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, BgpError> {
        let bad = || BgpError::InvalidPrefix(format!("{addr}/{len}"));
        if len > 32 {
            return Err(bad());
        }
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        if u32::from(addr) & !mask != 0 {
            return Err(bad());
        }
        Ok(Self { addr, len })
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_default(&self) -> bool {
        self.len == 0
    }
}

impl FromStr for Prefix {
    type Err = BgpError;
    fn from_str(s: &str) -> Result<Self, BgpError> {
        let bad = || BgpError::InvalidPrefix(s.to_string());
        let (a, l) = s.split_once('/').ok_or_else(bad)?;
        let addr: Ipv4Addr = a.parse().map_err(|_| bad())?;
        if l.is_empty() || l.len() > 2 || !l.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let len: u8 = l.parse().map_err(|_| bad())?;
        Self::new(addr, len).map_err(|_| bad())
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Igp,
    Egp,
    Incomplete,
}

/// Where a route was learned. Local sorts before any peer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Local,
    Peer(String),
}

impl Source {
    pub fn peer(&self) -> Option<&str> {
        match self {
            Self::Local => None,
            Self::Peer(p) => Some(p),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Local => f.write_str("local"),
            Self::Peer(p) => f.write_str(p),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "local" { Self::Local } else { Self::Peer(s) })
    }
}

pub const DEFAULT_LOCAL_PREF: u32 = 100;

fn default_local_pref() -> u32 {
    DEFAULT_LOCAL_PREF
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub prefix: Prefix,
    pub next_hop: Ipv4Addr,
    #[serde(default)]
    pub as_path: Vec<u32>,
    #[serde(default = "default_local_pref")]
    pub local_pref: u32,
    #[serde(default)]
    pub origin: Origin,
    pub learned_from: Source,
}

impl Route {
    pub fn local(prefix: Prefix, next_hop: Ipv4Addr) -> Self {
        Self {
            prefix,
            next_hop,
            as_path: Vec::new(),
            local_pref: DEFAULT_LOCAL_PREF,
            origin: Origin::Igp,
            learned_from: Source::Local,
        }
    }
}

/// `Less` means `a` is preferred.
pub fn compare(a: &Route, b: &Route) -> Ordering {
    b.local_pref
        .cmp(&a.local_pref)
        .then(a.as_path.len().cmp(&b.as_path.len()))
        .then(a.origin.cmp(&b.origin))
        .then(a.learned_from.cmp(&b.learned_from))
}

/// The preferred candidate, or `None` for an empty set.
pub fn best_path<'a, I: IntoIterator<Item = &'a Route>>(candidates: I) -> Option<&'a Route> {
    candidates.into_iter().min_by(|a, b| compare(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_parsing() {
        let p: Prefix = "10.1.0.0/24".parse().unwrap();
        assert_eq!(p.to_string(), "10.1.0.0/24");
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"10.1.0.0/24\"");
        for bad in ["10.1.0.0/33", "10.1.0.1/24", "10.1.0.0", "10.1.0.0/", "300.0.0.0/8", "10.0.0.0/+8", "10.0.0.0/008"] {
            assert!(bad.parse::<Prefix>().is_err(), "{bad}");
        }
        assert!("0.0.0.0/0".parse::<Prefix>().unwrap().is_default());
    }

    fn r(lp: u32, path: &[u32], origin: Origin, from: &str) -> Route {
        Route {
            prefix: "10.0.0.0/8".parse().unwrap(),
            next_hop: Ipv4Addr::new(1, 1, 1, 1),
            as_path: path.to_vec(),
            local_pref: lp,
            origin,
            learned_from: if from == "local" { Source::Local } else { Source::Peer(from.into()) },
        }
    }

    #[test]
    fn decision_order() {
        let single = [r(100, &[1], Origin::Igp, "a")];
        assert_eq!(best_path(&single), Some(&single[0]));
        let lp = [r(100, &[1], Origin::Igp, "a"), r(200, &[1, 2, 3], Origin::Incomplete, "b")];
        assert_eq!(best_path(&lp).unwrap().local_pref, 200);
        let path = [r(100, &[1, 2], Origin::Igp, "a"), r(100, &[3], Origin::Egp, "b")];
        assert_eq!(best_path(&path).unwrap().learned_from, Source::Peer("b".into()));
        let origin = [r(100, &[1], Origin::Egp, "a"), r(100, &[3], Origin::Igp, "b")];
        assert_eq!(best_path(&origin).unwrap().learned_from, Source::Peer("b".into()));
        let tie = [r(100, &[], Origin::Igp, "a"), r(100, &[], Origin::Igp, "local")];
        assert_eq!(best_path(&tie).unwrap().learned_from, Source::Local);
        assert!(best_path(&[]).is_none());
    }
}
