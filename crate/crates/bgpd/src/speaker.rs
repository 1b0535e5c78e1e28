// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::route::{best_path, Origin, Prefix, Route, Source, DEFAULT_LOCAL_PREF};
use crate::wire::Advert;
use crate::BgpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerState {
    Idle,
    Connecting,
    Established,
}

#[derive(Debug, Clone)]
struct Peer {
    remote_asn: u32,
    state: PeerState,
    import_local_pref: u32,
}

/// Announcements and withdrawals for one peer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub announce: Vec<Advert>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub withdraw: Vec<Prefix>,
}

impl Update {
    pub fn is_empty(&self) -> bool {
        self.announce.is_empty() && self.withdraw.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibChange {
    /// Prefixes whose loc-rib entry changed.
    pub changed: Vec<Prefix>,
    /// Announcements dropped on ingress, with the reason.
    pub rejected: Vec<(Prefix, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibSnapshot {
    pub speaker: String,
    pub asn: u32,
    pub adj_rib_in: Vec<Route>,
    pub loc_rib: Vec<Route>,
    pub adj_rib_out: BTreeMap<String, Vec<Advert>>,
}

/// Pure eBGP routing state. Every mutation appends the resulting UPDATEs
/// to an outbox, drained with [`Speaker::drain_outbox`].
#[derive(Debug, Clone)]
pub struct Speaker {
    id: String,
    asn: u32,
    next_hop: Ipv4Addr,
    peers: BTreeMap<String, Peer>,
    local: BTreeMap<Prefix, Route>,
    adj_in: BTreeMap<Prefix, BTreeMap<String, Route>>,
    loc: BTreeMap<Prefix, Route>,
    adj_out: BTreeMap<String, BTreeMap<Prefix, Advert>>,
    outbox: Vec<(String, Update)>,
}

impl Speaker {
    pub fn new(id: impl Into<String>, asn: u32, next_hop: Ipv4Addr) -> Self {
        Self {
            id: id.into(),
            asn,
            next_hop,
            peers: BTreeMap::new(),
            local: BTreeMap::new(),
            adj_in: BTreeMap::new(),
            loc: BTreeMap::new(),
            adj_out: BTreeMap::new(),
            outbox: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn asn(&self) -> u32 {
        self.asn
    }

    pub fn next_hop(&self) -> Ipv4Addr {
        self.next_hop
    }

    /// Configure a neighbor. The session starts idle.
    pub fn add_peer(&mut self, peer: impl Into<String>, remote_asn: u32) {
        let peer = peer.into();
        match self.peers.get_mut(&peer) {
            Some(p) => p.remote_asn = remote_asn,
            None => {
                self.peers.insert(
                    peer,
                    Peer {
                        remote_asn,
                        state: PeerState::Idle,
                        import_local_pref: DEFAULT_LOCAL_PREF,
                    },
                );
            }
        }
    }

    pub fn remote_asn(&self, peer: &str) -> Option<u32> {
        self.peers.get(peer).map(|p| p.remote_asn)
    }

    pub fn peer_state(&self, peer: &str) -> Option<PeerState> {
        self.peers.get(peer).map(|p| p.state)
    }

    pub fn peers(&self) -> impl Iterator<Item = (&str, u32, PeerState)> {
        self.peers.iter().map(|(id, p)| (id.as_str(), p.remote_asn, p.state))
    }

    /// Local preference given to routes learned from `peer`.
    pub fn set_import_local_pref(&mut self, peer: &str, local_pref: u32) -> Result<(), BgpError> {
        let p = self.peers.get_mut(peer).ok_or_else(|| BgpError::UnknownPeer(peer.into()))?;
        p.import_local_pref = local_pref;
        Ok(())
    }

    pub fn set_connecting(&mut self, peer: &str) -> Result<(), BgpError> {
        let p = self.peers.get_mut(peer).ok_or_else(|| BgpError::UnknownPeer(peer.into()))?;
        if p.state == PeerState::Idle {
            p.state = PeerState::Connecting;
        }
        Ok(())
    }

    /// Session established: send the peer our full table.
    pub fn peer_up(&mut self, peer: &str) -> Result<(), BgpError> {
        let p = self.peers.get_mut(peer).ok_or_else(|| BgpError::UnknownPeer(peer.into()))?;
        p.state = PeerState::Established;
        self.adj_out.insert(peer.to_string(), BTreeMap::new());
        let all: BTreeSet<Prefix> = self.loc.keys().copied().collect();
        self.export_to(peer, &all);
        Ok(())
    }

    /// Session lost: forget what the peer told us and what we told it.
    pub fn peer_down(&mut self, peer: &str) -> RibChange {
        if let Some(p) = self.peers.get_mut(peer) {
            p.state = PeerState::Idle;
        }
        self.adj_out.remove(peer);
        let mut touched = BTreeSet::new();
        for (prefix, by_peer) in self.adj_in.iter_mut() {
            if by_peer.remove(peer).is_some() {
                touched.insert(*prefix);
            }
        }
        self.adj_in.retain(|_, m| !m.is_empty());
        let changed = self.recompute(&touched);
        RibChange {
            changed,
            rejected: Vec::new(),
        }
    }

    /// Originate `prefix` locally.
    pub fn announce(&mut self, prefix: Prefix, origin: Origin) -> RibChange {
        let route = Route {
            origin,
            ..Route::local(prefix, self.next_hop)
        };
        if self.local.get(&prefix) == Some(&route) {
            return RibChange::default();
        }
        self.local.insert(prefix, route);
        RibChange {
            changed: self.recompute(&BTreeSet::from([prefix])),
            rejected: Vec::new(),
        }
    }

    pub fn withdraw(&mut self, prefix: Prefix) -> RibChange {
        if self.local.remove(&prefix).is_none() {
            return RibChange::default();
        }
        RibChange {
            changed: self.recompute(&BTreeSet::from([prefix])),
            rejected: Vec::new(),
        }
    }

    /// Apply an UPDATE from an established peer. A malformed update resets
    /// the session and flushes the peer's routes.
    pub fn process_update(&mut self, peer: &str, update: Update) -> Result<RibChange, BgpError> {
        let p = self.peers.get(peer).ok_or_else(|| BgpError::UnknownPeer(peer.into()))?;
        if p.state != PeerState::Established {
            return Err(BgpError::NotEstablished(peer.into()));
        }
        let (remote_asn, import_lp) = (p.remote_asn, p.import_local_pref);
        if let Err(why) = check_update(&update, remote_asn) {
            self.peer_down(peer);
            return Err(BgpError::MalformedUpdate(why));
        }
        let mut touched = BTreeSet::new();
        let mut rejected = Vec::new();
        for prefix in update.withdraw {
            if let Some(m) = self.adj_in.get_mut(&prefix) {
                if m.remove(peer).is_some() {
                    touched.insert(prefix);
                }
                if m.is_empty() {
                    self.adj_in.remove(&prefix);
                }
            }
        }
        for ad in update.announce {
            let prefix = ad.prefix;
            if ad.as_path.contains(&self.asn) {
                // Loop: treat as an implicit withdraw of the old path.
                rejected.push((prefix, format!("as_path contains own AS{}", self.asn)));
                if let Some(m) = self.adj_in.get_mut(&prefix) {
                    if m.remove(peer).is_some() {
                        touched.insert(prefix);
                    }
                    if m.is_empty() {
                        self.adj_in.remove(&prefix);
                    }
                }
                continue;
            }
            let route = Route {
                prefix,
                next_hop: ad.next_hop,
                as_path: ad.as_path,
                local_pref: import_lp,
                origin: ad.origin,
                learned_from: Source::Peer(peer.to_string()),
            };
            let slot = self.adj_in.entry(prefix).or_default();
            if slot.get(peer) != Some(&route) {
                slot.insert(peer.to_string(), route);
                touched.insert(prefix);
            }
        }
        Ok(RibChange {
            changed: self.recompute(&touched),
            rejected,
        })
    }

    pub fn candidates(&self, prefix: &Prefix) -> Vec<&Route> {
        self.local
            .get(prefix)
            .into_iter()
            .chain(self.adj_in.get(prefix).into_iter().flat_map(|m| m.values()))
            .collect()
    }

    pub fn best(&self, prefix: &Prefix) -> Option<&Route> {
        self.loc.get(prefix)
    }

    pub fn loc_rib(&self) -> impl Iterator<Item = &Route> {
        self.loc.values()
    }

    /// Re-run selection for `touched`, then refresh every peer's view of
    /// whatever changed. Returns the changed prefixes.
    fn recompute(&mut self, touched: &BTreeSet<Prefix>) -> Vec<Prefix> {
        let mut changed = Vec::new();
        for prefix in touched {
            let new = best_path(self.candidates(prefix)).cloned();
            if new.as_ref() != self.loc.get(prefix) {
                changed.push(*prefix);
                match new {
                    Some(b) => self.loc.insert(*prefix, b),
                    None => self.loc.remove(prefix),
                };
            }
        }
        let set: BTreeSet<Prefix> = touched.iter().copied().collect();
        let peers: Vec<String> = self
            .peers
            .iter()
            .filter(|(_, p)| p.state == PeerState::Established)
            .map(|(id, _)| id.clone())
            .collect();
        for peer in peers {
            self.export_to(&peer, &set);
        }
        changed
    }

    fn export_to(&mut self, peer: &str, prefixes: &BTreeSet<Prefix>) {
        let out = self.adj_out.entry(peer.to_string()).or_default();
        let mut update = Update::default();
        for prefix in prefixes {
            let want = self.loc.get(prefix).and_then(|best| {
                (best.learned_from.peer() != Some(peer)).then(|| Advert {
                    prefix: *prefix,
                    next_hop: self.next_hop,
                    as_path: std::iter::once(self.asn).chain(best.as_path.iter().copied()).collect(),
                    origin: best.origin,
                })
            });
            match (want, out.get(prefix)) {
                (Some(w), Some(have)) if w == *have => {}
                (Some(w), _) => {
                    out.insert(*prefix, w.clone());
                    update.announce.push(w);
                }
                (None, Some(_)) => {
                    out.remove(prefix);
                    update.withdraw.push(*prefix);
                }
                (None, None) => {}
            }
        }
        if !update.is_empty() {
            self.outbox.push((peer.to_string(), update));
        }
    }

    /// UPDATEs produced since the last drain, in order, as `(peer, update)`.
    pub fn drain_outbox(&mut self) -> Vec<(String, Update)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn snapshot(&self) -> RibSnapshot {
        RibSnapshot {
            speaker: self.id.clone(),
            asn: self.asn,
            adj_rib_in: self.adj_in.values().flat_map(|m| m.values().cloned()).collect(),
            loc_rib: self.loc.values().cloned().collect(),
            adj_rib_out: self
                .adj_out
                .iter()
                .map(|(p, m)| (p.clone(), m.values().cloned().collect()))
                .collect(),
        }
    }
}

fn check_update(update: &Update, remote_asn: u32) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for ad in &update.announce {
        if !seen.insert(ad.prefix) {
            return Err(format!("{} announced twice", ad.prefix));
        }
        match ad.as_path.first() {
            None => return Err(format!("{} has an empty as_path", ad.prefix)),
            Some(first) if *first != remote_asn => {
                return Err(format!("{} as_path starts with AS{first}, peer is AS{remote_asn}", ad.prefix))
            }
            _ => {}
        }
    }
    if let Some(p) = update.withdraw.iter().find(|p| seen.contains(*p)) {
        return Err(format!("{p} both announced and withdrawn"));
    }
    Ok(())
}
