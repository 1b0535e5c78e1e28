// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use crate::route::{Origin, Prefix};
use crate::speaker::{Speaker, Update};
use crate::BgpError;

/// In-memory network of speakers exchanging UPDATEs in lock-step rounds.
/// A round delivers every message queued before it started; replies queue
/// for the next round.
#[derive(Debug, Clone, Default)]
pub struct SimNet {
    speakers: BTreeMap<String, Speaker>,
    links: BTreeSet<(String, String)>,
    queue: Vec<(String, String, Update)>,
    delivered: usize,
}

fn link(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl SimNet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next hops are allocated from 10.255.0.0/16 in insertion order.
    pub fn add_speaker(&mut self, id: impl Into<String>, asn: u32) -> Ipv4Addr {
        let n = self.speakers.len() as u32 + 1;
        let nh = Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 255, 0, 0)) + n);
        let id = id.into();
        self.speakers.insert(id.clone(), Speaker::new(id, asn, nh));
        nh
    }

    pub fn speaker(&self, id: &str) -> Option<&Speaker> {
        self.speakers.get(id)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &Speaker> {
        self.speakers.values()
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut Speaker, BgpError> {
        self.speakers.get_mut(id).ok_or_else(|| BgpError::UnknownPeer(id.into()))
    }

    fn collect(&mut self, id: &str) {
        if let Some(s) = self.speakers.get_mut(id) {
            for (to, upd) in s.drain_outbox() {
                self.queue.push((id.to_string(), to, upd));
            }
        }
    }

    /// Peer `a` with `b` and bring the session up on both sides.
    pub fn connect(&mut self, a: &str, b: &str) -> Result<(), BgpError> {
        let asn_a = self.get_mut(a)?.asn();
        let asn_b = self.get_mut(b)?.asn();
        self.get_mut(a)?.add_peer(b, asn_b);
        self.get_mut(b)?.add_peer(a, asn_a);
        self.get_mut(a)?.peer_up(b)?;
        self.get_mut(b)?.peer_up(a)?;
        self.links.insert(link(a, b));
        self.collect(a);
        self.collect(b);
        Ok(())
    }

    pub fn disconnect(&mut self, a: &str, b: &str) -> Result<(), BgpError> {
        self.get_mut(a)?.peer_down(b);
        self.get_mut(b)?.peer_down(a);
        self.links.remove(&link(a, b));
        // Anything still in flight on this link is lost with the session.
        self.queue
            .retain(|(f, t, _)| !((f == a && t == b) || (f == b && t == a)));
        self.collect(a);
        self.collect(b);
        Ok(())
    }

    pub fn announce(&mut self, id: &str, prefix: Prefix) -> Result<(), BgpError> {
        self.get_mut(id)?.announce(prefix, Origin::Igp);
        self.collect(id);
        Ok(())
    }

    pub fn withdraw(&mut self, id: &str, prefix: Prefix) -> Result<(), BgpError> {
        self.get_mut(id)?.withdraw(prefix);
        self.collect(id);
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Total messages delivered so far.
    pub fn delivered(&self) -> usize {
        self.delivered
    }

    /// Deliver one round. Returns the number of messages delivered.
    pub fn round(&mut self) -> usize {
        let batch = std::mem::take(&mut self.queue);
        let n = batch.len();
        for (from, to, upd) in batch {
            let Some(s) = self.speakers.get_mut(&to) else { continue };
            // Both sides are always built by this harness, so a failure here
            // is a harness bug rather than a peer misbehaving.
            s.process_update(&from, upd).expect("simulated update accepted");
            self.collect(&to);
        }
        self.delivered += n;
        n
    }

    /// Run rounds until nothing is queued. Returns the number of rounds
    /// that delivered at least one message, or `None` past `max_rounds`.
    pub fn run_until_quiet(&mut self, max_rounds: usize) -> Option<usize> {
        let mut rounds = 0;
        while !self.queue.is_empty() {
            if rounds == max_rounds {
                return None;
            }
            self.round();
            rounds += 1;
        }
        Some(rounds)
    }

    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        self.links
            .iter()
            .filter_map(|(a, b)| {
                if a == id {
                    Some(b.as_str())
                } else if b == id {
                    Some(a.as_str())
                } else {
                    None
                }
            })
            .collect()
    }

    /// Longest shortest path in hops, or `None` if disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut worst = 0;
        for src in self.speakers.keys() {
            let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(src.as_str(), 0)]);
            let mut q = VecDeque::from([src.as_str()]);
            while let Some(u) = q.pop_front() {
                let d = dist[u];
                for v in self.neighbors(u) {
                    if !dist.contains_key(v) {
                        dist.insert(v, d + 1);
                        q.push_back(v);
                    }
                }
            }
            if dist.len() != self.speakers.len() {
                return None;
            }
            worst = worst.max(dist.values().copied().max().unwrap_or(0));
        }
        Some(worst)
    }

    /// Follow next hops from `from` until a speaker that originates
    /// `prefix`. Returns the visited speakers, or `None` on a dead end or a
    /// forwarding loop.
    pub fn forwarding_path(&self, from: &str, prefix: &Prefix) -> Option<Vec<String>> {
        let by_nh: BTreeMap<Ipv4Addr, &str> =
            self.speakers.values().map(|s| (s.next_hop(), s.id())).collect();
        let mut path = vec![from.to_string()];
        let mut cur = self.speakers.get(from)?;
        loop {
            let best = cur.best(prefix)?;
            if best.learned_from.peer().is_none() {
                return Some(path);
            }
            let next = *by_nh.get(&best.next_hop)?;
            if path.iter().any(|p| p == next) {
                return None;
            }
            path.push(next.to_string());
            cur = self.speakers.get(next)?;
        }
    }
}
