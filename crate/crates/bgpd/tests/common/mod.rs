// SPDX-License-Identifier: Apache-2.0

// Shared generators and brute-force oracles for the speaker tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use netorch_bgpd::{Origin, Prefix, Route, SimNet, Source};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Candidate set for one prefix with distinct sources.
pub fn candidate_set(rng: &mut impl Rng) -> Vec<Route> {
    let prefix: Prefix = "10.9.0.0/16".parse().unwrap();
    let n = rng.gen_range(1..=8);
    let mut sources: Vec<Source> = std::iter::once(Source::Local)
        .chain((0..10).map(|i| Source::Peer(format!("p{i}"))))
        .collect();
    sources.shuffle(rng);
    sources
        .into_iter()
        .take(n)
        .map(|src| {
            // Few distinct values so every tie-break level gets exercised.
            let len = if src == Source::Local { 0 } else { rng.gen_range(1..=3) };
            Route {
                prefix,
                next_hop: Ipv4Addr::new(10, 0, 0, rng.gen_range(1..=3)),
                as_path: (0..len).map(|_| rng.gen_range(64512..64520)).collect(),
                local_pref: [50, 100, 100, 200][rng.gen_range(0..4)],
                origin: [Origin::Igp, Origin::Egp, Origin::Incomplete][rng.gen_range(0..3)],
                learned_from: src,
            }
        })
        .collect()
}

/// Does `a` beat `b`? Written rule by rule, independent of `compare`.
pub fn beats(a: &Route, b: &Route) -> bool {
    if a.local_pref != b.local_pref {
        return a.local_pref > b.local_pref;
    }
    if a.as_path.len() != b.as_path.len() {
        return a.as_path.len() < b.as_path.len();
    }
    let rank = |o: Origin| match o {
        Origin::Igp => 0,
        Origin::Egp => 1,
        Origin::Incomplete => 2,
    };
    if a.origin != b.origin {
        return rank(a.origin) < rank(b.origin);
    }
    match (&a.learned_from, &b.learned_from) {
        (Source::Local, Source::Local) => false,
        (Source::Local, _) => true,
        (_, Source::Local) => false,
        (Source::Peer(x), Source::Peer(y)) => x < y,
    }
}

/// The unique candidate that beats every other one.
pub fn oracle_best(cands: &[Route]) -> Option<&Route> {
    let winners: Vec<&Route> = cands
        .iter()
        .enumerate()
        .filter(|(i, a)| cands.iter().enumerate().all(|(j, b)| *i == j || beats(a, b)))
        .map(|(_, a)| a)
        .collect();
    assert!(winners.len() <= 1, "pairwise order is not total");
    winners.first().copied()
}

pub struct Topology {
    pub ids: Vec<String>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Random connected graph: a random spanning tree plus extra edges.
    pub fn random(rng: &mut impl Rng, max_speakers: usize) -> Self {
        let n = rng.gen_range(2..=max_speakers);
        let ids = (0..n).map(|i| format!("s{i:02}")).collect();
        let mut edges = BTreeSet::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.insert((j, i));
        }
        for _ in 0..rng.gen_range(0..=n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        Self { ids, edges }
    }

    pub fn build(&self) -> SimNet {
        let mut net = SimNet::new();
        for (i, id) in self.ids.iter().enumerate() {
            net.add_speaker(id.clone(), 65000 + i as u32);
        }
        for (a, b) in &self.edges {
            net.connect(&self.ids[*a], &self.ids[*b]).unwrap();
        }
        net
    }

    /// Hop distance from every node to the nearest node in `sources`.
    pub fn distances(&self, sources: &BTreeSet<usize>) -> Vec<Option<usize>> {
        let n = self.ids.len();
        let mut adj = vec![Vec::new(); n];
        for (a, b) in &self.edges {
            adj[*a].push(*b);
            adj[*b].push(*a);
        }
        let mut dist = vec![None; n];
        let mut q = VecDeque::new();
        for s in sources {
            dist[*s] = Some(0);
            q.push_back(*s);
        }
        while let Some(u) = q.pop_front() {
            for v in &adj[u] {
                if dist[*v].is_none() {
                    dist[*v] = Some(dist[u].unwrap() + 1);
                    q.push_back(*v);
                }
            }
        }
        dist
    }

    pub fn diameter(&self) -> usize {
        (0..self.ids.len())
            .map(|i| self.distances(&BTreeSet::from([i])).into_iter().flatten().max().unwrap())
            .max()
            .unwrap()
    }
}

pub fn prefix(i: usize) -> Prefix {
    Prefix::new(Ipv4Addr::new(10, (i / 256) as u8 + 1, (i % 256) as u8, 0), 24).unwrap()
}

/// Checks every rib against the shortest-path oracle and the rib
/// invariants. `origins` maps each prefix to the nodes announcing it.
pub fn check_fixed_point(
    net: &SimNet,
    topo: &Topology,
    origins: &BTreeMap<Prefix, BTreeSet<usize>>,
) -> Result<(), String> {
    for (idx, id) in topo.ids.iter().enumerate() {
        let sp = net.speaker(id).unwrap();
        let snap = sp.snapshot();
        for r in &snap.loc_rib {
            if r.as_path.contains(&sp.asn()) {
                return Err(format!("{id}: loop in {r:?}"));
            }
            if !sp.candidates(&r.prefix).contains(&r) {
                return Err(format!("{id}: loc_rib entry is not a candidate"));
            }
            if !origins.contains_key(&r.prefix) {
                return Err(format!("{id}: stale {}", r.prefix));
            }
        }
        for (pfx, srcs) in origins {
            let dist = topo.distances(srcs)[idx].ok_or("disconnected")?;
            let best = sp.best(pfx).ok_or_else(|| format!("{id}: missing {pfx}"))?;
            if best.as_path.len() != dist {
                return Err(format!("{id}: {pfx} path {:?}, shortest is {dist}", best.as_path));
            }
            let walk = net
                .forwarding_path(id, pfx)
                .ok_or_else(|| format!("{id}: next-hop walk for {pfx} fails"))?;
            let end = walk.last().unwrap();
            if !srcs.iter().any(|s| &topo.ids[*s] == end) {
                return Err(format!("{id}: walk for {pfx} ends at non-origin {end}"));
            }
        }
        // adj_rib_out is loc_rib minus split-horizon, with our ASN in front.
        for (peer, adverts) in &snap.adj_rib_out {
            let want: Vec<(Prefix, Vec<u32>)> = snap
                .loc_rib
                .iter()
                .filter(|r| r.learned_from.peer() != Some(peer.as_str()))
                .map(|r| (r.prefix, [vec![sp.asn()], r.as_path.clone()].concat()))
                .collect();
            let got: Vec<(Prefix, Vec<u32>)> =
                adverts.iter().map(|a| (a.prefix, a.as_path.clone())).collect();
            if want != got {
                return Err(format!("{id}: adj_rib_out to {peer} diverges"));
            }
        }
    }
    Ok(())
}

pub struct ConvergenceRun {
    pub speakers: usize,
    pub diameter: usize,
    pub rounds: usize,
    pub net: SimNet,
}

/// Build a topology, announce up to 40 prefixes from random speakers with
/// rounds interleaved, then count rounds until quiet after the last one.
pub fn convergence_run(seed: u64) -> Result<ConvergenceRun, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Topology::random(&mut rng, 12);
    let mut net = topo.build();
    let diameter = topo.diameter();
    assert_eq!(net.diameter(), Some(diameter));
    let mut origins: BTreeMap<Prefix, BTreeSet<usize>> = BTreeMap::new();
    for _ in 0..rng.gen_range(1..=40) {
        let node = rng.gen_range(0..topo.ids.len());
        // Some prefixes are anycast from more than one speaker.
        let pfx = prefix(rng.gen_range(0..32));
        origins.entry(pfx).or_default().insert(node);
        net.announce(&topo.ids[node], pfx).unwrap();
        for _ in 0..rng.gen_range(0..=2) {
            net.round();
        }
    }
    let rounds = net
        .run_until_quiet(diameter + 2)
        .ok_or_else(|| format!("seed {seed}: not quiet within {} rounds", diameter + 2))?;
    check_fixed_point(&net, &topo, &origins).map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(ConvergenceRun {
        speakers: topo.ids.len(),
        diameter,
        rounds,
        net,
    })
}
