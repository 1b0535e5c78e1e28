// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::collections::BTreeMap;

use netorch_core::config::{ConfigDocument, ConfigPath, Scalar};
use proptest::prelude::*;

/// Naive document model: plain segment vectors, no invariants beyond what
/// the helper functions below maintain by brute force.
pub type Naive = BTreeMap<Vec<String>, Scalar>;

pub fn to_naive(doc: &ConfigDocument) -> Naive {
    doc.iter()
        .map(|(p, v)| (p.segments().to_vec(), v.clone()))
        .collect()
}

fn prefix_related(a: &[String], b: &[String]) -> bool {
    let n = a.len().min(b.len());
    a[..n] == b[..n]
}

/// What a full rewrite produces: replace yields `desired`; merge drops every
/// actual leaf that is a prefix or extension of a desired leaf, then writes
/// all of desired.
pub fn naive_target(actual: &Naive, desired: &Naive, replace: bool) -> Naive {
    if replace {
        return desired.clone();
    }
    let mut out: Naive = actual
        .iter()
        .filter(|(p, _)| !desired.keys().any(|d| prefix_related(p, d) && *p != d))
        .map(|(p, v)| (p.clone(), v.clone()))
        .collect();
    out.extend(desired.iter().map(|(p, v)| (p.clone(), v.clone())));
    out
}

fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        any::<bool>().prop_map(Scalar::Bool),
        (-5000i64..5000).prop_map(Scalar::Int),
        "[a-z0-9]{1,6}( [a-z0-9]{1,4})?".prop_map(Scalar::Str),
    ]
}

const SECTIONS: &[&str] = &["interfaces", "system", "bgp", "vlans", "bridges"];
const NAMES: &[&str] = &["eth0", "eth1", "ge-0", "mtu", "description", "x", "y", "65001"];

fn path() -> impl Strategy<Value = Vec<String>> {
    (
        prop::sample::select(SECTIONS),
        prop::collection::vec(prop::sample::select(NAMES), 1..=3),
    )
        .prop_map(|(s, rest)| {
            std::iter::once(s.to_string())
                .chain(rest.into_iter().map(str::to_string))
                .collect()
        })
}

/// Random valid document with up to `max` leaves. Candidate leaves that
/// would collide structurally with earlier ones are skipped.
pub fn document(max: usize) -> impl Strategy<Value = ConfigDocument> {
    prop::collection::vec((path(), scalar()), 0..=max).prop_map(|entries| {
        let mut doc = ConfigDocument::new();
        for (segs, v) in entries {
            let p = ConfigPath::new(segs).unwrap();
            if doc.conflict_for(&p).is_none() {
                doc.set(p, v).unwrap();
            }
        }
        doc
    })
}

/// A pair where `b` is usually a perturbation of `a`, so diffs are small
/// and structured rather than mostly disjoint.
pub fn related_pair(max: usize) -> impl Strategy<Value = (ConfigDocument, ConfigDocument)> {
    (document(max), document(max / 2 + 1), prop::collection::vec(any::<bool>(), max))
        .prop_map(|(a, extra, keep)| {
            let mut b = ConfigDocument::new();
            for ((p, v), k) in a.iter().zip(keep.iter().cycle()) {
                if *k {
                    b.set(p.clone(), v.clone()).unwrap();
                }
            }
            for (p, v) in extra.iter() {
                if b.conflict_for(p).is_none() {
                    b.set(p.clone(), v.clone()).unwrap();
                }
            }
            (a, b)
        })
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}
