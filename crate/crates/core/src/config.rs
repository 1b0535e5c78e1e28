// SPDX-License-Identifier: Apache-2.0

//! Canonical configuration documents and deltas.
//!
//! A [`ConfigDocument`] is a tree of sections and keys whose leaves are
//! scalars. It is stored flat, keyed by [`ConfigPath`], which keeps the
//! canonical form (sorted siblings, no empty sections, no duplicate paths)
//! true by construction. The one structural rule that must be enforced
//! explicitly is that a leaf can never also be a section: `a.b = 1` and
//! `a.b.c = 2` cannot coexist.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid path {0:?}")]
    InvalidPath(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("path {path} conflicts with existing {existing}")]
    PathConflict { path: String, existing: String },
    #[error("no such path {0}")]
    NoSuchPath(String),
    #[error("path {0} appears more than once in delta")]
    DuplicatePath(String),
}

/// Dot-separated location of a leaf, e.g. `interfaces.eth0.mtu`.
///
/// Ordering is segment-wise, which is the sibling order of the tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfigPath(Vec<String>);

impl ConfigPath {
    pub const MIN_SEGMENTS: usize = 2;

    pub fn new<I, S>(segments: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.len() < Self::MIN_SEGMENTS || !segments.iter().all(|s| valid_segment(s)) {
            return Err(ConfigError::InvalidPath(segments.join(".")));
        }
        Ok(Self(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn section(&self) -> &str {
        &self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True if `self` is a proper ancestor of `other`.
    pub fn is_ancestor_of(&self, other: &ConfigPath) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }
}

pub(crate) fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl fmt::Display for ConfigPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl FromStr for ConfigPath {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.split('.'))
    }
}

impl Serialize for ConfigPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConfigPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Leaf value. Lists are not scalars; encode them as indexed keys
/// (`acl.10.action`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Scalar {
    /// Single-token textual form used on device command lines: a JSON literal.
    pub fn to_token(&self) -> String {
        match self {
            Scalar::Bool(b) => b.to_string(),
            Scalar::Int(i) => i.to_string(),
            Scalar::Str(s) => serde_json::to_string(s).expect("string serializes"),
        }
    }

    pub fn from_token(token: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(token)
            .map_err(|_| ConfigError::InvalidValue(token.to_string()))?;
        Self::from_json(&value).ok_or_else(|| ConfigError::InvalidValue(token.to_string()))
    }

    pub fn from_json(value: &Value) -> Option<Self> {
        match value {
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            Value::Number(n) => n.as_i64().map(Scalar::Int),
            Value::String(s) => Some(Scalar::Str(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Int(i) => Value::from(*i),
            Scalar::Str(s) => Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_token())
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

/// Canonical hierarchical configuration.
///
/// Serializes as nested JSON objects with sorted keys, so equal documents
/// serialize byte-identically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ConfigDocument {
    leaves: BTreeMap<ConfigPath, Scalar>,
}

impl ConfigDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn get(&self, path: &ConfigPath) -> Option<&Scalar> {
        self.leaves.get(path)
    }

    pub fn contains(&self, path: &ConfigPath) -> bool {
        self.leaves.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConfigPath, &Scalar)> {
        self.leaves.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &ConfigPath> {
        self.leaves.keys()
    }

    /// Leaf that blocks `path` from being set: either an existing leaf that is
    /// an ancestor of `path`, or an existing leaf below it.
    pub fn conflict_for(&self, path: &ConfigPath) -> Option<&ConfigPath> {
        for k in ConfigPath::MIN_SEGMENTS..path.len() {
            let ancestor = ConfigPath(path.0[..k].to_vec());
            if let Some((p, _)) = self.leaves.get_key_value(&ancestor) {
                return Some(p);
            }
        }
        self.leaves
            .range((Bound::Excluded(path), Bound::Unbounded))
            .next()
            .map(|(p, _)| p)
            .filter(|p| path.is_ancestor_of(p))
    }

    /// Paths under `path` (excluding `path` itself).
    pub fn descendants<'a>(&'a self, path: &'a ConfigPath) -> impl Iterator<Item = &'a ConfigPath> + 'a {
        self.leaves
            .range((Bound::Excluded(path), Bound::Unbounded))
            .map(|(p, _)| p)
            .take_while(move |p| path.is_ancestor_of(p))
    }

    pub fn set(&mut self, path: ConfigPath, value: Scalar) -> Result<Option<Scalar>, ConfigError> {
        if let Some(existing) = self.conflict_for(&path) {
            return Err(ConfigError::PathConflict {
                path: path.to_string(),
                existing: existing.to_string(),
            });
        }
        Ok(self.leaves.insert(path, value))
    }

    pub fn remove(&mut self, path: &ConfigPath) -> Result<Scalar, ConfigError> {
        self.leaves
            .remove(path)
            .ok_or_else(|| ConfigError::NoSuchPath(path.to_string()))
    }

    /// Apply one operation; on error the document is unchanged.
    pub fn apply_op(&mut self, op: &DeltaOp) -> Result<(), ConfigError> {
        match op {
            DeltaOp::Set { path, value } => self.set(path.clone(), value.clone()).map(|_| ()),
            DeltaOp::Delete { path } => self.remove(path).map(|_| ()),
        }
    }

    /// Apply a delta in order, returning the resulting document.
    pub fn applied(&self, delta: &ConfigDelta) -> Result<ConfigDocument, ConfigError> {
        let mut out = self.clone();
        for op in delta.ops() {
            out.apply_op(op)?;
        }
        Ok(out)
    }

    /// Overlay `other` onto `self`; leaves of `other` win, and any leaf of
    /// `self` that structurally conflicts with one of `other` is dropped.
    pub fn overlaid(&self, other: &ConfigDocument) -> ConfigDocument {
        let mut out = self.clone();
        for (path, value) in other.iter() {
            let blocked: Vec<ConfigPath> = out
                .descendants(path)
                .cloned()
                .chain(
                    (ConfigPath::MIN_SEGMENTS..path.len())
                        .map(|k| ConfigPath(path.0[..k].to_vec()))
                        .filter(|a| out.contains(a)),
                )
                .collect();
            for p in blocked {
                out.leaves.remove(&p);
            }
            out.leaves.insert(path.clone(), value.clone());
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut root = serde_json::Map::new();
        for (path, value) in &self.leaves {
            let (last, parents) = path.0.split_last().expect("paths are non-empty");
            let mut node = &mut root;
            for seg in parents {
                node = node
                    .entry(seg.clone())
                    .or_insert_with(|| Value::Object(Default::default()))
                    .as_object_mut()
                    .expect("canonical documents never mix leaves and sections");
            }
            node.insert(last.clone(), value.to_json());
        }
        Value::Object(root)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let root = value
            .as_object()
            .ok_or_else(|| ConfigError::InvalidValue("document must be a JSON object".into()))?;
        let mut doc = ConfigDocument::new();
        let mut stack: Vec<String> = Vec::new();
        collect_leaves(root, &mut stack, &mut doc)?;
        Ok(doc)
    }

    /// Deterministic pretty JSON; byte-identical for equal documents.
    pub fn to_canonical_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("documents serialize")
    }
}

fn collect_leaves(
    map: &serde_json::Map<String, Value>,
    stack: &mut Vec<String>,
    doc: &mut ConfigDocument,
) -> Result<(), ConfigError> {
    if map.is_empty() && !stack.is_empty() {
        return Err(ConfigError::InvalidValue(format!("empty section {}", stack.join("."))));
    }
    for (key, value) in map {
        stack.push(key.clone());
        match value {
            Value::Object(inner) => collect_leaves(inner, stack, doc)?,
            other => {
                let scalar = Scalar::from_json(other).ok_or_else(|| {
                    ConfigError::InvalidValue(format!("{}: {other}", stack.join(".")))
                })?;
                let path = ConfigPath::new(stack.iter().cloned())?;
                doc.leaves.insert(path, scalar);
            }
        }
        stack.pop();
    }
    Ok(())
}

impl FromIterator<(ConfigPath, Scalar)> for ConfigDocument {
    /// Later entries win; conflicting ancestors/descendants are dropped.
    fn from_iter<T: IntoIterator<Item = (ConfigPath, Scalar)>>(iter: T) -> Self {
        let mut doc = ConfigDocument::new();
        for (path, value) in iter {
            let single: ConfigDocument = ConfigDocument {
                leaves: BTreeMap::from([(path, value)]),
            };
            doc = doc.overlaid(&single);
        }
        doc
    }
}

impl Serialize for ConfigDocument {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConfigDocument {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        ConfigDocument::from_json(&value).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DeltaOp {
    Set { path: ConfigPath, value: Scalar },
    Delete { path: ConfigPath },
}

impl DeltaOp {
    pub fn path(&self) -> &ConfigPath {
        match self {
            DeltaOp::Set { path, .. } | DeltaOp::Delete { path } => path,
        }
    }
}

/// Ordered set/delete operations; no path appears twice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ConfigDelta(Vec<DeltaOp>);

impl ConfigDelta {
    pub fn new(ops: Vec<DeltaOp>) -> Result<Self, ConfigError> {
        let mut seen = std::collections::BTreeSet::new();
        for op in &ops {
            if !seen.insert(op.path()) {
                return Err(ConfigError::DuplicatePath(op.path().to_string()));
            }
        }
        Ok(Self(ops))
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ops(&self) -> &[DeltaOp] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every leaf of `doc` as a set, in document order.
    pub fn full_set(doc: &ConfigDocument) -> Self {
        Self(
            doc.iter()
                .map(|(path, value)| DeltaOp::Set {
                    path: path.clone(),
                    value: value.clone(),
                })
                .collect(),
        )
    }
}

impl<'de> Deserialize<'de> for ConfigDelta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ops = Vec::<DeltaOp>::deserialize(deserializer)?;
        ConfigDelta::new(ops).map_err(D::Error::custom)
    }
}

impl IntoIterator for ConfigDelta {
    type Item = DeltaOp;
    type IntoIter = std::vec::IntoIter<DeltaOp>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> ConfigPath {
        s.parse().unwrap()
    }

    #[test]
    fn path_validation() {
        assert!("interfaces.eth0.mtu".parse::<ConfigPath>().is_ok());
        assert!("hostname".parse::<ConfigPath>().is_err());
        assert!("a..b".parse::<ConfigPath>().is_err());
        assert!("a.b c".parse::<ConfigPath>().is_err());
    }

    #[test]
    fn segment_order_is_tree_order() {
        // '-' sorts before '.' bytewise, but siblings compare segment-wise.
        assert!(p("a.b.z") < p("a.b-c.x"));
    }

    #[test]
    fn leaf_and_section_cannot_coexist() {
        let mut doc = ConfigDocument::new();
        doc.set(p("a.b"), 1.into()).unwrap();
        assert!(matches!(doc.set(p("a.b.c"), 2.into()), Err(ConfigError::PathConflict { .. })));
        let mut doc = ConfigDocument::new();
        doc.set(p("a.b.c"), 1.into()).unwrap();
        assert!(doc.set(p("a.b"), 2.into()).is_err());
        assert!(doc.set(p("a.bc"), 2.into()).is_ok());
    }

    #[test]
    fn json_is_nested_sorted_and_round_trips() {
        let mut doc = ConfigDocument::new();
        doc.set(p("system.hostname"), "r1".into()).unwrap();
        doc.set(p("interfaces.eth0.mtu"), 1500.into()).unwrap();
        doc.set(p("interfaces.eth0.enabled"), true.into()).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(
            text,
            r#"{"interfaces":{"eth0":{"enabled":true,"mtu":1500}},"system":{"hostname":"r1"}}"#
        );
        let back: ConfigDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn rejects_non_canonical_json() {
        for bad in [r#"{"a":{}}"#, r#"{"a":1}"#, r#"{"a":{"b":1.5}}"#, r#"{"a":{"b":[1]}}"#, "[]"] {
            assert!(serde_json::from_str::<ConfigDocument>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn scalar_tokens() {
        for s in [Scalar::Int(-3), Scalar::Bool(false), Scalar::Str("a \"b\" c".into()), Scalar::Str("1500".into())] {
            assert_eq!(Scalar::from_token(&s.to_token()).unwrap(), s);
        }
        assert!(Scalar::from_token("eth0").is_err());
        assert!(Scalar::from_token("1.5").is_err());
    }

    #[test]
    fn delta_rejects_duplicate_paths() {
        let ops = vec![
            DeltaOp::Delete { path: p("a.b") },
            DeltaOp::Set { path: p("a.b"), value: 1.into() },
        ];
        assert!(matches!(ConfigDelta::new(ops), Err(ConfigError::DuplicatePath(_))));
        let json = r#"[{"op":"set","path":"a.b","value":1},{"op":"delete","path":"a.c"}]"#;
        let delta: ConfigDelta = serde_json::from_str(json).unwrap();
        assert_eq!(serde_json::to_string(&delta).unwrap(), json);
    }

    #[test]
    fn overlay_drops_conflicting_leaves() {
        let mut a = ConfigDocument::new();
        a.set(p("x.y"), 1.into()).unwrap();
        a.set(p("x.z"), 2.into()).unwrap();
        let mut b = ConfigDocument::new();
        b.set(p("x.y.w"), 3.into()).unwrap();
        let o = a.overlaid(&b);
        assert_eq!(o.len(), 2);
        assert_eq!(o.get(&p("x.y.w")), Some(&Scalar::Int(3)));
        assert_eq!(o.get(&p("x.z")), Some(&Scalar::Int(2)));
    }
}
