//! Semantic class taxonomy and the tag → class mapping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Tags = BTreeMap<String, String>;

/// Raster channel an element is drawn into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeometryKind {
    Area,
    Line,
    Node,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 3] = [GeometryKind::Area, GeometryKind::Line, GeometryKind::Node];

    pub fn channel(self) -> usize {
        match self {
            GeometryKind::Area => 0,
            GeometryKind::Line => 1,
            GeometryKind::Node => 2,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            GeometryKind::Area => "area",
            GeometryKind::Line => "line",
            GeometryKind::Node => "node",
        }
    }
}

impl FromStr for GeometryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(GeometryKind::Area),
            "line" => Ok(GeometryKind::Line),
            "node" => Ok(GeometryKind::Node),
            other => Err(Error::Config(format!("unknown geometry kind {other:?}"))),
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValuePattern {
    /// Any value except `no`.
    Any,
    OneOf(Vec<String>),
}

impl ValuePattern {
    pub fn matches(&self, value: &str) -> bool {
        match self {
            ValuePattern::Any => value != "no",
            ValuePattern::OneOf(vals) => vals.iter().any(|v| v == value),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "*" {
            return Ok(ValuePattern::Any);
        }
        let vals: Vec<String> = s.split('|').map(str::to_owned).collect();
        if vals.iter().any(String::is_empty) {
            return Err(Error::Config(format!("empty alternative in pattern {s:?}")));
        }
        Ok(ValuePattern::OneOf(vals))
    }
}

impl fmt::Display for ValuePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValuePattern::Any => f.write_str("*"),
            ValuePattern::OneOf(v) => f.write_str(&v.join("|")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRule {
    pub key: String,
    pub pattern: ValuePattern,
    pub kind: GeometryKind,
    /// Raster index of the target class (1-based, 0 is void).
    pub class: u8,
}

/// Ordered class lists per geometry kind plus the ordered tag rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    areas: Vec<String>,
    lines: Vec<String>,
    nodes: Vec<String>,
    rules: Vec<ClassRule>,
}

const DEFAULT_TABLE: &str = include_str!("default_classes.txt");

impl Default for ClassTable {
    fn default() -> Self {
        DEFAULT_TABLE.parse().expect("bundled class table is valid")
    }
}

impl ClassTable {
    pub fn names(&self, kind: GeometryKind) -> &[String] {
        match kind {
            GeometryKind::Area => &self.areas,
            GeometryKind::Line => &self.lines,
            GeometryKind::Node => &self.nodes,
        }
    }

    /// Number of indices in the channel, void included.
    pub fn class_count(&self, kind: GeometryKind) -> usize {
        self.names(kind).len() + 1
    }

    pub fn rules(&self) -> &[ClassRule] {
        &self.rules
    }

    pub fn index_of(&self, kind: GeometryKind, name: &str) -> Option<u8> {
        self.names(kind)
            .iter()
            .position(|n| n == name)
            .map(|i| (i + 1) as u8)
    }

    pub fn name_of(&self, kind: GeometryKind, idx: u8) -> Option<&str> {
        if idx == 0 {
            return Some("void");
        }
        self.names(kind).get(idx as usize - 1).map(String::as_str)
    }

    pub fn classify(&self, tags: &Tags) -> Option<(GeometryKind, u8)> {
        self.classify_as(tags, &GeometryKind::ALL)
    }

    /// First matching rule whose kind is in `kinds`.
    pub fn classify_as(&self, tags: &Tags, kinds: &[GeometryKind]) -> Option<(GeometryKind, u8)> {
        self.rules
            .iter()
            .filter(|r| kinds.contains(&r.kind))
            .find(|r| tags.get(&r.key).is_some_and(|v| r.pattern.matches(v)))
            .map(|r| (r.kind, r.class))
    }

    /// SHA-256 of the canonical text form; stored in tiles to detect
    /// rasters produced under a different taxonomy.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_string().as_bytes()).into()
    }
}

pub fn classify(tags: &Tags, table: &ClassTable) -> Option<(GeometryKind, u8)> {
    table.classify(tags)
}

impl fmt::Display for ClassTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for kind in GeometryKind::ALL {
            for name in self.names(kind) {
                writeln!(f, "{kind} {name}")?;
            }
        }
        for r in &self.rules {
            let name = self.name_of(r.kind, r.class).unwrap_or("?");
            writeln!(f, "rule {}={} -> {} {}", r.key, r.pattern, r.kind, name)?;
        }
        Ok(())
    }
}

impl FromStr for ClassTable {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut table = ClassTable {
            areas: Vec::new(),
            lines: Vec::new(),
            nodes: Vec::new(),
            rules: Vec::new(),
        };
        let mut pending = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Config(format!("class table line {}: {msg}", lineno + 1));
            let (head, rest) = line.split_once(char::is_whitespace).ok_or_else(|| bad("missing argument"))?;
            let rest = rest.trim();
            if head == "rule" {
                let (lhs, rhs) = rest.split_once("->").ok_or_else(|| bad("rule without '->'"))?;
                let (key, pattern) = lhs.trim().split_once('=').ok_or_else(|| bad("rule without '='"))?;
                let mut target = rhs.split_whitespace();
                let kind: GeometryKind = target.next().ok_or_else(|| bad("missing kind"))?.parse()?;
                let name = target.next().ok_or_else(|| bad("missing class name"))?;
                if target.next().is_some() {
                    return Err(bad("trailing tokens"));
                }
                if key.trim().is_empty() {
                    return Err(bad("empty tag key"));
                }
                pending.push((lineno + 1, key.trim().to_owned(), ValuePattern::parse(pattern.trim())?, kind, name.to_owned()));
                continue;
            }
            let kind: GeometryKind = head.parse().map_err(|_| bad(&format!("unknown statement {head:?}")))?;
            if rest.contains(char::is_whitespace) {
                return Err(bad("class names cannot contain whitespace"));
            }
            let list = match kind {
                GeometryKind::Area => &mut table.areas,
                GeometryKind::Line => &mut table.lines,
                GeometryKind::Node => &mut table.nodes,
            };
            if rest == "void" || list.iter().any(|n| n == rest) {
                return Err(bad(&format!("duplicate {kind} class {rest:?}")));
            }
            if list.len() >= 254 {
                return Err(bad("too many classes for an 8-bit raster"));
            }
            list.push(rest.to_owned());
        }
        for (lineno, key, pattern, kind, name) in pending {
            let class = table.index_of(kind, &name).ok_or_else(|| {
                Error::Config(format!("class table line {lineno}: unknown {kind} class {name:?}"))
            })?;
            table.rules.push(ClassRule { key, pattern, kind, class });
        }
        Ok(table)
    }
}
