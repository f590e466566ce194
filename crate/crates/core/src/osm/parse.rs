//! OSM XML (API 0.6) reading and writing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::Tags;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OsmNode {
    pub id: i64,
    pub lon: f64,
    pub lat: f64,
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmWay {
    pub id: i64,
    pub nodes: Vec<i64>,
    pub tags: Tags,
}

impl OsmWay {
    pub fn is_closed(&self) -> bool {
        self.nodes.len() >= 4 && self.nodes.first() == self.nodes.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemberType {
    Node,
    Way,
    Relation,
}

impl MemberType {
    fn as_str(self) -> &'static str {
        match self {
            MemberType::Node => "node",
            MemberType::Way => "way",
            MemberType::Relation => "relation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmMember {
    pub kind: MemberType,
    pub id: i64,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmRelation {
    pub id: i64,
    pub members: Vec<OsmMember>,
    pub tags: Tags,
}

/// Bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        let b = BBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        };
        if ![min_lon, min_lat, max_lon, max_lat].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("bounding box has non-finite corners".into()));
        }
        if !(max_lon > min_lon && max_lat > min_lat) {
            return Err(Error::Domain(format!("degenerate bounding box {b:?}")));
        }
        if min_lat < -90.0 || max_lat > 90.0 || min_lon < -180.0 || max_lon > 180.0 {
            return Err(Error::Domain(format!("bounding box {b:?} outside WGS84 range")));
        }
        Ok(b)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)
    }
}

impl std::str::FromStr for BBox {
    type Err = Error;
    /// `min_lon,min_lat,max_lon,max_lat`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Domain(format!("bad bounding box {s:?}: {e}")))?;
        if v.len() != 4 {
            return Err(Error::Domain(format!("bounding box needs 4 numbers, got {}", v.len())));
        }
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Parsed OSM elements keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmGraph {
    pub nodes: BTreeMap<i64, OsmNode>,
    pub ways: BTreeMap<i64, OsmWay>,
    pub relations: BTreeMap<i64, OsmRelation>,
    pub bounds: Option<BBox>,
}

impl OsmGraph {
    /// `(way id, missing node id)` for every way reference that does not
    /// resolve, in way order.
    pub fn dangling_refs(&self) -> Vec<(i64, i64)> {
        self.ways
            .values()
            .flat_map(|w| {
                w.nodes
                    .iter()
                    .filter(|n| !self.nodes.contains_key(n))
                    .map(move |&n| (w.id, n))
            })
            .collect()
    }

    /// Extent of the node coordinates, falling back to the declared bounds.
    pub fn extent(&self) -> Option<BBox> {
        if let Some(b) = self.bounds {
            return Some(b);
        }
        let mut it = self.nodes.values();
        let first = it.next()?;
        let mut b = BBox {
            min_lon: first.lon,
            min_lat: first.lat,
            max_lon: first.lon,
            max_lat: first.lat,
        };
        for n in it {
            b.min_lon = b.min_lon.min(n.lon);
            b.max_lon = b.max_lon.max(n.lon);
            b.min_lat = b.min_lat.min(n.lat);
            b.max_lat = b.max_lat.max(n.lat);
        }
        Some(b)
    }
}

enum Open {
    Node(OsmNode),
    Way(OsmWay),
    Relation(OsmRelation),
}

struct Ctx<'a> {
    reader: &'a Reader<&'a [u8]>,
}

impl Ctx<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Xml {
            offset: self.reader.buffer_position(),
            message: message.into(),
        }
    }

    fn attrs(&self, e: &BytesStart<'_>) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for a in e.attributes() {
            let a = a.map_err(|err| self.err(err.to_string()))?;
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a
                .unescape_value()
                .map_err(|err| self.err(err.to_string()))?
                .into_owned();
            out.insert(key, value);
        }
        Ok(out)
    }

    fn get<'m>(&self, attrs: &'m BTreeMap<String, String>, elem: &str, key: &str) -> Result<&'m str> {
        attrs
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| self.err(format!("<{elem}> missing attribute {key:?}")))
    }

    fn num<T: std::str::FromStr>(&self, attrs: &BTreeMap<String, String>, elem: &str, key: &str) -> Result<T> {
        let raw = self.get(attrs, elem, key)?;
        raw.parse()
            .map_err(|_| self.err(format!("<{elem}> attribute {key}={raw:?} is not a number")))
    }
}

/// Parses an OSM XML document.
pub fn parse_osm_xml(document: &[u8]) -> Result<OsmGraph> {
    let mut reader = Reader::from_reader(document);
    reader.config_mut().trim_text(true);
    let mut graph = OsmGraph::default();
    let mut buf = Vec::new();
    let mut depth = 0usize;
    let mut seen_root = false;
    let mut open: Option<Open> = None;

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| Error::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        let ctx = Ctx { reader: &reader };
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e.clone().into_owned()), false),
            Event::Empty(e) => (Some(e.clone().into_owned()), true),
            Event::End(_) => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    if let Some(elem) = open.take() {
                        insert(&ctx, &mut graph, elem)?;
                    }
                }
                (None, false)
            }
            Event::Eof => {
                if depth != 0 {
                    return Err(ctx.err("unexpected end of document"));
                }
                if !seen_root {
                    return Err(ctx.err("missing <osm> root element"));
                }
                break;
            }
            _ => (None, false),
        };
        if let Some(e) = start {
            let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
            match depth {
                0 => {
                    if name != "osm" || seen_root {
                        return Err(ctx.err(format!("expected a single <osm> root, found <{name}>")));
                    }
                    seen_root = true;
                    let attrs = ctx.attrs(&e)?;
                    if let Some(v) = attrs.get("version") {
                        if v != "0.6" {
                            return Err(Error::UnsupportedVersion(v.clone()));
                        }
                    }
                }
                1 => {
                    let attrs = ctx.attrs(&e)?;
                    let elem = match name.as_str() {
                        "node" => {
                            let lat: f64 = ctx.num(&attrs, "node", "lat")?;
                            let lon: f64 = ctx.num(&attrs, "node", "lon")?;
                            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                                return Err(ctx.err(format!("node coordinate ({lon}, {lat}) outside WGS84 bounds")));
                            }
                            Some(Open::Node(OsmNode {
                                id: ctx.num(&attrs, "node", "id")?,
                                lon,
                                lat,
                                tags: Tags::new(),
                            }))
                        }
                        "way" => Some(Open::Way(OsmWay {
                            id: ctx.num(&attrs, "way", "id")?,
                            nodes: Vec::new(),
                            tags: Tags::new(),
                        })),
                        "relation" => Some(Open::Relation(OsmRelation {
                            id: ctx.num(&attrs, "relation", "id")?,
                            members: Vec::new(),
                            tags: Tags::new(),
                        })),
                        "bounds" => {
                            graph.bounds = Some(BBox {
                                min_lon: ctx.num(&attrs, "bounds", "minlon")?,
                                min_lat: ctx.num(&attrs, "bounds", "minlat")?,
                                max_lon: ctx.num(&attrs, "bounds", "maxlon")?,
                                max_lat: ctx.num(&attrs, "bounds", "maxlat")?,
                            });
                            None
                        }
                        _ => None,
                    };
                    if is_empty {
                        if let Some(elem) = elem {
                            insert(&ctx, &mut graph, elem)?;
                        }
                    } else {
                        open = elem;
                    }
                }
                _ => {
                    if depth == 2 {
                        let attrs = ctx.attrs(&e)?;
                        child(&ctx, open.as_mut(), &name, &attrs)?;
                    }
                }
            }
            if !is_empty {
                depth += 1;
            }
        }
        buf.clear();
    }
    Ok(graph)
}

fn child(ctx: &Ctx<'_>, open: Option<&mut Open>, name: &str, attrs: &BTreeMap<String, String>) -> Result<()> {
    let Some(open) = open else { return Ok(()) };
    match (name, open) {
        ("tag", open) => {
            let k = ctx.get(attrs, "tag", "k")?.to_owned();
            let v = ctx.get(attrs, "tag", "v")?.to_owned();
            let tags = match open {
                Open::Node(n) => &mut n.tags,
                Open::Way(w) => &mut w.tags,
                Open::Relation(r) => &mut r.tags,
            };
            tags.insert(k, v);
        }
        ("nd", Open::Way(w)) => w.nodes.push(ctx.num(attrs, "nd", "ref")?),
        ("member", Open::Relation(r)) => {
            let kind = match ctx.get(attrs, "member", "type")? {
                "node" => MemberType::Node,
                "way" => MemberType::Way,
                "relation" => MemberType::Relation,
                other => return Err(ctx.err(format!("unknown member type {other:?}"))),
            };
            r.members.push(OsmMember {
                kind,
                id: ctx.num(attrs, "member", "ref")?,
                role: attrs.get("role").cloned().unwrap_or_default(),
            });
        }
        _ => {}
    }
    Ok(())
}

fn insert(ctx: &Ctx<'_>, graph: &mut OsmGraph, elem: Open) -> Result<()> {
    let dup = match elem {
        Open::Node(n) => graph.nodes.insert(n.id, n).map(|n| ("node", n.id)),
        Open::Way(w) => graph.ways.insert(w.id, w).map(|w| ("way", w.id)),
        Open::Relation(r) => graph.relations.insert(r.id, r).map(|r| ("relation", r.id)),
    };
    match dup {
        Some((kind, id)) => Err(ctx.err(format!("duplicate {kind} id {id}"))),
        None => Ok(()),
    }
}

fn write_tags(out: &mut String, tags: &Tags) {
    for (k, v) in tags {
        let _ = writeln!(out, "    <tag k=\"{}\" v=\"{}\"/>", escape(k.as_str()), escape(v.as_str()));
    }
}

/// Serializes a graph back to OSM XML. Coordinates use Rust's shortest
/// round-trip float formatting so re-parsing is lossless.
pub fn write_osm_xml(graph: &OsmGraph) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"planloc\">\n");
    if let Some(b) = graph.bounds {
        let _ = writeln!(
            out,
            "  <bounds minlat=\"{}\" minlon=\"{}\" maxlat=\"{}\" maxlon=\"{}\"/>",
            b.min_lat, b.min_lon, b.max_lat, b.max_lon
        );
    }
    for n in graph.nodes.values() {
        if n.tags.is_empty() {
            let _ = writeln!(out, "  <node id=\"{}\" lat=\"{}\" lon=\"{}\"/>", n.id, n.lat, n.lon);
        } else {
            let _ = writeln!(out, "  <node id=\"{}\" lat=\"{}\" lon=\"{}\">", n.id, n.lat, n.lon);
            write_tags(&mut out, &n.tags);
            out.push_str("  </node>\n");
        }
    }
    for w in graph.ways.values() {
        let _ = writeln!(out, "  <way id=\"{}\">", w.id);
        for r in &w.nodes {
            let _ = writeln!(out, "    <nd ref=\"{r}\"/>");
        }
        write_tags(&mut out, &w.tags);
        out.push_str("  </way>\n");
    }
    for r in graph.relations.values() {
        let _ = writeln!(out, "  <relation id=\"{}\">", r.id);
        for m in &r.members {
            let _ = writeln!(
                out,
                "    <member type=\"{}\" ref=\"{}\" role=\"{}\"/>",
                m.kind.as_str(),
                m.id,
                escape(m.role.as_str())
            );
        }
        write_tags(&mut out, &r.tags);
        out.push_str("  </relation>\n");
    }
    out.push_str("</osm>\n");
    out
}
