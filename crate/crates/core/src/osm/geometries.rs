//! Conversion of classified OSM elements into local-frame geometries.

use serde::Serialize;

use super::{ClassTable, GeometryKind, MemberType, OsmGraph, OsmWay, Tags};
use crate::error::Result;
use crate::geometry::{wgs84_to_local, Datum, Point2};

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub class: u8,
    /// Closed ring: first point equals last, at least 4 vertices.
    pub ring: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub class: u8,
    pub points: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFeature {
    pub class: u8,
    pub position: Point2,
}

/// Classified geometry in local meters, one list per raster channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapGeometries {
    pub polygons: Vec<Polygon>,
    pub polylines: Vec<Polyline>,
    pub points: Vec<PointFeature>,
}

impl MapGeometries {
    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty() && self.polylines.is_empty() && self.points.is_empty()
    }

    pub fn all_points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.polygons
            .iter()
            .flat_map(|p| p.ring.iter().copied())
            .chain(self.polylines.iter().flat_map(|l| l.points.iter().copied()))
            .chain(self.points.iter().map(|p| p.position))
    }

    /// Adds a closed rectangle `[x0, x1] × [y0, y1]` wound counter-clockwise.
    pub fn push_rect(&mut self, class: u8, x0: f64, y0: f64, x1: f64, y1: f64) {
        self.polygons.push(Polygon {
            class,
            ring: rect_ring(x0, y0, x1, y1),
        });
    }
}

pub fn rect_ring(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    vec![
        Point2::new(x0, y0),
        Point2::new(x1, y0),
        Point2::new(x1, y1),
        Point2::new(x0, y1),
        Point2::new(x0, y0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElementType {
    Node,
    Way,
    Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedElement {
    pub element: ElementType,
    pub id: i64,
    pub reason: String,
}

/// Bookkeeping for elements that did not become geometry.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GeometryReport {
    pub skipped: Vec<SkippedElement>,
    /// Tagged elements that no rule matched.
    pub unclassified: usize,
}

impl GeometryReport {
    fn skip(&mut self, element: ElementType, id: i64, reason: impl Into<String>) {
        self.skipped.push(SkippedElement {
            element,
            id,
            reason: reason.into(),
        });
    }
}

fn is_building(tags: &Tags) -> bool {
    tags.get("building").is_some_and(|v| v != "no")
}

fn resolve(graph: &OsmGraph, datum: &Datum, ids: &[i64]) -> std::result::Result<Vec<Point2>, String> {
    ids.iter()
        .map(|id| {
            let n = graph.nodes.get(id).ok_or_else(|| format!("references missing node {id}"))?;
            wgs84_to_local(datum, n.lon, n.lat).map_err(|e| e.to_string())
        })
        .collect()
}

/// Chains way node lists into closed rings. Returns `None` when the ways do
/// not close up.
fn assemble_rings(ways: &[&OsmWay]) -> Option<Vec<Vec<i64>>> {
    let mut pending: Vec<Vec<i64>> = ways.iter().map(|w| w.nodes.clone()).collect();
    let mut rings = Vec::new();
    while let Some(mut current) = pending.pop() {
        if current.len() < 2 {
            return None;
        }
        while current.first() != current.last() {
            let tail = *current.last()?;
            let pos = pending
                .iter()
                .position(|w| w.first() == Some(&tail) || w.last() == Some(&tail))?;
            let mut next = pending.swap_remove(pos);
            if next.first() != Some(&tail) {
                next.reverse();
            }
            current.extend_from_slice(&next[1..]);
        }
        if current.len() < 4 {
            return None;
        }
        rings.push(current);
    }
    Some(rings)
}

/// Classifies every element of `graph` and projects it around `datum`.
///
/// Closed ways with an area class become polygons (buildings also emit an
/// outline polyline), ways with a line class become polylines and tagged
/// nodes become points. Multipolygon relations are accepted when their outer
/// members chain into exactly one ring and there are no inner members.
pub fn build_geometries(graph: &OsmGraph, datum: &Datum, table: &ClassTable) -> Result<(MapGeometries, GeometryReport)> {
    let mut geoms = MapGeometries::default();
    let mut report = GeometryReport::default();
    let outline = table.index_of(GeometryKind::Line, "building_outline");

    let emit_area = |geoms: &mut MapGeometries, class: u8, ring: Vec<Point2>, building: bool| {
        if building {
            if let Some(o) = outline {
                geoms.polylines.push(Polyline {
                    class: o,
                    points: ring.clone(),
                });
            }
        }
        geoms.polygons.push(Polygon { class, ring });
    };

    for way in graph.ways.values() {
        let Some((kind, class)) = table.classify_as(&way.tags, &[GeometryKind::Area, GeometryKind::Line]) else {
            if !way.tags.is_empty() {
                report.unclassified += 1;
            }
            continue;
        };
        let pts = match resolve(graph, datum, &way.nodes) {
            Ok(p) => p,
            Err(reason) => {
                report.skip(ElementType::Way, way.id, reason);
                continue;
            }
        };
        match kind {
            GeometryKind::Area if way.is_closed() => emit_area(&mut geoms, class, pts, is_building(&way.tags)),
            GeometryKind::Area => report.skip(ElementType::Way, way.id, "area class on an unclosed way"),
            _ if pts.len() < 2 => report.skip(ElementType::Way, way.id, "line with fewer than 2 nodes"),
            _ => geoms.polylines.push(Polyline { class, points: pts }),
        }
    }

    for rel in graph.relations.values() {
        if rel.tags.get("type").map(String::as_str) != Some("multipolygon") {
            continue;
        }
        let Some((_, class)) = table.classify_as(&rel.tags, &[GeometryKind::Area]) else {
            if rel.tags.len() > 1 {
                report.unclassified += 1;
            }
            continue;
        };
        if rel.members.iter().any(|m| m.role == "inner") {
            report.skip(ElementType::Relation, rel.id, "multipolygon with inner rings");
            continue;
        }
        let mut outers = Vec::new();
        let mut missing = None;
        for m in rel.members.iter().filter(|m| m.kind == MemberType::Way) {
            match graph.ways.get(&m.id) {
                Some(w) => outers.push(w),
                None => missing = Some(m.id),
            }
        }
        if let Some(id) = missing {
            report.skip(ElementType::Relation, rel.id, format!("references missing way {id}"));
            continue;
        }
        match assemble_rings(&outers).as_deref() {
            Some([ring]) => match resolve(graph, datum, ring) {
                Ok(pts) => emit_area(&mut geoms, class, pts, is_building(&rel.tags)),
                Err(reason) => report.skip(ElementType::Relation, rel.id, reason),
            },
            Some(rings) if rings.len() > 1 => {
                report.skip(ElementType::Relation, rel.id, format!("{} outer rings", rings.len()))
            }
            _ => report.skip(ElementType::Relation, rel.id, "outer ways do not form a closed ring"),
        }
    }

    for node in graph.nodes.values() {
        if node.tags.is_empty() {
            continue;
        }
        match table.classify_as(&node.tags, &[GeometryKind::Node]) {
            Some((_, class)) => match wgs84_to_local(datum, node.lon, node.lat) {
                Ok(position) => geoms.points.push(PointFeature { class, position }),
                Err(e) => report.skip(ElementType::Node, node.id, e.to_string()),
            },
            None => report.unclassified += 1,
        }
    }
    Ok((geoms, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::parse_osm_xml;

    fn table() -> ClassTable {
        ClassTable::default()
    }

    #[test]
    fn building_emits_area_and_outline() {
        let doc = br#"<osm>
            <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0.0001"/>
            <node id="3" lat="0.0001" lon="0.0001"/><node id="4" lat="0.0001" lon="0"/>
            <way id="7"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/>
              <tag k="building" v="yes"/></way></osm>"#;
        let g = parse_osm_xml(doc).unwrap();
        let (geoms, report) = build_geometries(&g, &Datum::new(0.0, 0.0).unwrap(), &table()).unwrap();
        let t = table();
        assert_eq!(geoms.polygons.len(), 1);
        assert_eq!(geoms.polygons[0].class, t.index_of(GeometryKind::Area, "building").unwrap());
        assert_eq!(geoms.polygons[0].ring.len(), 5);
        assert_eq!(geoms.polylines.len(), 1);
        assert_eq!(geoms.polylines[0].class, t.index_of(GeometryKind::Line, "building_outline").unwrap());
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn tree_node_becomes_point() {
        let doc = br#"<osm><node id="1" lat="0.0001" lon="0.0002"><tag k="natural" v="tree"/></node></osm>"#;
        let g = parse_osm_xml(doc).unwrap();
        let (geoms, _) = build_geometries(&g, &Datum::new(0.0, 0.0).unwrap(), &table()).unwrap();
        assert_eq!(geoms.points.len(), 1);
        assert_eq!(geoms.points[0].class, table().index_of(GeometryKind::Node, "tree").unwrap());
        assert!((geoms.points[0].position.x - 22.26).abs() < 0.01);
    }

    #[test]
    fn unclosed_area_is_reported() {
        let doc = br#"<osm>
            <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0.0001"/><node id="3" lat="0.0001" lon="0.0001"/>
            <way id="9"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="landuse" v="grass"/></way>
            <way id="10"><nd ref="1"/><nd ref="5"/><tag k="highway" v="service"/></way></osm>"#;
        let g = parse_osm_xml(doc).unwrap();
        let (geoms, report) = build_geometries(&g, &Datum::new(0.0, 0.0).unwrap(), &table()).unwrap();
        assert!(geoms.is_empty());
        let ids: Vec<i64> = report.skipped.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![9, 10]);
    }

    #[test]
    fn multipolygon_from_two_ways() {
        let doc = br#"<osm>
            <node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0.0001"/>
            <node id="3" lat="0.0001" lon="0.0001"/><node id="4" lat="0.0001" lon="0"/>
            <way id="1"><nd ref="1"/><nd ref="2"/><nd ref="3"/></way>
            <way id="2"><nd ref="1"/><nd ref="4"/><nd ref="3"/></way>
            <relation id="5"><member type="way" ref="1" role="outer"/><member type="way" ref="2" role="outer"/>
              <tag k="type" v="multipolygon"/><tag k="leisure" v="park"/></relation>
            <relation id="6"><member type="way" ref="1" role="outer"/><member type="way" ref="2" role="inner"/>
              <tag k="type" v="multipolygon"/><tag k="leisure" v="park"/></relation></osm>"#;
        let g = parse_osm_xml(doc).unwrap();
        let (geoms, report) = build_geometries(&g, &Datum::new(0.0, 0.0).unwrap(), &table()).unwrap();
        assert_eq!(geoms.polygons.len(), 1);
        assert_eq!(geoms.polygons[0].ring.len(), 5);
        assert_eq!(geoms.polygons[0].ring.first(), geoms.polygons[0].ring.last());
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].id, 6);
    }
}
