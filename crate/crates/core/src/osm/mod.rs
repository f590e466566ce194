//! OpenStreetMap ingestion: XML parsing, Overpass fetching, tag
//! classification and conversion to local-frame geometry.

mod classes;
mod fetch;
mod geometries;
mod parse;

pub use classes::{classify, ClassRule, ClassTable, GeometryKind, Tags, ValuePattern};
pub use fetch::{
    cache_key, endpoint_from_env, fetch_overpass, overpass_query, OverpassClient, RetryPolicy, DEFAULT_ENDPOINT,
    ENDPOINT_ENV,
};
pub use geometries::{
    build_geometries, rect_ring, ElementType, GeometryReport, MapGeometries, PointFeature, Polygon, Polyline,
    SkippedElement,
};
pub use parse::{parse_osm_xml, write_osm_xml, BBox, MemberType, OsmGraph, OsmMember, OsmNode, OsmRelation, OsmWay};
