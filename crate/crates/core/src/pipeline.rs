//! End-to-end helpers shared by the command-line tool, tests and benches.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::geometry::{Datum, GridSpec, Pose2};
use crate::infer::{argmax_pose, covariance, local_modes};
use crate::mapenc::NeuralMap;
use crate::matcher::{pose_posterior, score_volume, Backend, LocationPrior, PoseVolume};
use crate::osm::{build_geometries, parse_osm_xml, ClassTable, GeometryReport};
use crate::raster::{rasterize_with, MapRaster, RasterOptions};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rasterizes an OSM XML document onto a square tile of `size_m` meters
/// centered on the document's extent.
pub fn rasterize_osm(
    document: &[u8],
    table: &ClassTable,
    gsd: f64,
    size_m: f64,
    line_width: u32,
) -> Result<(MapRaster, GeometryReport)> {
    let graph = parse_osm_xml(document)?;
    let extent = graph
        .extent()
        .ok_or_else(|| Error::Domain("OSM document has no nodes and no bounds".into()))?;
    let (lon0, lat0) = extent.center();
    let datum = Datum::new(lon0, lat0)?;
    let (geoms, report) = build_geometries(&graph, &datum, table)?;
    let spec = GridSpec::centered(size_m, gsd)?;
    let opts = RasterOptions {
        line_width,
        ..RasterOptions::for_table(table, datum)
    };
    Ok((rasterize_with(&geoms, &spec, &opts), report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeOptions {
    pub rotations: usize,
    pub backend: Backend,
    pub prior: Option<LocationPrior>,
    /// Covariance window (meters, radians).
    pub window: (f64, f64),
    pub top_k: usize,
    /// Mode separation (meters, radians).
    pub separation: (f64, f64),
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            rotations: 64,
            backend: Backend::Fourier,
            prior: None,
            window: (2.0, 10f64.to_radians()),
            top_k: 3,
            separation: (4.0, std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub pose: Pose2,
    pub probability: f64,
}

/// Summary of a posterior: the estimate, its spread and competing modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub pose: Pose2,
    pub probability: f64,
    /// Rows/columns (x, y, θ); `None` when the window holds no mass.
    pub covariance: Option<[[f64; 3]; 3]>,
    pub modes: Vec<Mode>,
}

pub fn summarize(posterior: &PoseVolume, opts: &LocalizeOptions) -> Result<PoseRecord> {
    let (pose, probability) = argmax_pose(posterior)?;
    let covariance = match covariance(posterior, &pose, opts.window) {
        Ok(c) => Some(c),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let modes = local_modes(posterior, opts.top_k, opts.separation)?
        .into_iter()
        .map(|(pose, probability)| Mode { pose, probability })
        .collect();
    Ok(PoseRecord {
        pose,
        probability,
        covariance,
        modes,
    })
}

/// Scores, normalizes and summarizes one observation.
pub fn localize(map: &NeuralMap, bev: &BevGrid, opts: &LocalizeOptions) -> Result<(PoseVolume, PoseRecord)> {
    let scores = score_volume(map, bev, opts.rotations, opts.backend)?;
    let posterior = pose_posterior(&scores, &map.omega, opts.prior)?;
    let record = summarize(&posterior, opts)?;
    Ok((posterior, record))
}
