//! "PLTL" tile files.
//!
//! ```text
//! magic "PLTL" | u16 version | f64 origin.x | f64 origin.y | f64 delta
//! | u32 width | u32 height | f64 lon0 | f64 lat0 | [u8; 32] class table hash
//! | areas[W·H] | lines[W·H] | nodes[W·H]        (u8, row-major, south first)
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use super::MapRaster;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{Datum, GridSpec, Point2};
use crate::osm::ClassTable;

pub const TILE_MAGIC: &[u8; 4] = b"PLTL";
pub const TILE_VERSION: u16 = 1;

/// The tile was rasterized with a different class table than the caller's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTableMismatch {
    pub tile: String,
    pub current: String,
}

impl std::fmt::Display for ClassTableMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "tile class table {} differs from current {}",
            &self.tile[..12],
            &self.current[..12]
        )
    }
}

pub fn write_tile<W: Write>(raster: &MapRaster, w: W) -> Result<()> {
    let s = &raster.spec;
    let mut w = ByteWriter::new(w);
    w.bytes(TILE_MAGIC)?;
    w.u16(TILE_VERSION)?;
    w.f64(s.origin.x)?;
    w.f64(s.origin.y)?;
    w.f64(s.delta)?;
    w.u32(s.width as u32)?;
    w.u32(s.height as u32)?;
    w.f64(raster.datum.lon0)?;
    w.f64(raster.datum.lat0)?;
    w.bytes(&raster.class_table_hash)?;
    for plane in &raster.channels {
        w.bytes(plane)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_tile<R: Read>(r: R) -> Result<MapRaster> {
    let mut r = ByteReader::from_reader(r, "tile")?;
    r.magic(TILE_MAGIC)?;
    let version = r.u16()?;
    if version != TILE_VERSION {
        return Err(Error::UnsupportedVersion(format!("tile version {version}")));
    }
    let (ox, oy, delta) = (r.f64()?, r.f64()?, r.f64()?);
    let (width, height) = (r.u32()? as usize, r.u32()? as usize);
    let spec = GridSpec::new(Point2::new(ox, oy), delta, width, height)
        .map_err(|e| Error::Format(format!("tile header: {e}")))?;
    let datum = Datum::new(r.f64()?, r.f64()?).map_err(|e| Error::Format(format!("tile header: {e}")))?;
    let class_table_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n = spec.cell_count();
    r.require(3 * n)?;
    let mut plane = || r.take(n).map(<[u8]>::to_vec);
    let channels = [plane()?, plane()?, plane()?];
    r.finish()?;
    Ok(MapRaster {
        spec,
        datum,
        class_table_hash,
        channels,
    })
}

/// Reads a tile and compares its class-table hash against `table`.
pub fn read_tile_checked<R: Read>(r: R, table: &ClassTable) -> Result<(MapRaster, Option<ClassTableMismatch>)> {
    let raster = read_tile(r)?;
    let current = table.hash();
    let warning = (raster.class_table_hash != current).then(|| ClassTableMismatch {
        tile: hex::encode(raster.class_table_hash),
        current: hex::encode(current),
    });
    Ok((raster, warning))
}
