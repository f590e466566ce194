//! "PLNM" neural map exchange files.
//!
//! ```text
//! magic "PLNM" | u16 version | f64 origin.x | f64 origin.y | f64 delta
//! | u32 width | u32 height | u32 N
//! | F: f32[H·W·N]   row-major (south row first), channel-last
//! | Ω: f32[H·W]     row-major
//! ```
//! Little-endian throughout. Values are stored as-is; nothing is normalized.

use std::io::{Read, Write};

use super::{FeatureGrid, NeuralMap};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point2};

pub const NEURAL_MAP_MAGIC: &[u8; 4] = b"PLNM";
pub const NEURAL_MAP_VERSION: u16 = 1;

pub fn write_neural_map<W: Write>(map: &NeuralMap, w: W) -> Result<()> {
    let s = &map.spec;
    let f = &map.features;
    if f.width != s.width || f.height != s.height || map.omega.len() != s.cell_count() {
        return Err(Error::Format("neural map buffers disagree with its grid".into()));
    }
    let mut w = ByteWriter::new(w);
    w.bytes(NEURAL_MAP_MAGIC)?;
    w.u16(NEURAL_MAP_VERSION)?;
    w.f64(s.origin.x)?;
    w.f64(s.origin.y)?;
    w.f64(s.delta)?;
    w.u32(s.width as u32)?;
    w.u32(s.height as u32)?;
    w.u32(f.channels as u32)?;
    w.f32s(&f.data)?;
    w.f32s(&map.omega)?;
    w.finish()?;
    Ok(())
}

pub fn read_neural_map<R: Read>(r: R) -> Result<NeuralMap> {
    let mut r = ByteReader::from_reader(r, "neural map")?;
    r.magic(NEURAL_MAP_MAGIC)?;
    let version = r.u16()?;
    if version != NEURAL_MAP_VERSION {
        return Err(Error::UnsupportedVersion(format!("neural map version {version}")));
    }
    let (ox, oy, delta) = (r.f64()?, r.f64()?, r.f64()?);
    let (width, height, n) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if n == 0 {
        return Err(Error::Format("neural map has zero channels".into()));
    }
    let spec = GridSpec::new(Point2::new(ox, oy), delta, width, height)
        .map_err(|e| Error::Format(format!("neural map header: {e}")))?;
    let cells = spec.cell_count();
    r.require(4 * cells * (n + 1))?;
    let data = r.f32s(cells * n)?;
    let omega = r.f32s(cells)?;
    r.finish()?;
    if data.iter().chain(&omega).any(|x| !x.is_finite()) {
        return Err(Error::Format("neural map contains non-finite values".into()));
    }
    Ok(NeuralMap {
        spec,
        features: FeatureGrid {
            width,
            height,
            channels: n,
            data,
        },
        omega,
    })
}
