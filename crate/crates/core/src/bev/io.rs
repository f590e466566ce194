//! Column-feature ("PLCF") and BEV ("PLBV") exchange files.
//!
//! ```text
//! PLCF: magic | u16 version | u32 U | u32 V | u32 N | u32 S | f64 f | f64 cx
//!       | X: f32[U·V·N] | scores: f32[U·V·(S+1)]
//! PLBV: magic | u16 version | u32 L | u32 D | u32 N | f64 delta
//!       | T: f32[D·L·N] | C: f32[D·L]
//! ```
//! Little-endian throughout.

use std::io::{Read, Write};

use super::{BevGrid, ColumnFeatures};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const COLUMNS_MAGIC: &[u8; 4] = b"PLCF";
pub const COLUMNS_VERSION: u16 = 1;
pub const BEV_MAGIC: &[u8; 4] = b"PLBV";
pub const BEV_VERSION: u16 = 1;

pub fn write_column_features<W: Write>(c: &ColumnFeatures, w: W) -> Result<()> {
    c.validate()?;
    let mut w = ByteWriter::new(w);
    w.bytes(COLUMNS_MAGIC)?;
    w.u16(COLUMNS_VERSION)?;
    for v in [c.u, c.v, c.n, c.scales - 1] {
        w.u32(v as u32)?;
    }
    w.f64(c.f)?;
    w.f64(c.cx)?;
    w.f32s(&c.x)?;
    w.f32s(&c.scores)?;
    w.finish()?;
    Ok(())
}

pub fn read_column_features<R: Read>(r: R) -> Result<ColumnFeatures> {
    let mut r = ByteReader::from_reader(r, "column features")?;
    r.magic(COLUMNS_MAGIC)?;
    let version = r.u16()?;
    if version != COLUMNS_VERSION {
        return Err(Error::UnsupportedVersion(format!("column features version {version}")));
    }
    let (u, v, n, s) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let (f, cx) = (r.f64()?, r.f64()?);
    r.require(4 * u * v * (n + s + 1))?;
    let x = r.f32s(u * v * n)?;
    let scores = r.f32s(u * v * (s + 1))?;
    r.finish()?;
    let c = ColumnFeatures {
        u,
        v,
        n,
        scales: s + 1,
        f,
        cx,
        x,
        scores,
    };
    c.validate().map_err(|e| Error::Format(format!("column features: {e}")))?;
    Ok(c)
}

pub fn write_bev<W: Write>(b: &BevGrid, w: W) -> Result<()> {
    b.validate()?;
    let mut w = ByteWriter::new(w);
    w.bytes(BEV_MAGIC)?;
    w.u16(BEV_VERSION)?;
    for v in [b.l, b.d, b.n] {
        w.u32(v as u32)?;
    }
    w.f64(b.delta)?;
    w.f32s(&b.features)?;
    w.f32s(&b.confidence)?;
    w.finish()?;
    Ok(())
}

pub fn read_bev<R: Read>(r: R) -> Result<BevGrid> {
    let mut r = ByteReader::from_reader(r, "BEV")?;
    r.magic(BEV_MAGIC)?;
    let version = r.u16()?;
    if version != BEV_VERSION {
        return Err(Error::UnsupportedVersion(format!("BEV version {version}")));
    }
    let (l, d, n) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let delta = r.f64()?;
    r.require(4 * l * d * (n + 1))?;
    let features = r.f32s(l * d * n)?;
    let confidence = r.f32s(l * d)?;
    r.finish()?;
    let b = BevGrid {
        l,
        d,
        n,
        delta,
        features,
        confidence,
    };
    b.validate().map_err(|e| Error::Format(format!("BEV: {e}")))?;
    Ok(b)
}
