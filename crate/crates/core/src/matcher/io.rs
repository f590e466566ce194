//! "PLPV" pose volume dumps.
//!
//! ```text
//! magic "PLPV" | u16 version | u32 W | u32 H | u32 K
//! | f64 origin.x | f64 origin.y | f64 delta | u8 kind (0 log-score, 1 probability)
//! | values: f32[K·H·W]   heading-major, then rows south→north, then columns
//! ```

use std::io::{Read, Write};

use super::{PoseVolume, VolumeKind};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point2};

pub const VOLUME_MAGIC: &[u8; 4] = b"PLPV";
pub const VOLUME_VERSION: u16 = 1;

pub fn write_volume<W: Write>(v: &PoseVolume, w: W) -> Result<()> {
    if v.values.len() != v.spec.cell_count() * v.k {
        return Err(Error::Format("volume buffer disagrees with its shape".into()));
    }
    let mut w = ByteWriter::new(w);
    w.bytes(VOLUME_MAGIC)?;
    w.u16(VOLUME_VERSION)?;
    w.u32(v.spec.width as u32)?;
    w.u32(v.spec.height as u32)?;
    w.u32(v.k as u32)?;
    w.f64(v.spec.origin.x)?;
    w.f64(v.spec.origin.y)?;
    w.f64(v.spec.delta)?;
    w.u8(match v.kind {
        VolumeKind::LogScore => 0,
        VolumeKind::Probability => 1,
    })?;
    w.f32s(&v.values)?;
    w.finish()?;
    Ok(())
}

pub fn read_volume<R: Read>(r: R) -> Result<PoseVolume> {
    let mut r = ByteReader::from_reader(r, "pose volume")?;
    r.magic(VOLUME_MAGIC)?;
    let version = r.u16()?;
    if version != VOLUME_VERSION {
        return Err(Error::UnsupportedVersion(format!("pose volume version {version}")));
    }
    let (w, h, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let (ox, oy, delta) = (r.f64()?, r.f64()?, r.f64()?);
    let kind = match r.u8()? {
        0 => VolumeKind::LogScore,
        1 => VolumeKind::Probability,
        other => return Err(Error::Format(format!("unknown volume kind {other}"))),
    };
    if k == 0 {
        return Err(Error::Format("pose volume has zero rotations".into()));
    }
    let spec = GridSpec::new(Point2::new(ox, oy), delta, w, h)
        .map_err(|e| Error::Format(format!("pose volume header: {e}")))?;
    let values = r.f32s(w * h * k)?;
    r.finish()?;
    Ok(PoseVolume { spec, k, kind, values })
}
