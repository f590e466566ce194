//! Rasterization of classified geometry into the 3-channel class raster.

mod tile;

pub use tile::{read_tile, read_tile_checked, write_tile, ClassTableMismatch, TILE_MAGIC, TILE_VERSION};

use sha2::{Digest, Sha256};

use crate::geometry::{Datum, GridSpec, Point2};
use crate::osm::{ClassTable, GeometryKind, MapGeometries};

pub const AREA: usize = 0;
pub const LINE: usize = 1;
pub const NODE: usize = 2;

/// Class-index raster: areas, lines and nodes at a fixed pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRaster {
    pub spec: GridSpec,
    pub datum: Datum,
    pub class_table_hash: [u8; 32],
    /// Row-major planes, row 0 southernmost.
    pub channels: [Vec<u8>; 3],
}

impl MapRaster {
    pub fn empty(spec: GridSpec, datum: Datum, class_table_hash: [u8; 32]) -> Self {
        let n = spec.cell_count();
        Self {
            spec,
            datum,
            class_table_hash,
            channels: [vec![0; n], vec![0; n], vec![0; n]],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.channels[channel][row * self.spec.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: u8) {
        self.channels[channel][row * self.spec.width + col] = v;
    }

    /// SHA-256 of the serialized tile.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_tile(self, &mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }

    /// Whether every index fits the class counts of `table`.
    pub fn validate(&self, table: &ClassTable) -> Result<(), String> {
        for kind in GeometryKind::ALL {
            let count = table.class_count(kind);
            if let Some(v) = self.channels[kind.channel()].iter().find(|&&v| v as usize >= count) {
                return Err(format!("{kind} index {v} exceeds class count {count}"));
            }
        }
        Ok(())
    }

    /// 8-bit grayscale view of one channel, north up. Class indices are
    /// stretched so the largest present index is white.
    pub fn channel_image(&self, channel: usize) -> image::GrayImage {
        let (w, h) = (self.spec.width, self.spec.height);
        let plane = &self.channels[channel];
        let max = plane.iter().copied().max().unwrap_or(0).max(1) as u32;
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            let row = h - 1 - y as usize;
            image::Luma([(plane[row * w + x as usize] as u32 * 255 / max) as u8])
        })
    }
}

#[derive(Debug, Clone)]
pub struct RasterOptions {
    pub datum: Datum,
    pub class_table_hash: [u8; 32],
    /// Line width in cells applied to every line class.
    pub line_width: u32,
    /// Per-class overrides of `line_width`.
    pub class_line_widths: Vec<(u8, u32)>,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            datum: Datum { lon0: 0.0, lat0: 0.0 },
            class_table_hash: ClassTable::default().hash(),
            line_width: 1,
            class_line_widths: Vec::new(),
        }
    }
}

impl RasterOptions {
    pub fn for_table(table: &ClassTable, datum: Datum) -> Self {
        Self {
            datum,
            class_table_hash: table.hash(),
            ..Self::default()
        }
    }

    fn width_of(&self, class: u8) -> u32 {
        self.class_line_widths
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(self.line_width, |&(_, w)| w)
            .max(1)
    }
}

pub fn rasterize(geoms: &MapGeometries, spec: &GridSpec) -> MapRaster {
    rasterize_with(geoms, spec, &RasterOptions::default())
}

/// Draws polygons (nonzero winding at cell centers), polylines (supercover
/// traces) and points. Within each channel elements are drawn by ascending
/// class index, so higher classes win overlaps.
pub fn rasterize_with(geoms: &MapGeometries, spec: &GridSpec, opts: &RasterOptions) -> MapRaster {
    let mut raster = MapRaster::empty(*spec, opts.datum, opts.class_table_hash);

    let mut polys: Vec<_> = geoms.polygons.iter().filter(|p| p.class != 0).collect();
    polys.sort_by_key(|p| p.class);
    for p in polys {
        let to_grid: Vec<(f64, f64)> = p.ring.iter().map(|&q| grid_xy(spec, q)).collect();
        fill_polygon(&to_grid, spec, |r, c| raster.set(AREA, r, c, p.class));
    }

    let mut lines: Vec<_> = geoms.polylines.iter().filter(|l| l.class != 0).collect();
    lines.sort_by_key(|l| l.class);
    for l in lines {
        let radius = (opts.width_of(l.class) as i64 - 1) / 2;
        let pts: Vec<(f64, f64)> = l.points.iter().map(|&q| grid_xy(spec, q)).collect();
        for seg in pts.windows(2) {
            supercover(seg[0], seg[1], spec, |r, c| {
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < spec.height && (cc as usize) < spec.width {
                            raster.set(LINE, rr as usize, cc as usize, l.class);
                        }
                    }
                }
            });
        }
    }

    let mut points: Vec<_> = geoms.points.iter().filter(|p| p.class != 0).collect();
    points.sort_by_key(|p| p.class);
    for p in points {
        if let Some((r, c)) = spec.cell_of(p.position) {
            raster.set(NODE, r, c, p.class);
        }
    }
    raster
}

/// Continuous (col, row) coordinates of a map point.
fn grid_xy(spec: &GridSpec, p: Point2) -> (f64, f64) {
    let (r, c) = spec.continuous_index(p);
    (c, r)
}

/// Scanline fill with the nonzero winding rule, sampling at cell centers.
/// Edges own the half-open span `[y_low, y_high)` so shared vertices are
/// counted once.
pub(crate) fn fill_polygon(ring: &[(f64, f64)], spec: &GridSpec, mut put: impl FnMut(usize, usize)) {
    if ring.len() < 2 {
        return;
    }
    let (ymin, ymax) = ring
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let r0 = ymin.ceil().max(0.0) as usize;
    let r1 = ymax.floor().min(spec.height as f64 - 1.0);
    if r1 < 0.0 {
        return;
    }
    let r1 = r1 as usize;
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for row in r0..=r1 {
        let y = row as f64;
        crossings.clear();
        for e in ring.windows(2) {
            let (a, b) = (e[0], e[1]);
            let dir = if a.1 <= y && y < b.1 {
                1
            } else if b.1 <= y && y < a.1 {
                -1
            } else {
                continue;
            };
            let x = a.0 + (y - a.1) / (b.1 - a.1) * (b.0 - a.0);
            crossings.push((x, dir));
        }
        crossings.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let mut winding = 0;
        for pair in crossings.windows(2) {
            winding += pair[0].1;
            if winding == 0 {
                continue;
            }
            let c0 = pair[0].0.ceil().max(0.0);
            let c1 = (pair[1].0.ceil() - 1.0).min(spec.width as f64 - 1.0);
            if c1 < c0 {
                continue;
            }
            for col in c0 as usize..=c1 as usize {
                put(row, col);
            }
        }
    }
}

/// Visits every cell whose closed square intersects the segment `a → b`,
/// given in continuous (col, row) coordinates.
pub(crate) fn supercover(a: (f64, f64), b: (f64, f64), spec: &GridSpec, mut put: impl FnMut(usize, usize)) {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (umin, umax) = (a.0.min(b.0), a.0.max(b.0));
    let c_lo = (umin - 0.5).ceil().max(0.0);
    let c_hi = (umax + 0.5).floor().min(w - 1.0);
    if c_hi < c_lo {
        return;
    }
    let du = b.0 - a.0;
    let v_at = |x: f64| a.1 + (x - a.0) / du * (b.1 - a.1);
    for col in c_lo as usize..=c_hi as usize {
        let (vlo, vhi) = if du == 0.0 {
            (a.1.min(b.1), a.1.max(b.1))
        } else {
            let x0 = (col as f64 - 0.5).max(umin);
            let x1 = (col as f64 + 0.5).min(umax);
            let (p, q) = (v_at(x0), v_at(x1));
            (p.min(q), p.max(q))
        };
        let r_lo = (vlo - 0.5).ceil().max(0.0);
        let r_hi = (vhi + 0.5).floor().min(h - 1.0);
        if r_hi < r_lo {
            continue;
        }
        for row in r_lo as usize..=r_hi as usize {
            put(row, col);
        }
    }
}
