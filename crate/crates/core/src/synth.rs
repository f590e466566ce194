//! Synthetic worlds, rendered BEV observations and a literal brute-force
//! localizer used as ground truth by the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::geometry::{BevPoint, Datum, GridSpec, Point2, Pose2};
use crate::mapenc::NeuralMap;
use crate::matcher::{PoseVolume, VolumeKind};
use crate::osm::{rect_ring, ClassTable, GeometryKind, MapGeometries, PointFeature, Polyline};
use crate::raster::{rasterize_with, MapRaster, RasterOptions};

/// Parameters of a generated city-block world. Readable from TOML; every
/// key is optional:
///
/// ```toml
/// extent_m = 128.0          # side of the square map
/// delta = 0.5               # meters per cell
/// block_size = 32.0         # mean road spacing
/// road_width_cells = 5
/// building_density = 0.6    # probability that a lot holds a building
/// park_density = 0.2        # probability that a free lot is green space
/// tree_density = 0.004      # trees per square meter
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub extent_m: f64,
    pub delta: f64,
    pub block_size: f64,
    pub road_width_cells: u32,
    pub building_density: f64,
    pub park_density: f64,
    pub tree_density: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            extent_m: 128.0,
            delta: 0.5,
            block_size: 32.0,
            road_width_cells: 5,
            building_density: 0.6,
            park_density: 0.2,
            tree_density: 0.004,
        }
    }
}

impl WorldSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: WorldSpec = toml::from_str(text).map_err(|e| Error::Config(format!("world spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.extent_m > 0.0 && self.delta > 0.0 && self.block_size > 0.0) {
            return Err(Error::Config("world extent, pitch and block size must be positive".into()));
        }
        if !unit(self.building_density) || !unit(self.park_density) || !(self.tree_density >= 0.0) {
            return Err(Error::Config("densities must be non-negative (lot densities at most 1)".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::centered(self.extent_m, self.delta)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub geometries: MapGeometries,
    pub raster: MapRaster,
}

fn class(table: &ClassTable, kind: GeometryKind, name: &str) -> Result<u8> {
    table
        .index_of(kind, name)
        .ok_or_else(|| Error::Config(format!("class table lacks {name}")))
}

/// Cut points of a jittered road grid over `[-half, half]`.
fn road_positions(rng: &mut ChaCha8Rng, half: f64, block: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = -half + block * rng.random_range(0.3..1.0);
    while p < half {
        out.push(p);
        p += block * rng.random_range(0.7..1.3);
    }
    out
}

/// Deterministic city-block world: a jittered road grid, rectangular
/// buildings with outlines, green lots and trees.
pub fn gen_world(seed: u64, spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let table = ClassTable::default();
    let grid = spec.grid()?;
    let road = class(&table, GeometryKind::Line, "road")?;
    let building = class(&table, GeometryKind::Area, "building")?;
    let outline = class(&table, GeometryKind::Line, "building_outline")?;
    let greens = [
        class(&table, GeometryKind::Area, "grass")?,
        class(&table, GeometryKind::Area, "park")?,
    ];
    let tree = class(&table, GeometryKind::Node, "tree")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = spec.extent_m / 2.0;
    let xs = road_positions(&mut rng, half, spec.block_size);
    let ys = road_positions(&mut rng, half, spec.block_size);
    let mut g = MapGeometries::default();
    for &x in &xs {
        g.polylines.push(Polyline {
            class: road,
            points: vec![Point2::new(x, -half), Point2::new(x, half)],
        });
    }
    for &y in &ys {
        g.polylines.push(Polyline {
            class: road,
            points: vec![Point2::new(-half, y), Point2::new(half, y)],
        });
    }

    let setback = 0.5 * spec.road_width_cells as f64 * spec.delta + 1.5;
    let bounds = |v: &[f64]| {
        let mut b = vec![-half - setback];
        b.extend_from_slice(v);
        b.push(half + setback);
        b
    };
    let (bx, by) = (bounds(&xs), bounds(&ys));
    let mut footprints: Vec<[f64; 4]> = Vec::new();
    for wy in by.windows(2) {
        for wx in bx.windows(2) {
            let (x0, x1) = (wx[0] + setback, wx[1] - setback);
            let (y0, y1) = (wy[0] + setback, wy[1] - setback);
            if x1 - x0 < 4.0 || y1 - y0 < 4.0 {
                continue;
            }
            let nx = if x1 - x0 >= 14.0 { 2 } else { 1 };
            let ny = if y1 - y0 >= 14.0 { 2 } else { 1 };
            let (lw, lh) = ((x1 - x0) / nx as f64, (y1 - y0) / ny as f64);
            for iy in 0..ny {
                for ix in 0..nx {
                    let (lx, ly) = (x0 + ix as f64 * lw, y0 + iy as f64 * lh);
                    let u: f64 = rng.random();
                    let inset: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.5..2.5));
                    let r = [lx + inset[0], ly + inset[1], lx + lw - inset[2], ly + lh - inset[3]];
                    if r[2] - r[0] < 2.0 || r[3] - r[1] < 2.0 {
                        continue;
                    }
                    if u < spec.building_density {
                        g.push_rect(building, r[0], r[1], r[2], r[3]);
                        g.polylines.push(Polyline {
                            class: outline,
                            points: rect_ring(r[0], r[1], r[2], r[3]),
                        });
                        footprints.push(r);
                    } else if u < spec.building_density + (1.0 - spec.building_density) * spec.park_density {
                        g.push_rect(greens[(u * 1e6) as usize % 2], r[0], r[1], r[2], r[3]);
                    }
                }
            }
        }
    }

    let trees = (spec.tree_density * spec.extent_m * spec.extent_m).round() as usize;
    for _ in 0..trees {
        let p = Point2::new(rng.random_range(-half..half), rng.random_range(-half..half));
        if footprints.iter().any(|r| p.x >= r[0] && p.x <= r[2] && p.y >= r[1] && p.y <= r[3]) {
            continue;
        }
        g.points.push(PointFeature { class: tree, position: p });
    }

    let mut opts = RasterOptions::for_table(&table, Datum { lon0: 0.0, lat0: 0.0 });
    opts.class_line_widths.push((road, spec.road_width_cells));
    let raster = rasterize_with(&g, &grid, &opts);
    Ok(World { geometries: g, raster })
}

/// Shape of a rendered observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub l: usize,
    pub d: usize,
    pub delta: f64,
    /// Horizontal half field of view, radians.
    pub half_angle: f64,
}

impl Default for BevSpec {
    fn default() -> Self {
        Self {
            l: 64,
            d: 64,
            delta: 0.5,
            half_angle: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Feature noise in multiples of the map's feature standard deviation and
/// the probability of dropping a visible cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationNoise {
    pub sigma_n: f64,
    pub dropout: f64,
}

/// Population standard deviation over every feature value.
pub fn feature_std(map: &NeuralMap) -> f64 {
    let n = map.features.data.len().max(1) as f64;
    let mean = map.features.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = map.features.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Bilinear sample with zero padding; `None` outside the cell-center hull.
fn sample_map(map: &NeuralMap, p: Point2, out: &mut [f64]) -> bool {
    let g = &map.spec;
    let r = (p.y - g.origin.y) / g.delta;
    let c = (p.x - g.origin.x) / g.delta;
    if !(r >= 0.0 && c >= 0.0 && r <= (g.height - 1) as f64 && c <= (g.width - 1) as f64) {
        return false;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    for (rr, wr) in [(r0, 1.0 - fr), (r0 + 1, fr)] {
        for (cc, wc) in [(c0, 1.0 - fc), (c0 + 1, fc)] {
            let w = wr * wc;
            if w == 0.0 {
                continue;
            }
            for (o, &f) in out.iter_mut().zip(map.features.cell(rr, cc)) {
                *o += w * f as f64;
            }
        }
    }
    true
}

/// Renders the BEV a camera at `gt` would observe of `map`: features are
/// bilinear map samples plus seeded Gaussian noise, confidence is the view
/// frustum minus randomly dropped cells and cells off the map.
pub fn render_observation(
    map: &NeuralMap,
    gt: &Pose2,
    bev: BevSpec,
    noise: ObservationNoise,
    seed: u64,
) -> Result<BevGrid> {
    if bev.l == 0 || bev.d == 0 || !(bev.delta > 0.0) {
        return Err(Error::Domain("BEV shape must be non-empty with positive pitch".into()));
    }
    if !(noise.sigma_n >= 0.0) || !(0.0..=1.0).contains(&noise.dropout) {
        return Err(Error::Domain("noise must be non-negative and dropout a probability".into()));
    }
    let n = map.n();
    let mut out = BevGrid::zeros(bev.l, bev.d, n, bev.delta);
    let std = noise.sigma_n * feature_std(map);
    let gauss = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tan = bev.half_angle.tan();
    let mut f = vec![0.0; n];
    for d in 0..bev.d {
        for l in 0..bev.l {
            let p = BevPoint::new((l as f64 - (bev.l as f64 - 1.0) / 2.0) * bev.delta, (d + 1) as f64 * bev.delta);
            if p.lateral.abs() > p.forward * tan + 1e-9 {
                continue;
            }
            if !sample_map(map, gt.transform_point(p), &mut f) {
                continue;
            }
            if noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout {
                continue;
            }
            let i = d * bev.l + l;
            out.confidence[i] = 1.0;
            for (o, &v) in out.features[i * n..(i + 1) * n].iter_mut().zip(&f) {
                let e = if std > 0.0 { gauss.sample(&mut rng) } else { 0.0 };
                *o = (v + e) as f32;
            }
        }
    }
    Ok(out)
}

/// Literal score evaluation: every heading, every cell, every BEV cell.
/// Cost is `O(W·H·K·L·D·N)`; keep instances small.
pub fn oracle_scores(map: &NeuralMap, t: &BevGrid, k: usize) -> Result<PoseVolume> {
    if k == 0 || t.n != map.n() {
        return Err(Error::Domain("oracle needs K ≥ 1 and matching channel counts".into()));
    }
    let g = map.spec;
    let mut vol = PoseVolume::zeros(g, k, VolumeKind::LogScore);
    let z = t.confidence.iter().filter(|&&c| c > 0.0).count();
    if z == 0 {
        return Ok(vol);
    }
    let n = t.n;
    let mut f = vec![0.0f64; n];
    for kk in 0..k {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * kk as f64 / k as f64;
        let (s, c) = theta.sin_cos();
        for row in 0..g.height {
            for col in 0..g.width {
                let x = g.origin.x + col as f64 * g.delta;
                let y = g.origin.y + row as f64 * g.delta;
                let mut acc = 0.0;
                for d in 0..t.d {
                    for l in 0..t.l {
                        let conf = t.confidence[d * t.l + l];
                        if conf <= 0.0 {
                            continue;
                        }
                        let lat = (l as f64 - (t.l as f64 - 1.0) / 2.0) * t.delta;
                        let fwd = (d + 1) as f64 * t.delta;
                        let qx = x + fwd * c + lat * s;
                        let qy = y + fwd * s - lat * c;
                        let r = (qy - g.origin.y) / g.delta;
                        let cc = (qx - g.origin.x) / g.delta;
                        f.iter_mut().for_each(|v| *v = 0.0);
                        let (r0, c0) = (r.floor(), cc.floor());
                        let (fr, fc) = (r - r0, cc - c0);
                        for (dr, wr) in [(0i64, 1.0 - fr), (1, fr)] {
                            for (dc, wc) in [(0i64, 1.0 - fc), (1, fc)] {
                                let (ri, ci) = (r0 as i64 + dr, c0 as i64 + dc);
                                if ri < 0 || ci < 0 || ri >= g.height as i64 || ci >= g.width as i64 {
                                    continue;
                                }
                                let w = wr * wc;
                                let cell = map.features.cell(ri as usize, ci as usize);
                                for ch in 0..n {
                                    f[ch] += w * cell[ch] as f64;
                                }
                            }
                        }
                        let feat = &t.features[(d * t.l + l) * n..(d * t.l + l + 1) * n];
                        let mut dot = 0.0;
                        for ch in 0..n {
                            dot += f[ch] * (feat[ch] as f64 * conf as f64);
                        }
                        acc += dot;
                    }
                }
                vol.values[(kk * g.height + row) * g.width + col] = (acc / z as f64) as f32;
            }
        }
    }
    Ok(vol)
}

/// Oracle scores and the pose of their largest bin (ties to the smallest
/// row, column, heading).
pub fn oracle_localize(map: &NeuralMap, t: &BevGrid, k: usize) -> Result<(Pose2, PoseVolume)> {
    let vol = oracle_scores(map, t, k)?;
    let (row, col, kk) = crate::infer::argmax_bin(&vol);
    Ok((vol.pose_of(kk, row, col), vol))
}

/// A grid-aligned pose on a rotation bin, on a cell with zero location
/// prior and at least `margin_m` from the map border.
pub fn random_free_pose<R: Rng>(map: &NeuralMap, k: usize, margin_m: f64, rng: &mut R) -> Result<Pose2> {
    let g = map.spec;
    let m = (margin_m / g.delta).ceil() as usize;
    if 2 * m >= g.width || 2 * m >= g.height || k == 0 {
        return Err(Error::Domain("margin leaves no room for a pose".into()));
    }
    for _ in 0..100_000 {
        let row = rng.random_range(m..g.height - m);
        let col = rng.random_range(m..g.width - m);
        if map.omega_at(row, col) < 0.0 {
            continue;
        }
        let kk = rng.random_range(0..k);
        let c = g.cell_center(row, col);
        return Ok(Pose2::new(c.x, c.y, crate::matcher::rotation_angle(kk, k)));
    }
    Err(Error::Degenerate("no unblocked cell found".into()))
}
