//! Exhaustive 3-DoF template matching and the pose posterior.
//!
//! A pose bin `(row, col, k)` places the camera at the center of map cell
//! `(row, col)` with heading `θ_k = −π + 2πk/K`. Its score is the mean over
//! confident BEV cells of `F(ξ(p))ᵀ (T⊙C)(p)`, with `F` sampled bilinearly
//! and zero outside the map.

mod fourier;
mod io;

pub use fourier::Correlator;
pub use io::{read_volume, write_volume, VOLUME_MAGIC, VOLUME_VERSION};

use std::f64::consts::PI;

use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Point2, Pose2};
use crate::mapenc::{FeatureGrid, NeuralMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    LogScore,
    Probability,
}

/// Values over `K` headings × map cells, stored `[k][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVolume {
    pub spec: GridSpec,
    pub k: usize,
    pub kind: VolumeKind,
    pub values: Vec<f32>,
}

/// Heading of rotation bin `k` out of `count`.
pub fn rotation_angle(k: usize, count: usize) -> f64 {
    -PI + 2.0 * PI * k as f64 / count as f64
}

impl PoseVolume {
    pub fn zeros(spec: GridSpec, k: usize, kind: VolumeKind) -> Self {
        Self {
            spec,
            k,
            kind,
            values: vec![0.0; spec.cell_count() * k],
        }
    }

    pub fn theta(&self, k: usize) -> f64 {
        rotation_angle(k, self.k)
    }

    /// Angular bin width.
    pub fn theta_step(&self) -> f64 {
        2.0 * PI / self.k as f64
    }

    pub fn index(&self, k: usize, row: usize, col: usize) -> usize {
        (k * self.spec.height + row) * self.spec.width + col
    }

    pub fn get(&self, k: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(k, row, col)] as f64
    }

    pub fn slab(&self, k: usize) -> &[f32] {
        let n = self.spec.cell_count();
        &self.values[k * n..(k + 1) * n]
    }

    /// Decomposes a flat index into `(k, row, col)`.
    pub fn unravel(&self, i: usize) -> (usize, usize, usize) {
        let n = self.spec.cell_count();
        let (k, rem) = (i / n, i % n);
        (k, rem / self.spec.width, rem % self.spec.width)
    }

    pub fn pose_of(&self, k: usize, row: usize, col: usize) -> Pose2 {
        let c = self.spec.cell_center(row, col);
        Pose2::new(c.x, c.y, self.theta(k))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// Sum over headings, `height × width`.
    pub fn theta_marginal(&self) -> Vec<f64> {
        let n = self.spec.cell_count();
        let mut out = vec![0.0; n];
        for k in 0..self.k {
            for (o, &v) in out.iter_mut().zip(self.slab(k)) {
                *o += v as f64;
            }
        }
        out
    }

    pub fn check_probability(&self, tol: f64) -> Result<()> {
        if self.kind != VolumeKind::Probability {
            return Err(Error::Config("expected a probability volume".into()));
        }
        if self.values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("probability volume has negative or non-finite entries".into()));
        }
        let s = self.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Domain(format!("probability volume sums to {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Naive,
    Fourier,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Backend::Naive),
            "fourier" => Ok(Backend::Fourier),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotateMode {
    /// Each output cell samples the BEV bilinearly at its back-rotated
    /// position.
    Interpolate,
    /// Each BEV cell is distributed onto its four nearest map cells with
    /// bilinear weights (the adjoint of sampling the map).
    Splat,
}

/// Template rotated onto the map lattice around the camera cell.
/// Offsets run over `[−radius, radius]²`; buffers are row-major with row
/// index `dr + radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedTemplate {
    pub radius: usize,
    pub n: usize,
    /// Rotated `T⊙C`, `(2r+1)² × N`.
    pub weighted: Vec<f64>,
    /// Rotated `C`, `(2r+1)²`.
    pub weight: Vec<f64>,
}

impl RotatedTemplate {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dr: i64, dc: i64) -> (&[f64], f64) {
        let s = self.side() as i64;
        let i = ((dr + self.radius as i64) * s + dc + self.radius as i64) as usize;
        (&self.weighted[i * self.n..(i + 1) * self.n], self.weight[i])
    }
}

/// Offset radius (in map cells) that contains every splatted BEV cell.
pub fn template_radius(bev: &BevGrid, map_delta: f64) -> usize {
    let mut r: f64 = 0.0;
    for (l, d) in [(0, 0), (bev.l - 1, 0), (0, bev.d - 1), (bev.l - 1, bev.d - 1)] {
        let p = bev.point(l, d);
        r = r.max(p.lateral.hypot(p.forward));
    }
    (r / map_delta).ceil() as usize + 1
}

fn check_pitch(bev: &BevGrid, map_delta: f64) -> Result<()> {
    if ((bev.delta - map_delta) / map_delta).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "BEV pitch {} differs from map pitch {map_delta}",
            bev.delta
        )));
    }
    Ok(())
}

/// Offset (rows, cols) of BEV cell `(l, d)` under heading `(sin θ, cos θ)`.
#[inline]
fn rotated_offset(bev: &BevGrid, l: usize, d: usize, s: f64, c: f64, delta: f64) -> (f64, f64) {
    let p = bev.point(l, d);
    let x = p.forward * c + p.lateral * s;
    let y = p.forward * s - p.lateral * c;
    (y / delta, x / delta)
}

/// Calls `put(dr, dc, w, l, d)` for every bilinear contribution of every
/// confident BEV cell under heading `theta`.
pub(crate) fn splat_cells(bev: &BevGrid, theta: f64, delta: f64, mut put: impl FnMut(i64, i64, f64, usize, usize)) {
    let (s, c) = theta.sin_cos();
    for d in 0..bev.d {
        for l in 0..bev.l {
            if bev.conf(l, d) <= 0.0 {
                continue;
            }
            let (or, oc) = rotated_offset(bev, l, d, s, c, delta);
            let (r0, c0) = (or.floor(), oc.floor());
            let (fr, fc) = (or - r0, oc - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let w = wr * wc;
                    if w != 0.0 {
                        put(r0 + dr, c0 + dc, w, l, d);
                    }
                }
            }
        }
    }
}

/// Resamples `T⊙C` and `C` onto the map lattice after rotating by `theta`
/// about the camera.
pub fn rotate_template(bev: &BevGrid, theta: f64, map_delta: f64, mode: RotateMode) -> Result<RotatedTemplate> {
    check_pitch(bev, map_delta)?;
    let radius = template_radius(bev, map_delta);
    let side = 2 * radius + 1;
    let n = bev.n;
    let mut out = RotatedTemplate {
        radius,
        n,
        weighted: vec![0.0; side * side * n],
        weight: vec![0.0; side * side],
    };
    let r = radius as i64;
    match mode {
        RotateMode::Splat => {
            splat_cells(bev, theta, map_delta, |dr, dc, w, l, d| {
                let i = ((dr + r) * side as i64 + dc + r) as usize;
                let c = bev.conf(l, d) as f64;
                out.weight[i] += w * c;
                for (o, &t) in out.weighted[i * n..(i + 1) * n].iter_mut().zip(bev.feature(l, d)) {
                    *o += w * t as f64 * c;
                }
            });
        }
        RotateMode::Interpolate => {
            let (s, c) = theta.sin_cos();
            let half = (bev.l as f64 - 1.0) / 2.0;
            for dr in -r..=r {
                for dc in -r..=r {
                    // Back-rotate the map offset into the camera frame.
                    let (x, y) = (dc as f64 * map_delta, dr as f64 * map_delta);
                    let forward = x * c + y * s;
                    let lateral = x * s - y * c;
                    let lf = lateral / bev.delta + half;
                    let df = forward / bev.delta - 1.0;
                    let i = ((dr + r) * side as i64 + dc + r) as usize;
                    let (l0, d0) = (lf.floor(), df.floor());
                    let (wl, wd) = (lf - l0, df - d0);
                    for (ddl, a) in [(0, 1.0 - wl), (1, wl)] {
                        for (ddd, b) in [(0, 1.0 - wd), (1, wd)] {
                            let (li, di) = (l0 as i64 + ddl, d0 as i64 + ddd);
                            let w = a * b;
                            if w == 0.0 || li < 0 || di < 0 || li >= bev.l as i64 || di >= bev.d as i64 {
                                continue;
                            }
                            let (li, di) = (li as usize, di as usize);
                            let cf = bev.conf(li, di) as f64;
                            out.weight[i] += w * cf;
                            for (o, &t) in out.weighted[i * n..(i + 1) * n].iter_mut().zip(bev.feature(li, di)) {
                                *o += w * t as f64 * cf;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear sample of `grid` at continuous (row, col), zero outside.
/// Accumulates corners in the order (0,0), (0,1), (1,0), (1,1).
#[inline]
pub(crate) fn sample_bilinear(grid: &FeatureGrid, r: f64, c: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as i64, c0 as i64);
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let (rr, cc) = (r0 + dr, c0 + dc);
            if rr < 0 || cc < 0 || rr >= grid.height as i64 || cc >= grid.width as i64 {
                continue;
            }
            let w = wr * wc;
            for (o, &f) in out.iter_mut().zip(grid.cell(rr as usize, cc as usize)) {
                *o += w * f as f64;
            }
        }
    }
}

/// Direct evaluation of every pose bin by looping over BEV cells.
fn score_naive(map: &NeuralMap, bev: &BevGrid, k: usize) -> PoseVolume {
    let spec = map.spec;
    let mut vol = PoseVolume::zeros(spec, k, VolumeKind::LogScore);
    let z = bev.support();
    if z == 0 {
        return vol;
    }
    let n = bev.n;
    let cells: Vec<(usize, usize, Vec<f64>)> = (0..bev.d)
        .flat_map(|d| (0..bev.l).map(move |l| (l, d)))
        .filter(|&(l, d)| bev.conf(l, d) > 0.0)
        .map(|(l, d)| {
            let c = bev.conf(l, d) as f64;
            (l, d, bev.feature(l, d).iter().map(|&t| t as f64 * c).collect())
        })
        .collect();
    let slabs: Vec<Vec<f32>> = {
        use rayon::prelude::*;
        (0..k)
            .into_par_iter()
            .map(|ki| {
                let theta = rotation_angle(ki, k);
                let mut slab = vec![0.0f32; spec.cell_count()];
                let mut f = vec![0.0; n];
                for row in 0..spec.height {
                    for col in 0..spec.width {
                        let center = spec.cell_center(row, col);
                        let pose = Pose2 {
                            x: center.x,
                            y: center.y,
                            theta,
                        };
                        let mut acc = 0.0;
                        for (l, d, wt) in &cells {
                            let q: Point2 = pose.transform_point(bev.point(*l, *d));
                            let (r, c) = spec.continuous_index(q);
                            sample_bilinear(&map.features, r, c, &mut f);
                            acc += f.iter().zip(wt).map(|(a, b)| a * b).sum::<f64>();
                        }
                        slab[row * spec.width + col] = (acc / z as f64) as f32;
                    }
                }
                slab
            })
            .collect()
    };
    for (ki, slab) in slabs.into_iter().enumerate() {
        let m = spec.cell_count();
        vol.values[ki * m..(ki + 1) * m].copy_from_slice(&slab);
    }
    vol
}

/// Log-score volume of `bev` against `map` over `k` headings.
pub fn score_volume(map: &NeuralMap, bev: &BevGrid, k: usize, backend: Backend) -> Result<PoseVolume> {
    if k == 0 {
        return Err(Error::Domain("need at least one rotation".into()));
    }
    check_pitch(bev, map.spec.delta)?;
    if bev.n != map.n() {
        return Err(Error::Config(format!(
            "BEV has {} channels, map has {}",
            bev.n,
            map.n()
        )));
    }
    match backend {
        Backend::Naive => Ok(score_naive(map, bev, k)),
        Backend::Fourier => Correlator::new(map, template_radius(bev, map.spec.delta)).score(bev, k),
    }
}

/// Circular prior: the camera lies within `radius` meters of `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationPrior {
    pub center: Point2,
    pub radius: f64,
}

/// `softmax(M + Ω)` jointly over all bins, with bins outside the optional
/// prior disc excluded.
pub fn pose_posterior(scores: &PoseVolume, omega: &[f32], prior: Option<LocationPrior>) -> Result<PoseVolume> {
    let spec = scores.spec;
    let cells = spec.cell_count();
    if omega.len() != cells {
        return Err(Error::Config(format!(
            "prior has {} cells, volume has {cells}",
            omega.len()
        )));
    }
    let mut logit: Vec<f64> = omega.iter().map(|&o| o as f64).collect();
    if let Some(p) = prior {
        for row in 0..spec.height {
            for col in 0..spec.width {
                if (spec.cell_center(row, col) - p.center).norm() > p.radius {
                    logit[row * spec.width + col] = f64::NEG_INFINITY;
                }
            }
        }
    }
    let mut vals: Vec<f64> = scores
        .values
        .iter()
        .enumerate()
        .map(|(i, &m)| m as f64 + logit[i % cells])
        .collect();
    softmax_in_place(&mut vals)?;
    Ok(PoseVolume {
        spec,
        k: scores.k,
        kind: VolumeKind::Probability,
        values: vals.iter().map(|&v| v as f32).collect(),
    })
}

/// Numerically stable softmax over the whole slice.
pub(crate) fn softmax_in_place(vals: &mut [f64]) -> Result<()> {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Degenerate("every pose bin is excluded by the prior".into()));
    }
    let mut total = 0.0;
    for v in vals.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    vals.iter_mut().for_each(|v| *v /= total);
    Ok(())
}
