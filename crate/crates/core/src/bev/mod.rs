//! Lifting per-column image features to a metric bird's-eye view.
//!
//! Each image column `u` is a ray. For depth plane `d` (depth `d·Δ`,
//! `d ≥ 1`) the scale `σ = f/depth` selects, per pixel row `v`, an
//! interpolated score; a softmax over `v` gives weights `α` and the polar
//! feature is the `α`-weighted sum of the column's features. Polar rays are
//! then resampled laterally onto a Cartesian grid.

mod io;

pub use io::{
    read_bev, read_column_features, write_bev, write_column_features, BEV_MAGIC, BEV_VERSION, COLUMNS_MAGIC,
    COLUMNS_VERSION,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::BevPoint;

/// Log-spaced scale values `σ(i) = σ_min·(σ_max/σ_min)^{i/S}`, `i ∈ 0..=S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBins {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub s: usize,
}

impl Default for ScaleBins {
    fn default() -> Self {
        Self {
            sigma_min: 2.0,
            sigma_max: 512.0,
            s: 32,
        }
    }
}

impl ScaleBins {
    pub fn new(sigma_min: f64, sigma_max: f64, s: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::Domain(format!("need 0 < σ_min < σ_max, got {sigma_min}, {sigma_max}")));
        }
        if s == 0 {
            return Err(Error::Domain("need at least one scale bin".into()));
        }
        Ok(Self { sigma_min, sigma_max, s })
    }

    /// Number of tabulated scale values, `S + 1`.
    pub fn len(&self) -> usize {
        self.s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(i as f64 / self.s as f64)
    }

    /// Depth interval representable with focal length `f`.
    pub fn depth_range(&self, f: f64) -> Result<(f64, f64)> {
        Ok((depth_from_scale(f, self.sigma_max)?, depth_from_scale(f, self.sigma_min)?))
    }
}

pub fn scale_from_depth(f: f64, depth: f64) -> Result<f64> {
    if !(f > 0.0 && depth > 0.0) {
        return Err(Error::Domain(format!("focal length and depth must be positive, got {f}, {depth}")));
    }
    Ok(f / depth)
}

pub fn depth_from_scale(f: f64, sigma: f64) -> Result<f64> {
    if !(f > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!("focal length and scale must be positive, got {f}, {sigma}")));
    }
    Ok(f / sigma)
}

/// Continuous bin index of `sigma`, or `None` outside `[σ_min, σ_max]`.
pub fn scale_to_bin(sigma: f64, bins: &ScaleBins) -> Option<f64> {
    if !(sigma >= bins.sigma_min && sigma <= bins.sigma_max) {
        return None;
    }
    let t = bins.s as f64 * (sigma / bins.sigma_min).ln() / (bins.sigma_max / bins.sigma_min).ln();
    Some(t.clamp(0.0, bins.s as f64))
}

/// Image evidence for one frame: per-pixel features and scale scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFeatures {
    pub u: usize,
    pub v: usize,
    pub n: usize,
    /// Scale values per pixel, `S + 1`.
    pub scales: usize,
    pub f: f64,
    pub cx: f64,
    /// `U × V × N`.
    pub x: Vec<f32>,
    /// `U × V × (S+1)`.
    pub scores: Vec<f32>,
}

impl ColumnFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.u == 0 || self.v == 0 || self.scales == 0 {
            return Err(Error::Domain("column features need U, V ≥ 1 and at least one scale".into()));
        }
        if !(self.f > 0.0 && self.f.is_finite() && self.cx.is_finite()) {
            return Err(Error::Domain(format!("bad intrinsics f={}, cx={}", self.f, self.cx)));
        }
        if self.x.len() != self.u * self.v * self.n || self.scores.len() != self.u * self.v * self.scales {
            return Err(Error::Domain("column feature buffers have the wrong size".into()));
        }
        if self.x.iter().chain(&self.scores).any(|x| !x.is_finite()) {
            return Err(Error::Domain("column features must be finite".into()));
        }
        Ok(())
    }

    pub fn feature(&self, u: usize, v: usize) -> &[f32] {
        let i = (u * self.v + v) * self.n;
        &self.x[i..i + self.n]
    }

    pub fn score_row(&self, u: usize, v: usize) -> &[f32] {
        let i = (u * self.v + v) * self.scales;
        &self.scores[i..i + self.scales]
    }
}

/// Polar features per (ray, depth plane).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub u: usize,
    pub d: usize,
    pub n: usize,
    /// `U × D × N`.
    pub features: Vec<f64>,
    /// `U × D`; false where the plane's scale is not representable.
    pub valid: Vec<bool>,
    /// Vertical attention `U × D × V`; zero rows for invalid planes.
    pub alpha: Vec<f64>,
}

impl PolarGrid {
    pub fn feature(&self, u: usize, d: usize) -> &[f64] {
        let i = (u * self.d + d) * self.n;
        &self.features[i..i + self.n]
    }
}

/// Linear interpolation of a score row at continuous bin `t`.
fn interp_score(row: &[f32], t: f64) -> f64 {
    let i0 = (t.floor() as usize).min(row.len() - 1);
    let i1 = (i0 + 1).min(row.len() - 1);
    let w = t - i0 as f64;
    row[i0] as f64 * (1.0 - w) + row[i1] as f64 * w
}

/// Soft vertical attention over scale-matched pixels, then weighted sum of
/// features, for every ray and depth plane `1..=depth_planes`.
pub fn lift_polar(cols: &ColumnFeatures, bins: &ScaleBins, delta: f64, depth_planes: usize) -> Result<PolarGrid> {
    cols.validate()?;
    if depth_planes == 0 {
        return Err(Error::Domain("need at least one depth plane".into()));
    }
    if cols.scales != bins.len() {
        return Err(Error::Config(format!(
            "column features carry {} scales, bins expect {}",
            cols.scales,
            bins.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("depth step must be positive, got {delta}")));
    }
    let (nu, nv, n, nd) = (cols.u, cols.v, cols.n, depth_planes);
    let bin_of: Vec<Option<f64>> = (1..=nd)
        .map(|d| scale_to_bin(cols.f / (d as f64 * delta), bins))
        .collect();
    let per_ray: Vec<(Vec<f64>, Vec<bool>, Vec<f64>)> = (0..nu)
        .into_par_iter()
        .map(|u| {
            let mut feats = vec![0.0; nd * n];
            let mut valid = vec![false; nd];
            let mut alpha = vec![0.0; nd * nv];
            let mut logits = vec![0.0; nv];
            for (d, t) in bin_of.iter().enumerate() {
                let Some(t) = *t else { continue };
                valid[d] = true;
                for (v, l) in logits.iter_mut().enumerate() {
                    *l = interp_score(cols.score_row(u, v), t);
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let a = &mut alpha[d * nv..(d + 1) * nv];
                let mut z = 0.0;
                for (ai, &l) in a.iter_mut().zip(&logits) {
                    *ai = (l - m).exp();
                    z += *ai;
                }
                let out = &mut feats[d * n..(d + 1) * n];
                for (v, ai) in a.iter_mut().enumerate() {
                    *ai /= z;
                    for (o, &x) in out.iter_mut().zip(cols.feature(u, v)) {
                        *o += *ai * x as f64;
                    }
                }
            }
            (feats, valid, alpha)
        })
        .collect();
    let mut grid = PolarGrid {
        u: nu,
        d: nd,
        n,
        features: Vec::with_capacity(nu * nd * n),
        valid: Vec::with_capacity(nu * nd),
        alpha: Vec::with_capacity(nu * nd * nv),
    };
    for (f, v, a) in per_ray {
        grid.features.extend(f);
        grid.valid.extend(v);
        grid.alpha.extend(a);
    }
    Ok(grid)
}

/// Bird's-eye-view template: features `T` and confidence `C`.
///
/// Cell `(l, d)` covers lateral offset `(l − (L−1)/2)·Δ` (positive to the
/// right) and forward distance `(d+1)·Δ`. Buffers are depth-major: index
/// `d·L + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub l: usize,
    pub d: usize,
    pub n: usize,
    pub delta: f64,
    /// `D × L × N`.
    pub features: Vec<f32>,
    /// `D × L`, in `[0, 1]`.
    pub confidence: Vec<f32>,
}

impl BevGrid {
    pub fn zeros(l: usize, d: usize, n: usize, delta: f64) -> Self {
        Self {
            l,
            d,
            n,
            delta,
            features: vec![0.0; l * d * n],
            confidence: vec![0.0; l * d],
        }
    }

    /// Camera-frame position of cell `(l, d)`.
    pub fn point(&self, l: usize, d: usize) -> BevPoint {
        BevPoint::new(
            (l as f64 - (self.l as f64 - 1.0) / 2.0) * self.delta,
            (d + 1) as f64 * self.delta,
        )
    }

    pub fn feature(&self, l: usize, d: usize) -> &[f32] {
        let i = (d * self.l + l) * self.n;
        &self.features[i..i + self.n]
    }

    pub fn feature_mut(&mut self, l: usize, d: usize) -> &mut [f32] {
        let i = (d * self.l + l) * self.n;
        &mut self.features[i..i + self.n]
    }

    pub fn conf(&self, l: usize, d: usize) -> f32 {
        self.confidence[d * self.l + l]
    }

    /// Number of cells with positive confidence.
    pub fn support(&self) -> usize {
        self.confidence.iter().filter(|&&c| c > 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.l * self.d * self.n || self.confidence.len() != self.l * self.d {
            return Err(Error::Domain("BEV buffers have the wrong size".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Domain("BEV pitch must be positive".into()));
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) || self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("BEV confidence must lie in [0, 1] and features be finite".into()));
        }
        Ok(())
    }
}

/// Resamples polar rays onto an `L`-wide Cartesian grid with one row per
/// depth plane. Cells outside the image or touching an invalid plane get
/// `C = 0` and a zero feature.
pub fn polar_to_cartesian(polar: &PolarGrid, cols: &ColumnFeatures, delta: f64, lateral: usize) -> Result<BevGrid> {
    if lateral == 0 {
        return Err(Error::Domain("need at least one lateral cell".into()));
    }
    if polar.u != cols.u {
        return Err(Error::Config("polar grid and column features disagree on U".into()));
    }
    let mut bev = BevGrid::zeros(lateral, polar.d, polar.n, delta);
    let umax = (polar.u - 1) as f64;
    for d in 0..polar.d {
        for l in 0..lateral {
            let p = bev.point(l, d);
            let u = cols.cx + cols.f * p.lateral / p.forward;
            if !(u >= 0.0 && u <= umax) {
                continue;
            }
            let u0 = (u.floor() as usize).min(polar.u - 1);
            let w = u - u0 as f64;
            let u1 = if w > 0.0 { u0 + 1 } else { u0 };
            if !(polar.valid[u0 * polar.d + d] && polar.valid[u1 * polar.d + d]) {
                continue;
            }
            let (a, b) = (polar.feature(u0, d), polar.feature(u1, d));
            for ((o, &x0), &x1) in bev.feature_mut(l, d).iter_mut().zip(a).zip(b) {
                *o = ((1.0 - w) * x0 + w * x1) as f32;
            }
            bev.confidence[d * lateral + l] = 1.0;
        }
    }
    Ok(bev)
}

/// Post-lift refinement stage; the identity unless a learned model is
/// plugged in.
pub trait BevRefiner {
    fn refine(&self, bev: BevGrid) -> BevGrid;
}

pub struct IdentityRefiner;

impl BevRefiner for IdentityRefiner {
    fn refine(&self, bev: BevGrid) -> BevGrid {
        bev
    }
}
