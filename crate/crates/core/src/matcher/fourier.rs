//! Correlation of splatted templates against the map in the Fourier domain.
//!
//! The splatted template `S_k` satisfies `M[i,j,k] = Σ_o F[(i,j)+o]·S_k[o]`
//! exactly, so each heading is one multi-channel cross-correlation. Tricks:
//!
//! * channel pairs are packed as `a + i·b`; `Re IFFT(Â·conj(B̂))` is then
//!   the sum of both real correlations;
//! * for `K % 4 == 0` the spectra of the three quarter-turns of a template
//!   are index permutations of the first, so only `K/4` templates are
//!   transformed;
//! * two headings share one inverse transform via their Hermitian parts;
//! * spectra live in transposed `[kc][kr]` layout so both passes run on
//!   contiguous rows, and all-zero template rows are skipped.
//!
//! Zero padding to `n ≥ max(W, H) + r` keeps the circular correlation equal
//! to the zero-padded linear one.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{check_pitch, rotation_angle, splat_cells, template_radius, PoseVolume, VolumeKind};
use crate::bev::BevGrid;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::mapenc::NeuralMap;

type Real = f32;
type C = Complex<Real>;

/// Smallest integer `≥ m` with no prime factor above 7.
fn smooth_size(m: usize) -> usize {
    (m.max(1)..)
        .find(|&x| {
            let mut y = x;
            for p in [2, 3, 5, 7] {
                while y % p == 0 {
                    y /= p;
                }
            }
            y == 1
        })
        .unwrap()
}

/// `dst[c·n + r] = src[r·n + c]` for `r < rows`, `c < n`.
fn transpose(src: &[C], dst: &mut [C], n: usize, rows: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        let r1 = (r0 + B).min(rows);
        for c0 in (0..n).step_by(B) {
            let c1 = (c0 + B).min(n);
            for r in r0..r1 {
                let srow = &src[r * n + c0..r * n + c1];
                for (dc, &v) in srow.iter().enumerate() {
                    dst[(c0 + dc) * n + r] = v;
                }
            }
        }
    }
}

/// Per-thread buffers for one batch of headings.
struct Workspace {
    /// Splat canvas, then row-transformed, per channel pair.
    canvas: Vec<Vec<C>>,
    /// Template spectra `[kc][kr]` and their transposes `[kr][kc]`.
    spec: Vec<Vec<C>>,
    spec_t: Vec<Vec<C>>,
    cross: [Vec<C>; 4],
    inv: Vec<C>,
    rows: Vec<C>,
    scratch: Vec<C>,
}

/// Precomputed map spectra, reusable for any template up to `radius`.
pub struct Correlator {
    spec: GridSpec,
    channels: usize,
    pairs: usize,
    radius: usize,
    n: usize,
    fft: Arc<dyn Fft<Real>>,
    ifft: Arc<dyn Fft<Real>>,
    /// Per channel pair, `[kc][kr]`.
    map_spectra: Vec<Vec<C>>,
}

impl Correlator {
    pub fn new(map: &NeuralMap, radius: usize) -> Self {
        let spec = map.spec;
        let (w, h, ch) = (spec.width, spec.height, map.n());
        let n = smooth_size(w.max(h) + radius);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let pairs = ch.div_ceil(2).max(1);
        let map_spectra = (0..pairs)
            .into_par_iter()
            .map(|j| {
                let mut buf = vec![C::default(); n * n];
                for row in 0..h {
                    for col in 0..w {
                        let f = map.features.cell(row, col);
                        let re = f.get(2 * j).copied().unwrap_or(0.0) as Real;
                        let im = f.get(2 * j + 1).copied().unwrap_or(0.0) as Real;
                        buf[row * n + col] = C::new(re, im);
                    }
                }
                let mut scratch = vec![C::default(); fft.get_inplace_scratch_len()];
                fft.process_with_scratch(&mut buf[..h * n], &mut scratch);
                let mut t = vec![C::default(); n * n];
                transpose(&buf, &mut t, n, n);
                fft.process_with_scratch(&mut t, &mut scratch);
                t
            })
            .collect();
        Self {
            spec,
            channels: ch,
            pairs,
            radius,
            n,
            fft,
            ifft,
            map_spectra,
        }
    }

    /// Transform size per axis.
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn workspace(&self) -> Workspace {
        let nn = self.n * self.n;
        let p = self.pairs;
        let scratch = self
            .fft
            .get_inplace_scratch_len()
            .max(self.ifft.get_inplace_scratch_len());
        Workspace {
            canvas: vec![vec![C::default(); nn]; p],
            spec: vec![vec![C::default(); nn]; p],
            spec_t: vec![vec![C::default(); nn]; p],
            cross: std::array::from_fn(|_| vec![C::default(); nn]),
            inv: vec![C::default(); nn],
            rows: vec![C::default(); self.spec.height * self.n],
            scratch: vec![C::default(); scratch],
        }
    }

    /// Spectra of the template splatted at heading `theta` into `ws.spec`
    /// (and transposed copies into `ws.spec_t`).
    fn template_spectrum(&self, bev: &BevGrid, theta: f64, ws: &mut Workspace) {
        let n = self.n;
        // Only offset rows −r..=r are ever touched: canvas rows [0, lo) and
        // [hi, n). When they overlap the whole canvas is live.
        let (lo, hi) = if 2 * self.radius + 1 < n {
            (self.radius + 1, n - self.radius)
        } else {
            (n, n)
        };
        for canvas in ws.canvas.iter_mut() {
            canvas[..lo * n].fill(C::default());
            canvas[hi * n..].fill(C::default());
        }
        let wrap = |o: i64| o.rem_euclid(n as i64) as usize;
        let canvas = &mut ws.canvas;
        splat_cells(bev, theta, self.spec.delta, |dr, dc, w, l, d| {
            let idx = wrap(dr) * n + wrap(dc);
            let c = bev.conf(l, d) as f64 * w;
            let t = bev.feature(l, d);
            for (j, buf) in canvas.iter_mut().enumerate() {
                let re = t.get(2 * j).copied().unwrap_or(0.0) as f64;
                let im = t.get(2 * j + 1).copied().unwrap_or(0.0) as f64;
                buf[idx] += C::new((re * c) as Real, (im * c) as Real);
            }
        });
        for j in 0..self.pairs {
            let buf = &mut ws.canvas[j];
            self.fft.process_with_scratch(&mut buf[..lo * n], &mut ws.scratch);
            self.fft.process_with_scratch(&mut buf[hi * n..], &mut ws.scratch);
            let spec = &mut ws.spec[j];
            for c in 0..n {
                spec[c * n + lo..c * n + hi].fill(C::default());
            }
            transpose(&buf[..lo * n], spec, n, lo);
            for row in hi..n {
                for c in 0..n {
                    spec[c * n + row] = buf[row * n + c];
                }
            }
            self.fft.process_with_scratch(spec, &mut ws.scratch);
            transpose(spec, &mut ws.spec_t[j], n, n);
        }
    }

    /// `ws.cross[slot] = Σ_pairs Â·conj(B̂_q)`, where `B̂_q` is the template
    /// spectrum turned by `q` quarter-turns: `B̂_1(kr, kc) = B̂(−kc, kr)`.
    fn cross(&self, ws: &mut Workspace, quarter: usize, slot: usize) {
        let n = self.n;
        let neg = |k: usize| if k == 0 { 0 } else { n - k };
        let x = &mut ws.cross[slot];
        x.fill(C::default());
        for j in 0..self.pairs {
            let a = &self.map_spectra[j];
            for kc in 0..n {
                let xr = &mut x[kc * n..(kc + 1) * n];
                let ar = &a[kc * n..(kc + 1) * n];
                // Source row, read forward (q = 0, 1) or mirrored (q = 2, 3).
                let (src, mirrored) = match quarter {
                    0 => (&ws.spec[j][kc * n..(kc + 1) * n], false),
                    1 => (&ws.spec_t[j][neg(kc) * n..(neg(kc) + 1) * n], false),
                    2 => (&ws.spec[j][neg(kc) * n..(neg(kc) + 1) * n], true),
                    _ => (&ws.spec_t[j][kc * n..(kc + 1) * n], true),
                };
                if mirrored {
                    xr[0] += ar[0] * src[0].conj();
                    for ((xv, av), bv) in xr[1..].iter_mut().zip(&ar[1..]).zip(src[1..].iter().rev()) {
                        *xv += av * bv.conj();
                    }
                } else {
                    for ((xv, av), bv) in xr.iter_mut().zip(ar).zip(src) {
                        *xv += av * bv.conj();
                    }
                }
            }
        }
    }

    /// Real parts of the inverse transforms of cross slots `a` and `b`,
    /// cropped to the map and scaled by `scale`.
    fn inverse_pair(&self, ws: &mut Workspace, a: usize, b: Option<usize>, scale: f64) -> (Vec<f32>, Option<Vec<f32>>) {
        let n = self.n;
        let (w, h) = (self.spec.width, self.spec.height);
        let neg = |k: usize| if k == 0 { 0 } else { n - k };
        let y = &mut ws.inv;
        let half: Real = 0.5;
        {
            let xa = &ws.cross[a];
            for kc in 0..n {
                let m = neg(kc) * n;
                for kr in 0..n {
                    let i = kc * n + kr;
                    y[i] = (xa[i] + xa[m + neg(kr)].conj()) * half;
                }
            }
        }
        if let Some(b) = b {
            let xb = &ws.cross[b];
            for kc in 0..n {
                let m = neg(kc) * n;
                for kr in 0..n {
                    let i = kc * n + kr;
                    let hb = (xb[i] + xb[m + neg(kr)].conj()) * half;
                    y[i] += C::new(-hb.im, hb.re);
                }
            }
        }
        self.ifft.process_with_scratch(y, &mut ws.scratch);
        // y is [kc][r]; bring the first h rows to [r][kc].
        let t = &mut ws.rows;
        const B: usize = 16;
        for kc0 in (0..n).step_by(B) {
            for r0 in (0..h).step_by(B) {
                for kc in kc0..(kc0 + B).min(n) {
                    for r in r0..(r0 + B).min(h) {
                        t[r * n + kc] = y[kc * n + r];
                    }
                }
            }
        }
        self.ifft.process_with_scratch(t, &mut ws.scratch);
        let norm = scale / (n * n) as f64;
        let mut sa = vec![0.0f32; w * h];
        let mut sb = b.map(|_| vec![0.0f32; w * h]);
        for r in 0..h {
            let row = &t[r * n..r * n + w];
            for (o, v) in sa[r * w..(r + 1) * w].iter_mut().zip(row) {
                *o = (v.re as f64 * norm) as f32;
            }
            if let Some(sb) = sb.as_mut() {
                for (o, v) in sb[r * w..(r + 1) * w].iter_mut().zip(row) {
                    *o = (v.im as f64 * norm) as f32;
                }
            }
        }
        (sa, sb)
    }

    /// Log-score volume of `bev` over `k` headings.
    pub fn score(&self, bev: &BevGrid, k: usize) -> Result<PoseVolume> {
        if k == 0 {
            return Err(Error::Domain("need at least one rotation".into()));
        }
        check_pitch(bev, self.spec.delta)?;
        if bev.n != self.channels {
            return Err(Error::Config(format!(
                "BEV has {} channels, map has {}",
                bev.n, self.channels
            )));
        }
        if template_radius(bev, self.spec.delta) > self.radius {
            return Err(Error::Config("template exceeds the correlator's padding radius".into()));
        }
        let mut vol = PoseVolume::zeros(self.spec, k, VolumeKind::LogScore);
        let z = bev.support();
        if z == 0 {
            return Ok(vol);
        }
        let scale = 1.0 / z as f64;
        let quarter_turns = k % 4 == 0;
        // A job is a list of base headings; with quarter turns each base
        // yields four headings, otherwise bases come in pairs.
        let jobs: Vec<Vec<usize>> = if quarter_turns {
            (0..k / 4).map(|b| vec![b]).collect()
        } else {
            (0..k).step_by(2).map(|b| (b..(b + 2).min(k)).collect()).collect()
        };
        let results: Vec<Vec<(usize, Vec<f32>)>> = jobs
            .par_iter()
            .map_init(
                || self.workspace(),
                |ws, bases| {
                    let mut slots = Vec::with_capacity(4);
                    for &b in bases {
                        self.template_spectrum(bev, rotation_angle(b, k), ws);
                        if quarter_turns {
                            for q in 0..4 {
                                self.cross(ws, q, q);
                                slots.push(b + q * k / 4);
                            }
                        } else {
                            let slot = slots.len();
                            self.cross(ws, 0, slot);
                            slots.push(b);
                        }
                    }
                    let mut out = Vec::with_capacity(slots.len());
                    for i in (0..slots.len()).step_by(2) {
                        let second = (i + 1 < slots.len()).then_some(i + 1);
                        let (sa, sb) = self.inverse_pair(ws, i, second, scale);
                        out.push((slots[i], sa));
                        if let (Some(sb), Some(s)) = (sb, second) {
                            out.push((slots[s], sb));
                        }
                    }
                    out
                },
            )
            .collect();
        let cells = self.spec.cell_count();
        for (ki, slab) in results.into_iter().flatten() {
            vol.values[ki * cells..(ki + 1) * cells].copy_from_slice(&slab);
        }
        Ok(vol)
    }
}
