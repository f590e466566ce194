//! Multi-frame fusion of pose posteriors: warping by known relative
//! motion, product-of-experts fusion and a sequential Bayes filter.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::infer::{sample_trilinear, PROB_FLOOR};
use crate::matcher::{PoseVolume, VolumeKind};

fn require_probability(p: &PoseVolume) -> Result<()> {
    if p.kind != VolumeKind::Probability {
        return Err(Error::Config("expected a probability volume".into()));
    }
    Ok(())
}

fn normalize(values: &mut [f32], what: &str) -> Result<()> {
    let s: f64 = values.iter().map(|&v| v as f64).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("{what} has no mass")));
    }
    values.iter_mut().for_each(|v| *v = (*v as f64 / s) as f32);
    Ok(())
}

/// Re-expresses `p` (the posterior of a frame at `ξ ⊕ rel`) over the
/// reference pose `ξ`: `out(ξ) ∝ p(ξ ⊕ rel)`. Samples falling outside `p`
/// get the probability floor; the result is renormalized.
pub fn warp_volume(p: &PoseVolume, rel: &Pose2) -> Result<PoseVolume> {
    require_probability(p)?;
    let n = p.spec.cell_count();
    let mut out = PoseVolume::zeros(p.spec, p.k, VolumeKind::Probability);
    out.values.par_chunks_mut(n).enumerate().for_each(|(k, slab)| {
        let theta = p.theta(k);
        for row in 0..p.spec.height {
            for col in 0..p.spec.width {
                let c = p.spec.cell_center(row, col);
                let q = Pose2 { x: c.x, y: c.y, theta }.compose(rel);
                slab[row * p.spec.width + col] = sample_trilinear(p, &q).unwrap_or(PROB_FLOOR) as f32;
            }
        }
    });
    normalize(&mut out.values, "warped volume")?;
    Ok(out)
}

/// Product-of-experts fusion over the reference pose. `views[j]` pairs a
/// posterior with the pose of its frame relative to the reference frame.
pub fn fuse_views(views: &[(&PoseVolume, Pose2)]) -> Result<PoseVolume> {
    let Some(&(first, _)) = views.first() else {
        return Err(Error::Domain("no views to fuse".into()));
    };
    for (v, _) in views {
        require_probability(v)?;
        if v.spec != first.spec || v.k != first.k {
            return Err(Error::Config("fused volumes must share grid and rotation count".into()));
        }
    }
    let mut logs = vec![0.0f64; first.values.len()];
    for (v, rel) in views {
        let warped;
        let src = if *rel == Pose2::IDENTITY {
            *v
        } else {
            warped = warp_volume(v, rel)?;
            &warped
        };
        for (l, &x) in logs.iter_mut().zip(&src.values) {
            *l += (x as f64).max(PROB_FLOOR).ln();
        }
    }
    crate::matcher::softmax_in_place(&mut logs)?;
    let mut out = PoseVolume::zeros(first.spec, first.k, VolumeKind::Probability);
    for (o, l) in out.values.iter_mut().zip(logs) {
        *o = l as f32;
    }
    Ok(out)
}

/// Motion noise of the filter's prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionNoise {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            sigma_xy: 0.5,
            sigma_theta: 1f64.to_radians(),
        }
    }
}

/// Gaussian taps truncated at 3σ; empty when σ is zero.
fn kernel(sigma_bins: f64) -> Vec<f64> {
    if !(sigma_bins > 0.0) {
        return vec![1.0];
    }
    let r = (3.0 * sigma_bins).ceil() as i64;
    (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma_bins).powi(2)).exp())
        .collect()
}

/// 1-D convolution of `len` samples at `stride`; renormalized by the taps
/// that fall inside at the edges, or wrapped when `circular`.
fn convolve_line(buf: &mut [f64], tmp: &mut Vec<f64>, start: usize, stride: usize, len: usize, taps: &[f64], circular: bool) {
    let r = (taps.len() / 2) as i64;
    tmp.clear();
    tmp.extend((0..len).map(|i| buf[start + i * stride]));
    for i in 0..len as i64 {
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (t, &w) in taps.iter().enumerate() {
            let j = i + t as i64 - r;
            let j = if circular {
                j.rem_euclid(len as i64)
            } else if j < 0 || j >= len as i64 {
                continue;
            } else {
                j
            };
            acc += w * tmp[j as usize];
            wsum += w;
        }
        buf[start + i as usize * stride] = acc / wsum;
    }
}

/// Separable Gaussian blur over (x, y, θ), circular in θ.
pub fn blur_volume(p: &PoseVolume, noise: MotionNoise) -> PoseVolume {
    let (w, h, k) = (p.spec.width, p.spec.height, p.k);
    let mut buf: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
    let kxy = kernel(noise.sigma_xy / p.spec.delta);
    let kt = kernel(noise.sigma_theta / p.theta_step());
    let n = w * h;
    let mut tmp = Vec::new();
    if kxy.len() > 1 {
        for kk in 0..k {
            for row in 0..h {
                convolve_line(&mut buf, &mut tmp, kk * n + row * w, 1, w, &kxy, false);
            }
            for col in 0..w {
                convolve_line(&mut buf, &mut tmp, kk * n + col, w, h, &kxy, false);
            }
        }
    }
    if kt.len() > 1 {
        for cell in 0..n {
            convolve_line(&mut buf, &mut tmp, cell, n, k, &kt, true);
        }
    }
    let mut out = p.clone();
    for (o, v) in out.values.iter_mut().zip(buf) {
        *o = v as f32;
    }
    out
}

/// One predict/update cycle. `odometry` is the current frame's pose in the
/// previous frame; the prediction is `warp(prev, odometry⁻¹)` blurred by
/// the motion noise, and the update multiplies by `measurement`.
pub fn markov_step(
    prev: &PoseVolume,
    odometry: &Pose2,
    noise: MotionNoise,
    measurement: &PoseVolume,
) -> Result<PoseVolume> {
    require_probability(measurement)?;
    if prev.spec != measurement.spec || prev.k != measurement.k {
        return Err(Error::Config("filter state and measurement must share grid and rotation count".into()));
    }
    let predicted = blur_volume(&warp_volume(prev, &odometry.inverse())?, noise);
    let mut out = predicted;
    for (o, &m) in out.values.iter_mut().zip(&measurement.values) {
        *o = (*o as f64 * m as f64) as f32;
    }
    normalize(&mut out.values, "filtered posterior")?;
    Ok(out)
}

/// Sequential filter over a stream of frame posteriors.
#[derive(Debug, Clone)]
pub struct MarkovFilter {
    pub noise: MotionNoise,
    state: Option<PoseVolume>,
}

impl MarkovFilter {
    pub fn new(noise: MotionNoise) -> Self {
        Self { noise, state: None }
    }

    /// Feeds the next frame; the first frame's odometry is ignored.
    pub fn step(&mut self, odometry: &Pose2, measurement: &PoseVolume) -> Result<&PoseVolume> {
        let next = match &self.state {
            None => {
                require_probability(measurement)?;
                measurement.clone()
            }
            Some(prev) => markov_step(prev, odometry, self.noise, measurement)?,
        };
        Ok(self.state.insert(next))
    }

    pub fn state(&self) -> Option<&PoseVolume> {
        self.state.as_ref()
    }
}

/// Poses of every frame relative to frame `reference`, given each frame's
/// pose in its predecessor (the first entry is ignored).
pub fn relative_to_reference(odometry: &[Pose2], reference: usize) -> Result<Vec<Pose2>> {
    if reference >= odometry.len() {
        return Err(Error::Domain(format!("reference frame {reference} out of range")));
    }
    let mut chain = Vec::with_capacity(odometry.len());
    let mut acc = Pose2::IDENTITY;
    for (i, o) in odometry.iter().enumerate() {
        if i > 0 {
            acc = acc.compose(o);
        }
        chain.push(acc);
    }
    let inv = chain[reference].inverse();
    Ok(chain
        .iter()
        .enumerate()
        .map(|(i, p)| if i == reference { Pose2::IDENTITY } else { inv.compose(p) })
        .collect())
}

/// One line of a trajectory file: `frame_id dx dy dtheta_deg volume_path`,
/// where (dx, dy, dθ) is the frame's pose in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub id: String,
    pub odometry: Pose2,
    pub volume: PathBuf,
}

/// Parses a trajectory file; blank lines and `#` comments are skipped and
/// relative volume paths resolve against `base`.
pub fn parse_trajectory(text: &str, base: &Path) -> Result<Vec<TrajectoryFrame>> {
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("trajectory line {}: expected 5 fields, got {}", n + 1, f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("trajectory line {}: bad number {s:?}", n + 1)))
        };
        let path = PathBuf::from(f[4]);
        frames.push(TrajectoryFrame {
            id: f[0].to_string(),
            odometry: Pose2::new(num(f[1])?, num(f[2])?, num(f[3])?.to_radians()),
            volume: if path.is_absolute() { path } else { base.join(path) },
        });
    }
    if frames.is_empty() {
        return Err(Error::Format("trajectory has no frames".into()));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, Point2};
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(Point2::new(0.0, 0.0), 1.0, w, h).unwrap()
    }

    fn random_volume(w: usize, h: usize, k: usize, seed: u64) -> PoseVolume {
        let mut v = PoseVolume::zeros(spec(w, h), k, VolumeKind::Probability);
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        for x in v.values.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *x = ((s >> 40) as f32 / (1u64 << 24) as f32) + 0.01;
        }
        normalize(&mut v.values, "test").unwrap();
        v
    }

    fn delta(w: usize, h: usize, k: usize, at: (usize, usize, usize)) -> PoseVolume {
        let mut v = PoseVolume::zeros(spec(w, h), k, VolumeKind::Probability);
        let i = v.index(at.0, at.1, at.2);
        v.values[i] = 1.0;
        v
    }

    #[test]
    fn identity_warp_is_a_no_op() {
        let v = random_volume(9, 7, 8, 3);
        let w = warp_volume(&v, &Pose2::IDENTITY).unwrap();
        for (a, b) in v.values.iter().zip(&w.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_cell_forward_shift() {
        let v = random_volume(9, 7, 4, 5);
        let w = warp_volume(&v, &Pose2::new(1.0, 0.0, 0.0)).unwrap();
        // Heading bin 2 faces east: out(row, col) ∝ v(row, col + 1) and the
        // last column falls outside and is floored.
        let ratio = w.get(2, 0, 0) / v.get(2, 0, 1);
        for row in 0..7 {
            for col in 0..8 {
                assert!((w.get(2, row, col) / v.get(2, row, col + 1) / ratio - 1.0).abs() < 1e-5);
            }
            assert!(w.get(2, row, 8) < 1e-9);
        }
    }

    #[test]
    fn warped_delta_lands_at_composed_pose() {
        let k = 8;
        let p = delta(21, 21, k, (1, 10, 10));
        let xi0 = p.pose_of(1, 10, 10);
        let rel = Pose2::new(2.0, 1.0, std::f64::consts::FRAC_PI_4);
        let w = warp_volume(&p, &rel).unwrap();
        let (row, col, kk) = crate::infer::argmax_bin(&w);
        let want = xi0.compose(&rel.inverse());
        let got = w.pose_of(kk, row, col);
        assert!((got.x - want.x).abs() <= 0.5 && (got.y - want.y).abs() <= 0.5);
        assert!(crate::geometry::normalize_angle(got.theta - want.theta).abs() < 1e-9);
    }

    #[test]
    fn fusion_examples() {
        assert!(matches!(fuse_views(&[]), Err(Error::Domain(_))));
        let v = random_volume(6, 5, 4, 9);
        let f = fuse_views(&[(&v, Pose2::IDENTITY)]).unwrap();
        for (a, b) in v.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-7);
        }
        let mut u = PoseVolume::zeros(spec(6, 5), 4, VolumeKind::Probability);
        u.values.iter_mut().for_each(|x| *x = 1.0 / 120.0);
        let f = fuse_views(&[(&v, Pose2::IDENTITY), (&u, Pose2::IDENTITY)]).unwrap();
        for (a, b) in v.values.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn fusion_disambiguates_aliases() {
        // Two views that each admit two hypotheses sharing only one.
        let mut a = PoseVolume::zeros(spec(20, 3), 4, VolumeKind::Probability);
        let mut b = a.clone();
        for (v, cols) in [(&mut a, [3, 9]), (&mut b, [9, 15])] {
            for c in cols {
                let i = v.index(2, 1, c);
                v.values[i] = 0.5;
            }
        }
        let f = fuse_views(&[(&a, Pose2::IDENTITY), (&b, Pose2::IDENTITY)]).unwrap();
        assert_eq!(crate::infer::argmax_bin(&f), (1, 9, 2));
        assert!(f.get(2, 1, 9) > 0.99);
    }

    #[test]
    fn markov_with_uniform_measurement_tracks_odometry() {
        let p = delta(31, 31, 8, (4, 15, 10));
        let mut u = PoseVolume::zeros(spec(31, 31), 8, VolumeKind::Probability);
        let n = u.values.len() as f32;
        u.values.iter_mut().for_each(|x| *x = 1.0 / n);
        // Heading bin 4 faces east; drive 3 m forward.
        let odo = Pose2::new(3.0, 0.0, 0.0);
        let noise = MotionNoise {
            sigma_xy: 0.0,
            sigma_theta: 0.0,
        };
        let out = markov_step(&p, &odo, noise, &u).unwrap();
        assert_eq!(crate::infer::argmax_bin(&out), (15, 13, 4));
        let blurred = markov_step(&p, &odo, MotionNoise::default(), &u).unwrap();
        assert_eq!(crate::infer::argmax_bin(&blurred), (15, 13, 4));
        assert!(blurred.get(4, 15, 13) < out.get(4, 15, 13));
        assert!((blurred.sum() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn filter_stream() {
        let mut f = MarkovFilter::new(MotionNoise::default());
        let v = random_volume(8, 8, 4, 1);
        assert_eq!(f.step(&Pose2::new(5.0, 0.0, 0.0), &v).unwrap(), &v);
        let s = f.step(&Pose2::new(1.0, 0.0, 0.0), &v).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn reference_chain() {
        let odo = [Pose2::IDENTITY, Pose2::new(1.0, 0.0, 0.5), Pose2::new(2.0, 0.5, -0.2)];
        let rel = relative_to_reference(&odo, 2).unwrap();
        assert_eq!(rel[2], Pose2::IDENTITY);
        let back = rel[1].compose(&odo[2]);
        assert!(back.x.abs() < 1e-12 && back.y.abs() < 1e-12 && back.theta.abs() < 1e-12);
        assert!(relative_to_reference(&odo, 3).is_err());
    }

    #[test]
    fn trajectory_parsing() {
        let text = "# id dx dy dtheta path\nf0 0 0 0 a.plpv\n\nf1 1.5 0 90 /abs/b.plpv # turn\n";
        let t = parse_trajectory(text, Path::new("/data")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].volume, PathBuf::from("/data/a.plpv"));
        assert_eq!(t[1].volume, PathBuf::from("/abs/b.plpv"));
        assert!((t[1].odometry.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(parse_trajectory("f0 0 0 a", Path::new(".")).is_err());
        assert!(parse_trajectory("f0 0 x 0 a", Path::new(".")).is_err());
        assert!(parse_trajectory("# nothing\n", Path::new(".")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn fusion_is_order_invariant(seed in 0u64..1000, x in -2.0..2.0f64, t in -3.0..3.0f64) {
            let a = random_volume(10, 8, 8, seed);
            let b = random_volume(10, 8, 8, seed + 1);
            let c = random_volume(10, 8, 8, seed + 2);
            let rel = Pose2::new(x, 0.5, t);
            let f1 = fuse_views(&[(&a, Pose2::IDENTITY), (&b, rel), (&c, Pose2::IDENTITY)]).unwrap();
            let f2 = fuse_views(&[(&c, Pose2::IDENTITY), (&a, Pose2::IDENTITY), (&b, rel)]).unwrap();
            for (p, q) in f1.values.iter().zip(&f2.values) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            prop_assert!((f1.sum() - 1.0).abs() < 1e-5);
        }

        #[test]
        fn warp_preserves_normalization(seed in 0u64..1000, x in -3.0..3.0f64, y in -3.0..3.0f64, t in -3.0..3.0f64) {
            let a = random_volume(10, 8, 8, seed);
            let w = warp_volume(&a, &Pose2::new(x, y, t)).unwrap();
            prop_assert!((w.sum() - 1.0).abs() < 1e-5);
            prop_assert!(w.values.iter().all(|&v| v >= 0.0));
        }
    }
}
