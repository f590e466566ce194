//! Point estimates, uncertainty and modes of a pose posterior.

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};
use crate::matcher::{PoseVolume, VolumeKind};

/// Probability floor used by the loss and by fusion.
pub const PROB_FLOOR: f64 = 1e-12;

fn require_probability(p: &PoseVolume) -> Result<()> {
    if p.kind != VolumeKind::Probability {
        return Err(Error::Config("expected a probability volume".into()));
    }
    Ok(())
}

/// Continuous volume coordinates (row, col, k) of a pose; `k` in `[0, K)`.
pub fn volume_coords(p: &PoseVolume, pose: &Pose2) -> (f64, f64, f64) {
    let (r, c) = p.spec.continuous_index(pose.translation());
    let t = (normalize_angle(pose.theta) + std::f64::consts::PI) / p.theta_step();
    (r, c, t.rem_euclid(p.k as f64))
}

/// Trilinear sample at a pose, circular in heading. `None` when the
/// position lies outside the cell-center hull.
pub fn sample_trilinear(p: &PoseVolume, pose: &Pose2) -> Option<f64> {
    const EPS: f64 = 1e-9;
    let (r, c, t) = volume_coords(p, pose);
    let (h, w) = (p.spec.height as f64 - 1.0, p.spec.width as f64 - 1.0);
    if !(r >= -EPS && r <= h + EPS && c >= -EPS && c <= w + EPS) {
        return None;
    }
    let (r, c) = (r.clamp(0.0, h), c.clamp(0.0, w));
    let (r0, c0, k0) = (r.floor(), c.floor(), t.floor());
    let (fr, fc, fk) = (r - r0, c - c0, t - k0);
    let (r0, c0, k0) = (r0 as usize, c0 as usize, k0 as usize % p.k);
    let r1 = (r0 + 1).min(p.spec.height - 1);
    let c1 = (c0 + 1).min(p.spec.width - 1);
    let k1 = (k0 + 1) % p.k;
    let mut acc = 0.0;
    for (kk, wk) in [(k0, 1.0 - fk), (k1, fk)] {
        for (rr, wr) in [(r0, 1.0 - fr), (r1, fr)] {
            for (cc, wc) in [(c0, 1.0 - fc), (c1, fc)] {
                let w = wk * wr * wc;
                if w != 0.0 {
                    acc += w * p.get(kk, rr, cc);
                }
            }
        }
    }
    Some(acc)
}

/// Index of the largest bin; ties go to the smallest (row, col, k).
pub fn argmax_bin(p: &PoseVolume) -> (usize, usize, usize) {
    let mut best = (f32::NEG_INFINITY, (usize::MAX, usize::MAX, usize::MAX));
    for (i, &v) in p.values.iter().enumerate() {
        let (k, row, col) = p.unravel(i);
        let key = (row, col, k);
        if v > best.0 || (v == best.0 && key < best.1) {
            best = (v, key);
        }
    }
    best.1
}

/// Vertex offset of the parabola through `(−1, a), (0, b), (1, c)` in log
/// space, clamped to half a bin; zero when the fit is not concave.
fn quadratic_offset(a: f64, b: f64, c: f64) -> f64 {
    let (la, lb, lc) = (a.max(1e-300).ln(), b.max(1e-300).ln(), c.max(1e-300).ln());
    let denom = la - 2.0 * lb + lc;
    if !(denom < 0.0) || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (la - lc) / denom).clamp(-0.5, 0.5)
}

/// Maximum-likelihood pose with separable sub-bin refinement.
pub fn argmax_pose(p: &PoseVolume) -> Result<(Pose2, f64)> {
    require_probability(p)?;
    let (row, col, k) = argmax_bin(p);
    let best = p.get(k, row, col);
    let (w, h, kk) = (p.spec.width, p.spec.height, p.k);
    let dr = if row > 0 && row + 1 < h {
        quadratic_offset(p.get(k, row - 1, col), best, p.get(k, row + 1, col))
    } else {
        0.0
    };
    let dc = if col > 0 && col + 1 < w {
        quadratic_offset(p.get(k, row, col - 1), best, p.get(k, row, col + 1))
    } else {
        0.0
    };
    let dk = if kk >= 3 {
        quadratic_offset(p.get((k + kk - 1) % kk, row, col), best, p.get((k + 1) % kk, row, col))
    } else {
        0.0
    };
    let c = p.spec.cell_center(row, col);
    let pose = Pose2::new(
        c.x + dc * p.spec.delta,
        c.y + dr * p.spec.delta,
        p.theta(k) + dk * p.theta_step(),
    );
    Ok((pose, best))
}

/// Probability-weighted second moment about `mode` over bins within
/// `window = (meters, radians)`; rows/cols ordered (x, y, θ).
pub fn covariance(p: &PoseVolume, mode: &Pose2, window: (f64, f64)) -> Result<[[f64; 3]; 3]> {
    require_probability(p)?;
    let mut m = [[0.0; 3]; 3];
    let mut mass = 0.0;
    let dtheta: Vec<f64> = (0..p.k).map(|k| normalize_angle(p.theta(k) - mode.theta)).collect();
    for row in 0..p.spec.height {
        for col in 0..p.spec.width {
            let c = p.spec.cell_center(row, col);
            let (dx, dy) = (c.x - mode.x, c.y - mode.y);
            if dx.hypot(dy) > window.0 {
                continue;
            }
            for (k, &dt) in dtheta.iter().enumerate() {
                if dt.abs() > window.1 {
                    continue;
                }
                let w = p.get(k, row, col);
                if w == 0.0 {
                    continue;
                }
                let e = [dx, dy, dt];
                mass += w;
                for i in 0..3 {
                    for j in 0..3 {
                        m[i][j] += w * e[i] * e[j];
                    }
                }
            }
        }
    }
    if mass <= 0.0 {
        return Err(Error::Degenerate("no probability mass inside the covariance window".into()));
    }
    for row in m.iter_mut() {
        row.iter_mut().for_each(|v| *v /= mass);
    }
    // Exact symmetry despite accumulation order.
    for i in 0..3 {
        for j in 0..i {
            let s = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    Ok(m)
}

/// Greedy non-maximum suppression. A bin is suppressed by a kept mode when
/// it lies within `min_separation.0` meters *and* `min_separation.1`
/// radians of it. Stops at `top_k` modes or when only zero bins remain.
pub fn local_modes(p: &PoseVolume, top_k: usize, min_separation: (f64, f64)) -> Result<Vec<(Pose2, f64)>> {
    require_probability(p)?;
    let mut order: Vec<usize> = (0..p.values.len()).filter(|&i| p.values[i] > 0.0).collect();
    order.sort_by(|&a, &b| p.values[b].total_cmp(&p.values[a]).then(a.cmp(&b)));
    let mut modes: Vec<(Pose2, f64)> = Vec::new();
    for i in order {
        if modes.len() >= top_k {
            break;
        }
        let (k, row, col) = p.unravel(i);
        let pose = p.pose_of(k, row, col);
        let suppressed = modes.iter().any(|(m, _)| {
            (m.translation() - pose.translation()).norm() <= min_separation.0
                && normalize_angle(m.theta - pose.theta).abs() <= min_separation.1
        });
        if !suppressed {
            modes.push((pose, p.values[i] as f64));
        }
    }
    Ok(modes)
}

/// `−log P(gt)` with trilinear interpolation and a floor of 1e-12.
pub fn nll_loss(p: &PoseVolume, gt: &Pose2) -> Result<f64> {
    require_probability(p)?;
    let v = sample_trilinear(p, gt)
        .ok_or_else(|| Error::Domain(format!("ground truth ({:.2}, {:.2}) outside the volume", gt.x, gt.y)))?;
    Ok(-v.max(PROB_FLOOR).ln())
}
