//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher),
//! in cell units.

const FAR: f64 = 1e20;

/// Lower envelope of parabolas rooted at `f[q]`; writes `min_q (p−q)² + f[q]`.
fn transform_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let s = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut x = s(q, v[k]);
        while x <= z[k] {
            k -= 1;
            x = s(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = x;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        *o = (p as f64 - q as f64).powi(2) + f[q];
    }
}

/// Squared distance (in cells²) from every cell to the nearest `true` cell
/// of a row-major `width × height` mask. Cells with no target anywhere get
/// a very large value.
pub fn squared_distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(mask.len(), width * height);
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
    let m = width.max(height);
    let (mut f, mut out) = (vec![0.0; m], vec![0.0; m]);
    let (mut v, mut z) = (vec![0usize; m], vec![0.0; m + 1]);
    for col in 0..width {
        for row in 0..height {
            f[row] = grid[row * width + col];
        }
        transform_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for row in 0..height {
            grid[row * width + col] = out[row];
        }
    }
    for row in grid.chunks_exact_mut(width) {
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

/// Euclidean distance in cells to the nearest `true` cell.
pub fn distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    squared_distance_transform(mask, width, height)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}
