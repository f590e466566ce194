//! Neural map construction: class embeddings, the analytic distance-field
//! encoder and the external map exchange format.

mod edt;
mod io;

pub use edt::{distance_transform, squared_distance_transform};
pub use io::{read_neural_map, write_neural_map, NEURAL_MAP_MAGIC, NEURAL_MAP_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::osm::{ClassTable, GeometryKind};
use crate::raster::MapRaster;

/// Prior score on cells where a camera cannot stand.
pub const BLOCKED_PRIOR: f64 = -1e4;

/// Dense `height × width × channels` grid, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Per-channel class embedding tables; row 0 of each is the void class.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub n: usize,
    pub tables: [Vec<Vec<f32>>; 3],
}

impl Embeddings {
    /// Seeded Gaussian embeddings sized to `table`, void mapped to zero.
    pub fn random(table: &ClassTable, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = GeometryKind::ALL.map(|kind| {
            (0..table.class_count(kind))
                .map(|i| {
                    (0..n)
                        .map(|_| if i == 0 { 0.0 } else { StandardNormal.sample(&mut rng) })
                        .collect()
                })
                .collect()
        });
        Self { n, tables }
    }

    fn validate(&self) -> Result<()> {
        for t in &self.tables {
            if t.is_empty() || t.iter().any(|v| v.len() != self.n) {
                return Err(Error::Config("embedding rows must all have length N".into()));
            }
            if t[0].iter().any(|&x| x != 0.0) {
                return Err(Error::Config("void class must embed to zero".into()));
            }
        }
        Ok(())
    }
}

/// Concatenates the three per-channel embeddings of every cell.
pub fn embed_classes(raster: &MapRaster, emb: &Embeddings) -> Result<FeatureGrid> {
    emb.validate()?;
    let (w, h, n) = (raster.spec.width, raster.spec.height, emb.n);
    let mut out = FeatureGrid::zeros(w, h, 3 * n);
    for (ch, table) in emb.tables.iter().enumerate() {
        for (i, &v) in raster.channels[ch].iter().enumerate() {
            let row = table.get(v as usize).ok_or_else(|| {
                Error::Config(format!("class index {v} in channel {ch} has no embedding"))
            })?;
            out.data[i * 3 * n + ch * n..i * 3 * n + (ch + 1) * n].copy_from_slice(row);
        }
    }
    Ok(out)
}

/// Map features `F` and location prior `Ω` on the raster grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMap {
    pub spec: GridSpec,
    pub features: FeatureGrid,
    /// `height × width` prior scores, row-major.
    pub omega: Vec<f32>,
}

impl NeuralMap {
    pub fn n(&self) -> usize {
        self.features.channels
    }

    pub fn omega_at(&self, row: usize, col: usize) -> f64 {
        self.omega[row * self.spec.width + col] as f64
    }
}

/// Anything that turns an embedded raster into a neural map.
pub trait Encoder {
    fn encode(&self, embedded: &FeatureGrid, raster: &MapRaster) -> Result<NeuralMap>;
}

/// Fixed map loaded from disk; checks that it covers the requested raster.
pub struct FileEncoder(pub NeuralMap);

impl Encoder for FileEncoder {
    fn encode(&self, _embedded: &FeatureGrid, raster: &MapRaster) -> Result<NeuralMap> {
        if self.0.spec != raster.spec {
            return Err(Error::Config("loaded neural map grid differs from the raster grid".into()));
        }
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// Seeded random matrix with orthonormal rows (or columns when `n`
    /// exceeds the number of classes).
    Random { seed: u64 },
    /// First `n` distance layers unchanged.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticParams {
    /// Truncation radius in meters.
    pub rho: f64,
    pub n: usize,
    pub projection: Projection,
    /// Uniform feature scale.
    pub gain: f64,
    /// Subtract the map-wide mean of every channel after projection, so
    /// correlation does not favor poses that merely see more map content.
    pub center: bool,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        Self {
            rho: 4.0,
            n: 8,
            projection: Projection::Random { seed: 0 },
            gain: 1.0,
            center: false,
        }
    }
}

impl AnalyticParams {
    /// Sharp (2 m) zero-mean fields; this configuration reliably
    /// self-localizes rendered observations under plain correlation.
    pub fn centered() -> Self {
        Self {
            rho: 2.0,
            center: true,
            ..Self::default()
        }
    }
}

/// Distance-field encoder: one truncated distance layer per class, projected
/// to `n` channels.
#[derive(Debug, Clone)]
pub struct AnalyticEncoder {
    params: AnalyticParams,
    class_counts: [usize; 3],
    blocked: Vec<u8>,
    /// `n × classes`, row-major.
    matrix: Vec<f64>,
}

impl AnalyticEncoder {
    pub fn new(table: &ClassTable, params: AnalyticParams) -> Result<Self> {
        if !(params.rho > 0.0 && params.rho.is_finite()) {
            return Err(Error::Config(format!("truncation radius must be positive, got {}", params.rho)));
        }
        if params.n == 0 {
            return Err(Error::Config("encoder needs at least one channel".into()));
        }
        let class_counts = GeometryKind::ALL.map(|k| table.class_count(k) - 1);
        let d: usize = class_counts.iter().sum();
        let matrix = match params.projection {
            Projection::Identity => {
                let mut m = vec![0.0; params.n * d];
                for i in 0..params.n.min(d) {
                    m[i * d + i] = 1.0;
                }
                m
            }
            Projection::Random { seed } => orthonormal(params.n, d, seed),
        };
        let blocked = ["building", "water"]
            .iter()
            .filter_map(|name| table.index_of(GeometryKind::Area, name))
            .collect();
        Ok(Self {
            params,
            class_counts,
            blocked,
            matrix,
        })
    }

    pub fn params(&self) -> &AnalyticParams {
        &self.params
    }

    /// Truncated distance features `1 − d/ρ` for every class, stacked in
    /// channel order areas, lines, nodes: `height × width × classes`.
    pub fn distance_stack(&self, raster: &MapRaster) -> Result<FeatureGrid> {
        let spec = &raster.spec;
        let (w, h) = (spec.width, spec.height);
        let d: usize = self.class_counts.iter().sum();
        let mut out = FeatureGrid::zeros(w, h, d);
        let rho_cells = self.params.rho / spec.delta;
        let mut layer = 0;
        let mut mask = vec![false; w * h];
        for (ch, &count) in self.class_counts.iter().enumerate() {
            let plane = &raster.channels[ch];
            if let Some(&v) = plane.iter().find(|&&v| v as usize > count) {
                return Err(Error::Config(format!("class index {v} in channel {ch} exceeds table")));
            }
            for class in 1..=count as u8 {
                let mut any = false;
                for (m, &v) in mask.iter_mut().zip(plane) {
                    *m = v == class;
                    any |= *m;
                }
                if any {
                    let dist = distance_transform(&mask, w, h);
                    for (i, dc) in dist.iter().enumerate() {
                        let f = 1.0 - dc / rho_cells;
                        if f > 0.0 {
                            out.data[i * d + layer] = f as f32;
                        }
                    }
                }
                layer += 1;
            }
        }
        Ok(out)
    }

    pub fn prior(&self, raster: &MapRaster) -> Vec<f32> {
        raster.channels[0]
            .iter()
            .map(|v| if self.blocked.contains(v) { BLOCKED_PRIOR as f32 } else { 0.0 })
            .collect()
    }
}

impl Encoder for AnalyticEncoder {
    /// The embedded grid is not consulted: distance fields are computed from
    /// class identity directly.
    fn encode(&self, _embedded: &FeatureGrid, raster: &MapRaster) -> Result<NeuralMap> {
        let stack = self.distance_stack(raster)?;
        let (d, n) = (stack.channels, self.params.n);
        let mut features = FeatureGrid::zeros(raster.spec.width, raster.spec.height, n);
        let gain = self.params.gain;
        for (src, dst) in stack.data.chunks_exact(d.max(1)).zip(features.data.chunks_exact_mut(n)) {
            if src.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (c, out) in dst.iter_mut().enumerate() {
                let row = &self.matrix[c * d..(c + 1) * d];
                let acc: f64 = row.iter().zip(src).map(|(m, &x)| m * x as f64).sum();
                *out = (gain * acc) as f32;
            }
        }
        if self.params.center {
            let cells = (features.data.len() / n).max(1) as f64;
            for c in 0..n {
                let mean = features.data.iter().skip(c).step_by(n).map(|&v| v as f64).sum::<f64>() / cells;
                for v in features.data.iter_mut().skip(c).step_by(n) {
                    *v = (*v as f64 - mean) as f32;
                }
            }
        }
        Ok(NeuralMap {
            spec: raster.spec,
            features,
            omega: self.prior(raster),
        })
    }
}

/// Encodes with the default class table.
pub fn encode_analytic(embedded: &FeatureGrid, raster: &MapRaster, params: &AnalyticParams) -> Result<NeuralMap> {
    AnalyticEncoder::new(&ClassTable::default(), params.clone())?.encode(embedded, raster)
}

/// `rows × cols` matrix whose shorter dimension is orthonormal, by
/// Gram–Schmidt on Gaussian draws.
fn orthonormal(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                m[i * cols + j] = x;
            } else {
                m[j * cols + i] = x;
            }
        }
    }
    m
}
