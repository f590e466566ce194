//! Optional TOML configuration shared by all subcommands.
//!
//! ```toml
//! class_table = "classes.txt"      # defaults to the built-in table
//! overpass_url = "https://..."     # PLANLOC_OVERPASS_URL and --endpoint win
//!
//! [encoder]
//! kind = "analytic"                # analytic | embedding | file
//! rho = 2.0
//! channels = 8
//! projection_seed = 0
//! gain = 1.0
//! center = true
//! embedding_dim = 8                # kind = "embedding"
//! embedding_seed = 0
//! path = "map.plnm"                # kind = "file"
//!
//! [noise]                          # synth observations
//! sigma_n = 0.1
//! dropout = 0.2
//!
//! [world]                          # synth world generator
//! extent_m = 128.0
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use planloc_core::mapenc::{embed_classes, Embeddings, Encoder, FeatureGrid, FileEncoder, Projection};
use planloc_core::synth::{ObservationNoise, WorldSpec};
use planloc_core::{AnalyticEncoder, AnalyticParams, ClassTable, MapRaster, NeuralMap};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub class_table: Option<PathBuf>,
    pub overpass_url: Option<String>,
    pub encoder: EncoderConfig,
    pub noise: ObservationNoise,
    pub world: WorldSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Analytic,
    Embedding,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub rho: f64,
    pub channels: usize,
    pub projection_seed: u64,
    pub gain: f64,
    pub center: bool,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let p = AnalyticParams::centered();
        Self {
            kind: EncoderKind::Analytic,
            rho: p.rho,
            channels: p.n,
            projection_seed: 0,
            gain: p.gain,
            center: p.center,
            embedding_dim: 8,
            embedding_seed: 0,
            path: None,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.class_table);
        resolve(&mut cfg.encoder.path);
        cfg.world.validate()?;
        Ok(cfg)
    }

    pub fn class_table(&self) -> Result<ClassTable> {
        match &self.class_table {
            None => Ok(ClassTable::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading class table {}", p.display()))?;
                Ok(text.parse()?)
            }
        }
    }

    pub fn analytic_params(&self) -> AnalyticParams {
        let e = &self.encoder;
        AnalyticParams {
            rho: e.rho,
            n: e.channels,
            projection: Projection::Random { seed: e.projection_seed },
            gain: e.gain,
            center: e.center,
        }
    }

    /// Encodes `raster` with the configured encoder.
    pub fn encode(&self, raster: &MapRaster, table: &ClassTable) -> Result<NeuralMap> {
        let analytic = AnalyticEncoder::new(table, self.analytic_params())?;
        let none = FeatureGrid::zeros(0, 0, 0);
        Ok(match self.encoder.kind {
            EncoderKind::Analytic => analytic.encode(&none, raster)?,
            EncoderKind::Embedding => {
                let emb = Embeddings::random(table, self.encoder.embedding_dim, self.encoder.embedding_seed);
                NeuralMap {
                    spec: raster.spec,
                    features: embed_classes(raster, &emb)?,
                    omega: analytic.prior(raster),
                }
            }
            EncoderKind::File => {
                let path = self
                    .encoder
                    .path
                    .as_ref()
                    .context("encoder kind \"file\" needs encoder.path")?;
                let map = crate::read_map(path)?;
                FileEncoder(map).encode(&none, raster)?
            }
        })
    }
}
