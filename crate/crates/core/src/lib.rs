//! Map-based 3-DoF visual localization: OpenStreetMap rasters become a
//! feature map, a bird's-eye-view template lifted from image columns is
//! correlated against it over all poses, and the resulting posterior is
//! summarized, fused across frames and evaluated.

mod binio;
pub mod bev;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod infer;
pub mod mapenc;
pub mod matcher;
pub mod osm;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use bev::{BevGrid, ColumnFeatures, ScaleBins};
pub use error::{Error, Result};
pub use geometry::{BevPoint, Datum, GridSpec, Point2, Pose2};
pub use mapenc::{AnalyticEncoder, AnalyticParams, NeuralMap};
pub use matcher::{Backend, LocationPrior, PoseVolume, VolumeKind};
pub use osm::{BBox, ClassTable, MapGeometries};
pub use raster::MapRaster;
