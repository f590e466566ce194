//! Fixtures shared by the benchmarks.

use planloc_core::mapenc::{Encoder, FeatureGrid};
use planloc_core::synth::{gen_world, render_observation, BevSpec, ObservationNoise, WorldSpec};
use planloc_core::{AnalyticEncoder, AnalyticParams, BevGrid, ClassTable, NeuralMap, Pose2};

/// The default 128 m synthetic world, encoded, plus one noisy observation
/// taken from its center.
pub fn scene(seed: u64) -> (NeuralMap, BevGrid) {
    let world = gen_world(seed, &WorldSpec::default()).expect("default world spec is valid");
    let enc = AnalyticEncoder::new(&ClassTable::default(), AnalyticParams::centered()).expect("valid params");
    let map = enc.encode(&FeatureGrid::zeros(0, 0, 0), &world.raster).expect("encodes");
    let noise = ObservationNoise { sigma_n: 0.1, dropout: 0.2 };
    let bev = render_observation(&map, &Pose2::new(0.25, 0.25, 0.3), BevSpec::default(), noise, seed).expect("renders");
    (map, bev)
}
