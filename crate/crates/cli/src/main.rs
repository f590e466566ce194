//! `planloc`: fetch, rasterize, encode, localize, fuse, synthesize and
//! evaluate from the command line.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use planloc_core::bev::{
    lift_polar, polar_to_cartesian, read_bev, read_column_features, write_bev, BEV_MAGIC, COLUMNS_MAGIC,
};
use planloc_core::eval::{pose_errors, write_report, Scenario, ScenarioObservation, TrialRecord};
use planloc_core::fusion::{fuse_views, parse_trajectory, relative_to_reference, MarkovFilter, MotionNoise};
use planloc_core::mapenc::{read_neural_map, write_neural_map};
use planloc_core::matcher::{read_volume, write_volume};
use planloc_core::osm::{endpoint_from_env, OverpassClient, RetryPolicy, ENDPOINT_ENV};
use planloc_core::pipeline::{localize, rasterize_osm, summarize, LocalizeOptions, PoseRecord};
use planloc_core::raster::{read_tile_checked, write_tile};
use planloc_core::synth::{gen_world, random_free_pose, render_observation, BevSpec};
use planloc_core::{Backend, BBox, BevGrid, LocationPrior, NeuralMap, Point2, PoseVolume, ScaleBins};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::Config;

#[derive(Parser)]
#[command(name = "planloc", version, about = "Map-based 3-DoF visual localization")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download OSM data for a bounding box from an Overpass endpoint.
    Fetch {
        /// `min_lon,min_lat,max_lon,max_lat`
        bbox: String,
        #[arg(long, short, default_value = "map.osm")]
        out: PathBuf,
        /// Overrides the config file and the endpoint environment variable.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Request timeout, seconds.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
        #[arg(long, default_value_t = 3)]
        attempts: u32,
        /// Delay before the first retry, milliseconds; doubles afterwards.
        #[arg(long, default_value_t = 1000)]
        retry_delay_ms: u64,
    },
    /// Rasterize an OSM XML file into a class tile.
    Rasterize {
        osm: PathBuf,
        /// Ground sampling distance, meters per cell.
        #[arg(long, default_value_t = 0.5)]
        gsd: f64,
        /// Tile side, meters.
        #[arg(long, default_value_t = 128.0)]
        size: f64,
        /// Polyline width, cells.
        #[arg(long, default_value_t = 1)]
        line_width: u32,
        #[arg(long, short, default_value = "tile.pltl")]
        out: PathBuf,
    },
    /// Encode a class tile into a neural map.
    Encode {
        tile: PathBuf,
        #[arg(long, short, default_value = "map.plnm")]
        out: PathBuf,
    },
    /// Localize one observation (BEV or column features) against a map.
    Localize {
        map: PathBuf,
        /// BEV grid (PLBV) or column features (PLCF).
        observation: PathBuf,
        #[command(flatten)]
        opts: LocalizeArgs,
        /// Prior center `x,y` in map meters.
        #[arg(long, requires = "radius", value_parser = parse_point, allow_hyphen_values = true)]
        prior: Option<Point2>,
        /// Prior radius, meters.
        #[arg(long, requires = "prior")]
        radius: Option<f64>,
        /// BEV cells per side when lifting column features.
        #[arg(long, default_value_t = 64)]
        bev_cells: usize,
        #[arg(long, short, default_value = "volume.plpv")]
        out: PathBuf,
    },
    /// Fuse the posteriors listed in a trajectory file.
    Fuse {
        trajectory: PathBuf,
        /// Run a sequential filter instead of joint fusion onto frame 0.
        #[arg(long)]
        markov: bool,
        #[arg(long, default_value_t = 0.5)]
        sigma_xy: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_theta_deg: f64,
        #[arg(long, short, default_value = "fused.plpv")]
        out: PathBuf,
    },
    /// Generate a synthetic world and rendered observations.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, short, default_value = "scenario")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        rotations: usize,
        /// Keep poses this far from the map edge, meters.
        #[arg(long, default_value_t = 32.0)]
        margin: f64,
        /// Feature noise in multiples of the map feature std (overrides config).
        #[arg(long)]
        sigma_n: Option<f64>,
        /// Cell dropout probability (overrides config).
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Localize every observation of a scenario and write a recall report.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        backend: Option<String>,
        /// Report path (default: `<dir>/report.jsonl`).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Render the heading-marginal of a volume as a grayscale PNG, north up.
    Heatmap {
        volume: PathBuf,
        #[arg(long, short, default_value = "heatmap.png")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct LocalizeArgs {
    /// Rotation bins.
    #[arg(long, default_value_t = 512)]
    k: usize,
    #[arg(long, default_value = "fourier")]
    backend: String,
    /// Number of modes to report.
    #[arg(long, default_value_t = 3)]
    top_k: usize,
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Point2::new(p(x)?, p(y)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fetch {
            bbox,
            out,
            endpoint,
            cache_dir,
            timeout,
            attempts,
            retry_delay_ms,
        } => {
            let bbox: BBox = bbox.parse()?;
            let endpoint = endpoint
                .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                .or(cfg.overpass_url.clone())
                .unwrap_or_else(endpoint_from_env);
            let retry = RetryPolicy {
                base_delay: Duration::from_millis(retry_delay_ms),
                factor: 2.0,
                max_attempts: attempts.max(1),
            };
            let mut client = OverpassClient::new(endpoint, Duration::from_secs(timeout)).with_retry(retry);
            if let Some(dir) = cache_dir {
                client = client.with_cache(dir);
            }
            let bytes = client.fetch(&bbox)?;
            write_file(&out, &bytes)?;
            eprintln!("{} bytes → {} ({} requests)", bytes.len(), out.display(), client.network_calls());
        }
        Command::Rasterize {
            osm,
            gsd,
            size,
            line_width,
            out,
        } => {
            let table = cfg.class_table()?;
            let doc = fs::read(&osm).with_context(|| format!("reading {}", osm.display()))?;
            let (tile, report) = rasterize_osm(&doc, &table, gsd, size, line_width)?;
            for s in &report.skipped {
                log::warn!("skipped {:?} {}: {}", s.element, s.id, s.reason);
            }
            let mut w = create(&out)?;
            write_tile(&tile, &mut w)?;
            w.flush()?;
            println!("{}", tile.digest());
        }
        Command::Encode { tile, out } => {
            let table = cfg.class_table()?;
            let (raster, mismatch) = read_tile_checked(open(&tile)?, &table)?;
            if let Some(m) = mismatch {
                log::warn!("{m}");
            }
            let map = cfg.encode(&raster, &table)?;
            let mut w = create(&out)?;
            write_neural_map(&map, &mut w)?;
            w.flush()?;
        }
        Command::Localize {
            map,
            observation,
            opts,
            prior,
            radius,
            bev_cells,
            out,
        } => {
            let map = read_map(&map)?;
            let bev = read_observation(&observation, map.spec.delta, bev_cells)?;
            let mut lo = localize_options(&opts.backend, opts.k, opts.top_k)?;
            lo.prior = prior.zip(radius).map(|(center, radius)| LocationPrior { center, radius });
            let (posterior, record) = localize(&map, &bev, &lo)?;
            save_volume(&out, &posterior)?;
            print_record(&record)?;
        }
        Command::Fuse {
            trajectory,
            markov,
            sigma_xy,
            sigma_theta_deg,
            out,
        } => {
            let text = fs::read_to_string(&trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
            let base = trajectory.parent().unwrap_or(Path::new("."));
            let frames = parse_trajectory(&text, base)?;
            let volumes = frames
                .iter()
                .map(|f| load_volume(&f.volume))
                .collect::<Result<Vec<_>>>()?;
            let fused = if markov {
                let mut filter = MarkovFilter::new(MotionNoise {
                    sigma_xy,
                    sigma_theta: sigma_theta_deg.to_radians(),
                });
                for (f, v) in frames.iter().zip(&volumes) {
                    filter.step(&f.odometry, v)?;
                }
                filter.state().cloned().context("empty trajectory")?
            } else {
                let odometry: Vec<_> = frames.iter().map(|f| f.odometry).collect();
                let rel = relative_to_reference(&odometry, 0)?;
                let views: Vec<_> = volumes.iter().zip(rel).collect();
                fuse_views(&views)?
            };
            save_volume(&out, &fused)?;
            print_record(&summarize(&fused, &LocalizeOptions::default())?)?;
        }
        Command::Synth {
            seed,
            out,
            count,
            rotations,
            margin,
            sigma_n,
            dropout,
        } => synth(&cfg, seed, &out, count, rotations, margin, sigma_n, dropout)?,
        Command::Eval { dir, backend, out } => {
            let scenario = Scenario::from_json(&fs::read_to_string(dir.join("scenario.json")).context("reading scenario.json")?)?;
            let map = read_map(&dir.join(&scenario.map))?;
            let lo = localize_options(backend.as_deref().unwrap_or("fourier"), scenario.rotations, 3)?;
            let mut trials = Vec::with_capacity(scenario.observations.len());
            for obs in &scenario.observations {
                let bev = read_bev(open(&dir.join(&obs.bev))?)?;
                let (_, record) = localize(&map, &bev, &lo)?;
                trials.push(TrialRecord {
                    id: obs.id.clone(),
                    seed: obs.seed,
                    estimate: record.pose,
                    ground_truth: obs.ground_truth,
                    errors: pose_errors(&record.pose, &obs.ground_truth),
                });
            }
            let out = out.unwrap_or_else(|| dir.join("report.jsonl"));
            let mut w = create(&out)?;
            let recall = write_report(&trials, &mut w)?;
            w.flush()?;
            println!("{}", serde_json::to_string(&recall)?);
        }
        Command::Heatmap { volume, out } => {
            let v = load_volume(&volume)?;
            heatmap(&v).save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    cfg: &Config,
    seed: u64,
    out: &Path,
    count: usize,
    rotations: usize,
    margin: f64,
    sigma_n: Option<f64>,
    dropout: Option<f64>,
) -> Result<()> {
    let mut noise = cfg.noise;
    noise.sigma_n = sigma_n.unwrap_or(noise.sigma_n);
    noise.dropout = dropout.unwrap_or(noise.dropout);
    let table = cfg.class_table()?;
    let world = gen_world(seed, &cfg.world)?;
    let map = cfg.encode(&world.raster, &table)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut w = create(&out.join("tile.pltl"))?;
    write_tile(&world.raster, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("map.plnm"))?;
    write_neural_map(&map, &mut w)?;
    w.flush()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(count);
    for i in 0..count {
        let gt = random_free_pose(&map, rotations, margin, &mut rng)?;
        let obs_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let bev = render_observation(&map, &gt, BevSpec::default(), noise, obs_seed)?;
        let name = format!("obs_{i:03}.plbv");
        let mut w = create(&out.join(&name))?;
        write_bev(&bev, &mut w)?;
        w.flush()?;
        observations.push(ScenarioObservation {
            id: format!("obs_{i:03}"),
            seed: obs_seed,
            bev: name,
            ground_truth: gt,
        });
    }
    let scenario = Scenario {
        seed,
        map: "map.plnm".into(),
        rotations,
        observations,
    };
    write_file(&out.join("scenario.json"), scenario.to_json().as_bytes())?;
    println!("{}", world.raster.digest());
    Ok(())
}

fn localize_options(backend: &str, k: usize, top_k: usize) -> Result<LocalizeOptions> {
    let backend: Backend = backend.parse()?;
    Ok(LocalizeOptions {
        rotations: k,
        backend,
        top_k,
        ..LocalizeOptions::default()
    })
}

/// Maps the heading-marginal to 0–255 with the maximum at white; image row
/// 0 is the northernmost grid row.
fn heatmap(v: &PoseVolume) -> image::GrayImage {
    let m = v.theta_marginal();
    let (w, h) = (v.spec.width, v.spec.height);
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let val = m[(h - 1 - y as usize) * w + x as usize];
        let g = if span > 0.0 { 255.0 * (val - lo) / span } else { 255.0 };
        image::Luma([g.round() as u8])
    })
}

fn print_record(record: &PoseRecord) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(record)?);
    Ok(())
}

fn read_observation(path: &Path, delta: f64, cells: usize) -> Result<BevGrid> {
    let mut magic = [0u8; 4];
    open(path)?
        .read_exact(&mut magic)
        .with_context(|| format!("reading {}", path.display()))?;
    if &magic == BEV_MAGIC {
        Ok(read_bev(open(path)?)?)
    } else if &magic == COLUMNS_MAGIC {
        let cols = read_column_features(open(path)?)?;
        let defaults = ScaleBins::default();
        let bins = ScaleBins::new(defaults.sigma_min, defaults.sigma_max, cols.scales.saturating_sub(1))?;
        let polar = lift_polar(&cols, &bins, delta, cells)?;
        Ok(polar_to_cartesian(&polar, &cols, delta, cells)?)
    } else {
        bail!("{}: neither a BEV grid nor column features", path.display())
    }
}

pub(crate) fn read_map(path: &Path) -> Result<NeuralMap> {
    Ok(read_neural_map(open(path)?)?)
}

fn load_volume(path: &Path) -> Result<PoseVolume> {
    Ok(read_volume(open(path)?)?)
}

fn save_volume(path: &Path, v: &PoseVolume) -> Result<()> {
    let mut w = create(path)?;
    write_volume(v, &mut w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
