//! The `simra` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simra_core::detection::{append_candidates, detect_candidates, filter_min_diff};
use simra_core::mapgraph::osm::convert_osm;
use simra_core::mapgraph::{build_graph, match_ride, parse_extract, populate, GraphIndex, MapGraph, MatchedRide};
use simra_core::pipeline::analyze;
use simra_core::privacy::{crop_ride, CropSpec, TransportMode};
use simra_core::scoring::{build_report, hotspots_geojson, ScoreReport, Selection};
use simra_core::stats::{compute_stats, time_zone};
use simra_core::{parse_profile, parse_ride, serialize_profile, serialize_ride, Profile, Ride};
use simra_service::store::QualityFlags;
use simra_service::{Config, Store};

#[derive(Debug, Parser)]
#[command(name = "simra", version, about = "Cycling near-miss analytics: detection, map matching, scoring and serving")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-ride stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for randomized tooling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append auto-detected candidate incidents to a ride file.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        bucket_s: Option<u32>,
        #[arg(long)]
        min_diff: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove the start and/or end of a ride by time or distance.
    Crop {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        start_s: Option<f64>,
        #[arg(long)]
        start_m: Option<f64>,
        #[arg(long)]
        end_s: Option<f64>,
        #[arg(long)]
        end_m: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CSV quality report for a directory of rides.
    Quality {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate ride statistics into a profile file.
    ProfileStats {
        #[arg(long)]
        rides: PathBuf,
        #[arg(long)]
        tz: String,
        /// Existing profile whose demographics are kept.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a street graph from a JSON-lines map extract.
    BuildGraph {
        #[arg(long)]
        extract: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match rides onto a graph.
    Match {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        rides: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill graph counters from matched rides.
    Populate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        matched: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a populated graph and rank its hotspots.
    Score {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        score: ScoreFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hotspot GeoJSON from a score report.
    Hotspots {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ingest and query service.
    Serve {
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Copy a region's stored ride files verbatim.
    Export {
        #[arg(long)]
        region: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: build graph, match, populate, score, hotspots.
    Run {
        #[arg(long)]
        rides: PathBuf,
        /// Defaults to the only region in the configuration.
        #[arg(long)]
        region: Option<String>,
        /// Overrides the region's configured map extract.
        #[arg(long)]
        extract: Option<PathBuf>,
        #[command(flatten)]
        score: ScoreFlags,
        #[arg(long)]
        out: PathBuf,
        /// Recompute even if the manifest is up to date.
        #[arg(long)]
        force: bool,
    },
    /// Convert an OSM XML extract to the JSON-lines extract format.
    ConvertOsm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic fixtures.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Grid street extract plus rides driven along it.
    Grid {
        #[arg(long, default_value_t = 3)]
        lines: usize,
        #[arg(long, default_value_t = 50)]
        rides: usize,
        #[arg(long, default_value_t = 2.0)]
        noise_m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rides whose incidents total the published Berlin counts.
    Table {
        #[arg(long, default_value = "Berlin")]
        region: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Populated graph of the three reference streets.
    Streets {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub length_adjusted: bool,
    #[arg(long, conflicts_with = "threshold")]
    pub top_k: Option<usize>,
    /// Minimum raw score for a hotspot.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_rides: Option<u64>,
}

impl ScoreFlags {
    fn apply(&self, cfg: &mut simra_core::scoring::ScoreConfig) {
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if self.length_adjusted {
            cfg.length_adjusted = true;
        }
        if let Some(k) = self.top_k {
            cfg.selection = Selection::TopK(k);
        }
        if let Some(t) = self.threshold {
            cfg.selection = Selection::Threshold(t);
        }
        if let Some(m) = self.min_rides {
            cfg.min_rides = m;
        }
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

fn fail(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> CliError {
    move |e| CliError { stage, message: e.to_string() }
}

fn err(stage: &'static str, message: impl Into<String>) -> CliError {
    CliError { stage, message: message.into() }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(stage: &'static str, path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| err(stage, format!("{}: {e}", path.display())))
}

fn write(stage: &'static str, path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| err(stage, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| err(stage, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(stage: &'static str, path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| fail(stage)(&e))?;
    text.push('\n');
    write(stage, path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(stage: &'static str, path: &Path) -> Result<T> {
    serde_json::from_slice(&read(stage, path)?).map_err(|e| err(stage, format!("{}: {e}", path.display())))
}

fn read_ride(stage: &'static str, path: &Path) -> Result<Ride> {
    parse_ride(&read(stage, path)?).map_err(|e| err(stage, format!("{}: {e}", path.display())))
}

/// A ride file from a rides directory.
pub struct RideFile {
    pub name: String,
    pub sha256: String,
    pub ride: Ride,
}

/// Parses every `*.ride` file of `dir` in file-name order.
pub fn read_rides(dir: &Path) -> Result<Vec<RideFile>> {
    let entries = fs::read_dir(dir).map_err(|e| err("read", format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ride"))
        .collect();
    if paths.is_empty() {
        return Err(err("read", format!("no rides found in {}", dir.display())));
    }
    paths.sort();
    paths
        .par_iter()
        .map(|p| {
            let bytes = read("read", p)?;
            let ride = parse_ride(&bytes).map_err(|e| err("read", format!("ride {}: {e}", p.display())))?;
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok(RideFile { name, sha256: hex::encode(Sha256::digest(&bytes)), ride })
        })
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let cfg = match path {
        Some(p) => Config::load(p).map_err(|e| fail("config")(&e))?,
        None => Config::default(),
    };
    cfg.validate().map_err(|e| fail("config")(&e))?;
    Ok(cfg)
}

fn load_graph(path: &Path) -> Result<MapGraph> {
    read_json("read", path)
}

fn mode_label(flags: &QualityFlags) -> &'static str {
    match flags.mode {
        Some(TransportMode::PlausibleBicycle) => "bicycle",
        Some(TransportMode::SuspectMotorized) => "motorized",
        None => "unknown",
    }
}

/// One line per ride: `ride_id,mode_flag,trailing_stop_trimmed_s`.
pub fn quality_csv(rides: &[RideFile], cfg: &simra_core::privacy::QualityConfig) -> String {
    let rows: Vec<String> = rides
        .par_iter()
        .map(|f| {
            let flags = QualityFlags::compute(&f.ride, cfg);
            format!("{},{},{:.3}", f.ride.ride_id, mode_label(&flags), flags.trailing_stop_ms as f64 / 1000.0)
        })
        .collect();
    let mut out = String::from("ride_id,mode_flag,trailing_stop_trimmed_s\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

/// Reproducibility record of a `run`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub region: String,
    pub config_sha256: String,
    pub extract: FileHash,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_is_current(out: &Path, expected: &Manifest) -> bool {
    let Ok(bytes) = fs::read(out.join("manifest.json")) else { return false };
    let Ok(old) = serde_json::from_slice::<Manifest>(&bytes) else { return false };
    let same_inputs = Manifest { outputs: vec![], ..old.clone() } == Manifest { outputs: vec![], ..expected.clone() };
    same_inputs
        && !old.outputs.is_empty()
        && old.outputs.iter().all(|o| fs::read(out.join(&o.file)).is_ok_and(|b| sha256_hex(&b) == o.sha256))
}

pub enum RunOutcome {
    Written(Manifest),
    UpToDate,
}

pub fn run_pipeline(
    cfg: &Config,
    rides_dir: &Path,
    region: Option<&str>,
    extract: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<RunOutcome> {
    let region = match region {
        Some(r) => r.to_string(),
        None if cfg.pipeline.regions.len() == 1 => cfg.pipeline.regions.keys().next().cloned().unwrap_or_default(),
        None => return Err(err("config", "--region is required unless the configuration names exactly one region")),
    };
    let extract = extract
        .map(Path::to_path_buf)
        .or_else(|| cfg.pipeline.regions.get(&region).and_then(|r| r.map_extract.clone()))
        .ok_or_else(|| err("config", format!("no map extract for region {region}")))?;
    let rides = read_rides(rides_dir)?;
    if let Some(bad) = rides.iter().find(|f| f.ride.region != region) {
        return Err(err("read", format!("ride {} belongs to region {}, not {region}", bad.name, bad.ride.region)));
    }
    let extract_bytes = read("build-graph", &extract)?;
    let config_json = serde_json::to_vec(&cfg.pipeline).map_err(|e| fail("config")(&e))?;
    let mut manifest = Manifest {
        tool: format!("simra {}", env!("CARGO_PKG_VERSION")),
        region: region.clone(),
        config_sha256: sha256_hex(&config_json),
        extract: FileHash { file: extract.display().to_string(), sha256: sha256_hex(&extract_bytes) },
        inputs: rides.iter().map(|f| FileHash { file: f.name.clone(), sha256: f.sha256.clone() }).collect(),
        outputs: vec![],
    };
    if !force && manifest_is_current(out, &manifest) {
        return Ok(RunOutcome::UpToDate);
    }

    let text = String::from_utf8(extract_bytes).map_err(|e| fail("build-graph")(&e))?;
    let records = parse_extract(&text).map_err(|e| fail("build-graph")(&e))?;
    let base = build_graph(&region, &records, &cfg.pipeline.graph).map_err(|e| fail("build-graph")(&e))?;
    let ride_list: Vec<Ride> = rides.into_iter().map(|f| f.ride).collect();
    let analysis = analyze(&base, &ride_list, &cfg.pipeline.matching, &cfg.pipeline.score).map_err(|e| fail("analyze")(&e))?;

    let mut artifacts: Vec<(&str, Vec<u8>)> = Vec::new();
    for (name, value) in [
        ("graph.json", serde_json::to_value(&analysis.graph)),
        ("report.json", serde_json::to_value(&analysis.report)),
        ("hotspots.geojson", Ok(hotspots_geojson(&analysis.report))),
    ] {
        let value = value.map_err(|e| fail("write")(&e))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| fail("write")(&e))?;
        text.push('\n');
        artifacts.push((name, text.into_bytes()));
    }
    let files: Vec<RideFile> = ride_list
        .into_iter()
        .zip(&manifest.inputs)
        .map(|(ride, h)| RideFile { name: h.file.clone(), sha256: h.sha256.clone(), ride })
        .collect();
    artifacts.push(("quality.csv", quality_csv(&files, &cfg.pipeline.quality).into_bytes()));
    for (name, bytes) in &artifacts {
        write("write", &out.join(name), bytes)?;
        manifest.outputs.push(FileHash { file: name.to_string(), sha256: sha256_hex(bytes) });
    }
    write_json("write", &out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome::Written(manifest))
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| fail("config")(&e))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Detect { input, top_k, bucket_s, min_diff, out } => {
            let det = &mut cfg.pipeline.detection;
            if let Some(k) = top_k {
                det.window.top_k_buckets = k;
            }
            if let Some(b) = bucket_s {
                det.window.bucket_seconds = b;
            }
            if let Some(m) = min_diff {
                det.min_diff = m;
            }
            let mut ride = read_ride("detect", &input)?;
            let cands = detect_candidates(&ride.samples, &det.window).map_err(|e| fail("detect")(&e))?;
            let cands = filter_min_diff(cands, det.min_diff);
            append_candidates(&mut ride, &cands);
            let bytes = serialize_ride(&ride).map_err(|e| fail("detect")(&e))?;
            write("detect", &out, &bytes)?;
            eprintln!("{} candidate(s) appended", cands.len());
        }
        Command::Crop { input, start_s, start_m, end_s, end_m, out } => {
            let spec = CropSpec { start_time_s: start_s, start_distance_m: start_m, end_time_s: end_s, end_distance_m: end_m };
            let ride = read_ride("crop", &input)?;
            let cropped = crop_ride(&ride, &spec).map_err(|e| fail("crop")(&e))?;
            write("crop", &out, &serialize_ride(&cropped).map_err(|e| fail("crop")(&e))?)?;
        }
        Command::Quality { input, out } => {
            let csv = quality_csv(&read_rides(&input)?, &cfg.pipeline.quality);
            match out {
                Some(p) => write("quality", &p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::ProfileStats { rides, tz, base, out } => {
            let tz = time_zone(&tz).map_err(|e| fail("profile-stats")(&e))?;
            let files = read_rides(&rides)?;
            let mut profile = match base {
                Some(p) => parse_profile(&read("profile-stats", &p)?).map_err(|e| fail("profile-stats")(&e))?,
                None => Profile::empty(files[0].ride.region.clone()),
            };
            let list: Vec<Ride> = files.into_iter().map(|f| f.ride).collect();
            compute_stats(&list, &tz, &cfg.pipeline.stats).apply_to(&mut profile);
            write("profile-stats", &out, &serialize_profile(&profile).map_err(|e| fail("profile-stats")(&e))?)?;
        }
        Command::BuildGraph { extract, region, out } => {
            let text = String::from_utf8(read("build-graph", &extract)?).map_err(|e| fail("build-graph")(&e))?;
            let records = parse_extract(&text).map_err(|e| fail("build-graph")(&e))?;
            let graph = build_graph(&region, &records, &cfg.pipeline.graph).map_err(|e| fail("build-graph")(&e))?;
            write_json("build-graph", &out, &graph)?;
            eprintln!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len());
        }
        Command::Match { graph, rides, out } => {
            let graph = load_graph(&graph)?;
            let files = read_rides(&rides)?;
            let index = GraphIndex::new(&graph, &cfg.pipeline.matching);
            let matched: Vec<MatchedRide> =
                files.par_iter().map(|f| match_ride(&f.ride, &index, &cfg.pipeline.matching)).collect();
            write_json("match", &out, &matched)?;
        }
        Command::Populate { graph, matched, out } => {
            let mut graph = load_graph(&graph)?;
            let matched: Vec<MatchedRide> = read_json("populate", &matched)?;
            populate(&mut graph, &matched).map_err(|e| fail("populate")(&e))?;
            write_json("populate", &out, &graph)?;
        }
        Command::Score { graph, score, out } => {
            score.apply(&mut cfg.pipeline.score);
            cfg.validate().map_err(|e| fail("config")(&e))?;
            let graph = load_graph(&graph)?;
            let report = build_report(&graph, &cfg.pipeline.score).map_err(|e| fail("score")(&e))?;
            write_json("score", &out, &report)?;
        }
        Command::Hotspots { report, out } => {
            let report: ScoreReport = read_json("hotspots", &report)?;
            write_json("hotspots", &out, &hotspots_geojson(&report))?;
        }
        Command::Serve { listen, data_dir } => {
            if let Some(l) = listen {
                cfg.listen = l;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| fail("serve")(&e))?;
            rt.block_on(simra_service::serve(cfg)).map_err(|e| fail("serve")(&e))?;
        }
        Command::Export { region, out } => {
            let store = Store::open(&cfg.data_dir, &cfg.pipeline).map_err(|e| fail("export")(&e))?;
            let n = store.region(&region).map_err(|e| fail("export")(&e))?.export(&out).map_err(|e| fail("export")(&e))?;
            eprintln!("exported {n} ride(s) to {}", out.display());
        }
        Command::Run { rides, region, extract, score, out, force } => {
            score.apply(&mut cfg.pipeline.score);
            cfg.validate().map_err(|e| fail("config")(&e))?;
            match run_pipeline(&cfg, &rides, region.as_deref(), extract.as_deref(), &out, force)? {
                RunOutcome::UpToDate => eprintln!("up to date: {}", out.join("manifest.json").display()),
                RunOutcome::Written(m) => eprintln!("{} ride(s) analysed, outputs in {}", m.inputs.len(), out.display()),
            }
        }
        Command::ConvertOsm { input, out } => {
            let xml = String::from_utf8(read("convert-osm", &input)?).map_err(|e| fail("convert-osm")(&e))?;
            let records = convert_osm(&xml).map_err(|e| fail("convert-osm")(&e))?;
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).map_err(|e| fail("convert-osm")(&e))?);
                text.push('\n');
            }
            write("convert-osm", &out, text.as_bytes())?;
        }
        Command::Synth { what } => synth(what, cli.seed)?,
    }
    Ok(())
}

fn write_rides(dir: &Path, rides: &[Ride]) -> Result<()> {
    for (k, r) in rides.iter().enumerate() {
        write("synth", &dir.join(format!("{k:05}.ride")), &serialize_ride(r).map_err(|e| fail("synth")(&e))?)?;
    }
    Ok(())
}

fn synth(what: SynthCommand, seed: u64) -> Result<()> {
    use simra_core::synth::{grid_extract, grid_ride, incident_store, street_fixture_graph, GridRideConfig, BERLIN};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match what {
        SynthCommand::Grid { lines, rides, noise_m, out } => {
            let extract = grid_extract(BERLIN, lines, 200.0, 100.0);
            let graph = build_graph("Berlin", &extract, &Default::default()).map_err(|e| fail("synth")(&e))?;
            let mut text = String::new();
            for r in &extract {
                text.push_str(&serde_json::to_string(r).map_err(|e| fail("synth")(&e))?);
                text.push('\n');
            }
            write("synth", &out.join("extract.jsonl"), text.as_bytes())?;
            let base = GridRideConfig { noise_m, ..GridRideConfig::default() };
            let list: Vec<Ride> = (0..rides as i64)
                .map(|k| {
                    let cfg = GridRideConfig { start_ms: base.start_ms + k * 3_600_000, ..base };
                    grid_ride(&graph, &cfg, &mut rng).map(|g| g.ride).ok_or_else(|| err("synth", "grid has no drivable edge"))
                })
                .collect::<Result<_>>()?;
            write_rides(&out.join("rides"), &list)?;
        }
        SynthCommand::Table { region, out } => write_rides(&out, &incident_store(seed, &region))?,
        SynthCommand::Streets { out } => write_json("synth", &out, &street_fixture_graph())?,
    }
    Ok(())
}
