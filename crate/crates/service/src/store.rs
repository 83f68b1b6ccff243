//! Per-region file store.
//!
//! Layout under the data directory:
//!
//! ```text
//! <region>/rides/<sha256>.<ride_id>.ride   verbatim upload bytes
//! <region>/profiles/<sha256>.profile
//! <region>/snapshots/<version>.json        populated graph + score report
//! <region>/tmp/                            staging, emptied on open
//! <region>/quarantine/                     files that failed to load
//! ```
//!
//! A record becomes visible only through a rename out of `tmp/` after its
//! bytes are synced, so a crash leaves either the whole file or nothing. The
//! in-memory index is rebuilt from a directory scan on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simra_core::mapgraph::{build_graph, parse_extract, MapGraph};
use simra_core::pipeline::{analyze, PipelineConfig, RegionSettings};
use simra_core::privacy::{auto_crop_trailing_stop, crop_ride, screen_transport_mode, CropSpec, QualityConfig, TransportMode};
use simra_core::scoring::ScoreReport;
use simra_core::{parse_profile, parse_ride, serialize_ride, Millis, ParseError, Ride, RideId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("malformed upload: {0}")]
    Parse(#[from] ParseError),
    #[error("rejected upload: {0}")]
    Rejected(String),
    #[error("duplicate upload, already stored as {0}")]
    Duplicate(String),
    #[error("region {0} has no map extract configured")]
    NoMapExtract(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

/// Ingest-time quality heuristics. Flags only; stored data is untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityFlags {
    /// `None` when the ride has too few usable fixes to judge.
    pub mode: Option<TransportMode>,
    pub trailing_stop_ms: Millis,
}

impl QualityFlags {
    pub fn compute(ride: &Ride, cfg: &QualityConfig) -> Self {
        let mode = screen_transport_mode(ride, cfg).ok().map(|r| r.mode);
        let (_, trailing_stop_ms) = auto_crop_trailing_stop(ride, cfg.stop_radius_m, cfg.stop_min_s);
        QualityFlags { mode, trailing_stop_ms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredRide {
    pub id: RideId,
    /// Hex SHA-256 of the stored bytes.
    pub hash: String,
    pub ride: Ride,
    pub flags: QualityFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u64,
    pub rides: usize,
    pub graph: MapGraph,
    pub report: ScoreReport,
}

#[derive(Debug, Default)]
struct Index {
    rides: BTreeMap<RideId, Arc<StoredRide>>,
    by_hash: HashMap<String, RideId>,
    profiles: BTreeSet<String>,
}

pub struct RegionStore {
    name: String,
    dir: PathBuf,
    settings: RegionSettings,
    quality: QualityConfig,
    /// Single writer per region.
    write: Mutex<()>,
    analysis: Mutex<()>,
    index: RwLock<Index>,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
}

pub struct Store {
    regions: BTreeMap<String, RegionStore>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `tmp`, syncs, then renames onto `dest`.
fn write_atomic(tmp_dir: &Path, dest: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = dest.file_name().expect("destination has a file name");
    let staging = tmp_dir.join(name);
    let mut f = File::create(&staging)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&staging, dest)?;
    if let Some(parent) = dest.parent() {
        File::open(parent)?.sync_all()?;
    }
    Ok(())
}

impl Store {
    /// Opens (creating if needed) the store for every configured region.
    pub fn open(data_dir: &Path, pipeline: &PipelineConfig) -> Result<Store, StoreError> {
        let mut regions = BTreeMap::new();
        for (name, settings) in &pipeline.regions {
            let region = RegionStore::open(data_dir.join(name), name, settings.clone(), pipeline.quality)?;
            regions.insert(name.clone(), region);
        }
        Ok(Store { regions })
    }

    pub fn region(&self, name: &str) -> Result<&RegionStore, StoreError> {
        self.regions.get(name).ok_or_else(|| StoreError::UnknownRegion(name.to_string()))
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionStore> {
        self.regions.values()
    }
}

impl RegionStore {
    fn open(dir: PathBuf, name: &str, settings: RegionSettings, quality: QualityConfig) -> Result<RegionStore, StoreError> {
        for sub in ["rides", "profiles", "snapshots", "tmp", "quarantine"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for entry in fs::read_dir(dir.join("tmp"))? {
            fs::remove_file(entry?.path())?;
        }
        let store = RegionStore {
            name: name.to_string(),
            dir,
            settings,
            quality,
            write: Mutex::new(()),
            analysis: Mutex::new(()),
            index: RwLock::new(Index::default()),
            snapshot: RwLock::new(None),
        };
        store.scan()?;
        Ok(store)
    }

    fn quarantine(&self, path: &Path, why: &str) -> io::Result<()> {
        eprintln!("quarantining {}: {why}", path.display());
        fs::rename(path, self.dir.join("quarantine").join(path.file_name().unwrap_or_default()))
    }

    fn scan(&self) -> Result<(), StoreError> {
        let mut index = Index::default();
        let mut paths: Vec<PathBuf> = fs::read_dir(self.dir.join("rides"))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let parts: Vec<&str> = name.split('.').collect();
            let [hash, id, "ride"] = parts[..] else {
                self.quarantine(&path, "unexpected file name")?;
                continue;
            };
            let Ok(id) = id.parse::<RideId>() else {
                self.quarantine(&path, "bad ride id")?;
                continue;
            };
            let bytes = fs::read(&path)?;
            if content_hash(&bytes) != hash {
                self.quarantine(&path, "content hash mismatch")?;
                continue;
            }
            match parse_ride(&bytes) {
                Ok(mut ride) => {
                    ride.ride_id = id;
                    let flags = QualityFlags::compute(&ride, &self.quality);
                    index.by_hash.insert(hash.to_string(), id);
                    index.rides.insert(id, Arc::new(StoredRide { id, hash: hash.to_string(), ride, flags }));
                }
                Err(e) => self.quarantine(&path, &e.to_string())?,
            }
        }
        for entry in fs::read_dir(self.dir.join("profiles"))? {
            let path = entry?.path();
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                index.profiles.insert(stem.to_string());
            }
        }
        *self.index.write().expect("index lock") = index;

        let mut versions: Vec<(u64, PathBuf)> = fs::read_dir(self.dir.join("snapshots"))?
            .filter_map(|e| {
                let path = e.ok()?.path();
                let v = path.file_stem()?.to_str()?.parse().ok()?;
                Some((v, path))
            })
            .collect();
        versions.sort();
        while let Some((_, path)) = versions.pop() {
            let loaded = fs::read(&path).ok().and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok());
            if let Some(s) = loaded {
                *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(s));
                break;
            }
            self.quarantine(&path, "unreadable snapshot")?;
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn settings(&self) -> &RegionSettings {
        &self.settings
    }

    /// Validates and persists an uploaded ride file. With a crop spec the
    /// cropped ride is stored in canonical form instead of the upload.
    pub fn ingest_ride(&self, bytes: &[u8], crop: Option<&CropSpec>) -> Result<RideId, StoreError> {
        let mut ride = parse_ride(bytes)?;
        if ride.region != self.name {
            return Err(StoreError::Rejected(format!("ride belongs to region {:?}, not {:?}", ride.region, self.name)));
        }
        let cropped;
        let stored: &[u8] = match crop {
            Some(spec) => {
                ride = crop_ride(&ride, spec).map_err(|e| StoreError::Rejected(e.to_string()))?;
                cropped = serialize_ride(&ride).map_err(|e| StoreError::Rejected(e.to_string()))?;
                &cropped
            }
            None => bytes,
        };
        let hash = content_hash(stored);
        let flags = QualityFlags::compute(&ride, &self.quality);

        let _writer = self.write.lock().expect("writer lock");
        let id = {
            let index = self.index.read().expect("index lock");
            if let Some(existing) = index.by_hash.get(&hash) {
                return Err(StoreError::Duplicate(existing.to_string()));
            }
            loop {
                let id = RideId::random();
                if !index.rides.contains_key(&id) {
                    break id;
                }
            }
        };
        let dest = self.dir.join("rides").join(format!("{hash}.{id}.ride"));
        write_atomic(&self.dir.join("tmp"), &dest, stored)?;
        ride.ride_id = id;
        let mut index = self.index.write().expect("index lock");
        index.by_hash.insert(hash.clone(), id);
        index.rides.insert(id, Arc::new(StoredRide { id, hash, ride, flags }));
        Ok(id)
    }

    /// Stores a profile file verbatim; returns its content-derived id.
    pub fn ingest_profile(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let profile = parse_profile(bytes)?;
        if profile.region != self.name {
            return Err(StoreError::Rejected(format!("profile belongs to region {:?}, not {:?}", profile.region, self.name)));
        }
        let hash = content_hash(bytes);
        let _writer = self.write.lock().expect("writer lock");
        if self.index.read().expect("index lock").profiles.contains(&hash) {
            return Err(StoreError::Duplicate(hash));
        }
        write_atomic(&self.dir.join("tmp"), &self.dir.join("profiles").join(format!("{hash}.profile")), bytes)?;
        self.index.write().expect("index lock").profiles.insert(hash.clone());
        Ok(hash)
    }

    /// Stored rides ordered by ride id.
    pub fn rides(&self) -> Vec<Arc<StoredRide>> {
        self.index.read().expect("index lock").rides.values().cloned().collect()
    }

    pub fn ride_count(&self) -> usize {
        self.index.read().expect("index lock").rides.len()
    }

    pub fn profile_count(&self) -> usize {
        self.index.read().expect("index lock").profiles.len()
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Rebuilds the region's graph, matches every stored ride, scores the
    /// result and publishes it as the next snapshot version.
    pub fn run_analysis(&self, pipeline: &PipelineConfig) -> Result<Arc<Snapshot>, StoreError> {
        let _running = self.analysis.lock().expect("analysis lock");
        let extract = self.settings.map_extract.as_ref().ok_or_else(|| StoreError::NoMapExtract(self.name.clone()))?;
        let text = fs::read_to_string(extract)?;
        let records = parse_extract(&text).map_err(|e| StoreError::Analysis(e.to_string()))?;
        let base = build_graph(&self.name, &records, &pipeline.graph).map_err(|e| StoreError::Analysis(e.to_string()))?;
        let rides: Vec<Ride> = self.rides().iter().map(|s| s.ride.clone()).collect();
        let analysis =
            analyze(&base, &rides, &pipeline.matching, &pipeline.score).map_err(|e| StoreError::Analysis(e.to_string()))?;
        let version = self.snapshot().map_or(1, |s| s.version + 1);
        let snapshot = Snapshot { version, rides: rides.len(), graph: analysis.graph, report: analysis.report };
        let bytes = serde_json::to_vec(&snapshot).map_err(|e| StoreError::Analysis(e.to_string()))?;
        let dest = self.dir.join("snapshots").join(format!("{version:010}.json"));
        write_atomic(&self.dir.join("tmp"), &dest, &bytes)?;
        let snapshot = Arc::new(snapshot);
        *self.snapshot.write().expect("snapshot lock") = Some(snapshot.clone());
        Ok(snapshot)
    }

    /// Copies every stored ride file verbatim to `out/<ride_id>.ride`.
    pub fn export(&self, out: &Path) -> io::Result<usize> {
        fs::create_dir_all(out)?;
        let rides = self.rides();
        for r in &rides {
            let src = self.dir.join("rides").join(format!("{}.{}.ride", r.hash, r.id));
            fs::copy(src, out.join(format!("{}.ride", r.id)))?;
        }
        Ok(rides.len())
    }
}
