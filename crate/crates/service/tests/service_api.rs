use std::collections::BTreeMap;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use jiff::{Timestamp, ToSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use simra_core::mapgraph::{build_graph, BuildConfig, MapGraph};
use simra_core::pipeline::{analyze, RegionSettings};
use simra_core::synth::{grid_fixture, grid_ride, incident_store, random_profile, GridRideConfig};
use simra_core::{parse_ride, serialize_profile, serialize_ride, BikeType, IncidentType, PhoneLocation, Ride};
use simra_service::key::utc_date;
use simra_service::{access_key, router, AppState, Config, Store};
use tempfile::TempDir;
use tower::ServiceExt;

const SALT: &str = "test-salt";

struct Harness {
    dir: TempDir,
    config: Config,
    app: Router,
}

impl Harness {
    fn new() -> Harness {
        let dir = TempDir::new().unwrap();
        let extract = dir.path().join("grid.jsonl");
        let lines: Vec<String> = grid_fixture().iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(&extract, lines.join("\n")).unwrap();
        let mut config = Config { data_dir: dir.path().join("data"), salt: SALT.into(), ..Config::default() };
        config
            .pipeline
            .regions
            .insert("Berlin".into(), RegionSettings { timezone: "Europe/Berlin".into(), map_extract: Some(extract) });
        config.pipeline.regions.insert("Hamburg".into(), RegionSettings::default());
        config.pipeline.score.min_rides = 1;
        let app = Self::open(&config);
        Harness { dir, config, app }
    }

    fn open(config: &Config) -> Router {
        router(AppState::new(Store::open(&config.data_dir, &config.pipeline).unwrap(), config))
    }

    fn reopen(&mut self) {
        self.app = Self::open(&self.config);
    }

    fn data(&self) -> &Path {
        &self.config.data_dir
    }

    async fn call(&self, req: Request<Body>) -> (StatusCode, Value) {
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn post_with_key(&self, uri: &str, key: &str, body: Vec<u8>) -> (StatusCode, Value) {
        self.call(Request::post(uri).header("X-Access-Key", key).body(Body::from(body)).unwrap()).await
    }

    async fn post(&self, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
        self.post_with_key(uri, &today_key(), body).await
    }
}

fn today_key() -> String {
    access_key(utc_date(Timestamp::now()), SALT)
}

fn count(v: &Value) -> usize {
    v["features"].as_array().unwrap().len()
}

#[tokio::test]
async fn upload_errors_and_verbatim_storage() {
    let h = Harness::new();
    let ride = incident_store(1, "Berlin").remove(0);
    let bytes = serialize_ride(&ride).unwrap();

    let stale = access_key(utc_date(Timestamp::now()).checked_sub(2.days()).unwrap(), SALT);
    assert_eq!(h.post_with_key("/api/Berlin/rides", &stale, bytes.clone()).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(h.post_with_key("/api/Berlin/rides", "", bytes.clone()).await.0, StatusCode::UNAUTHORIZED);
    let yesterday = access_key(utc_date(Timestamp::now()).checked_sub(1.day()).unwrap(), SALT);
    assert_eq!(h.post("/api/Paris/rides", bytes.clone()).await.0, StatusCode::NOT_FOUND);

    let (status, body) = h.post("/api/Berlin/rides", b"not a ride\n".to_vec()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["diagnostics"][0]["line"].is_number(), "{body}");
    // Region in the file must match the path.
    assert_eq!(h.post("/api/Hamburg/rides", bytes.clone()).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = h.post_with_key("/api/Berlin/rides", &yesterday, bytes.clone()).await;
    assert_eq!(status, StatusCode::OK);
    let id = body["ride_id"].as_str().unwrap().to_string();
    let (status, body) = h.post("/api/Berlin/rides", bytes.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["existing"], id.as_str());

    let stored: Vec<_> = std::fs::read_dir(h.data().join("Berlin/rides")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(stored.len(), 1);
    assert!(stored[0].to_str().unwrap().ends_with(&format!(".{id}.ride")));
    assert_eq!(std::fs::read(&stored[0]).unwrap(), bytes);

    let out = h.dir.path().join("export");
    let store = Store::open(&h.config.data_dir, &h.config.pipeline).unwrap();
    assert_eq!(store.region("Berlin").unwrap().export(&out).unwrap(), 1);
    assert_eq!(std::fs::read(out.join(format!("{id}.ride"))).unwrap(), bytes);

    let mut profile = random_profile(&mut ChaCha8Rng::seed_from_u64(3));
    profile.region = "Berlin".into();
    let profile = serialize_profile(&profile).unwrap();
    let (status, body) = h.post("/api/Berlin/profiles", profile.clone()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(h.post("/api/Berlin/profiles", profile.clone()).await.0, StatusCode::CONFLICT);
    assert_eq!(h.post("/api/Hamburg/profiles", profile).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(h.post("/api/Berlin/profiles", b"x".to_vec()).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn cropped_upload_stores_canonical_cropped_ride() {
    let h = Harness::new();
    let mut ride = incident_store(2, "Berlin").remove(0);
    ride.incidents.clear();
    let (status, body) = h.post("/api/Berlin/rides?start_s=9&end_m=30", serialize_ride(&ride).unwrap()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let stored = std::fs::read_dir(h.data().join("Berlin/rides")).unwrap().next().unwrap().unwrap().path();
    let back = parse_ride(&std::fs::read(stored).unwrap()).unwrap();
    assert!(back.samples.len() < ride.samples.len());
    assert_eq!(back.samples[0].timestamp, ride.samples[3].timestamp);
    assert_eq!(h.post("/api/Berlin/rides?bogus=1", vec![]).await.0, StatusCode::BAD_REQUEST);
}

/// Brute-force reference over the in-memory rides.
fn oracle(rides: &[Ride], q: &Query) -> usize {
    rides
        .iter()
        .filter(|r| q.bike.is_none_or(|b| r.context.bike_type == b))
        .filter(|r| q.ploc.is_none_or(|p| r.context.phone_location == p))
        .filter(|r| q.trailer.is_none_or(|t| r.context.trailer == t))
        .filter(|r| q.child.is_none_or(|c| r.context.child_transport == c))
        .flat_map(|r| &r.incidents)
        .filter(|i| q.ty.is_none_or(|t| i.incident_type == t))
        .filter(|i| q.scary.is_none_or(|s| i.scary == s))
        .filter(|i| q.from.is_none_or(|f| i.timestamp >= f))
        .filter(|i| q.to.is_none_or(|t| i.timestamp < t))
        .count()
}

#[derive(Debug, Default, Clone, Copy)]
struct Query {
    ty: Option<IncidentType>,
    scary: Option<bool>,
    bike: Option<BikeType>,
    ploc: Option<PhoneLocation>,
    trailer: Option<bool>,
    child: Option<bool>,
    from: Option<i64>,
    to: Option<i64>,
}

impl Query {
    fn random(rng: &mut ChaCha8Rng, t0: i64, t1: i64) -> Query {
        let mut q = Query::default();
        if rng.random_bool(0.5) {
            q.ty = Some(IncidentType::LABELED[rng.random_range(0..8)]);
        }
        if rng.random_bool(0.5) {
            q.scary = Some(rng.random_bool(0.5));
        }
        if rng.random_bool(0.3) {
            q.bike = Some(BikeType::ALL[rng.random_range(0..BikeType::ALL.len())]);
        }
        if rng.random_bool(0.3) {
            q.ploc = Some(PhoneLocation::ALL[rng.random_range(0..PhoneLocation::ALL.len())]);
        }
        if rng.random_bool(0.3) {
            q.trailer = Some(rng.random_bool(0.5));
        }
        if rng.random_bool(0.3) {
            q.child = Some(rng.random_bool(0.5));
        }
        if rng.random_bool(0.3) {
            q.from = Some(rng.random_range(t0..t1));
        }
        if rng.random_bool(0.3) {
            q.to = Some(rng.random_range(t0..t1));
        }
        q
    }

    fn url(&self, endpoint: &str) -> String {
        let mut parts = Vec::new();
        if let Some(t) = self.ty {
            parts.push(format!("type={}", t.name()));
        }
        if let Some(s) = self.scary {
            parts.push(format!("scary={s}"));
        }
        if let Some(b) = self.bike {
            parts.push(format!("bike={}", b.label()));
        }
        if let Some(p) = self.ploc {
            parts.push(format!("ploc={}", p.label()));
        }
        if let Some(t) = self.trailer {
            parts.push(format!("trailer={t}"));
        }
        if let Some(c) = self.child {
            parts.push(format!("child={c}"));
        }
        if let Some(f) = self.from {
            parts.push(format!("from={f}"));
        }
        if let Some(t) = self.to {
            parts.push(format!("to={t}"));
        }
        format!("/api/Berlin/{endpoint}?{}", parts.join("&"))
    }
}

#[tokio::test]
async fn filters_agree_with_brute_force_over_table_store() {
    let h = Harness::new();
    let rides = incident_store(2019, "Berlin");
    for r in &rides {
        assert_eq!(h.post("/api/Berlin/rides", serialize_ride(r).unwrap()).await.0, StatusCode::OK);
    }
    let (_, all) = h.get("/api/Berlin/incidents").await;
    assert_eq!(count(&all), 7173);
    assert_eq!(all["count"], 7173);
    assert_eq!(count(&h.get("/api/Berlin/incidents?scary=true&type=ClosePass").await.1), 402);
    assert_eq!(count(&h.get("/api/Berlin/incidents?type=Other&scary=false").await.1), 1722);

    let (status, stats) = h.get("/api/Berlin/stats").await;
    assert_eq!(status, StatusCode::OK);
    let table: Vec<(String, u64, u64)> = stats["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["type"].as_str().unwrap().to_string(), r["scary"].as_u64().unwrap(), r["non_scary"].as_u64().unwrap()))
        .collect();
    let expected: Vec<(String, u64, u64)> =
        simra_core::synth::BERLIN_INCIDENT_COUNTS.iter().map(|(t, s, n)| (t.name().to_string(), *s, *n)).collect();
    assert_eq!(table, expected);
    assert_eq!(stats["total"], 7173);

    let t0 = rides.iter().map(|r| r.first_timestamp().unwrap()).min().unwrap();
    let t1 = rides.iter().map(|r| r.last_timestamp().unwrap()).max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..150 {
        let q = Query::random(&mut rng, t0, t1);
        let (status, body) = h.get(&q.url("incidents")).await;
        assert_eq!(status, StatusCode::OK, "{}", q.url("incidents"));
        let want = oracle(&rides, &q);
        assert_eq!(count(&body), want, "{q:?}");
        let (_, stats) = h.get(&q.url("stats")).await;
        assert_eq!(stats["total"], want as u64, "{q:?}");

        // Composition: A ∧ B is the intersection of A and B.
        let ids = |v: &Value| -> std::collections::BTreeSet<String> {
            v["features"].as_array().unwrap().iter().map(|f| f["id"].as_str().unwrap().to_string()).collect()
        };
        let a = Query { ty: q.ty, scary: q.scary, ..Query::default() };
        let b = Query { ty: None, scary: None, ..q };
        let (sa, sb) = (ids(&h.get(&a.url("incidents")).await.1), ids(&h.get(&b.url("incidents")).await.1));
        let both = ids(&body);
        assert_eq!(both, sa.intersection(&sb).cloned().collect());
        assert!(both.is_subset(&ids(&all)));
    }

    // Ride filter: context plus at least one matching incident.
    let (_, body) = h.get("/api/Berlin/rides?type=HeadOn&scary=true").await;
    let want = rides.iter().filter(|r| r.incidents.iter().any(|i| i.incident_type == IncidentType::HeadOn && i.scary)).count();
    assert_eq!(count(&body), want);
    assert_eq!(count(&h.get("/api/Berlin/rides").await.1), rides.len());

    assert_eq!(h.get("/api/Berlin/incidents?colour=red").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(h.get("/api/Berlin/rides?scary=perhaps").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(h.get("/api/Paris/incidents").await.0, StatusCode::NOT_FOUND);
    // Queries never mutate.
    assert_eq!(h.get("/api/Berlin/incidents").await.1, all);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_ingests_all_retrievable() {
    let mut h = Harness::new();
    let rides: Vec<Vec<u8>> = incident_store(5, "Berlin").iter().take(10).map(|r| serialize_ride(r).unwrap()).collect();
    let before = count(&h.get("/api/Berlin/rides").await.1);
    let mut tasks = Vec::new();
    for bytes in rides.clone() {
        let app = h.app.clone();
        tasks.push(tokio::spawn(async move {
            let req = Request::post("/api/Berlin/rides").header("X-Access-Key", today_key()).body(Body::from(bytes)).unwrap();
            let res = app.oneshot(req).await.unwrap();
            let status = res.status();
            let body: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
            (status, body["ride_id"].as_str().unwrap().to_string())
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        let (status, id) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        ids.push(id);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 10);
    let (_, listed) = h.get("/api/Berlin/rides").await;
    assert_eq!(count(&listed), before + 10);

    // Post-hoc recount from disk after a restart.
    h.reopen();
    let (_, listed) = h.get("/api/Berlin/rides").await;
    let mut listed_ids: Vec<String> =
        listed["features"].as_array().unwrap().iter().map(|f| f["id"].as_str().unwrap().to_string()).collect();
    listed_ids.sort();
    assert_eq!(listed_ids, ids);
    let mut on_disk: Vec<Vec<u8>> =
        std::fs::read_dir(h.data().join("Berlin/rides")).unwrap().map(|e| std::fs::read(e.unwrap().path()).unwrap()).collect();
    on_disk.sort();
    let mut sent = rides;
    sent.sort();
    assert_eq!(on_disk, sent);
}

#[tokio::test]
async fn restart_discards_staging_and_quarantines_damage() {
    let mut h = Harness::new();
    let rides = incident_store(6, "Berlin");
    let good = serialize_ride(&rides[0]).unwrap();
    assert_eq!(h.post("/api/Berlin/rides", good.clone()).await.0, StatusCode::OK);
    // A crash mid-write leaves a partial file in staging; a damaged record
    // in the ride directory must not be served either.
    let partial = &serialize_ride(&rides[1]).unwrap()[..100];
    std::fs::write(h.data().join("Berlin/tmp/partial.ride"), partial).unwrap();
    let hash = simra_service::store::content_hash(b"whatever");
    std::fs::write(h.data().join(format!("Berlin/rides/{hash}.{}.ride", "ab".repeat(16))), partial).unwrap();
    h.reopen();
    assert_eq!(std::fs::read_dir(h.data().join("Berlin/tmp")).unwrap().count(), 0);
    assert_eq!(std::fs::read_dir(h.data().join("Berlin/quarantine")).unwrap().count(), 1);
    assert_eq!(count(&h.get("/api/Berlin/rides").await.1), 1);
    // The staged ride was never acknowledged, so uploading it again succeeds.
    assert_eq!(h.post("/api/Berlin/rides", serialize_ride(&rides[1]).unwrap()).await.0, StatusCode::OK);
}

fn grid() -> MapGraph {
    build_graph("Berlin", &grid_fixture(), &BuildConfig::default()).unwrap()
}

#[tokio::test]
async fn analysis_snapshot_is_published_and_survives_restart() {
    let mut h = Harness::new();
    assert_eq!(h.get("/api/Berlin/hotspots").await.0, StatusCode::NOT_FOUND);
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = GridRideConfig::default();
    let mut uploaded = Vec::new();
    for k in 0..15 {
        let r = grid_ride(&g, &GridRideConfig { start_ms: cfg.start_ms + k * 3_600_000, ..cfg }, &mut rng).unwrap();
        let bytes = serialize_ride(&r.ride).unwrap();
        assert_eq!(h.post("/api/Berlin/rides", bytes.clone()).await.0, StatusCode::OK);
        uploaded.push(bytes);
    }
    let key = access_key(utc_date(Timestamp::now()).checked_sub(3.days()).unwrap(), SALT);
    assert_eq!(h.post_with_key("/api/Berlin/analysis", &key, vec![]).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(h.post("/api/Hamburg/analysis", vec![]).await.0, StatusCode::CONFLICT);
    let (status, body) = h.post("/api/Berlin/analysis", vec![]).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["version"], 1);
    assert_eq!(body["rides"], 15);

    // Same numbers as running the analysis directly on the stored rides.
    let store = Store::open(&h.config.data_dir, &h.config.pipeline).unwrap();
    let stored: Vec<Ride> = store.region("Berlin").unwrap().rides().iter().map(|s| s.ride.clone()).collect();
    let direct = analyze(&g, &stored, &h.config.pipeline.matching, &h.config.pipeline.score).unwrap();
    let (_, hot) = h.get("/api/Berlin/hotspots").await;
    assert_eq!(hot["report"], serde_json::to_value(&direct.report).unwrap());
    assert_eq!(h.get("/api/Berlin/graph").await.1, direct.graph.to_geojson());
    let (_, geo) = h.get("/api/Berlin/hotspots?format=geojson").await;
    assert_eq!(geo["type"], "FeatureCollection");
    assert_eq!(h.get("/api/Berlin/hotspots?k=1").await.0, StatusCode::BAD_REQUEST);

    let (_, body) = h.post("/api/Berlin/analysis", vec![]).await;
    assert_eq!(body["version"], 2);
    h.reopen();
    let (_, again) = h.get("/api/Berlin/hotspots").await;
    assert_eq!(again["version"], 2);
    assert_eq!(again["report"], hot["report"]);
    let (_, regions) = h.get("/api/regions").await;
    let by_name: BTreeMap<String, Value> =
        regions.as_array().unwrap().iter().map(|r| (r["region"].as_str().unwrap().to_string(), r.clone())).collect();
    assert_eq!(by_name["Berlin"]["rides"], 15);
    assert_eq!(by_name["Berlin"]["snapshot"], 2);
}
