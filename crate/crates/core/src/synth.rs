//! Seeded synthetic data: fixture extracts, rides with known ground truth
//! and generators used by tests, benchmarks and the `synth` CLI command.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::format::serialize_ride;
use crate::geo::{polyline_length, GeoPoint, LocalFrame, Vec2};
use crate::mapgraph::{Direction, EdgeId, ElementId, ExtractRecord, Intersection, MapGraph, NodeId, StreetSegment};
use crate::ride::{
    BikeType, CyclistContext, Gender, Incident, IncidentType, Millis, Participant, Participants, PhoneLocation, Profile,
    Ride, RideId, RideSample, HOURS_PER_DAY, INCIDENT_CATEGORIES,
};

pub const BERLIN: GeoPoint = GeoPoint { lat: 52.52, lon: 13.405 };

/// 2019-06-03T06:00:00Z, a Monday morning.
pub const EPOCH_MS: Millis = 1_559_541_600_000;

/// Scary and non-scary incident counts per category for the published
/// Berlin snapshot, in category order.
pub const BERLIN_INCIDENT_COUNTS: [(IncidentType, u64, u64); INCIDENT_CATEGORIES] = [
    (IncidentType::ClosePass, 402, 1176),
    (IncidentType::PullInOut, 71, 333),
    (IncidentType::NearHook, 195, 546),
    (IncidentType::HeadOn, 78, 525),
    (IncidentType::Tailgating, 42, 128),
    (IncidentType::NearDooring, 29, 70),
    (IncidentType::DodgeObstacle, 110, 1519),
    (IncidentType::Other, 227, 1722),
];

fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

/// Rounds a point to the precision kept by the ride file format.
pub fn canonical_point(p: GeoPoint) -> GeoPoint {
    GeoPoint { lat: round_to(p.lat, 6), lon: round_to(p.lon, 6) }
}

fn seal(mut ride: Ride) -> Ride {
    let bytes = serialize_ride(&ride).expect("synthetic rides are valid");
    ride.ride_id = RideId::from_content(&bytes);
    ride
}

/// Extract of a grid of `lines` east-west and `lines` north-south streets,
/// `spacing` meters apart, each extending `stub` meters past the outermost
/// crossing. With two lines per direction this is the 3×3-block fixture:
/// four crossings and twelve street segments.
pub fn grid_extract(origin: GeoPoint, lines: usize, spacing: f64, stub: f64) -> Vec<ExtractRecord> {
    let span = spacing * (lines as f64 - 1.0);
    let pt = |e: f64, n: f64| {
        let p = canonical_point(origin.offset(e, n));
        [p.lat, p.lon]
    };
    let mut recs = Vec::new();
    for i in 0..lines {
        for j in 0..lines {
            let id = (i * lines + j + 1) as u64;
            recs.push(ExtractRecord::Intersection { id, coord: pt(spacing * j as f64, spacing * i as f64), arity: 4 });
        }
    }
    for i in 0..lines {
        let y = spacing * i as f64;
        // East-west streets carry a vertex at every crossing.
        let mut coords = vec![pt(-stub, y)];
        coords.extend((0..lines).map(|j| pt(spacing * j as f64, y)));
        coords.push(pt(span + stub, y));
        recs.push(ExtractRecord::Way { id: 100 + i as u64, name: Some(format!("East {i}")), coords, refs: [None, None] });
    }
    for j in 0..lines {
        // North-south streets are straight two-point ways.
        let x = spacing * j as f64;
        recs.push(ExtractRecord::Way {
            id: 200 + j as u64,
            name: Some(format!("North {j}")),
            coords: vec![pt(x, -stub), pt(x, span + stub)],
            refs: [None, None],
        });
    }
    recs
}

/// The 3×3-block grid fixture centered near Berlin.
pub fn grid_fixture() -> Vec<ExtractRecord> {
    grid_extract(BERLIN, 2, 200.0, 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRideConfig {
    /// Standard deviation of the GPS error per axis, meters.
    pub noise_m: f64,
    /// Number of intersections to pass before stopping.
    pub hops: usize,
    pub min_speed_ms: f64,
    pub max_speed_ms: f64,
    pub fix_interval_ms: Millis,
    /// Labeled incidents placed on the path.
    pub incidents: usize,
    pub start_ms: Millis,
}

impl Default for GridRideConfig {
    fn default() -> Self {
        GridRideConfig {
            noise_m: 2.0,
            hops: 4,
            min_speed_ms: 3.0,
            max_speed_ms: 4.0,
            fix_interval_ms: 3000,
            incidents: 2,
            start_ms: EPOCH_MS,
        }
    }
}

/// A ride generated along a known path through a graph.
#[derive(Debug, Clone)]
pub struct GridRide {
    pub ride: Ride,
    /// Elements visited, in order, as a noise-free matcher should see them.
    pub truth: Vec<ElementId>,
    /// Direction of travel over each edge in `truth` (None for nodes).
    pub directions: Vec<Option<Direction>>,
}

fn point_at(line: &[Vec2], arc: f64) -> Vec2 {
    let mut walked = 0.0;
    for w in line.windows(2) {
        let seg = w[0].dist(w[1]);
        if walked + seg >= arc && seg > 0.0 {
            let t = ((arc - walked) / seg).clamp(0.0, 1.0);
            return w[0].add(w[1].sub(w[0]).scale(t));
        }
        walked += seg;
    }
    line[line.len() - 1]
}

/// Part of `line` between two arc lengths; reversed when `from > to`.
fn slice(line: &[Vec2], from: f64, to: f64) -> Vec<Vec2> {
    let (lo, hi) = (from.min(to), from.max(to));
    let mut out = vec![point_at(line, lo)];
    let mut walked = 0.0;
    for w in line.windows(2) {
        walked += w[0].dist(w[1]);
        if walked > lo && walked < hi {
            out.push(w[1]);
        }
    }
    out.push(point_at(line, hi));
    if from > to {
        out.reverse();
    }
    out
}

fn length(line: &[Vec2]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Generates a ride that starts mid-edge, walks `cfg.hops` intersections
/// without immediate U-turns and stops mid-edge. Returns `None` for graphs
/// without intersections.
pub fn grid_ride<R: Rng + ?Sized>(graph: &MapGraph, cfg: &GridRideConfig, rng: &mut R) -> Option<GridRide> {
    let frame = LocalFrame::new(graph.origin);
    let lines: BTreeMap<EdgeId, Vec<Vec2>> =
        graph.edges.values().map(|e| (e.id, e.centerline.iter().map(|p| frame.project(*p)).collect())).collect();
    let mut adjacent: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
    for e in graph.edges.values() {
        for n in [e.endpoints.0, e.endpoints.1].into_iter().flatten() {
            adjacent.entry(n).or_default().push(e.id);
        }
    }
    let starts: Vec<&StreetSegment> =
        graph.edges.values().filter(|e| e.endpoints.0.is_some() || e.endpoints.1.is_some()).collect();
    let first = *starts.get(rng.random_range(0..starts.len().max(1)))?;

    let towards_end = match first.endpoints {
        (Some(_), Some(_)) => rng.random_bool(0.5),
        (None, Some(_)) => true,
        _ => false,
    };
    let line = &lines[&first.id];
    let len = length(line);
    let mut path = slice(line, len / 2.0, if towards_end { len } else { 0.0 });
    let mut truth = vec![ElementId::Edge(first.id)];
    let mut directions = vec![Some(if towards_end { Direction::Forward } else { Direction::Backward })];
    let mut node = if towards_end { first.endpoints.1 } else { first.endpoints.0 }.expect("chosen towards a node");
    let mut came_from = first.id;

    for hop in 0.. {
        truth.push(ElementId::Node(node));
        directions.push(None);
        let options: Vec<EdgeId> = adjacent[&node].iter().copied().filter(|e| *e != came_from).collect();
        let next = if options.is_empty() { came_from } else { options[rng.random_range(0..options.len())] };
        let edge = &graph.edges[&next];
        let forward = edge.endpoints.0 == Some(node);
        let line = &lines[&next];
        let len = length(line);
        let far = if forward { edge.endpoints.1 } else { edge.endpoints.0 };
        let stop = hop + 1 >= cfg.hops || far.is_none();
        let (from, to) = match (forward, stop) {
            (true, false) => (0.0, len),
            (true, true) => (0.0, len / 2.0),
            (false, false) => (len, 0.0),
            (false, true) => (len, len / 2.0),
        };
        path.extend(slice(line, from, to).into_iter().skip(1));
        truth.push(ElementId::Edge(next));
        directions.push(Some(if forward { Direction::Forward } else { Direction::Backward }));
        if stop {
            break;
        }
        node = far.expect("not stopping");
        came_from = next;
    }

    let speed = rng.random_range(cfg.min_speed_ms..=cfg.max_speed_ms);
    let total = length(&path);
    let duration_ms = (total / speed * 1000.0).floor() as Millis;
    let mut times: Vec<Millis> = (0..).map(|k| k * cfg.fix_interval_ms).take_while(|t| *t < duration_ms).collect();
    times.push(duration_ms);
    let noise = Normal::new(0.0, cfg.noise_m.max(0.0)).expect("finite sigma");
    let accel = Normal::new(0.0, 0.3).expect("finite sigma");
    let mut clean = Vec::with_capacity(times.len());
    let samples: Vec<RideSample> = times
        .iter()
        .map(|t| {
            let exact = point_at(&path, speed * *t as f64 / 1000.0);
            clean.push(canonical_point(frame.unproject(exact)));
            let noisy = Vec2::new(exact.x + noise.sample(rng), exact.y + noise.sample(rng));
            RideSample {
                timestamp: cfg.start_ms + t,
                location: Some(canonical_point(frame.unproject(noisy))),
                accuracy: Some(5.0),
                accel: [
                    round_to(accel.sample(rng), 3),
                    round_to(accel.sample(rng), 3),
                    round_to(9.81 + accel.sample(rng), 3),
                ],
                orientation: None,
            }
        })
        .collect();

    let mut picks: Vec<usize> = (0..samples.len()).collect();
    picks.shuffle(rng);
    picks.truncate(cfg.incidents);
    picks.sort_unstable();
    let incidents = picks
        .into_iter()
        .map(|k| Incident {
            location: clean[k],
            timestamp: samples[k].timestamp,
            incident_type: IncidentType::LABELED[rng.random_range(0..INCIDENT_CATEGORIES)],
            scary: rng.random_bool(0.3),
            participants: random_participants(rng),
            description: String::new(),
            auto_detected: false,
        })
        .collect();

    let ride = seal(Ride {
        ride_id: RideId::from_bytes([0; 16]),
        region: graph.region.clone(),
        samples,
        incidents,
        context: random_context(rng),
    });
    Some(GridRide { ride, truth, directions })
}

pub fn random_context<R: Rng + ?Sized>(rng: &mut R) -> CyclistContext {
    CyclistContext {
        bike_type: BikeType::ALL[rng.random_range(0..BikeType::ALL.len())],
        phone_location: PhoneLocation::ALL[rng.random_range(0..PhoneLocation::ALL.len())],
        trailer: rng.random_bool(0.1),
        child_transport: rng.random_bool(0.1),
    }
}

pub fn random_participants<R: Rng + ?Sized>(rng: &mut R) -> Participants {
    let mut p = Participants::empty();
    for x in Participant::ALL {
        if rng.random_bool(0.15) {
            p.insert(x);
        }
    }
    p
}

const DESCRIPTION_PIECES: &[&str] =
    &["car", "very close", "\"no\" signal", "tram, then bus", "Straße", "à droite", "🚲", " ", ";", "'", "x"];

fn random_description<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(0..4);
    (0..n).map(|_| DESCRIPTION_PIECES[rng.random_range(0..DESCRIPTION_PIECES.len())]).collect()
}

/// A valid ride with arbitrary content at file-format precision, for
/// round-trip and fuzz testing. Samples may lack fixes or orientation.
pub fn random_ride<R: Rng + ?Sized>(rng: &mut R) -> Ride {
    const REGIONS: [&str; 4] = ["Berlin", "Leipzig", "Region_2", "a.b-c"];
    let n = rng.random_range(1..80);
    let mut t: Millis = EPOCH_MS + rng.random_range(0..400_000_000);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.random_range(1..4000);
        let fix = rng.random_bool(0.6);
        let micro = |rng: &mut R, lo: i64, hi: i64| rng.random_range(lo..=hi) as f64 / 1e6;
        samples.push(RideSample {
            timestamp: t,
            location: fix.then(|| GeoPoint { lat: micro(rng, -90_000_000, 90_000_000), lon: micro(rng, -180_000_000, 180_000_000) }),
            accuracy: fix.then(|| rng.random_range(0..10_000) as f64 / 100.0),
            accel: std::array::from_fn(|_| rng.random_range(-40_000..=40_000) as f64 / 1000.0),
            orientation: rng
                .random_bool(0.5)
                .then(|| std::array::from_fn(|_| rng.random_range(-360_000..=360_000) as f64 / 1000.0)),
        });
    }
    let (first, last) = (samples[0].timestamp, samples[n - 1].timestamp);
    let k = rng.random_range(0..6);
    let incidents = (0..k)
        .map(|_| {
            let ty = if rng.random_bool(0.2) {
                IncidentType::Unlabeled
            } else {
                IncidentType::LABELED[rng.random_range(0..INCIDENT_CATEGORIES)]
            };
            Incident {
                location: canonical_point(GeoPoint { lat: rng.random_range(47.0..55.0), lon: rng.random_range(6.0..15.0) }),
                timestamp: rng.random_range(first..=last),
                incident_type: ty,
                scary: rng.random_bool(0.3),
                participants: random_participants(rng),
                description: random_description(rng),
                auto_detected: ty == IncidentType::Unlabeled || rng.random_bool(0.2),
            }
        })
        .collect();
    let context = if rng.random_bool(0.3) { CyclistContext::default() } else { random_context(rng) };
    seal(Ride {
        ride_id: RideId::from_bytes([0; 16]),
        region: REGIONS[rng.random_range(0..REGIONS.len())].to_string(),
        samples,
        incidents,
        context,
    })
}

pub fn random_profile<R: Rng + ?Sized>(rng: &mut R) -> Profile {
    let ride = rng.random_range(0..10_000_000u64);
    let mut p = Profile::empty(["Berlin", "Bern", "x_1"][rng.random_range(0..3)]);
    p.age_group = rng.random_range(0..13);
    p.gender = Gender::ALL[rng.random_range(0..Gender::ALL.len())];
    p.experience_years = rng.random_range(0..60);
    p.ride_duration_total = ride;
    p.wait_duration_total = rng.random_range(0..=ride);
    p.incident_count_total = rng.random_range(0..5000);
    for h in 0..HOURS_PER_DAY {
        p.ride_time_histogram[h] = rng.random_range(0..300);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeRideConfig {
    pub duration_s: i64,
    /// Sample spacing of the aggregated accelerometer series.
    pub sample_ms: Millis,
    pub noise_sigma: f64,
    /// Ratio of spike amplitude to noise standard deviation.
    pub snr: f64,
    pub bucket_ms: Millis,
}

impl Default for SpikeRideConfig {
    fn default() -> Self {
        SpikeRideConfig { duration_s: 120, sample_ms: 120, noise_sigma: 0.2, snr: 10.0, bucket_ms: 3000 }
    }
}

/// A ride with Gaussian accelerometer noise and `spikes` short
/// sign-alternating bursts, each confined to one bucket. Returns the ride
/// and the indices of the buckets holding a burst.
pub fn spike_ride<R: Rng + ?Sized>(spikes: usize, cfg: &SpikeRideConfig, rng: &mut R) -> (Ride, Vec<u64>) {
    let n = (cfg.duration_s * 1000 / cfg.sample_ms) as usize;
    let buckets = (cfg.duration_s * 1000 / cfg.bucket_ms) as u64;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
    let mut chosen: Vec<u64> = (1..buckets.saturating_sub(1)).collect();
    chosen.shuffle(rng);
    chosen.truncate(spikes);
    chosen.sort_unstable();
    let amplitude = cfg.snr * cfg.noise_sigma;
    let mut samples: Vec<RideSample> = (0..n)
        .map(|k| {
            let t = k as Millis * cfg.sample_ms;
            RideSample {
                timestamp: EPOCH_MS + t,
                location: (t % 3000 == 0).then(|| canonical_point(BERLIN.offset(t as f64 * 0.004, 0.0))),
                accuracy: (t % 3000 == 0).then_some(4.0),
                accel: [noise.sample(rng), noise.sample(rng), 9.81 + noise.sample(rng)],
                orientation: None,
            }
        })
        .collect();
    for b in &chosen {
        let axis = rng.random_range(0..3);
        let mid = (*b as i64 * cfg.bucket_ms + cfg.bucket_ms / 2) / cfg.sample_ms;
        for (j, k) in (mid - 2..=mid + 2).enumerate() {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            samples[k as usize].accel[axis] += sign * amplitude;
        }
    }
    let ride = Ride {
        ride_id: RideId::from_bytes([0; 16]),
        region: "Berlin".into(),
        samples,
        incidents: vec![],
        context: CyclistContext::default(),
    };
    (ride, chosen)
}

/// Counts of one incident row: (type, scary, non-scary).
pub type IncidentRow = (IncidentType, u64, u64);

/// A direction-free street fixture: ride count, length and incident rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StreetFixture {
    pub name: &'static str,
    pub rides: u64,
    pub length_m: f64,
    pub rows: &'static [IncidentRow],
    pub start: GeoPoint,
}

/// Three Berlin street segments with observed ride and incident counts.
pub const STREET_FIXTURES: [StreetFixture; 3] = [
    StreetFixture {
        name: "Edisonstraße",
        rides: 79,
        length_m: 230.0,
        rows: &[(IncidentType::DodgeObstacle, 18, 25)],
        start: GeoPoint { lat: 52.4578, lon: 13.5205 },
    },
    StreetFixture {
        name: "Leibnizstraße",
        rides: 194,
        length_m: 628.0,
        rows: &[
            (IncidentType::ClosePass, 0, 1),
            (IncidentType::PullInOut, 1, 0),
            (IncidentType::NearHook, 1, 1),
            (IncidentType::Tailgating, 1, 0),
            (IncidentType::NearDooring, 0, 1),
            (IncidentType::DodgeObstacle, 1, 3),
            (IncidentType::Other, 1, 2),
        ],
        start: GeoPoint { lat: 52.5030, lon: 13.3150 },
    },
    StreetFixture {
        name: "Paulsborner Straße",
        rides: 184,
        length_m: 600.0,
        rows: &[
            (IncidentType::ClosePass, 4, 12),
            (IncidentType::HeadOn, 0, 3),
            (IncidentType::DodgeObstacle, 0, 1),
            (IncidentType::Other, 0, 2),
        ],
        start: GeoPoint { lat: 52.4890, lon: 13.2890 },
    },
];

/// Graph holding the street fixtures as edges 0, 1, 2. Counts are
/// direction-free, so they all sit in direction column 0.
pub fn street_fixture_graph() -> MapGraph {
    let mut edges = BTreeMap::new();
    for (i, f) in STREET_FIXTURES.iter().enumerate() {
        let end = f.start.offset(0.0, f.length_m);
        let frame = LocalFrame::new(f.start);
        let line = [frame.project(f.start), frame.project(end)];
        let polygon = crate::geo::buffer_polyline(&line, 5.0).into_iter().map(|v| frame.unproject(v)).collect();
        let mut s = [[0; 2]; INCIDENT_CATEGORIES];
        let mut n = [[0; 2]; INCIDENT_CATEGORIES];
        for (ty, scary, non) in f.rows {
            let c = ty.category_index().expect("labeled");
            s[c][0] = *scary;
            n[c][0] = *non;
        }
        let id = EdgeId(i as u64);
        edges.insert(
            id,
            StreetSegment {
                id,
                endpoints: (None, None),
                way_id: i as u64 + 1,
                name: Some(f.name.to_string()),
                centerline: vec![f.start, end],
                polygon,
                length_m: f.length_m,
                r: [f.rides, 0],
                s,
                n,
            },
        );
    }
    debug_assert!(edges.values().all(|e: &StreetSegment| (polyline_length(&e.centerline) - e.length_m).abs() < 1.0));
    MapGraph { region: "Berlin".into(), origin: BERLIN, nodes: BTreeMap::<NodeId, Intersection>::new(), edges }
}

/// Rides whose labeled incidents reproduce [`BERLIN_INCIDENT_COUNTS`]
/// exactly, spread over random rides of one to five incidents each.
pub fn incident_store(seed: u64, region: &str) -> Vec<Ride> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<(IncidentType, bool)> = BERLIN_INCIDENT_COUNTS
        .iter()
        .flat_map(|(ty, s, n)| {
            std::iter::repeat_n((*ty, true), *s as usize).chain(std::iter::repeat_n((*ty, false), *n as usize))
        })
        .collect();
    labels.shuffle(&mut rng);
    let mut rides = Vec::new();
    let mut rest = labels.as_slice();
    let mut start = EPOCH_MS;
    while !rest.is_empty() {
        let k = rng.random_range(1..=5).min(rest.len());
        let (mine, tail) = rest.split_at(k);
        rest = tail;
        start += rng.random_range(600_000..20_000_000);
        let origin = BERLIN.offset(rng.random_range(-6000.0..6000.0), rng.random_range(-6000.0..6000.0));
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let fixes = 40;
        let samples: Vec<RideSample> = (0..fixes)
            .map(|j| {
                let d = j as f64 * 12.0;
                RideSample {
                    timestamp: start + j * 3000,
                    location: Some(canonical_point(origin.offset(d * heading.cos(), d * heading.sin()))),
                    accuracy: Some(round_to(rng.random_range(3.0..15.0), 2)),
                    accel: [0.0, 0.0, 9.81],
                    orientation: None,
                }
            })
            .collect();
        let mut incidents: Vec<Incident> = mine
            .iter()
            .map(|(ty, scary)| {
                let j = rng.random_range(0..fixes) as usize;
                Incident {
                    location: samples[j].location.expect("every sample has a fix"),
                    timestamp: samples[j].timestamp,
                    incident_type: *ty,
                    scary: *scary,
                    participants: random_participants(&mut rng),
                    description: random_description(&mut rng),
                    auto_detected: false,
                }
            })
            .collect();
        incidents.sort_by_key(|i| i.timestamp);
        rides.push(seal(Ride {
            ride_id: RideId::from_bytes([0; 16]),
            region: region.to_string(),
            samples,
            incidents,
            context: random_context(&mut rng),
        }));
    }
    rides
}
