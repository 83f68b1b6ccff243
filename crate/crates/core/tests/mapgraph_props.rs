use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use simra_core::geo::{LocalFrame, Vec2};
use simra_core::mapgraph::{
    build_graph, match_ride, populate, smooth_trace, BuildConfig, Direction, EdgeId, ElementId, ExtractRecord, GraphIndex,
    MapGraph, MatchConfig, MatchedRide, Tally,
};
use simra_core::synth::{grid_fixture, grid_ride, GridRide, GridRideConfig, BERLIN};
use simra_core::{GeoPoint, RideSample, INCIDENT_CATEGORIES};

fn grid() -> MapGraph {
    build_graph("Berlin", &grid_fixture(), &BuildConfig::default()).unwrap()
}

fn rides(graph: &MapGraph, n: usize, noise_m: f64, seed: u64) -> Vec<GridRide> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GridRideConfig { noise_m, ..GridRideConfig::default() };
    (0..n).map(|_| grid_ride(graph, &cfg, &mut rng).unwrap()).collect()
}

fn segment_intersection(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<Vec2> {
    let r = b.sub(a);
    let s = d.sub(c);
    let den = r.cross(s);
    if den.abs() < 1e-12 {
        return None;
    }
    let t = c.sub(a).cross(s) / den;
    let u = c.sub(a).cross(r) / den;
    ((-1e-9..=1.0 + 1e-9).contains(&t) && (-1e-9..=1.0 + 1e-9).contains(&u)).then(|| a.add(r.scale(t)))
}

/// Counts nodes and edges by scanning every pair of way segments for
/// crossings and counting the street arms meeting at each crossing.
fn geometric_counts(extract: &[ExtractRecord]) -> (usize, usize) {
    let frame = LocalFrame::new(BERLIN);
    let ways: Vec<Vec<Vec2>> = extract
        .iter()
        .filter_map(|r| match r {
            ExtractRecord::Way { coords, .. } => {
                Some(coords.iter().map(|c| frame.project(GeoPoint { lat: c[0], lon: c[1] })).collect())
            }
            _ => None,
        })
        .collect();
    let mut crossings: Vec<Vec2> = Vec::new();
    for i in 0..ways.len() {
        for j in i + 1..ways.len() {
            for s in ways[i].windows(2) {
                for t in ways[j].windows(2) {
                    if let Some(p) = segment_intersection(s[0], s[1], t[0], t[1]) {
                        if !crossings.iter().any(|q| q.dist(p) < 0.5) {
                            crossings.push(p);
                        }
                    }
                }
            }
        }
    }
    let arms = |p: Vec2| -> usize {
        ways.iter()
            .filter(|w| w.windows(2).any(|s| simra_core::geo::closest_on_segment(p, s[0], s[1]).0.dist(p) < 0.5))
            .map(|w| if w[0].dist(p) < 0.5 || w[w.len() - 1].dist(p) < 0.5 { 1 } else { 2 })
            .sum()
    };
    let nodes: Vec<Vec2> = crossings.into_iter().filter(|p| arms(*p) > 2).collect();
    let edges: usize = ways
        .iter()
        .map(|w| {
            1 + nodes
                .iter()
                .filter(|p| {
                    let on = w.windows(2).any(|s| simra_core::geo::closest_on_segment(**p, s[0], s[1]).0.dist(**p) < 0.5);
                    on && w[0].dist(**p) >= 0.5 && w[w.len() - 1].dist(**p) >= 0.5
                })
                .count()
        })
        .sum();
    (nodes.len(), edges)
}

#[test]
fn grid_counts_match_geometric_scan() {
    let extract = grid_fixture();
    let g = build_graph("Berlin", &extract, &BuildConfig::default()).unwrap();
    assert_eq!((g.nodes.len(), g.edges.len()), geometric_counts(&extract));
    assert_eq!((g.nodes.len(), g.edges.len()), (4, 12));
    let bigger = simra_core::synth::grid_extract(BERLIN, 4, 150.0, 60.0);
    let g = build_graph("Berlin", &bigger, &BuildConfig::default()).unwrap();
    assert_eq!((g.nodes.len(), g.edges.len()), geometric_counts(&bigger));
}

#[test]
fn element_polygons_are_simple() {
    let g = grid();
    let frame = LocalFrame::new(g.origin);
    let rings = g.nodes.values().map(|n| &n.polygon).chain(g.edges.values().map(|e| &e.polygon));
    for ring in rings {
        let planar: Vec<Vec2> = ring.iter().map(|p| frame.project(*p)).collect();
        assert!(simra_core::geo::ring_is_simple(&planar));
    }
    assert!(g.edges.values().all(|e| e.length_m > 0.0));
}

#[test]
fn snap_distance_matches_dense_search() {
    let g = grid();
    let cfg = MatchConfig::default();
    let index = GraphIndex::new(&g, &cfg);
    let frame = LocalFrame::new(g.origin);
    // Edge of the southern street between the two western crossings; a fix
    // 5 m outside its corridor.
    let target = BERLIN.offset(100.0, -10.0);
    let sample = RideSample { timestamp: 0, location: Some(target), accuracy: Some(5.0), accel: [0.0; 3], orientation: None };
    let trace = smooth_trace(&[sample], &index, &cfg).unwrap();
    let edge = g.edges.values().find(|e| e.way_id == 100 && e.endpoints == (Some(simra_core::mapgraph::NodeId(1)), Some(simra_core::mapgraph::NodeId(2)))).unwrap();
    assert_eq!(trace.points[0].element, Some(ElementId::Edge(edge.id)));
    let ring: Vec<Vec2> = edge.polygon.iter().map(|p| frame.project(*p)).collect();
    let p = frame.project(target);
    let mut dense = f64::INFINITY;
    for k in 0..ring.len() {
        let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
        for step in 0..=10_000 {
            let q = a.add(b.sub(a).scale(step as f64 / 10_000.0));
            dense = dense.min(q.dist(p));
        }
    }
    assert!((trace.points[0].snap_distance - dense).abs() < 1e-2, "{} vs {dense}", trace.points[0].snap_distance);
    assert!((dense - 5.0).abs() < 0.05);
    let snapped = frame.project(trace.points[0].point);
    assert!(snapped.dist(frame.project(BERLIN.offset(100.0, 0.0))) < 0.05);
}

#[test]
fn noise_free_paths_are_reproduced() {
    let g = grid();
    let cfg = MatchConfig::default();
    let index = GraphIndex::new(&g, &cfg);
    for r in rides(&g, 60, 0.0, 21) {
        let m = match_ride(&r.ride, &index, &cfg);
        assert_eq!(m.elements(), r.truth);
        let dirs: Vec<Option<Direction>> = m.traversal.iter().map(|t| t.direction).collect();
        assert_eq!(dirs, r.directions);
    }
}

#[test]
fn noisy_paths_mostly_recovered() {
    let g = grid();
    let cfg = MatchConfig::default();
    let index = GraphIndex::new(&g, &cfg);
    let set = rides(&g, 50, 2.0, 7);
    let ok = set.iter().filter(|r| match_ride(&r.ride, &index, &cfg).elements() == r.truth).count();
    assert!(ok * 100 >= 95 * set.len(), "{ok}/50");
}

/// Counter recount straight from the matched-ride records.
fn recount(graph: &MapGraph, matched: &[MatchedRide]) -> MapGraph {
    let mut g = graph.clone();
    g.clear_counters();
    for m in matched {
        for t in &m.traversal {
            match t.element {
                ElementId::Node(n) => g.nodes.get_mut(&n).unwrap().r += 1,
                ElementId::Edge(e) => g.edges.get_mut(&e).unwrap().r[t.direction.unwrap().index()] += 1,
            }
        }
        for i in &m.matched_incidents {
            let c = i.incident_type.category_index().unwrap();
            match i.element {
                ElementId::Node(n) => {
                    let node = g.nodes.get_mut(&n).unwrap();
                    if i.scary { node.s[c] += 1 } else { node.n[c] += 1 }
                }
                ElementId::Edge(e) => {
                    let edge = g.edges.get_mut(&e).unwrap();
                    let d = i.direction.unwrap().index();
                    if i.scary { edge.s[c][d] += 1 } else { edge.n[c][d] += 1 }
                }
            }
        }
    }
    g
}

#[test]
fn populate_equals_recount_and_conserves_incidents() {
    let g = grid();
    let cfg = MatchConfig::default();
    let index = GraphIndex::new(&g, &cfg);
    let set = rides(&g, 20, 2.0, 99);
    let matched: Vec<MatchedRide> = set.iter().map(|r| match_ride(&r.ride, &index, &cfg)).collect();

    let mut populated = g.clone();
    populate(&mut populated, &matched).unwrap();
    assert_eq!(populated, recount(&g, &matched));

    let labeled: usize = matched.iter().map(|m| m.matched_incidents.len()).sum();
    assert_eq!(populated.incident_total(), labeled as u64);
    let placed_everywhere: usize = set.iter().map(|r| r.ride.incidents.len()).sum();
    assert_eq!(labeled, placed_everywhere);

    // Every incident increment has a traversal entry on the same element.
    for m in &matched {
        for i in &m.matched_incidents {
            assert!(m.traversal.iter().any(|t| t.element == i.element && t.direction == i.direction));
        }
    }

    // Order independence and parallel partial tallies.
    let mut shuffled = matched.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let mut again = g.clone();
    populate(&mut again, &shuffled).unwrap();
    assert_eq!(again, populated);
    let tally = matched
        .par_iter()
        .map(|m| Tally::from_rides(std::slice::from_ref(m)).unwrap())
        .reduce(Tally::default, |mut a, b| {
            a += b;
            a
        });
    let mut parallel = g.clone();
    tally.apply(&mut parallel).unwrap();
    assert_eq!(parallel, populated);
}

#[test]
fn counters_stay_consistent_with_edge_lookup() {
    let g = grid();
    let cfg = MatchConfig::default();
    let index = GraphIndex::new(&g, &cfg);
    let matched: Vec<MatchedRide> = rides(&g, 30, 2.0, 5).iter().map(|r| match_ride(&r.ride, &index, &cfg)).collect();
    let mut populated = g.clone();
    populate(&mut populated, &matched).unwrap();
    let mut per_edge: BTreeMap<EdgeId, [u64; 2]> = BTreeMap::new();
    for m in &matched {
        for t in &m.traversal {
            if let ElementId::Edge(e) = t.element {
                per_edge.entry(e).or_default()[t.direction.unwrap().index()] += 1;
            }
        }
    }
    for (e, r) in per_edge {
        assert_eq!(populated.edges[&e].r, r);
    }
    for e in populated.edges.values() {
        assert!(e.s.iter().chain(&e.n).all(|row| row.len() == 2));
        assert_eq!(e.s.len(), INCIDENT_CATEGORIES);
    }
}
