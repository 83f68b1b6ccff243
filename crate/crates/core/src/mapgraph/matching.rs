//! Containment-based matching of ride traces onto the street graph.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Direction, EdgeId, ElementId, MapGraph};
use crate::geo::{project_onto_polyline, ring_contains, ring_distance, GeoPoint, LocalFrame, Vec2};
use crate::ride::{IncidentType, Millis, Ride, RideId, RideSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Fixes less accurate than this are discarded before matching.
    pub max_accuracy_m: f64,
    /// Fixes farther than this from every polygon stay unmatched.
    pub snap_radius_m: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { max_accuracy_m: 30.0, snap_radius_m: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no usable GPS fix in trace")]
    EmptyTrace,
}

struct IndexedElement {
    id: ElementId,
    ring: Vec<Vec2>,
    /// Centerline for edges, the single center point for nodes.
    centerline: Vec<Vec2>,
}

/// Planar, spatially indexed view of a graph for repeated matching.
/// Immutable after construction and safe to share between threads.
pub struct GraphIndex {
    frame: LocalFrame,
    elements: Vec<IndexedElement>,
    by_id: HashMap<ElementId, usize>,
    endpoints: HashMap<EdgeId, (Option<ElementId>, Option<ElementId>)>,
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GraphIndex {
    pub fn new(graph: &MapGraph, cfg: &MatchConfig) -> Self {
        let frame = LocalFrame::new(graph.origin);
        let proj = |pts: &[GeoPoint]| pts.iter().map(|p| frame.project(*p)).collect::<Vec<_>>();
        // Node entries first, then edges, each by id: index order is the
        // assignment tie-break order.
        let mut elements: Vec<IndexedElement> = graph
            .nodes
            .values()
            .map(|n| IndexedElement {
                id: ElementId::Node(n.id),
                ring: proj(&n.polygon),
                centerline: vec![frame.project(n.position)],
            })
            .collect();
        elements.extend(graph.edges.values().map(|e| IndexedElement {
            id: ElementId::Edge(e.id),
            ring: proj(&e.polygon),
            centerline: proj(&e.centerline),
        }));
        let by_id = elements.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let endpoints = graph
            .edges
            .values()
            .map(|e| (e.id, (e.endpoints.0.map(ElementId::Node), e.endpoints.1.map(ElementId::Node))))
            .collect();

        let cell = 50.0;
        let pad = cfg.snap_radius_m.max(0.0);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, el) in elements.iter().enumerate() {
            let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
            for v in &el.ring {
                lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
                hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
            }
            let key = |v: f64| (v / cell).floor() as i64;
            for x in key(lo.x - pad)..=key(hi.x + pad) {
                for y in key(lo.y - pad)..=key(hi.y + pad) {
                    cells.entry((x, y)).or_default().push(i);
                }
            }
        }
        GraphIndex { frame, elements, by_id, endpoints, cell, cells }
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    fn candidates(&self, p: Vec2) -> &[usize] {
        let key = ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64);
        self.cells.get(&key).map_or(&[], Vec::as_slice)
    }

    /// Element whose polygon contains `p`, honoring the tie-break order.
    pub fn containing(&self, p: GeoPoint) -> Option<ElementId> {
        self.containing_planar(self.frame.project(p)).map(|i| self.elements[i].id)
    }

    fn containing_planar(&self, p: Vec2) -> Option<usize> {
        self.candidates(p).iter().copied().find(|&i| ring_contains(&self.elements[i].ring, p))
    }

    /// Nearest element polygon within `radius`, with its distance.
    fn nearest_planar(&self, p: Vec2, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &i in self.candidates(p) {
            let d = ring_distance(&self.elements[i].ring, p);
            if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    fn arc_length(&self, element: usize, p: Vec2) -> f64 {
        project_onto_polyline(p, &self.elements[element].centerline).map_or(0.0, |pr| pr.arc_length)
    }

    /// Assigns a point to an element by containment, falling back to the
    /// nearest polygon within `radius`. Returns the planar point to use.
    fn assign(&self, p: Vec2, radius: f64) -> Option<(usize, Vec2, f64)> {
        if let Some(i) = self.containing_planar(p) {
            return Some((i, p, 0.0));
        }
        let (i, d) = self.nearest_planar(p, radius)?;
        let snapped = project_onto_polyline(p, &self.elements[i].centerline).map_or(p, |pr| pr.point);
        let owner = self.containing_planar(snapped).unwrap_or(i);
        Some((owner, snapped, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub timestamp: Millis,
    pub point: GeoPoint,
    /// Element the point lies in after snapping; `None` when unmatched.
    pub element: Option<ElementId>,
    /// Distance from the raw fix to the polygon it was snapped to.
    pub snap_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedTrace {
    pub points: Vec<SmoothedPoint>,
    pub discarded: usize,
}

impl SmoothedTrace {
    pub fn unmatched(&self) -> usize {
        self.points.iter().filter(|p| p.element.is_none()).count()
    }

    pub fn unmatched_fraction(&self) -> f64 {
        if self.points.is_empty() {
            1.0
        } else {
            self.unmatched() as f64 / self.points.len() as f64
        }
    }
}

/// Drops inaccurate fixes and snaps the rest onto nearby element polygons by
/// perpendicular projection onto the element's centerline.
pub fn smooth_trace(samples: &[RideSample], index: &GraphIndex, cfg: &MatchConfig) -> Result<SmoothedTrace, MatchError> {
    let mut points = Vec::new();
    let mut discarded = 0;
    for s in samples {
        let Some((p, acc)) = s.fix() else { continue };
        if acc > cfg.max_accuracy_m {
            discarded += 1;
            continue;
        }
        let planar = index.frame.project(p);
        let point = match index.assign(planar, cfg.snap_radius_m) {
            Some((i, q, d)) => SmoothedPoint {
                timestamp: s.timestamp,
                point: if d == 0.0 { p } else { index.frame.unproject(q) },
                element: Some(index.elements[i].id),
                snap_distance: d,
            },
            None => SmoothedPoint { timestamp: s.timestamp, point: p, element: None, snap_distance: f64::INFINITY },
        };
        points.push(point);
    }
    if points.is_empty() {
        return Err(MatchError::EmptyTrace);
    }
    Ok(SmoothedTrace { points, discarded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraversalEntry {
    pub element: ElementId,
    /// Travel direction; always `None` for nodes.
    pub direction: Option<Direction>,
    pub enter_ts: Millis,
    pub exit_ts: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedIncident {
    /// Position of the incident in the ride's incident list.
    pub incident_index: usize,
    pub element: ElementId,
    pub direction: Option<Direction>,
    pub incident_type: IncidentType,
    pub scary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRide {
    pub ride_id: RideId,
    pub traversal: Vec<TraversalEntry>,
    pub matched_incidents: Vec<MatchedIncident>,
    pub unmatched_point_fraction: f64,
}

impl MatchedRide {
    pub fn elements(&self) -> Vec<ElementId> {
        self.traversal.iter().map(|t| t.element).collect()
    }
}

/// Matches a ride onto the graph: traversal sequence with edge directions
/// plus the element and direction of every incident that can be placed.
pub fn match_ride(ride: &Ride, index: &GraphIndex, cfg: &MatchConfig) -> MatchedRide {
    let trace = match smooth_trace(&ride.samples, index, cfg) {
        Ok(t) => t,
        Err(MatchError::EmptyTrace) => {
            return MatchedRide { ride_id: ride.ride_id, traversal: vec![], matched_incidents: vec![], unmatched_point_fraction: 1.0 };
        }
    };

    // Consecutive points on the same element form one entry; unmatched
    // points neither open nor close an entry.
    let mut runs: Vec<(usize, Vec<(Millis, Vec2)>)> = Vec::new();
    for p in &trace.points {
        let Some(el) = p.element else { continue };
        let i = index.by_id[&el];
        let planar = index.frame.project(p.point);
        match runs.last_mut() {
            Some((last, pts)) if *last == i => pts.push((p.timestamp, planar)),
            _ => runs.push((i, vec![(p.timestamp, planar)])),
        }
    }

    let mut traversal: Vec<TraversalEntry> = runs
        .iter()
        .map(|(i, pts)| TraversalEntry {
            element: index.elements[*i].id,
            direction: None,
            enter_ts: pts[0].0,
            exit_ts: pts[pts.len() - 1].0,
        })
        .collect();
    for k in 0..traversal.len() {
        let ElementId::Edge(edge) = traversal[k].element else { continue };
        let prev = k.checked_sub(1).map(|j| traversal[j].element);
        let next = traversal.get(k + 1).map(|t| t.element);
        let (i, pts) = &runs[k];
        traversal[k].direction = Some(edge_direction(index, edge, prev, next, *i, pts));
    }

    let mut matched_incidents = Vec::new();
    for (incident_index, inc) in ride.incidents.iter().enumerate() {
        if !inc.is_labeled() {
            continue;
        }
        let planar = index.frame.project(inc.location);
        let Some((i, _, _)) = index.assign(planar, cfg.snap_radius_m) else { continue };
        let element = index.elements[i].id;
        let gap = |t: &TraversalEntry| {
            if inc.timestamp < t.enter_ts {
                t.enter_ts - inc.timestamp
            } else {
                (inc.timestamp - t.exit_ts).max(0)
            }
        };
        // Nearest pass over this element in time; first one wins ties.
        let Some(entry) = traversal.iter().filter(|t| t.element == element).min_by_key(|t| gap(t)) else {
            continue;
        };
        matched_incidents.push(MatchedIncident {
            incident_index,
            element,
            direction: entry.direction,
            incident_type: inc.incident_type,
            scary: inc.scary,
        });
    }

    MatchedRide { ride_id: ride.ride_id, traversal, matched_incidents, unmatched_point_fraction: trace.unmatched_fraction() }
}

/// Direction of travel over an edge, from the neighbouring node visits when
/// they agree, otherwise from movement along the centerline.
fn edge_direction(
    index: &GraphIndex,
    edge: EdgeId,
    prev: Option<ElementId>,
    next: Option<ElementId>,
    element: usize,
    pts: &[(Millis, Vec2)],
) -> Direction {
    let (a, b) = index.endpoints[&edge];
    let is = |x: Option<ElementId>, y: Option<ElementId>| x.is_some() && x == y;
    let forward = is(prev, a) || is(next, b);
    let backward = is(prev, b) || is(next, a);
    match (forward, backward) {
        (true, false) => Direction::Forward,
        (false, true) => Direction::Backward,
        _ => {
            let first = index.arc_length(element, pts[0].1);
            let last = index.arc_length(element, pts[pts.len() - 1].1);
            if last >= first {
                Direction::Forward
            } else {
                Direction::Backward
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgraph::{build_graph, BuildConfig, ExtractRecord, NodeId};
    use crate::ride::{CyclistContext, Incident, Participants};

    const O: GeoPoint = GeoPoint { lat: 52.5, lon: 13.4 };

    fn plus() -> MapGraph {
        let way = |id, a: GeoPoint, b: GeoPoint| ExtractRecord::Way {
            id,
            name: None,
            coords: vec![[a.lat, a.lon], [b.lat, b.lon]],
            refs: [None, None],
        };
        let recs = vec![
            way(1, O.offset(-100.0, 0.0), O.offset(100.0, 0.0)),
            way(2, O.offset(0.0, -100.0), O.offset(0.0, 100.0)),
            ExtractRecord::Intersection { id: 9, coord: [O.lat, O.lon], arity: 4 },
        ];
        build_graph("t", &recs, &BuildConfig::default()).unwrap()
    }

    fn sample(t: Millis, p: GeoPoint, acc: f64) -> RideSample {
        RideSample { timestamp: t, location: Some(p), accuracy: Some(acc), accel: [0.0; 3], orientation: None }
    }

    fn ride(points: &[(f64, f64)]) -> Ride {
        let samples = points.iter().enumerate().map(|(k, (e, n))| sample(k as i64 * 3000, O.offset(*e, *n), 5.0)).collect();
        Ride { ride_id: RideId::from_bytes([1; 16]), region: "t".into(), samples, incidents: vec![], context: CyclistContext::default() }
    }

    // Way 1 runs west to east and is split into e0 (west half) and e1.
    // Way 2 runs south to north: e2 (south half) and e3.
    #[test]
    fn crossing_node_between_two_edges() {
        let g = plus();
        let idx = GraphIndex::new(&g, &MatchConfig::default());
        let pts: Vec<(f64, f64)> = (0..=16).map(|k| (-80.0 + 10.0 * k as f64, 0.0)).collect();
        let m = match_ride(&ride(&pts), &idx, &MatchConfig::default());
        assert_eq!(m.elements(), vec![ElementId::Edge(EdgeId(0)), ElementId::Node(NodeId(9)), ElementId::Edge(EdgeId(1))]);
        assert_eq!(m.traversal[0].direction, Some(Direction::Forward));
        assert_eq!(m.traversal[1].direction, None);
        assert_eq!(m.traversal[2].direction, Some(Direction::Forward));
        assert_eq!(m.unmatched_point_fraction, 0.0);
    }

    #[test]
    fn direction_reversed_when_travelling_against_endpoints() {
        let g = plus();
        let idx = GraphIndex::new(&g, &MatchConfig::default());
        let pts: Vec<(f64, f64)> = (0..=8).map(|k| (0.0, 90.0 - 10.0 * k as f64)).collect();
        let m = match_ride(&ride(&pts), &idx, &MatchConfig::default());
        assert_eq!(m.elements(), vec![ElementId::Edge(EdgeId(3)), ElementId::Node(NodeId(9))]);
        assert_eq!(m.traversal[0].direction, Some(Direction::Backward));
    }

    #[test]
    fn single_edge_uses_centerline_progression() {
        let recs = vec![ExtractRecord::Way {
            id: 1,
            name: None,
            coords: vec![[O.lat, O.lon], [O.offset(300.0, 0.0).lat, O.offset(300.0, 0.0).lon]],
            refs: [None, None],
        }];
        let g = build_graph("t", &recs, &BuildConfig::default()).unwrap();
        let idx = GraphIndex::new(&g, &MatchConfig::default());
        let fwd: Vec<(f64, f64)> = (0..10).map(|k| (20.0 + 25.0 * k as f64, 1.0)).collect();
        let m = match_ride(&ride(&fwd), &idx, &MatchConfig::default());
        assert_eq!(m.traversal.len(), 1);
        assert_eq!(m.traversal[0].direction, Some(Direction::Forward));
        let back: Vec<(f64, f64)> = fwd.iter().rev().copied().collect();
        let m = match_ride(&ride(&back), &idx, &MatchConfig::default());
        assert_eq!(m.traversal[0].direction, Some(Direction::Backward));
    }

    #[test]
    fn snapping_and_pass_through() {
        let g = plus();
        let cfg = MatchConfig::default();
        let idx = GraphIndex::new(&g, &cfg);
        let samples = vec![
            sample(0, O.offset(-50.0, 2.0), 5.0),
            sample(1000, O.offset(-50.0, 12.0), 5.0),
            sample(2000, O.offset(-50.0, 500.0), 5.0),
            sample(3000, O.offset(-40.0, 0.0), 50.0),
        ];
        let t = smooth_trace(&samples, &idx, &cfg).unwrap();
        assert_eq!(t.discarded, 1);
        assert_eq!(t.points.len(), 3);
        assert_eq!(t.points[0].point, samples[0].location.unwrap());
        assert_eq!(t.points[0].snap_distance, 0.0);
        let snapped = idx.frame().project(t.points[1].point);
        let expected = idx.frame().project(O.offset(-50.0, 0.0));
        assert!(snapped.dist(expected) < 1e-6);
        assert!((t.points[1].snap_distance - 7.0).abs() < 1e-3);
        assert_eq!(t.points[2].element, None);
        assert!((t.unmatched_fraction() - 1.0 / 3.0).abs() < 1e-12);

        let bad = vec![sample(0, O, 31.0)];
        assert_eq!(smooth_trace(&bad, &idx, &cfg), Err(MatchError::EmptyTrace));
    }

    #[test]
    fn unmatched_ride_has_empty_traversal() {
        let g = plus();
        let idx = GraphIndex::new(&g, &MatchConfig::default());
        let m = match_ride(&ride(&[(1000.0, 1000.0), (1010.0, 1000.0)]), &idx, &MatchConfig::default());
        assert!(m.traversal.is_empty());
        assert_eq!(m.unmatched_point_fraction, 1.0);
    }

    #[test]
    fn incidents_follow_the_pass_on_their_element() {
        let g = plus();
        let idx = GraphIndex::new(&g, &MatchConfig::default());
        let pts: Vec<(f64, f64)> = (0..=16).map(|k| (-80.0 + 10.0 * k as f64, 0.0)).collect();
        let mut r = ride(&pts);
        let inc = |t: Millis, e: f64, ty| Incident {
            location: O.offset(e, 1.0),
            timestamp: t,
            incident_type: ty,
            scary: true,
            participants: Participants::empty(),
            description: String::new(),
            auto_detected: false,
        };
        r.incidents = vec![
            inc(3000, -70.0, IncidentType::ClosePass),
            inc(6000, -60.0, IncidentType::Unlabeled),
            inc(45000, 70.0, IncidentType::HeadOn),
            inc(45000, 0.0, IncidentType::HeadOn),
        ];
        let m = match_ride(&r, &idx, &MatchConfig::default());
        let placed: Vec<_> = m.matched_incidents.iter().map(|i| (i.incident_index, i.element, i.direction)).collect();
        assert_eq!(
            placed,
            vec![
                (0, ElementId::Edge(EdgeId(0)), Some(Direction::Forward)),
                (2, ElementId::Edge(EdgeId(1)), Some(Direction::Forward)),
                (3, ElementId::Node(NodeId(9)), None),
            ]
        );
    }
}
