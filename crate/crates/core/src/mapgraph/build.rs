//! Graph construction from a JSON-lines map extract.
//!
//! Each line is one record:
//!
//! ```text
//! {"type":"way","id":10,"name":"Edisonstraße","coords":[[52.46,13.51],[52.46,13.52]],"refs":[1,null]}
//! {"type":"intersection","id":1,"coord":[52.46,13.51],"arity":4}
//! ```
//!
//! `coords` are `[lat, lon]` pairs; `refs` names the intersection candidates
//! at the way's start and end (either may be null). A candidate becomes a
//! graph node when its arity (number of street arms meeting there) exceeds
//! two. Ways are split at every node lying on them; each piece becomes an
//! edge.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EdgeId, Intersection, MapGraph, NodeId, StreetSegment};
use crate::geo::{buffer_polyline, polyline_length, project_onto_polyline, regular_polygon, GeoPoint, LocalFrame, Vec2};
use crate::ride::{validate_region, INCIDENT_CATEGORIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExtractRecord {
    Way {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        coords: Vec<[f64; 2]>,
        #[serde(default)]
        refs: [Option<u64>; 2],
    },
    Intersection {
        id: u64,
        coord: [f64; 2],
        arity: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("extract line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dangling way references (way id, missing intersection id): {0:?}")]
    DanglingRefs(Vec<(u64, u64)>),
    #[error("way {way}: {reason}")]
    Geometry { way: u64, reason: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("invalid region: {0}")]
    Region(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Total corridor width of street segment polygons.
    pub buffer_width_m: f64,
    /// Radius of the disc-shaped intersection polygons.
    pub node_radius_m: f64,
    /// A node within this distance of a way splits it.
    pub split_tolerance_m: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { buffer_width_m: 10.0, node_radius_m: 12.0, split_tolerance_m: 1.0 }
    }
}

pub fn parse_extract(text: &str) -> Result<Vec<ExtractRecord>, BuildError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| BuildError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

fn point(coord: [f64; 2]) -> Option<GeoPoint> {
    GeoPoint::new(coord[0], coord[1]).ok()
}

struct Way<'a> {
    id: u64,
    name: Option<&'a str>,
    coords: Vec<GeoPoint>,
    refs: [Option<u64>; 2],
}

/// Uniform hash grid over planar points.
struct PointGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[Vec2], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)).or_default().push(i);
        }
        PointGrid { cell, cells }
    }

    fn query(&self, min: Vec2, max: Vec2) -> impl Iterator<Item = usize> + '_ {
        let (x0, x1) = ((min.x / self.cell).floor() as i64, (max.x / self.cell).floor() as i64);
        let (y0, y1) = ((min.y / self.cell).floor() as i64, (max.y / self.cell).floor() as i64);
        (x0..=x1)
            .flat_map(move |x| (y0..=y1).map(move |y| (x, y)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
    }
}

/// Builds the street graph of `region` from extract records.
pub fn build_graph(region: &str, records: &[ExtractRecord], cfg: &BuildConfig) -> Result<MapGraph, BuildError> {
    validate_region(region).map_err(|e| BuildError::Region(e.to_string()))?;
    let mut candidates: BTreeMap<u64, (GeoPoint, u32)> = BTreeMap::new();
    let mut ways: Vec<Way<'_>> = Vec::new();
    let mut seen_ways = HashSet::new();
    for rec in records {
        match rec {
            ExtractRecord::Intersection { id, coord, arity } => {
                let p = point(*coord).ok_or_else(|| BuildError::Geometry {
                    way: *id,
                    reason: format!("intersection coordinate {coord:?} out of range"),
                })?;
                if candidates.insert(*id, (p, *arity)).is_some() {
                    return Err(BuildError::DuplicateId { kind: "intersection", id: *id });
                }
            }
            ExtractRecord::Way { id, name, coords, refs } => {
                if !seen_ways.insert(*id) {
                    return Err(BuildError::DuplicateId { kind: "way", id: *id });
                }
                let coords = coords
                    .iter()
                    .map(|c| point(*c))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| BuildError::Geometry { way: *id, reason: "coordinate out of range".into() })?;
                if coords.len() < 2 {
                    return Err(BuildError::Geometry { way: *id, reason: "needs at least 2 coordinates".into() });
                }
                ways.push(Way { id: *id, name: name.as_deref(), coords, refs: *refs });
            }
        }
    }

    let dangling: Vec<(u64, u64)> = ways
        .iter()
        .flat_map(|w| w.refs.iter().flatten().map(move |r| (w.id, *r)))
        .filter(|(_, r)| !candidates.contains_key(r))
        .collect();
    if !dangling.is_empty() {
        return Err(BuildError::DanglingRefs(dangling));
    }
    ways.sort_by_key(|w| w.id);

    let all: Vec<GeoPoint> = ways.iter().flat_map(|w| w.coords.iter().copied()).collect();
    let origin = bbox_center(&all).or_else(|| candidates.values().next().map(|c| c.0)).unwrap_or(GeoPoint { lat: 0.0, lon: 0.0 });
    let frame = LocalFrame::new(origin);

    let node_ids: Vec<u64> = candidates.iter().filter(|(_, (_, arity))| *arity > 2).map(|(id, _)| *id).collect();
    let node_pos: Vec<Vec2> = node_ids.iter().map(|id| frame.project(candidates[id].0)).collect();
    let grid = PointGrid::new(&node_pos, 50.0);
    let node_set: HashSet<u64> = node_ids.iter().copied().collect();

    let mut nodes = BTreeMap::new();
    for (i, id) in node_ids.iter().enumerate() {
        let polygon = regular_polygon(node_pos[i], cfg.node_radius_m, 16).into_iter().map(|v| frame.unproject(v)).collect();
        nodes.insert(
            NodeId(*id),
            Intersection {
                id: NodeId(*id),
                position: candidates[id].0,
                polygon,
                r: 0,
                s: [0; INCIDENT_CATEGORIES],
                n: [0; INCIDENT_CATEGORIES],
            },
        );
    }

    let mut edges = BTreeMap::new();
    let mut next_edge = 0u64;
    let tol = cfg.split_tolerance_m;
    for way in &ways {
        let line: Vec<Vec2> = way.coords.iter().map(|p| frame.project(*p)).collect();
        let total = line.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>();
        if total <= 0.0 {
            return Err(BuildError::Geometry { way: way.id, reason: "zero length".into() });
        }
        let (min, max) = bbox(&line);
        let mut cuts: Vec<(f64, usize)> = grid
            .query(Vec2::new(min.x - tol, min.y - tol), Vec2::new(max.x + tol, max.y + tol))
            .filter_map(|k| {
                let proj = project_onto_polyline(node_pos[k], &line)?;
                (proj.distance <= tol).then_some((proj.arc_length, k))
            })
            .collect();
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0).then(node_ids[a.1].cmp(&node_ids[b.1])));
        cuts.dedup_by(|a, b| a.1 == b.1);

        let end_node = |which: usize| -> Option<u64> { way.refs[which].filter(|r| node_set.contains(r)) };
        let mut start_node = end_node(0);
        let mut start_arc = 0.0;
        let mut start_point = line[0];
        let mut pieces = Vec::new();
        for (arc, k) in &cuts {
            if *arc <= tol {
                start_node = Some(node_ids[*k]);
                start_point = node_pos[*k];
                continue;
            }
            if *arc >= total - tol {
                continue;
            }
            pieces.push((start_node, Some(node_ids[*k]), sub_polyline(&line, start_arc, *arc, start_point, node_pos[*k])));
            start_node = Some(node_ids[*k]);
            start_arc = *arc;
            start_point = node_pos[*k];
        }
        let tail_node = cuts.iter().rev().find(|(arc, _)| *arc >= total - tol).map(|(_, k)| node_ids[*k]).or(end_node(1));
        let end_point = tail_node.and_then(|id| node_ids.iter().position(|n| *n == id)).map_or(line[line.len() - 1], |k| node_pos[k]);
        pieces.push((start_node, tail_node, sub_polyline(&line, start_arc, total, start_point, end_point)));

        for (a, b, piece) in pieces {
            let centerline: Vec<GeoPoint> = piece.iter().map(|v| frame.unproject(*v)).collect();
            let length_m = polyline_length(&centerline);
            if length_m <= 0.01 {
                continue;
            }
            let polygon = buffer_polyline(&piece, cfg.buffer_width_m / 2.0).into_iter().map(|v| frame.unproject(v)).collect();
            let id = EdgeId(next_edge);
            next_edge += 1;
            edges.insert(
                id,
                StreetSegment {
                    id,
                    endpoints: (a.map(NodeId), b.map(NodeId)),
                    way_id: way.id,
                    name: way.name.map(str::to_string),
                    centerline,
                    polygon,
                    length_m,
                    r: [0; 2],
                    s: [[0; 2]; INCIDENT_CATEGORIES],
                    n: [[0; 2]; INCIDENT_CATEGORIES],
                },
            );
        }
    }

    Ok(MapGraph { region: region.to_string(), origin, nodes, edges })
}

fn bbox(line: &[Vec2]) -> (Vec2, Vec2) {
    line.iter().fold(
        (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

fn bbox_center(points: &[GeoPoint]) -> Option<GeoPoint> {
    let first = points.first()?;
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        lo.lat = lo.lat.min(p.lat);
        lo.lon = lo.lon.min(p.lon);
        hi.lat = hi.lat.max(p.lat);
        hi.lon = hi.lon.max(p.lon);
    }
    Some(GeoPoint { lat: (lo.lat + hi.lat) / 2.0, lon: (lo.lon + hi.lon) / 2.0 })
}

/// Portion of `line` between two arc lengths, with exact end points.
fn sub_polyline(line: &[Vec2], from: f64, to: f64, start: Vec2, end: Vec2) -> Vec<Vec2> {
    let mut out = vec![start];
    let mut walked = 0.0;
    for w in line.windows(2) {
        walked += w[0].dist(w[1]);
        if walked > from + 1e-9 && walked < to - 1e-9 {
            out.push(w[1]);
        }
    }
    out.push(end);
    out
}
