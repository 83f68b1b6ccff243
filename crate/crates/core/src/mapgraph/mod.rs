//! Street graph: intersections as nodes, street segments as edges, each
//! with a polygon footprint and ride/incident counters.
//!
//! Nodes carry a ride count `r` and per-category scary (`s`) and non-scary
//! (`n`) incident counts. Edges carry the same counters split by travel
//! direction (column 0 follows the endpoint order, column 1 the reverse)
//! plus their length in meters.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geo::GeoPoint;
use crate::ride::INCIDENT_CATEGORIES;

pub mod build;
pub mod matching;
pub mod osm;
pub mod populate;

pub use build::{build_graph, parse_extract, BuildConfig, BuildError, ExtractRecord};
pub use matching::{
    match_ride, smooth_trace, GraphIndex, MatchConfig, MatchError, MatchedIncident, MatchedRide, SmoothedPoint, SmoothedTrace,
    TraversalEntry,
};
pub use populate::{populate, Counters, PopulateError, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub u64);

/// Any graph element. Ordering puts nodes before edges, then by id, which
/// is also the tie-break when polygons overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum ElementId {
    Node(NodeId),
    Edge(EdgeId),
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementId::Node(n) => write!(f, "n{}", n.0),
            ElementId::Edge(e) => write!(f, "e{}", e.0),
        }
    }
}

impl std::str::FromStr for ElementId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("element id {s:?} must look like n<int> or e<int>");
        let (kind, num) = s.split_at_checked(1).ok_or_else(bad)?;
        let num: u64 = num.parse().map_err(|_| bad())?;
        match kind {
            "n" => Ok(ElementId::Node(NodeId(num))),
            "e" => Ok(ElementId::Edge(EdgeId(num))),
            _ => Err(bad()),
        }
    }
}

/// Travel direction along an edge relative to its endpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

pub type CategoryCounts = [u64; INCIDENT_CATEGORIES];
pub type DirectionalCounts = [[u64; 2]; INCIDENT_CATEGORIES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: NodeId,
    pub position: GeoPoint,
    /// Open ring (first vertex not repeated).
    pub polygon: Vec<GeoPoint>,
    pub r: u64,
    pub s: CategoryCounts,
    pub n: CategoryCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetSegment {
    pub id: EdgeId,
    /// Endpoint nodes; `None` where the segment ends without an
    /// intersection (dead end or extract boundary).
    pub endpoints: (Option<NodeId>, Option<NodeId>),
    pub way_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub centerline: Vec<GeoPoint>,
    /// Open ring (first vertex not repeated).
    pub polygon: Vec<GeoPoint>,
    pub length_m: f64,
    pub r: [u64; 2],
    pub s: DirectionalCounts,
    pub n: DirectionalCounts,
}

impl StreetSegment {
    pub fn total_rides(&self) -> u64 {
        self.r[0] + self.r[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGraph {
    pub region: String,
    /// Origin of the local planar frame used for polygon tests.
    pub origin: GeoPoint,
    pub nodes: BTreeMap<NodeId, Intersection>,
    pub edges: BTreeMap<EdgeId, StreetSegment>,
}

impl MapGraph {
    pub fn contains(&self, id: ElementId) -> bool {
        match id {
            ElementId::Node(n) => self.nodes.contains_key(&n),
            ElementId::Edge(e) => self.edges.contains_key(&e),
        }
    }

    /// Total ride count of an element, summed over directions.
    pub fn total_rides(&self, id: ElementId) -> Option<u64> {
        match id {
            ElementId::Node(n) => self.nodes.get(&n).map(|x| x.r),
            ElementId::Edge(e) => self.edges.get(&e).map(|x| x.total_rides()),
        }
    }

    /// Resets every counter to zero.
    pub fn clear_counters(&mut self) {
        for node in self.nodes.values_mut() {
            node.r = 0;
            node.s = [0; INCIDENT_CATEGORIES];
            node.n = [0; INCIDENT_CATEGORIES];
        }
        for edge in self.edges.values_mut() {
            edge.r = [0; 2];
            edge.s = [[0; 2]; INCIDENT_CATEGORIES];
            edge.n = [[0; 2]; INCIDENT_CATEGORIES];
        }
    }

    /// Sum of all incident counters over all elements.
    pub fn incident_total(&self) -> u64 {
        let nodes: u64 = self.nodes.values().map(|x| x.s.iter().chain(&x.n).sum::<u64>()).sum();
        let edges: u64 =
            self.edges.values().map(|x| x.s.iter().chain(&x.n).flatten().sum::<u64>()).sum();
        nodes + edges
    }

    /// GeoJSON FeatureCollection of element polygons with their counters.
    pub fn to_geojson(&self) -> Value {
        let ring = |poly: &[GeoPoint]| {
            let mut coords: Vec<[f64; 2]> = poly.iter().map(|p| [p.lon, p.lat]).collect();
            if let Some(first) = coords.first().copied() {
                coords.push(first);
            }
            coords
        };
        let mut features = Vec::with_capacity(self.nodes.len() + self.edges.len());
        for node in self.nodes.values() {
            features.push(json!({
                "type": "Feature",
                "id": ElementId::Node(node.id).to_string(),
                "geometry": { "type": "Polygon", "coordinates": [ring(&node.polygon)] },
                "properties": { "kind": "node", "id": node.id.0, "r": node.r, "s": node.s, "n": node.n },
            }));
        }
        for edge in self.edges.values() {
            features.push(json!({
                "type": "Feature",
                "id": ElementId::Edge(edge.id).to_string(),
                "geometry": { "type": "Polygon", "coordinates": [ring(&edge.polygon)] },
                "properties": {
                    "kind": "edge",
                    "id": edge.id.0,
                    "way_id": edge.way_id,
                    "name": edge.name,
                    "endpoints": [edge.endpoints.0.map(|n| n.0), edge.endpoints.1.map(|n| n.0)],
                    "r": edge.r,
                    "s": edge.s,
                    "n": edge.n,
                    "l": edge.length_m,
                },
            }));
        }
        json!({ "type": "FeatureCollection", "features": features })
    }
}
