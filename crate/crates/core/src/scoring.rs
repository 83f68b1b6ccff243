//! Dangerousness scores of graph elements and hotspot selection.
//!
//! The score of one cell is `(alpha * s + n) / r`, where `s` and `n` count
//! scary and non-scary incidents of one category and `r` counts rides. For
//! street segments there is one cell per category and travel direction and a
//! length-adjusted variant that further divides by the segment length.
//! All arithmetic is exact: configuration values and lengths are converted
//! from their shortest decimal representation into rationals.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::mapgraph::{ElementId, Intersection, MapGraph, StreetSegment};
use crate::ride::INCIDENT_CATEGORIES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("element {0} has no rides; its score is undefined")]
    Undefined(ElementId),
    #[error("element {0} is not part of the graph")]
    UnknownElement(ElementId),
    #[error("scores were computed with different configurations (alpha {found} vs {expected})")]
    MixedConfig { expected: String, found: String },
    #[error("invalid score configuration: {0}")]
    Config(String),
}

/// Exact rational value, serialized as `"p/q"` (or `"p"` when integral).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub BigRational);

impl Exact {
    pub fn zero() -> Self {
        Exact(BigRational::zero())
    }

    pub fn from_integer(v: u64) -> Self {
        Exact(BigRational::from_integer(BigInt::from(v)))
    }

    /// The rational equal to the shortest decimal representation of `v`,
    /// so `4.4` becomes 44/10 rather than the nearest binary fraction.
    pub fn from_decimal(v: f64) -> Result<Self, ScoreError> {
        if !v.is_finite() {
            return Err(ScoreError::Config(format!("{v} is not a finite number")));
        }
        let text = v.to_string();
        let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
        let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| ScoreError::Config(format!("cannot read {text}")))?;
        let den = num_traits::pow(BigInt::from(10), frac.len());
        Ok(Exact(BigRational::new(digits, den)))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rendering of `self * 10^scale` with `decimals` digits,
    /// rounding half away from zero.
    pub fn display(&self, scale: u32, decimals: u32) -> String {
        let factor = BigRational::from_integer(num_traits::pow(BigInt::from(10), (scale + decimals) as usize));
        let scaled = &self.0 * factor;
        let rounded = scaled.abs().round().to_integer();
        let digits = rounded.to_string();
        let d = decimals as usize;
        let padded = format!("{digits:0>width$}", width = d + 1);
        let (int, frac) = padded.split_at(padded.len() - d);
        let sign = if scaled.is_negative() && !rounded.is_zero() { "-" } else { "" };
        if d == 0 {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        }
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Exact {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |_| format!("{s:?} is not a rational p/q");
        let (p, q) = s.split_once('/').unwrap_or((s, "1"));
        let p: BigInt = p.parse().map_err(bad)?;
        let q: BigInt = q.parse().map_err(bad)?;
        if q.is_zero() {
            return Err(format!("{s:?} has a zero denominator"));
        }
        Ok(Exact(BigRational::new(p, q)))
    }
}

impl Serialize for Exact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    TopK(usize),
    /// Minimum score in raw (unscaled) units.
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Weight of a scary incident relative to a non-scary one.
    pub alpha: f64,
    /// Elements with fewer rides are never hotspots.
    pub min_rides: u64,
    /// Rank edges by their length-adjusted score, separately from nodes.
    pub length_adjusted: bool,
    pub selection: Selection,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { alpha: 4.4, min_rides: 10, length_adjusted: false, selection: Selection::TopK(10) }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ScoreError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.min_rides < 1 {
            return Err(ScoreError::Config("min_rides must be at least 1".into()));
        }
        if let Selection::Threshold(t) = self.selection {
            if !t.is_finite() {
                return Err(ScoreError::Config(format!("threshold must be finite, got {t}")));
            }
        }
        Ok(())
    }

    pub fn exact_alpha(&self) -> Result<Exact, ScoreError> {
        Exact::from_decimal(self.alpha)
    }
}

/// Scores of one element broken down by category and direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// `cells[category][column]`; `None` marks a column without rides.
    pub cells: Vec<Vec<Option<Exact>>>,
    /// Per category, summed over the defined columns.
    pub by_category: Vec<Exact>,
    /// Per column, summed over categories.
    pub by_direction: Vec<Option<Exact>>,
    pub total: Exact,
}

impl ScoreTable {
    fn build(cells: Vec<Vec<Option<Exact>>>) -> Self {
        let columns = cells.first().map_or(0, Vec::len);
        let by_category = cells
            .iter()
            .map(|row| Exact(row.iter().flatten().fold(BigRational::zero(), |acc, c| acc + &c.0)))
            .collect();
        let by_direction = (0..columns)
            .map(|d| {
                cells
                    .iter()
                    .map(|row| row[d].as_ref().map(|c| c.0.clone()))
                    .sum::<Option<BigRational>>()
                    .map(Exact)
            })
            .collect::<Vec<_>>();
        let total = Exact(by_direction.iter().flatten().fold(BigRational::zero(), |acc, c| acc + &c.0));
        ScoreTable { cells, by_category, by_direction, total }
    }

    fn divided(&self, by: &BigRational) -> Self {
        let cells = self.cells.iter().map(|row| row.iter().map(|c| c.as_ref().map(|v| Exact(&v.0 / by))).collect()).collect();
        ScoreTable::build(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementScore {
    pub element: ElementId,
    pub alpha: Exact,
    /// Ride count per column (one column for nodes, two for edges).
    pub rides: Vec<u64>,
    pub total_rides: u64,
    pub scores: ScoreTable,
    /// Edges only: scores divided by the segment length in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_adjusted: Option<ScoreTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<Exact>,
    /// Set when some direction has no rides and its column is undefined.
    pub partial: bool,
}

impl ElementScore {
    /// Ranking key: the length-adjusted total for edges when requested,
    /// the plain total otherwise.
    pub fn key(&self, length_adjusted: bool) -> &Exact {
        match (&self.length_adjusted, length_adjusted) {
            (Some(la), true) => &la.total,
            _ => &self.scores.total,
        }
    }
}

fn cells(alpha: &BigRational, rides: &[u64], s: &[[u64; 2]], n: &[[u64; 2]]) -> Vec<Vec<Option<Exact>>> {
    (0..INCIDENT_CATEGORIES)
        .map(|c| {
            rides
                .iter()
                .enumerate()
                .map(|(d, r)| {
                    (*r > 0).then(|| {
                        let num = alpha * BigRational::from_integer(s[c][d].into()) + BigRational::from_integer(n[c][d].into());
                        Exact(num / BigRational::from_integer((*r).into()))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn score_node(node: &Intersection, alpha: &Exact) -> Result<ElementScore, ScoreError> {
    let id = ElementId::Node(node.id);
    if node.r == 0 {
        return Err(ScoreError::Undefined(id));
    }
    let s: Vec<[u64; 2]> = node.s.iter().map(|v| [*v, 0]).collect();
    let n: Vec<[u64; 2]> = node.n.iter().map(|v| [*v, 0]).collect();
    Ok(ElementScore {
        element: id,
        alpha: alpha.clone(),
        rides: vec![node.r],
        total_rides: node.r,
        scores: ScoreTable::build(cells(&alpha.0, &[node.r], &s, &n)),
        length_adjusted: None,
        length_m: None,
        partial: false,
    })
}

pub fn score_edge(edge: &StreetSegment, alpha: &Exact) -> Result<ElementScore, ScoreError> {
    let id = ElementId::Edge(edge.id);
    if edge.total_rides() == 0 {
        return Err(ScoreError::Undefined(id));
    }
    let length = Exact::from_decimal(edge.length_m)?;
    if !length.0.is_positive() {
        return Err(ScoreError::Config(format!("edge {id} has non-positive length {}", edge.length_m)));
    }
    let scores = ScoreTable::build(cells(&alpha.0, &edge.r, &edge.s, &edge.n));
    let length_adjusted = scores.divided(&length.0);
    Ok(ElementScore {
        element: id,
        alpha: alpha.clone(),
        rides: edge.r.to_vec(),
        total_rides: edge.total_rides(),
        scores,
        length_adjusted: Some(length_adjusted),
        length_m: Some(length),
        partial: edge.r.contains(&0),
    })
}

pub fn score_element(graph: &MapGraph, id: ElementId, cfg: &ScoreConfig) -> Result<ElementScore, ScoreError> {
    cfg.validate()?;
    let alpha = cfg.exact_alpha()?;
    match id {
        ElementId::Node(n) => score_node(graph.nodes.get(&n).ok_or(ScoreError::UnknownElement(id))?, &alpha),
        ElementId::Edge(e) => score_edge(graph.edges.get(&e).ok_or(ScoreError::UnknownElement(id))?, &alpha),
    }
}

/// Scores every element with at least one ride. Elements without rides are
/// returned separately since their score is undefined.
pub fn score_graph(graph: &MapGraph, cfg: &ScoreConfig) -> Result<(Vec<ElementScore>, Vec<ElementId>), ScoreError> {
    cfg.validate()?;
    let alpha = cfg.exact_alpha()?;
    let mut scores = Vec::new();
    let mut unscored = Vec::new();
    let results = graph
        .nodes
        .values()
        .map(|n| score_node(n, &alpha))
        .chain(graph.edges.values().map(|e| score_edge(e, &alpha)));
    for r in results {
        match r {
            Ok(s) => scores.push(s),
            Err(ScoreError::Undefined(id)) => unscored.push(id),
            Err(e) => return Err(e),
        }
    }
    Ok((scores, unscored))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hotspot {
    /// 1-based position within its list.
    pub rank: usize,
    pub element: ElementId,
    /// The ranking key.
    pub score: Exact,
    pub total_rides: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HotspotRanking {
    Combined { elements: Vec<Hotspot> },
    /// Length-adjusted edge scores are not comparable with node scores.
    Separate { nodes: Vec<Hotspot>, edges: Vec<Hotspot> },
}

impl HotspotRanking {
    pub fn all(&self) -> Vec<&Hotspot> {
        match self {
            HotspotRanking::Combined { elements } => elements.iter().collect(),
            HotspotRanking::Separate { nodes, edges } => nodes.iter().chain(edges).collect(),
        }
    }
}

/// Hotspot order: higher score, then more rides, then smaller element id.
pub fn hotspot_order(a: (&Exact, u64, ElementId), b: (&Exact, u64, ElementId)) -> Ordering {
    b.0.cmp(a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2))
}

fn select(mut list: Vec<(&ElementScore, &Exact)>, cfg: &ScoreConfig) -> Result<Vec<Hotspot>, ScoreError> {
    list.sort_by(|a, b| hotspot_order((a.1, a.0.total_rides, a.0.element), (b.1, b.0.total_rides, b.0.element)));
    let keep = match cfg.selection {
        Selection::TopK(k) => k.min(list.len()),
        Selection::Threshold(t) => {
            let t = Exact::from_decimal(t)?;
            list.iter().take_while(|(_, key)| **key >= t).count()
        }
    };
    Ok(list
        .into_iter()
        .take(keep)
        .enumerate()
        .map(|(i, (s, key))| Hotspot { rank: i + 1, element: s.element, score: key.clone(), total_rides: s.total_rides })
        .collect())
}

/// Selects hotspots among elements with at least `min_rides` rides.
pub fn rank_hotspots(scores: &[ElementScore], graph: &MapGraph, cfg: &ScoreConfig) -> Result<HotspotRanking, ScoreError> {
    cfg.validate()?;
    let alpha = cfg.exact_alpha()?;
    if let Some(other) = scores.iter().find(|s| s.alpha != alpha) {
        return Err(ScoreError::MixedConfig { expected: alpha.to_string(), found: other.alpha.to_string() });
    }
    let mut eligible = Vec::new();
    for s in scores {
        let rides = graph.total_rides(s.element).ok_or(ScoreError::UnknownElement(s.element))?;
        if rides >= cfg.min_rides {
            eligible.push((s, s.key(cfg.length_adjusted)));
        }
    }
    if cfg.length_adjusted {
        let (nodes, edges): (Vec<_>, Vec<_>) = eligible.into_iter().partition(|(s, _)| matches!(s.element, ElementId::Node(_)));
        Ok(HotspotRanking::Separate { nodes: select(nodes, cfg)?, edges: select(edges, cfg)? })
    } else {
        Ok(HotspotRanking::Combined { elements: select(eligible, cfg)? })
    }
}

/// Scaling used for display: raw scores in 10⁻², length-adjusted in 10⁻⁴.
pub const RAW_DISPLAY_SCALE: u32 = 2;
pub const LENGTH_ADJUSTED_DISPLAY_SCALE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotEntry {
    pub list: String,
    pub rank: usize,
    pub element: ElementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub score: Exact,
    /// Score in display units, two decimals.
    pub display: String,
    /// Power of ten the display value is expressed in, e.g. "1e-2".
    pub unit: String,
    pub total_rides: u64,
    /// Open ring of [lon, lat] pairs.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub region: String,
    pub config: ScoreConfig,
    pub scores: Vec<ElementScore>,
    pub unscored: Vec<ElementId>,
    pub hotspots: Vec<HotspotEntry>,
}

/// Scores the populated graph and ranks its hotspots.
pub fn build_report(graph: &MapGraph, cfg: &ScoreConfig) -> Result<ScoreReport, ScoreError> {
    let (scores, unscored) = score_graph(graph, cfg)?;
    let ranking = rank_hotspots(&scores, graph, cfg)?;
    let polygon = |pts: &[GeoPoint]| pts.iter().map(|p| [p.lon, p.lat]).collect::<Vec<_>>();
    let entry = |list: &str, h: &Hotspot| {
        let (name, ring, adjusted) = match h.element {
            ElementId::Node(n) => (None, polygon(&graph.nodes[&n].polygon), false),
            ElementId::Edge(e) => (graph.edges[&e].name.clone(), polygon(&graph.edges[&e].polygon), cfg.length_adjusted),
        };
        let scale = if adjusted { LENGTH_ADJUSTED_DISPLAY_SCALE } else { RAW_DISPLAY_SCALE };
        HotspotEntry {
            list: list.to_string(),
            rank: h.rank,
            element: h.element,
            name,
            score: h.score.clone(),
            display: h.score.display(scale, 2),
            unit: format!("1e-{scale}"),
            total_rides: h.total_rides,
            polygon: ring,
        }
    };
    let hotspots = match &ranking {
        HotspotRanking::Combined { elements } => elements.iter().map(|h| entry("all", h)).collect(),
        HotspotRanking::Separate { nodes, edges } => {
            nodes.iter().map(|h| entry("nodes", h)).chain(edges.iter().map(|h| entry("edges", h))).collect()
        }
    };
    Ok(ScoreReport { region: graph.region.clone(), config: *cfg, scores, unscored, hotspots })
}

/// GeoJSON FeatureCollection of the report's hotspots.
pub fn hotspots_geojson(report: &ScoreReport) -> serde_json::Value {
    let features: Vec<_> = report
        .hotspots
        .iter()
        .map(|h| {
            let mut ring = h.polygon.clone();
            if let Some(first) = ring.first().copied() {
                ring.push(first);
            }
            serde_json::json!({
                "type": "Feature",
                "id": h.element.to_string(),
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": {
                    "list": h.list,
                    "rank": h.rank,
                    "element": h.element.to_string(),
                    "name": h.name,
                    "score": h.display,
                    "unit": h.unit,
                    "alpha": report.config.alpha,
                    "rides": h.total_rides,
                },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features })
}
