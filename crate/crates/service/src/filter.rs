//! Query filters for the ride and incident endpoints.

use std::collections::BTreeSet;

use jiff::Timestamp;
use serde::Serialize;
use serde_json::{json, Value};
use simra_core::{BikeType, CyclistContext, Incident, IncidentType, Millis, PhoneLocation, Ride};
use thiserror::Error;

use crate::store::StoredRide;

/// Accepted query keys. Anything else is a client error.
pub const FILTER_KEYS: [&str; 8] = ["from", "to", "type", "scary", "bike", "ploc", "trailer", "child"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("unknown filter key {0:?}; accepted keys: from, to, type, scary, bike, ploc, trailer, child")]
    UnknownKey(String),
    #[error("filter key {0:?} given more than once")]
    Repeated(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Conjunction of optional constraints. List-valued keys take
/// comma-separated alternatives.
///
/// An incident matches when its timestamp lies in `[from, to)`, its type and
/// scary flag match, and its ride's context matches. A ride matches when its
/// start lies in `[from, to)`, its context matches and, if `type` or `scary`
/// is given, at least one of its incidents has that type and flag.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter {
    pub from: Option<Millis>,
    pub to: Option<Millis>,
    pub types: Option<BTreeSet<IncidentType>>,
    pub scary: Option<bool>,
    pub bikes: Option<Vec<BikeType>>,
    pub plocs: Option<Vec<PhoneLocation>>,
    pub trailer: Option<bool>,
    pub child: Option<bool>,
}

fn bad(key: &str, value: &str, reason: impl ToString) -> FilterError {
    FilterError::BadValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, FilterError> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

/// Milliseconds since the epoch or an RFC 3339 timestamp.
fn parse_time(key: &str, v: &str) -> Result<Millis, FilterError> {
    if let Ok(ms) = v.parse::<Millis>() {
        return Ok(ms);
    }
    v.parse::<Timestamp>().map(|t| t.as_millisecond()).map_err(|e| bad(key, v, e))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, FilterError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|item| item.trim().parse::<T>().map_err(|e| bad(key, v, e))).collect()
}

impl Filter {
    pub fn parse(pairs: &[(String, String)]) -> Result<Filter, FilterError> {
        let mut f = Filter::default();
        let mut seen = BTreeSet::new();
        for (key, v) in pairs {
            if !FILTER_KEYS.contains(&key.as_str()) {
                return Err(FilterError::UnknownKey(key.clone()));
            }
            if !seen.insert(key.as_str()) {
                return Err(FilterError::Repeated(key.clone()));
            }
            match key.as_str() {
                "from" => f.from = Some(parse_time(key, v)?),
                "to" => f.to = Some(parse_time(key, v)?),
                "type" => f.types = Some(parse_list(key, v)?.into_iter().collect()),
                "scary" => f.scary = Some(parse_bool(key, v)?),
                "bike" => f.bikes = Some(parse_list(key, v)?),
                "ploc" => f.plocs = Some(parse_list(key, v)?),
                "trailer" => f.trailer = Some(parse_bool(key, v)?),
                "child" => f.child = Some(parse_bool(key, v)?),
                _ => unreachable!("key checked against FILTER_KEYS"),
            }
        }
        Ok(f)
    }

    fn in_range(&self, t: Millis) -> bool {
        self.from.is_none_or(|a| t >= a) && self.to.is_none_or(|b| t < b)
    }

    pub fn context_matches(&self, c: &CyclistContext) -> bool {
        self.bikes.as_ref().is_none_or(|b| b.contains(&c.bike_type))
            && self.plocs.as_ref().is_none_or(|p| p.contains(&c.phone_location))
            && self.trailer.is_none_or(|t| t == c.trailer)
            && self.child.is_none_or(|t| t == c.child_transport)
    }

    fn kind_matches(&self, i: &Incident) -> bool {
        self.types.as_ref().is_none_or(|t| t.contains(&i.incident_type)) && self.scary.is_none_or(|s| s == i.scary)
    }

    pub fn incident_matches(&self, ride: &Ride, i: &Incident) -> bool {
        self.context_matches(&ride.context) && self.in_range(i.timestamp) && self.kind_matches(i)
    }

    pub fn ride_matches(&self, ride: &Ride) -> bool {
        let start = ride.first_timestamp().unwrap_or_default();
        let kinds = self.types.is_none() && self.scary.is_none() || ride.incidents.iter().any(|i| self.kind_matches(i));
        self.context_matches(&ride.context) && self.in_range(start) && kinds
    }
}

fn context_props(c: &CyclistContext) -> Value {
    json!({
        "bike": c.bike_type.label(),
        "ploc": c.phone_location.label(),
        "trailer": c.trailer,
        "child": c.child_transport,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

/// Matching incidents as Point features, ordered by ride id then position.
pub fn incidents_geojson(rides: &[std::sync::Arc<StoredRide>], filter: &Filter) -> Value {
    let mut features = Vec::new();
    for stored in rides {
        let ride = &stored.ride;
        for (k, i) in ride.incidents.iter().enumerate().filter(|(_, i)| filter.incident_matches(ride, i)) {
            let props = json!({
                "ride_id": stored.id.to_string(),
                "index": k,
                "timestamp": i.timestamp,
                "type": i.incident_type.name(),
                "type_code": i.incident_type.code(),
                "scary": i.scary,
                "participants": i.participants.iter().map(|p| p.tag()).collect::<Vec<_>>(),
                "description": i.description,
                "auto_detected": i.auto_detected,
            });
            features.push(json!({
                "type": "Feature",
                "id": format!("{}/{k}", stored.id),
                "geometry": { "type": "Point", "coordinates": [i.location.lon, i.location.lat] },
                "properties": merge(props, context_props(&ride.context)),
            }));
        }
    }
    json!({ "type": "FeatureCollection", "count": features.len(), "features": features })
}

/// Matching rides as LineString features of their GPS fixes.
pub fn rides_geojson(rides: &[std::sync::Arc<StoredRide>], filter: &Filter) -> Value {
    let features: Vec<Value> = rides
        .iter()
        .filter(|s| filter.ride_matches(&s.ride))
        .map(|stored| {
            let ride = &stored.ride;
            let coords: Vec<[f64; 2]> = ride.fixes().map(|(_, _, p, _)| [p.lon, p.lat]).collect();
            let props = json!({
                "ride_id": stored.id.to_string(),
                "content_hash": stored.hash,
                "start": ride.first_timestamp(),
                "end": ride.last_timestamp(),
                "samples": ride.samples.len(),
                "incidents": ride.incidents.len(),
                "mode": stored.flags.mode,
                "trailing_stop_ms": stored.flags.trailing_stop_ms,
            });
            json!({
                "type": "Feature",
                "id": stored.id.to_string(),
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": merge(props, context_props(&ride.context)),
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "count": features.len(), "features": features })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    #[serde(rename = "type")]
    pub incident_type: IncidentType,
    pub scary: u64,
    pub non_scary: u64,
}

/// Incident counts by type and scary flag for matching incidents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncidentStats {
    pub rides: usize,
    pub rows: Vec<StatsRow>,
    pub unlabeled: u64,
    pub total: u64,
}

pub fn incident_stats(rides: &[std::sync::Arc<StoredRide>], filter: &Filter) -> IncidentStats {
    let mut rows: Vec<StatsRow> =
        IncidentType::LABELED.iter().map(|t| StatsRow { incident_type: *t, scary: 0, non_scary: 0 }).collect();
    let mut unlabeled = 0;
    for stored in rides {
        for i in stored.ride.incidents.iter().filter(|i| filter.incident_matches(&stored.ride, i)) {
            match i.incident_type.category_index() {
                Some(c) if i.scary => rows[c].scary += 1,
                Some(c) => rows[c].non_scary += 1,
                None => unlabeled += 1,
            }
        }
    }
    let total = rows.iter().map(|r| r.scary + r.non_scary).sum();
    IncidentStats { rides: rides.len(), rows, unlabeled, total }
}
