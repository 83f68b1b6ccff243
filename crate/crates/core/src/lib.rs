//! Core library for crowdsourced cycling safety analytics.
//!
//! - [`format`]: ride and profile file formats
//! - [`detection`]: accelerometer aggregation and near-miss candidate detection
//! - [`privacy`]: cropping, trailing-stop removal and transport-mode screening
//! - [`stats`]: aggregated per-cyclist ride statistics
//! - [`mapgraph`]: street graph, trace smoothing, matching and model population
//! - [`scoring`]: dangerousness scores and hotspot ranking
//! - [`pipeline`]: configuration and batch analysis over many rides

pub mod error;
pub mod format;
pub mod geo;
pub mod ride;
pub mod detection;
pub mod privacy;
pub mod stats;
pub mod mapgraph;
pub mod scoring;
pub mod pipeline;
pub mod synth;

pub use error::{ParseError, ValidationError};
pub use format::{parse_profile, parse_ride, serialize_profile, serialize_ride};
pub use geo::GeoPoint;
pub use ride::{
    BikeType, CyclistContext, Gender, Incident, IncidentType, Millis, Participant, Participants, PhoneLocation,
    Profile, Ride, RideId, RideSample, INCIDENT_CATEGORIES,
};
