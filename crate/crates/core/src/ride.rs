//! Ride, incident and profile data model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ValidationError;
use crate::geo::GeoPoint;

/// Milliseconds since the Unix epoch.
pub type Millis = i64;

/// One aggregated sensor reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideSample {
    pub timestamp: Millis,
    pub location: Option<GeoPoint>,
    /// 68% confidence radius in meters.
    pub accuracy: Option<f64>,
    /// Acceleration in m/s², device axes (x, y, z).
    pub accel: [f64; 3],
    /// Azimuth, pitch, roll in degrees.
    pub orientation: Option<[f64; 3]>,
}

impl RideSample {
    pub fn fix(&self) -> Option<(GeoPoint, f64)> {
        Some((self.location?, self.accuracy?))
    }
}

/// Near-miss taxonomy. Codes follow the taxonomy order with 0 reserved for
/// auto-detected candidates nobody has labeled yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncidentType {
    Unlabeled,
    ClosePass,
    PullInOut,
    NearHook,
    HeadOn,
    Tailgating,
    NearDooring,
    DodgeObstacle,
    Other,
}

/// Number of labeled incident categories; the row count of s/n counters.
pub const INCIDENT_CATEGORIES: usize = 8;

impl IncidentType {
    pub const LABELED: [IncidentType; INCIDENT_CATEGORIES] = [
        IncidentType::ClosePass,
        IncidentType::PullInOut,
        IncidentType::NearHook,
        IncidentType::HeadOn,
        IncidentType::Tailgating,
        IncidentType::NearDooring,
        IncidentType::DodgeObstacle,
        IncidentType::Other,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(IncidentType::Unlabeled),
            1..=8 => Some(Self::LABELED[code as usize - 1]),
            _ => None,
        }
    }

    /// Row index into per-category counters; `None` for `Unlabeled`.
    pub fn category_index(self) -> Option<usize> {
        match self {
            IncidentType::Unlabeled => None,
            t => Some(t.code() as usize - 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IncidentType::Unlabeled => "Unlabeled",
            IncidentType::ClosePass => "ClosePass",
            IncidentType::PullInOut => "PullInOut",
            IncidentType::NearHook => "NearHook",
            IncidentType::HeadOn => "HeadOn",
            IncidentType::Tailgating => "Tailgating",
            IncidentType::NearDooring => "NearDooring",
            IncidentType::DodgeObstacle => "DodgeObstacle",
            IncidentType::Other => "Other",
        }
    }
}

impl fmt::Display for IncidentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IncidentType {
    type Err = ValidationError;

    /// Accepts either the type name (case-insensitive) or its numeric code.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<u8>() {
            return IncidentType::from_code(code).ok_or_else(|| ValidationError::UnknownIncidentType(s.to_string()));
        }
        std::iter::once(IncidentType::Unlabeled)
            .chain(IncidentType::LABELED)
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ValidationError::UnknownIncidentType(s.to_string()))
    }
}

/// Other road users involved in an incident. The vocabulary is closed to
/// the ten flags carried by the ride file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Participant {
    Bus,
    Cyclist,
    Pedestrian,
    DeliveryVan,
    Truck,
    Motorcycle,
    Car,
    Taxi,
    Other,
    EScooter,
}

impl Participant {
    pub const ALL: [Participant; 10] = [
        Participant::Bus,
        Participant::Cyclist,
        Participant::Pedestrian,
        Participant::DeliveryVan,
        Participant::Truck,
        Participant::Motorcycle,
        Participant::Car,
        Participant::Taxi,
        Participant::Other,
        Participant::EScooter,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Participant::Bus => "bus",
            Participant::Cyclist => "cyclist",
            Participant::Pedestrian => "pedestrian",
            Participant::DeliveryVan => "deliveryvan",
            Participant::Truck => "truck",
            Participant::Motorcycle => "motorcycle",
            Participant::Car => "car",
            Participant::Taxi => "taxi",
            Participant::Other => "other",
            Participant::EScooter => "escooter",
        }
    }
}

/// Set of [`Participant`] flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Participants(u16);

impl Participants {
    pub fn empty() -> Self {
        Participants(0)
    }

    pub fn insert(&mut self, p: Participant) {
        self.0 |= 1 << p as u16;
    }

    pub fn contains(&self, p: Participant) -> bool {
        self.0 & (1 << p as u16) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Participant> + '_ {
        Participant::ALL.into_iter().filter(|p| self.contains(*p))
    }
}

impl FromIterator<Participant> for Participants {
    fn from_iter<I: IntoIterator<Item = Participant>>(iter: I) -> Self {
        let mut set = Participants::empty();
        iter.into_iter().for_each(|p| set.insert(p));
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub location: GeoPoint,
    pub timestamp: Millis,
    pub incident_type: IncidentType,
    pub scary: bool,
    pub participants: Participants,
    pub description: String,
    pub auto_detected: bool,
}

impl Incident {
    pub fn is_labeled(&self) -> bool {
        self.incident_type != IncidentType::Unlabeled
    }
}

macro_rules! coded_enum {
    ($(#[$m:meta])* $name:ident, $field:literal { $($variant:ident = $code:literal => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        pub enum $name {
            #[default]
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> u8 {
                match self { $($name::$variant => $code),+ }
            }

            pub fn from_code(code: u8) -> Result<Self, ValidationError> {
                match code {
                    $($code => Ok($name::$variant),)+
                    _ => Err(ValidationError::UnknownCode { field: $field, value: code.to_string() }),
                }
            }

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }

        impl FromStr for $name {
            type Err = ValidationError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if let Ok(code) = s.parse::<u8>() {
                    return Self::from_code(code);
                }
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label().eq_ignore_ascii_case(s))
                    .ok_or_else(|| ValidationError::UnknownCode { field: $field, value: s.to_string() })
            }
        }
    };
}

coded_enum!(BikeType, "bike" {
    City = 0 => "city",
    Racing = 1 => "racing",
    Cargo = 2 => "cargo",
    Mountain = 3 => "mountain",
    EBike = 4 => "e-bike",
    Other = 5 => "other",
});

coded_enum!(PhoneLocation, "pLoc" {
    Handlebar = 0 => "handlebar",
    Pocket = 1 => "pocket",
    Backpack = 2 => "backpack",
    Jacket = 3 => "jacket",
    Other = 4 => "other",
});

coded_enum!(Gender, "gender" {
    Unspecified = 0 => "unspecified",
    Female = 1 => "female",
    Male = 2 => "male",
    Other = 3 => "other",
});

/// Ride-level information about the cyclist's setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CyclistContext {
    pub bike_type: BikeType,
    pub phone_location: PhoneLocation,
    pub trailer: bool,
    pub child_transport: bool,
}

/// Per-ride pseudonym: 128 random bits, rendered as lowercase hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RideId([u8; 16]);

impl RideId {
    pub fn random() -> Self {
        RideId(rand::random())
    }

    /// Stable pseudonym derived from file content, used when a ride is read
    /// from disk without a stored identifier.
    pub fn from_content(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        RideId(id)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        RideId(bytes)
    }
}

impl fmt::Display for RideId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for RideId {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut id = [0u8; 16];
        hex::decode_to_slice(s, &mut id)
            .map_err(|_| ValidationError::Config(format!("ride id {s:?} is not 32 hex digits")))?;
        Ok(RideId(id))
    }
}

impl Serialize for RideId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RideId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Region identifiers appear in file headers and URL paths.
pub fn validate_region(region: &str) -> Result<(), ValidationError> {
    let ok = !region.is_empty()
        && region.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && region != "."
        && region != "..";
    if ok {
        Ok(())
    } else {
        Err(ValidationError::Region(region.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ride {
    pub ride_id: RideId,
    pub region: String,
    pub samples: Vec<RideSample>,
    pub incidents: Vec<Incident>,
    pub context: CyclistContext,
}

impl Ride {
    pub fn first_timestamp(&self) -> Option<Millis> {
        self.samples.first().map(|s| s.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<Millis> {
        self.samples.last().map(|s| s.timestamp)
    }

    pub fn duration_ms(&self) -> Millis {
        match (self.first_timestamp(), self.last_timestamp()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }

    /// GPS fixes in time order: (sample index, timestamp, position, accuracy).
    pub fn fixes(&self) -> impl Iterator<Item = (usize, Millis, GeoPoint, f64)> + '_ {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.fix().map(|(p, acc)| (i, s.timestamp, p, acc)))
    }

    /// Checks every ride invariant.
    pub fn validate(&self) -> Result<(), ValidationError> {
        validate_region(&self.region)?;
        validate_samples(&self.samples)?;
        let (first, last) = (self.samples[0].timestamp, self.samples[self.samples.len() - 1].timestamp);
        for (index, inc) in self.incidents.iter().enumerate() {
            inc.location.validate()?;
            if inc.timestamp < first || inc.timestamp > last {
                return Err(ValidationError::IncidentOutsideSpan { index, ts: inc.timestamp, first, last });
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_samples(samples: &[RideSample]) -> Result<(), ValidationError> {
    if samples.is_empty() {
        return Err(ValidationError::EmptyRide);
    }
    for (index, s) in samples.iter().enumerate() {
        validate_sample(index, s)?;
        if index > 0 && s.timestamp <= samples[index - 1].timestamp {
            return Err(ValidationError::NonMonotoneTimestamp {
                index,
                prev: samples[index - 1].timestamp,
                ts: s.timestamp,
            });
        }
    }
    Ok(())
}

pub(crate) fn validate_sample(index: usize, s: &RideSample) -> Result<(), ValidationError> {
    if s.location.is_some() != s.accuracy.is_some() {
        return Err(ValidationError::LocationAccuracyMismatch { index });
    }
    if let Some(p) = s.location {
        p.validate()?;
    }
    let finite = s.accel.iter().all(|v| v.is_finite())
        && s.accuracy.is_none_or(|a| a.is_finite() && a >= 0.0)
        && s.orientation.is_none_or(|o| o.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(ValidationError::NonFinite { index });
    }
    Ok(())
}

/// Number of hour-of-day bins in the ride time histogram.
pub const HOURS_PER_DAY: usize = 24;

/// Demographics plus aggregated ride statistics for one cyclist in one region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub region: String,
    pub age_group: u8,
    pub gender: Gender,
    pub experience_years: u32,
    pub ride_duration_total: u64,
    pub wait_duration_total: u64,
    pub incident_count_total: u64,
    pub ride_time_histogram: [u64; HOURS_PER_DAY],
}

impl Profile {
    pub fn empty(region: impl Into<String>) -> Self {
        Profile {
            region: region.into(),
            age_group: 0,
            gender: Gender::Unspecified,
            experience_years: 0,
            ride_duration_total: 0,
            wait_duration_total: 0,
            incident_count_total: 0,
            ride_time_histogram: [0; HOURS_PER_DAY],
        }
    }

    pub fn ride_count(&self) -> u64 {
        self.ride_time_histogram.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        validate_region(&self.region)?;
        if self.wait_duration_total > self.ride_duration_total {
            return Err(ValidationError::WaitExceedsRide {
                wait: self.wait_duration_total,
                ride: self.ride_duration_total,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incident_codes_follow_taxonomy_order() {
        assert_eq!(IncidentType::from_code(1), Some(IncidentType::ClosePass));
        assert_eq!(IncidentType::from_code(7), Some(IncidentType::DodgeObstacle));
        assert_eq!(IncidentType::from_code(0), Some(IncidentType::Unlabeled));
        assert_eq!(IncidentType::from_code(9), None);
        for (i, t) in IncidentType::LABELED.iter().enumerate() {
            assert_eq!(t.category_index(), Some(i));
            assert_eq!(IncidentType::from_code(t.code()), Some(*t));
        }
    }

    #[test]
    fn incident_type_from_name_or_code() {
        assert_eq!("closepass".parse::<IncidentType>().unwrap(), IncidentType::ClosePass);
        assert_eq!("8".parse::<IncidentType>().unwrap(), IncidentType::Other);
        assert!(matches!("42".parse::<IncidentType>(), Err(ValidationError::UnknownIncidentType(c)) if c == "42"));
    }

    #[test]
    fn ride_id_hex_round_trip() {
        let id = RideId::random();
        let text = id.to_string();
        assert_eq!(text.len(), 32);
        assert_eq!(text.parse::<RideId>().unwrap(), id);
        assert_ne!(RideId::random(), id);
    }

    #[test]
    fn region_rules() {
        assert!(validate_region("Berlin").is_ok());
        assert!(validate_region("bern-ch_1").is_ok());
        assert!(validate_region("").is_err());
        assert!(validate_region("..").is_err());
        assert!(validate_region("a/b").is_err());
        assert!(validate_region("a#b").is_err());
    }

    #[test]
    fn participants_set() {
        let set: Participants = [Participant::Taxi, Participant::Pedestrian].into_iter().collect();
        assert!(set.contains(Participant::Taxi));
        assert!(!set.contains(Participant::Bus));
        assert_eq!(set.iter().collect::<Vec<_>>(), vec![Participant::Pedestrian, Participant::Taxi]);
    }
}
