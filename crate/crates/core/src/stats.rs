//! Aggregated ride statistics for cyclist profiles.

use std::ops::AddAssign;

use jiff::tz::TimeZone;
use jiff::Timestamp;
use serde::{Deserialize, Serialize};

use crate::error::ValidationError;
use crate::privacy::speed_track;
use crate::ride::{Profile, Ride, HOURS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    /// Speeds below this count as stationary (m/s).
    pub wait_speed_ms: f64,
    /// Minimum length of a stationary span (s).
    pub wait_min_s: f64,
    pub max_accuracy_m: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { wait_speed_ms: 1.0, wait_min_s: 3.0, max_accuracy_m: 30.0 }
    }
}

/// Additive ride statistics. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RideStats {
    pub rides: u64,
    pub ride_duration_ms: u64,
    pub wait_duration_ms: u64,
    pub incident_count: u64,
    pub histogram: [u64; HOURS_PER_DAY],
}

impl AddAssign for RideStats {
    fn add_assign(&mut self, o: RideStats) {
        self.rides += o.rides;
        self.ride_duration_ms += o.ride_duration_ms;
        self.wait_duration_ms += o.wait_duration_ms;
        self.incident_count += o.incident_count;
        self.histogram.iter_mut().zip(o.histogram).for_each(|(a, b)| *a += b);
    }
}

impl RideStats {
    /// Writes the statistics portion of a profile (whole seconds).
    pub fn apply_to(&self, profile: &mut Profile) {
        profile.ride_duration_total = self.ride_duration_ms / 1000;
        profile.wait_duration_total = self.wait_duration_ms / 1000;
        profile.incident_count_total = self.incident_count;
        profile.ride_time_histogram = self.histogram;
    }
}

/// Looks up an IANA time zone from the system database.
pub fn time_zone(name: &str) -> Result<TimeZone, ValidationError> {
    TimeZone::get(name).map_err(|e| ValidationError::Config(format!("time zone {name:?}: {e}")))
}

/// Total duration of stationary spans: runs of consecutive fix intervals
/// slower than `wait_speed_ms` lasting at least `wait_min_s`.
pub fn wait_duration_ms(ride: &Ride, cfg: &StatsConfig) -> u64 {
    let track = speed_track(ride, cfg.max_accuracy_m);
    let min_ms = cfg.wait_min_s * 1000.0;
    let mut total = 0u64;
    let mut span_start: Option<i64> = None;
    let mut span_end = 0;
    let close = |start: Option<i64>, end: i64, total: &mut u64| {
        if let Some(s) = start {
            if (end - s) as f64 >= min_ms {
                *total += (end - s) as u64;
            }
        }
    };
    for w in track.windows(2) {
        let (t0, d0) = w[0];
        let (t1, d1) = w[1];
        let speed = (d1 - d0) / ((t1 - t0) as f64 / 1000.0);
        if speed < cfg.wait_speed_ms {
            span_start.get_or_insert(t0);
            span_end = t1;
        } else {
            close(span_start.take(), span_end, &mut total);
        }
    }
    close(span_start, span_end, &mut total);
    total
}

/// Statistics of a single ride.
pub fn ride_stats(ride: &Ride, tz: &TimeZone, cfg: &StatsConfig) -> RideStats {
    let mut stats = RideStats::default();
    let Some(start) = ride.first_timestamp() else {
        return stats;
    };
    stats.rides = 1;
    stats.ride_duration_ms = ride.duration_ms() as u64;
    stats.wait_duration_ms = wait_duration_ms(ride, cfg).min(stats.ride_duration_ms);
    stats.incident_count = ride.incidents.iter().filter(|i| i.is_labeled()).count() as u64;
    let hour = Timestamp::from_millisecond(start).map(|t| t.to_zoned(tz.clone()).hour()).unwrap_or(0);
    stats.histogram[hour as usize] = 1;
    stats
}

/// Aggregates statistics over a set of rides; empty input yields zeros.
pub fn compute_stats(rides: &[Ride], tz: &TimeZone, cfg: &StatsConfig) -> RideStats {
    rides.iter().fold(RideStats::default(), |mut acc, r| {
        acc += ride_stats(r, tz, cfg);
        acc
    })
}
