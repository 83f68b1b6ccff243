//! Anonymization and data-quality transforms applied to rides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, LocalFrame};
use crate::ride::{Millis, Ride};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("crop removes every sample of the ride")]
    EmptyRide,
    #[error("invalid crop spec: {0}")]
    InvalidSpec(&'static str),
    #[error("need at least 2 usable GPS fixes, found {0}")]
    InsufficientData(usize),
}

/// Leading and trailing crop bounds. Each end is cut by whichever of its
/// time or distance bound removes more samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CropSpec {
    pub start_time_s: Option<f64>,
    pub start_distance_m: Option<f64>,
    pub end_time_s: Option<f64>,
    pub end_distance_m: Option<f64>,
}

impl CropSpec {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        let bounds = [self.start_time_s, self.start_distance_m, self.end_time_s, self.end_distance_m];
        if bounds.iter().all(Option::is_none) {
            return Err(PrivacyError::InvalidSpec("at least one bound must be set"));
        }
        if bounds.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PrivacyError::InvalidSpec("bounds must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Thresholds for the quality heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub stop_radius_m: f64,
    pub stop_min_s: f64,
    pub sustained_kmh: f64,
    pub sustained_s: f64,
    /// Fixes with a larger accuracy radius are ignored for speed estimates.
    pub max_accuracy_m: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig { stop_radius_m: 50.0, stop_min_s: 300.0, sustained_kmh: 35.0, sustained_s: 120.0, max_accuracy_m: 30.0 }
    }
}

/// Cumulative path length (meters) at every sample. Samples without a fix
/// carry the distance of the last fix before them.
fn cumulative_distance<'a>(samples: impl Iterator<Item = &'a Option<GeoPoint>>) -> Vec<f64> {
    let mut last: Option<GeoPoint> = None;
    let mut total = 0.0;
    samples
        .map(|loc| {
            if let Some(p) = loc {
                if let Some(prev) = last {
                    total += prev.haversine(p);
                }
                last = Some(*p);
            }
            total
        })
        .collect()
}

fn count_leading(elapsed_ms: &[i64], dist: &[f64], time_s: Option<f64>, dist_m: Option<f64>) -> usize {
    let by_time = time_s.map_or(0, |t| elapsed_ms.iter().take_while(|e| (**e as f64) < t * 1000.0).count());
    let by_dist = dist_m.map_or(0, |d| dist.iter().take_while(|x| **x < d).count());
    by_time.max(by_dist)
}

/// Removes leading and trailing samples inside the crop bounds, together
/// with incidents outside the surviving time span.
pub fn crop_ride(ride: &Ride, spec: &CropSpec) -> Result<Ride, PrivacyError> {
    spec.validate()?;
    let n = ride.samples.len();
    if n == 0 {
        return Err(PrivacyError::EmptyRide);
    }
    let t0 = ride.samples[0].timestamp;
    let tn = ride.samples[n - 1].timestamp;
    let fwd_elapsed: Vec<i64> = ride.samples.iter().map(|s| s.timestamp - t0).collect();
    let fwd_dist = cumulative_distance(ride.samples.iter().map(|s| &s.location));
    let rev_elapsed: Vec<i64> = ride.samples.iter().rev().map(|s| tn - s.timestamp).collect();
    let rev_dist = cumulative_distance(ride.samples.iter().rev().map(|s| &s.location));

    let lead = count_leading(&fwd_elapsed, &fwd_dist, spec.start_time_s, spec.start_distance_m);
    let trail = count_leading(&rev_elapsed, &rev_dist, spec.end_time_s, spec.end_distance_m);
    if lead + trail >= n {
        return Err(PrivacyError::EmptyRide);
    }
    Ok(keep_range(ride, lead, n - trail))
}

fn keep_range(ride: &Ride, from: usize, to: usize) -> Ride {
    let samples = ride.samples[from..to].to_vec();
    let (first, last) = (samples[0].timestamp, samples[samples.len() - 1].timestamp);
    Ride {
        ride_id: ride.ride_id,
        region: ride.region.clone(),
        incidents: ride
            .incidents
            .iter()
            .filter(|i| (first..=last).contains(&i.timestamp))
            .cloned()
            .collect(),
        samples,
        context: ride.context,
    }
}

/// Sample index of the first fix of the trailing stationary span, if any.
fn trailing_stop_start(ride: &Ride, radius_m: f64, min_stationary_s: f64) -> Option<usize> {
    let fixes: Vec<(usize, Millis, GeoPoint)> = ride.fixes().map(|(i, t, p, _)| (i, t, p)).collect();
    let end_ts = ride.last_timestamp()?;
    let min_ms = min_stationary_s * 1000.0;
    let frame = LocalFrame::new(*fixes.first().map(|(_, _, p)| p)?);
    let planar: Vec<_> = fixes.iter().map(|(_, _, p)| frame.project(*p)).collect();
    for (a, (idx, ts, _)) in fixes.iter().enumerate() {
        if ((end_ts - ts) as f64) < min_ms {
            break;
        }
        // Quick planar reject, then confirm with haversine.
        let near = planar[a + 1..].iter().all(|v| v.dist(planar[a]) <= radius_m * 1.01 + 0.5)
            && fixes[a + 1..].iter().all(|(_, _, p)| fixes[a].2.haversine(p) <= radius_m);
        if near {
            return (idx + 1 < ride.samples.len()).then_some(*idx);
        }
    }
    None
}

/// Removes a forgotten-stop tail: the final span that stays within
/// `radius_m` of its first fix for at least `min_stationary_s`. The span's
/// first fix is kept as the arrival point. Applied until nothing changes,
/// so the result is a fixpoint. Returns the ride and the trimmed duration
/// in milliseconds.
pub fn auto_crop_trailing_stop(ride: &Ride, radius_m: f64, min_stationary_s: f64) -> (Ride, Millis) {
    let mut current = ride.clone();
    while let Some(idx) = trailing_stop_start(&current, radius_m, min_stationary_s) {
        current = keep_range(&current, 0, idx + 1);
    }
    let trimmed = ride.duration_ms() - current.duration_ms();
    (current, trimmed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportMode {
    PlausibleBicycle,
    SuspectMotorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub mode: TransportMode,
    /// Earliest-ending window whose mean speed reaches the threshold.
    pub window: Option<SpeedWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedWindow {
    pub start_ts: Millis,
    pub end_ts: Millis,
    pub mean_kmh: f64,
}

/// Usable fixes for speed estimation: (timestamp, cumulative meters).
pub fn speed_track(ride: &Ride, max_accuracy_m: f64) -> Vec<(Millis, f64)> {
    let mut out = Vec::new();
    let mut last: Option<GeoPoint> = None;
    let mut total = 0.0;
    for (_, ts, p, acc) in ride.fixes() {
        if acc > max_accuracy_m {
            continue;
        }
        if let Some(prev) = last {
            total += prev.haversine(&p);
        }
        last = Some(p);
        out.push((ts, total));
    }
    out
}

/// Flags rides that keep a motorized speed for a sustained period. Advisory
/// only; the ride is never modified.
///
/// A window (i, j) qualifies when `t_j - t_i >= sustained_s` and its mean
/// speed is at least `sustained_kmh`. With `g(k) = dist_k - v * t_k` that is
/// `g(j) >= g(i)`, so a running minimum of `g` over admissible starts finds
/// the earliest qualifying end in one pass.
pub fn screen_transport_mode(ride: &Ride, cfg: &QualityConfig) -> Result<ScreenResult, PrivacyError> {
    let track = speed_track(ride, cfg.max_accuracy_m);
    if track.len() < 2 {
        return Err(PrivacyError::InsufficientData(track.len()));
    }
    let v = cfg.sustained_kmh / 3.6;
    let min_ms = cfg.sustained_s * 1000.0;
    let g = |k: usize| track[k].1 - v * (track[k].0 as f64 / 1000.0);
    let mut start = 0;
    let mut best: Option<usize> = None;
    for j in 0..track.len() {
        while start < j && ((track[j].0 - track[start].0) as f64) >= min_ms {
            if best.is_none_or(|b| g(start) < g(b)) {
                best = Some(start);
            }
            start += 1;
        }
        if let Some(i) = best {
            let dt = (track[j].0 - track[i].0) as f64 / 1000.0;
            let speed = (track[j].1 - track[i].1) / dt;
            if speed >= v {
                return Ok(ScreenResult {
                    mode: TransportMode::SuspectMotorized,
                    window: Some(SpeedWindow { start_ts: track[i].0, end_ts: track[j].0, mean_kmh: speed * 3.6 }),
                });
            }
        }
    }
    Ok(ScreenResult { mode: TransportMode::PlausibleBicycle, window: None })
}
