//! Accelerometer aggregation and bucket-based near-miss candidate detection.
//!
//! Raw 50 Hz traces are smoothed with a trailing moving average and
//! decimated. Detection groups the aggregated trace into fixed-length time
//! buckets aligned to the first sample, scores each bucket by the spread
//! (max − min) per axis and proposes the highest-scoring buckets as
//! candidate incidents. A sustained offset (e.g. a rough surface) has no
//! spread inside a bucket; a swerve or hard brake does.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::ride::{Incident, IncidentType, Millis, Participants, Ride, RideSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("acceleration trace is empty")]
    EmptyInput,
    #[error("invalid detection config: {0}")]
    InvalidConfig(&'static str),
    #[error("ride has no GPS fix, candidates cannot be located")]
    NoGpsFix,
}

/// How the three per-axis spreads reduce to one ranking value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankReduction {
    #[default]
    Max,
    Sum,
    L2,
}

impl RankReduction {
    pub fn reduce(self, d: [f64; 3]) -> f64 {
        match self {
            RankReduction::Max => d[0].max(d[1]).max(d[2]),
            RankReduction::Sum => d[0] + d[1] + d[2],
            RankReduction::L2 => (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelWindowConfig {
    pub moving_avg_width: usize,
    pub keep_every: usize,
    pub bucket_seconds: u32,
    pub top_k_buckets: usize,
    pub rank: RankReduction,
}

impl Default for AccelWindowConfig {
    fn default() -> Self {
        AccelWindowConfig { moving_avg_width: 30, keep_every: 6, bucket_seconds: 3, top_k_buckets: 6, rank: RankReduction::Max }
    }
}

impl AccelWindowConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.moving_avg_width == 0 {
            return Err(DetectionError::InvalidConfig("moving_avg_width must be >= 1"));
        }
        if self.keep_every == 0 {
            return Err(DetectionError::InvalidConfig("keep_every must be >= 1"));
        }
        if self.bucket_seconds == 0 {
            return Err(DetectionError::InvalidConfig("bucket_seconds must be >= 1"));
        }
        if self.top_k_buckets == 0 {
            return Err(DetectionError::InvalidConfig("top_k_buckets must be >= 1"));
        }
        Ok(())
    }

    fn bucket_ms(&self) -> Millis {
        i64::from(self.bucket_seconds) * 1000
    }
}

/// Trailing moving average over `moving_avg_width` raw values, keeping every
/// `keep_every`-th window. Output `i` is the mean of the raw window ending at
/// index `i * keep_every + moving_avg_width - 1`. Traces shorter than one
/// window collapse to a single mean.
pub fn aggregate_accel(raw: &[[f64; 3]], cfg: &AccelWindowConfig) -> Result<Vec<[f64; 3]>, DetectionError> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(DetectionError::EmptyInput);
    }
    let w = cfg.moving_avg_width;
    if raw.len() < w {
        return Ok(vec![mean(raw)]);
    }
    let count = (raw.len() - w) / cfg.keep_every + 1;
    let mut out = Vec::with_capacity(count);
    let mut sum = [0.0; 3];
    for v in &raw[..w] {
        add(&mut sum, v);
    }
    let mut start = 0;
    for k in 0..count {
        let target = k * cfg.keep_every;
        while start < target {
            sub(&mut sum, &raw[start]);
            add(&mut sum, &raw[start + w]);
            start += 1;
        }
        // Re-anchor periodically so long traces do not accumulate drift.
        if k % 64 == 63 {
            sum = [0.0; 3];
            for v in &raw[start..start + w] {
                add(&mut sum, v);
            }
        }
        out.push([sum[0] / w as f64, sum[1] / w as f64, sum[2] / w as f64]);
    }
    Ok(out)
}

fn add(acc: &mut [f64; 3], v: &[f64; 3]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn sub(acc: &mut [f64; 3], v: &[f64; 3]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a -= b);
}

fn mean(values: &[[f64; 3]]) -> [f64; 3] {
    let mut s = [0.0; 3];
    values.iter().for_each(|v| add(&mut s, v));
    s.map(|x| x / values.len() as f64)
}

/// Spread statistics of one time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket_index: u64,
    pub start_ts: Millis,
    /// Exclusive.
    pub end_ts: Millis,
    pub axis_diffs: [f64; 3],
    pub rank_value: f64,
    /// Timestamp of the extreme sample on the axis with the largest spread.
    pub peak_ts: Millis,
}

/// Scores every non-empty bucket of a time-ordered sample list.
pub fn score_buckets(samples: &[RideSample], cfg: &AccelWindowConfig) -> Result<Vec<BucketScore>, DetectionError> {
    cfg.validate()?;
    let Some(first) = samples.first() else {
        return Err(DetectionError::EmptyInput);
    };
    let t0 = first.timestamp;
    let width = cfg.bucket_ms();
    let mut scores = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let index = ((samples[i].timestamp - t0) / width) as u64;
        let start_ts = t0 + index as i64 * width;
        let end_ts = start_ts + width;
        let mut j = i;
        while j < samples.len() && samples[j].timestamp < end_ts {
            j += 1;
        }
        scores.push(score_bucket(&samples[i..j], index, start_ts, end_ts, cfg.rank));
        i = j;
    }
    Ok(scores)
}

fn score_bucket(bucket: &[RideSample], index: u64, start_ts: Millis, end_ts: Millis, rank: RankReduction) -> BucketScore {
    let mut min_idx = [0usize; 3];
    let mut max_idx = [0usize; 3];
    for (k, s) in bucket.iter().enumerate() {
        for axis in 0..3 {
            if s.accel[axis] < bucket[min_idx[axis]].accel[axis] {
                min_idx[axis] = k;
            }
            if s.accel[axis] > bucket[max_idx[axis]].accel[axis] {
                max_idx[axis] = k;
            }
        }
    }
    let axis_diffs: [f64; 3] =
        std::array::from_fn(|a| bucket[max_idx[a]].accel[a] - bucket[min_idx[a]].accel[a]);
    let dominant = (0..3).fold(0, |best, a| if axis_diffs[a] > axis_diffs[best] { a } else { best });
    let axis_mean = bucket.iter().map(|s| s.accel[dominant]).sum::<f64>() / bucket.len() as f64;
    let (lo, hi) = (min_idx[dominant], max_idx[dominant]);
    let dev_lo = axis_mean - bucket[lo].accel[dominant];
    let dev_hi = bucket[hi].accel[dominant] - axis_mean;
    let peak = if dev_hi > dev_lo || (dev_hi == dev_lo && hi < lo) { hi } else { lo };
    BucketScore {
        bucket_index: index,
        start_ts,
        end_ts,
        axis_diffs,
        rank_value: rank.reduce(axis_diffs),
        peak_ts: bucket[peak].timestamp,
    }
}

/// A proposed incident together with the bucket that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub incident: Incident,
    pub bucket: BucketScore,
}

/// Picks the `top_k_buckets` highest-ranked buckets (earlier bucket wins
/// ties) and returns one unlabeled, auto-detected incident per bucket,
/// sorted by timestamp. Zero-spread buckets are returned too; callers
/// filter with [`filter_min_diff`].
pub fn detect_candidates(samples: &[RideSample], cfg: &AccelWindowConfig) -> Result<Vec<Candidate>, DetectionError> {
    cfg.validate()?;
    let fixes: Vec<(Millis, GeoPoint)> =
        samples.iter().filter_map(|s| s.location.map(|p| (s.timestamp, p))).collect();
    if fixes.is_empty() {
        return Err(if samples.is_empty() { DetectionError::EmptyInput } else { DetectionError::NoGpsFix });
    }
    let mut buckets = score_buckets(samples, cfg)?;
    buckets.sort_by(|a, b| b.rank_value.total_cmp(&a.rank_value).then(a.bucket_index.cmp(&b.bucket_index)));
    buckets.truncate(cfg.top_k_buckets);
    let mut out: Vec<Candidate> = buckets
        .into_iter()
        .map(|bucket| Candidate {
            incident: Incident {
                location: nearest_fix(&fixes, bucket.peak_ts),
                timestamp: bucket.peak_ts,
                incident_type: IncidentType::Unlabeled,
                scary: false,
                participants: Participants::empty(),
                description: String::new(),
                auto_detected: true,
            },
            bucket,
        })
        .collect();
    out.sort_by_key(|c| (c.incident.timestamp, c.bucket.bucket_index));
    Ok(out)
}

fn nearest_fix(fixes: &[(Millis, GeoPoint)], ts: Millis) -> GeoPoint {
    let idx = fixes.partition_point(|(t, _)| *t < ts);
    let after = fixes.get(idx);
    let before = idx.checked_sub(1).and_then(|i| fixes.get(i));
    match (before, after) {
        (Some(b), Some(a)) => {
            if ts - b.0 <= a.0 - ts {
                b.1
            } else {
                a.1
            }
        }
        (Some(x), None) | (None, Some(x)) => x.1,
        (None, None) => unreachable!("fixes is non-empty"),
    }
}

/// Drops candidates whose ranking value is below `min_diff`.
pub fn filter_min_diff(candidates: Vec<Candidate>, min_diff: f64) -> Vec<Candidate> {
    candidates.into_iter().filter(|c| c.bucket.rank_value >= min_diff).collect()
}

/// Appends candidate incidents to a ride, keeping existing incidents first.
pub fn append_candidates(ride: &mut Ride, candidates: &[Candidate]) {
    ride.incidents.extend(candidates.iter().map(|c| c.incident.clone()));
}
