//! Batch analysis shared by the CLI and the service: match rides onto a base
//! graph, populate its counters and score the result.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::AccelWindowConfig;
use crate::error::ValidationError;
use crate::mapgraph::{match_ride, populate, BuildConfig, GraphIndex, MapGraph, MatchConfig, MatchedRide, PopulateError};
use crate::privacy::QualityConfig;
use crate::ride::{validate_region, Ride};
use crate::scoring::{build_report, ScoreConfig, ScoreError, ScoreReport};
use crate::stats::{time_zone, StatsConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionSettings {
    /// IANA zone used for hour-of-day statistics.
    pub timezone: String,
    /// JSON-lines map extract the region's street graph is built from.
    pub map_extract: Option<PathBuf>,
}

impl Default for RegionSettings {
    fn default() -> Self {
        RegionSettings { timezone: "UTC".into(), map_extract: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionSettings {
    #[serde(flatten)]
    pub window: AccelWindowConfig,
    /// Candidates whose bucket spread is below this are dropped (m/s²).
    pub min_diff: f64,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings { window: AccelWindowConfig::default(), min_diff: 0.1 }
    }
}

/// Every tunable of the pipeline, loadable from one configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub regions: BTreeMap<String, RegionSettings>,
    pub detection: DetectionSettings,
    pub quality: QualityConfig,
    pub stats: StatsConfig,
    pub graph: BuildConfig,
    pub matching: MatchConfig,
    pub score: ScoreConfig,
}

fn positive(name: &str, v: f64) -> Result<(), ValidationError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ValidationError::Config(format!("{name} must be a positive number, got {v}")))
    }
}

impl PipelineConfig {
    /// Range checks on every numeric field and existence of referenced files.
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, region) in &self.regions {
            validate_region(name)?;
            time_zone(&region.timezone)?;
            if let Some(path) = &region.map_extract {
                if !path.is_file() {
                    return Err(ValidationError::Config(format!(
                        "region {name}: map extract {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        self.detection.window.validate().map_err(|e| ValidationError::Config(e.to_string()))?;
        if !(self.detection.min_diff.is_finite() && self.detection.min_diff >= 0.0) {
            return Err(ValidationError::Config("detection.min_diff must be >= 0".into()));
        }
        let q = &self.quality;
        positive("quality.stop_radius_m", q.stop_radius_m)?;
        positive("quality.stop_min_s", q.stop_min_s)?;
        positive("quality.sustained_kmh", q.sustained_kmh)?;
        positive("quality.sustained_s", q.sustained_s)?;
        positive("quality.max_accuracy_m", q.max_accuracy_m)?;
        positive("stats.max_accuracy_m", self.stats.max_accuracy_m)?;
        if !(self.stats.wait_speed_ms >= 0.0 && self.stats.wait_min_s >= 0.0) {
            return Err(ValidationError::Config("stats thresholds must be >= 0".into()));
        }
        positive("graph.buffer_width_m", self.graph.buffer_width_m)?;
        positive("graph.node_radius_m", self.graph.node_radius_m)?;
        positive("graph.split_tolerance_m", self.graph.split_tolerance_m)?;
        positive("matching.max_accuracy_m", self.matching.max_accuracy_m)?;
        positive("matching.snap_radius_m", self.matching.snap_radius_m)?;
        self.score.validate().map_err(|e| ValidationError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("populate: {0}")]
    Populate(#[from] PopulateError),
    #[error("score: {0}")]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Base graph with counters from the analysed rides only.
    pub graph: MapGraph,
    /// One entry per input ride, in input order.
    pub matched: Vec<MatchedRide>,
    pub report: ScoreReport,
}

/// Matches rides in parallel, populates a copy of `base` with fresh counters
/// and scores it. Output does not depend on the number of worker threads.
pub fn analyze(base: &MapGraph, rides: &[Ride], matching: &MatchConfig, score: &ScoreConfig) -> Result<Analysis, PipelineError> {
    let index = GraphIndex::new(base, matching);
    let matched: Vec<MatchedRide> = rides.par_iter().map(|r| match_ride(r, &index, matching)).collect();
    let mut graph = base.clone();
    graph.clear_counters();
    populate(&mut graph, &matched)?;
    let report = build_report(&graph, score)?;
    Ok(Analysis { graph, matched, report })
}
