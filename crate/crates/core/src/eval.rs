//! Localization error metrics, recall tables and the report format.
//!
//! Reports are JSON lines: one `{"type":"trial", ...}` record per trial
//! followed by a single `{"type":"summary", ...}` record.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{forward, normalize_angle, right, Pose2};

pub const POSITION_THRESHOLDS_M: [f64; 3] = [1.0, 3.0, 5.0];
pub const ORIENTATION_THRESHOLDS_DEG: [f64; 3] = [1.0, 3.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub position: f64,
    pub orientation_deg: f64,
    /// Across the ground-truth viewing axis.
    pub lateral: f64,
    /// Along the ground-truth viewing axis.
    pub longitudinal: f64,
}

pub fn pose_errors(est: &Pose2, gt: &Pose2) -> PoseErrors {
    let e = est.translation() - gt.translation();
    PoseErrors {
        position: e.norm(),
        orientation_deg: normalize_angle(est.theta - gt.theta).abs().to_degrees(),
        lateral: e.dot(right(gt.theta)).abs(),
        longitudinal: e.dot(forward(gt.theta)).abs(),
    }
}

/// Percentages of trials with error ≤ each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub position_thresholds: Vec<f64>,
    pub orientation_thresholds: Vec<f64>,
    pub position: Vec<f64>,
    pub lateral: Vec<f64>,
    pub longitudinal: Vec<f64>,
    pub orientation: Vec<f64>,
}

fn recall(values: impl Iterator<Item = f64> + Clone, thresholds: &[f64], count: usize) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| 100.0 * values.clone().filter(|&v| v <= t).count() as f64 / count as f64)
        .collect()
}

pub fn recall_table(errors: &[PoseErrors], pos_thresholds: &[f64], ang_thresholds: &[f64]) -> Result<RecallTable> {
    if errors.is_empty() {
        return Err(Error::Domain("recall over an empty error list".into()));
    }
    let n = errors.len();
    let it = errors.iter();
    Ok(RecallTable {
        position_thresholds: pos_thresholds.to_vec(),
        orientation_thresholds: ang_thresholds.to_vec(),
        position: recall(it.clone().map(|e| e.position), pos_thresholds, n),
        lateral: recall(it.clone().map(|e| e.lateral), pos_thresholds, n),
        longitudinal: recall(it.clone().map(|e| e.longitudinal), pos_thresholds, n),
        orientation: recall(it.map(|e| e.orientation_deg), ang_thresholds, n),
    })
}

/// Recall at the customary 1/3/5 m and 1/3/5° thresholds.
pub fn standard_recall(errors: &[PoseErrors]) -> Result<RecallTable> {
    recall_table(errors, &POSITION_THRESHOLDS_M, &ORIENTATION_THRESHOLDS_DEG)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: String,
    pub seed: u64,
    pub estimate: Pose2,
    pub ground_truth: Pose2,
    pub errors: PoseErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReportRecord {
    Trial(TrialRecord),
    Summary { trials: usize, recall: RecallTable },
}

/// Writes trial records and their summary as JSON lines.
pub fn write_report<W: Write>(trials: &[TrialRecord], mut w: W) -> Result<RecallTable> {
    let errors: Vec<PoseErrors> = trials.iter().map(|t| t.errors).collect();
    let recall = standard_recall(&errors)?;
    let io = |e: serde_json::Error| Error::Io(std::io::Error::other(e));
    for t in trials {
        serde_json::to_writer(&mut w, &ReportRecord::Trial(t.clone())).map_err(io)?;
        w.write_all(b"\n")?;
    }
    let summary = ReportRecord::Summary {
        trials: trials.len(),
        recall: recall.clone(),
    };
    serde_json::to_writer(&mut w, &summary).map_err(io)?;
    w.write_all(b"\n")?;
    Ok(recall)
}

pub fn read_report(text: &str) -> Result<Vec<ReportRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("report line {}: {e}", i + 1))))
        .collect()
}

/// One rendered observation of a scenario directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObservation {
    pub id: String,
    pub seed: u64,
    /// BEV file, relative to the scenario directory.
    pub bev: String,
    pub ground_truth: Pose2,
}

/// `scenario.json` manifest written by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    /// Neural map file, relative to the scenario directory.
    pub map: String,
    pub rotations: usize,
    pub observations: Vec<ScenarioObservation>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("scenario manifest: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
