//! Instance and result file formats (JSON).
//!
//! Instances carry only geometry: `{dimension, model: "half-space",
//! points: [[x.., z], ..]}`. Run parameters (eps, r, shifts, seed) live on
//! the command line and are echoed into the result record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dyntsp::TableStats;
use crate::error::{Error, Result};
use crate::hgeom::HPoint;
use crate::hybridtree::Shift;
use crate::verify::PatchReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub dimension: usize,
    pub model: String,
    pub points: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_points(d: usize, points: &[HPoint]) -> InstanceFile {
        InstanceFile {
            dimension: d,
            model: "half-space".into(),
            points: points
                .iter()
                .map(|p| {
                    let mut row = p.x.clone();
                    row.push(p.z);
                    row
                })
                .collect(),
        }
    }

    pub fn to_points(&self) -> Result<(usize, Vec<HPoint>)> {
        if self.model != "half-space" {
            return Err(Error::Domain(format!("unsupported model '{}'", self.model)));
        }
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::Domain(format!("dimension must be 2 or 3, got {}", self.dimension)));
        }
        let mut points = Vec::with_capacity(self.points.len());
        for row in &self.points {
            if row.len() != self.dimension {
                return Err(Error::Domain(format!(
                    "point has {} coordinates, expected {}",
                    row.len(),
                    self.dimension
                )));
            }
            points.push(HPoint::new(row[..row.len() - 1].to_vec(), row[row.len() - 1])?);
        }
        Ok((self.dimension, points))
    }
}

pub fn read_instance(path: &Path) -> Result<(usize, Vec<HPoint>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Domain(format!("cannot read {}: {e}", path.display())))?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| Error::Domain(format!("invalid instance file {}: {e}", path.display())))?;
    file.to_points()
}

pub fn write_instance(path: &Path, d: usize, points: &[HPoint]) -> Result<()> {
    let file = InstanceFile::from_points(d, points);
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Internal(format!("serialize: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))
}

/// One shift's outcome inside a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub shift_id: usize,
    pub shift: Shift,
    pub length: f64,
    pub exact: bool,
    pub stats: TableStats,
}

/// Harness measurements for one shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessRecord {
    pub shift_id: usize,
    pub report: PatchReport,
    pub horizontal_crossings: usize,
    pub top_crossings: usize,
    pub fixed_grid_ok: bool,
}

/// The result file of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub mode: String,
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub r: u32,
    pub seed: u64,
    pub shift_mode: String,
    pub shifts: Vec<ShiftRecord>,
    pub best_length: f64,
    pub mean_length: f64,
    pub oracle_length: Option<f64>,
    /// best / oracle, at least 1 up to float slack when the oracle ran
    pub ratio: Option<f64>,
    pub eps_observed: Option<f64>,
    pub harness: Vec<HarnessRecord>,
    /// wall-clock total; excluded from determinism comparisons
    pub timing_ms: u128,
}

pub fn write_result(path: &Path, record: &ResultRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record)
        .map_err(|e| Error::Internal(format!("serialize: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))
}

pub fn read_result(path: &Path) -> Result<ResultRecord> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Domain(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Domain(format!("invalid result file {}: {e}", path.display())))
}
