//! Fit statistics for comparing model output against observations.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned observed/predicted series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPair {
    observed: Vec<f64>,
    predicted: Vec<f64>,
}

impl SeriesPair {
    pub fn new(observed: Vec<f64>, predicted: Vec<f64>) -> Result<Self> {
        if observed.len() != predicted.len() {
            return Err(Error::arg(format!(
                "series length mismatch: {} observed vs {} predicted",
                observed.len(),
                predicted.len()
            )));
        }
        if observed.is_empty() {
            return Err(Error::EmptyInput("series are empty".into()));
        }
        if observed.iter().chain(&predicted).any(|v| !v.is_finite()) {
            return Err(Error::arg("series contain non-finite values"));
        }
        Ok(Self {
            observed,
            predicted,
        })
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.observed
            .iter()
            .zip(&self.predicted)
            .map(|(o, p)| o - p)
    }
}

pub fn rmse(p: &SeriesPair) -> f64 {
    let sse: f64 = p.residuals().map(|r| r * r).sum();
    (sse / p.observed.len() as f64).sqrt()
}

pub fn mae(p: &SeriesPair) -> f64 {
    p.residuals().map(f64::abs).sum::<f64>() / p.observed.len() as f64
}

pub fn median_abs_error(p: &SeriesPair) -> f64 {
    let mut e: Vec<f64> = p.residuals().map(f64::abs).collect();
    e.sort_by(f64::total_cmp);
    let mid = e.len() / 2;
    if e.len().is_multiple_of(2) {
        0.5 * (e[mid - 1] + e[mid])
    } else {
        e[mid]
    }
}

/// Nash–Sutcliffe efficiency. Undefined for constant observations.
pub fn nse(p: &SeriesPair) -> Result<f64> {
    let mean = p.observed.iter().sum::<f64>() / p.observed.len() as f64;
    let var: f64 = p.observed.iter().map(|o| (o - mean).powi(2)).sum();
    if var == 0.0 {
        return Err(Error::UndefinedNse);
    }
    let sse: f64 = p.residuals().map(|r| r * r).sum();
    Ok(1.0 - sse / var)
}

pub fn final_abs_diff(p: &SeriesPair) -> f64 {
    let last = p.observed.len() - 1;
    (p.observed[last] - p.predicted[last]).abs()
}

/// Predicted and reference masks as sets of cell indices on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub predicted: BTreeSet<usize>,
    pub truth: BTreeSet<usize>,
}

impl MaskPair {
    pub fn new(predicted: BTreeSet<usize>, truth: BTreeSet<usize>, cells: usize) -> Result<Self> {
        if predicted.iter().chain(&truth).any(|&i| i >= cells) {
            return Err(Error::arg(format!(
                "mask index outside grid of {cells} cells"
            )));
        }
        Ok(Self { predicted, truth })
    }

    /// Masks from two equally sized boolean rasters.
    pub fn from_rasters(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::arg(format!(
                "mask rasters differ in size: {} vs {}",
                predicted.len(),
                truth.len()
            )));
        }
        let set = |m: &[bool]| {
            m.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect()
        };
        Ok(Self {
            predicted: set(predicted),
            truth: set(truth),
        })
    }
}

/// Intersection over union and F1 score. Two empty masks agree perfectly.
pub fn iou_f1(m: &MaskPair) -> (f64, f64) {
    let inter = m.predicted.intersection(&m.truth).count();
    let total = m.predicted.len() + m.truth.len();
    if total == 0 {
        return (1.0, 1.0);
    }
    let union = total - inter;
    (
        inter as f64 / union as f64,
        2.0 * inter as f64 / total as f64,
    )
}

/// Everything `metrics` can report; absent fields were not requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_abs_error: Option<f64>,
    /// `None` (serialized as null) when observations are constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nse: Option<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_abs_diff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

impl MetricsReport {
    pub fn from_series(p: &SeriesPair) -> Self {
        Self {
            n: Some(p.observed.len()),
            rmse: Some(rmse(p)),
            mae: Some(mae(p)),
            median_abs_error: Some(median_abs_error(p)),
            nse: Some(nse(p).ok()),
            final_abs_diff: Some(final_abs_diff(p)),
            ..Self::default()
        }
    }

    pub fn with_masks(mut self, m: &MaskPair) -> Self {
        let (iou, f1) = iou_f1(m);
        self.iou = Some(iou);
        self.f1 = Some(f1);
        self
    }
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    index: String,
    observed: f64,
    predicted: f64,
}

/// Reads an `index,observed,predicted` CSV. Rows must be pre-aligned: the
/// index column is carried for auditing only and must be unique.
pub fn read_series_csv(path: &Path) -> Result<SeriesPair> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| crate::flume::csv_open_error(path, e))?;
    let mut seen = BTreeSet::new();
    let (mut obs, mut pred) = (Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        if !seen.insert(row.index.clone()) {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("duplicate index '{}'", row.index),
            });
        }
        obs.push(row.observed);
        pred.push(row.predicted);
    }
    SeriesPair::new(obs, pred)
}
