//! Flume experiment reduction: probe calibration, hydraulic radius and
//! per-region Manning's n.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bed slope of the flume ramp (1:8).
pub const DEFAULT_SLOPE: f64 = 0.125;

/// Linear map from a sensor voltage to a physical length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// meters per volt
    pub slope: f64,
    /// meters
    pub intercept: f64,
    pub r_squared: f64,
}

impl CalibrationCurve {
    pub fn apply(&self, voltage: f64) -> f64 {
        self.slope * voltage + self.intercept
    }
}

/// Ordinary least-squares fit of `reference = slope * voltage + intercept`.
///
/// A constant response fits exactly and reports `r_squared = 1`.
pub fn fit_calibration(samples: &[(f64, f64)]) -> Result<CalibrationCurve> {
    if samples
        .iter()
        .any(|(v, r)| !v.is_finite() || !r.is_finite())
    {
        return Err(Error::arg("calibration samples must be finite"));
    }
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return Err(Error::DegenerateFit);
    }
    let mean_v = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_r = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_v).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.0 - mean_v) * (s.1 - mean_r))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_r - slope * mean_v;

    let ss_tot: f64 = samples.iter().map(|s| (s.1 - mean_r).powi(2)).sum();
    let ss_res: f64 = samples
        .iter()
        .map(|s| (s.1 - (slope * s.0 + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(CalibrationCurve {
        slope,
        intercept,
        r_squared,
    })
}

/// Hydraulic radius of a rectangular channel of depth `h` and width `w`:
/// flow area over wetted perimeter, `h w / (2h + w)`.
pub fn hydraulic_radius(h: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::arg(format!(
            "channel width must be positive, got {w}"
        )));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::arg(format!(
            "flow depth must be non-negative, got {h}"
        )));
    }
    Ok(h * w / (2.0 * h + w))
}

/// Manning's n in SI units, `R^(2/3) S^(1/2) / V`.
pub fn manning_n(radius: f64, slope: f64, velocity: f64) -> Result<f64> {
    if !(velocity > 0.0 && velocity.is_finite()) {
        return Err(Error::arg(format!(
            "velocity must be positive, got {velocity}"
        )));
    }
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::arg(format!("slope must be positive, got {slope}")));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::arg(format!(
            "hydraulic radius must be non-negative, got {radius}"
        )));
    }
    Ok(radius.powf(2.0 / 3.0) * slope.sqrt() / velocity)
}

/// How a run's depth time series is collapsed to one depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthReducer {
    #[default]
    Mean,
    Median,
}

impl DepthReducer {
    pub fn reduce(self, series: &[f64]) -> f64 {
        match self {
            DepthReducer::Mean => series.iter().sum::<f64>() / series.len() as f64,
            DepthReducer::Median => {
                let mut s = series.to_vec();
                s.sort_by(f64::total_cmp);
                let mid = s.len() / 2;
                if s.len().is_multiple_of(2) {
                    0.5 * (s[mid - 1] + s[mid])
                } else {
                    s[mid]
                }
            }
        }
    }
}

/// One steady-flow experiment over a measurement region.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub region_id: String,
    pub slope: f64,
    pub width: f64,
    /// Flow depth samples over the measurement window, meters.
    pub depth_series: Vec<f64>,
    pub velocity: f64,
    /// Pump flow rate in liters per minute; informational only.
    pub flow_lpm: f64,
}

impl ExperimentRun {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::arg(format!(
                "run in region '{}': {what}",
                self.region_id
            )))
        };
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return bad("slope must be positive");
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad("width must be positive");
        }
        if !(self.velocity > 0.0 && self.velocity.is_finite()) {
            return bad("velocity must be positive");
        }
        if self.depth_series.is_empty() {
            return bad("depth series is empty");
        }
        if self
            .depth_series
            .iter()
            .any(|h| !(*h >= 0.0 && h.is_finite()))
        {
            return bad("depths must be finite and non-negative");
        }
        Ok(())
    }

    /// Manning's n of this run from its reduced depth.
    pub fn manning_n(&self, reducer: DepthReducer) -> Result<f64> {
        self.validate()?;
        let h = reducer.reduce(&self.depth_series);
        manning_n(hydraulic_radius(h, self.width)?, self.slope, self.velocity)
    }
}

/// Ground-truth Manning's n of a measurement region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionN {
    pub region_id: String,
    pub n: f64,
    pub n_runs: usize,
}

/// Mean of the per-run Manning's n over all runs of one region.
pub fn reduce_region(runs: &[ExperimentRun], reducer: DepthReducer) -> Result<RegionN> {
    let first = runs
        .first()
        .ok_or_else(|| Error::EmptyInput("no runs to reduce".into()))?;
    if let Some(other) = runs.iter().find(|r| r.region_id != first.region_id) {
        return Err(Error::arg(format!(
            "mixed regions '{}' and '{}' in one reduction",
            first.region_id, other.region_id
        )));
    }
    let mut per_run = runs
        .iter()
        .map(|r| r.manning_n(reducer))
        .collect::<Result<Vec<_>>>()?;
    // sorted summation keeps the mean independent of run order
    per_run.sort_by(f64::total_cmp);
    let n = per_run.iter().sum::<f64>() / per_run.len() as f64;
    Ok(RegionN {
        region_id: first.region_id.clone(),
        n,
        n_runs: runs.len(),
    })
}

/// Groups runs by region and reduces each group, in region-id order.
pub fn reduce_all(runs: &[ExperimentRun], reducer: DepthReducer) -> Result<Vec<RegionN>> {
    let mut groups: BTreeMap<&str, Vec<ExperimentRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.region_id).or_default().push(r.clone());
    }
    groups.values().map(|g| reduce_region(g, reducer)).collect()
}

// ---------------------------------------------------------------------------
// CSV interfaces

#[derive(Debug, Deserialize)]
struct RunRow {
    region_id: String,
    #[serde(rename = "S")]
    slope: Option<f64>,
    w: f64,
    #[serde(rename = "V")]
    velocity: f64,
    flow_lpm: f64,
    #[serde(default)]
    depth_csv: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    voltage: f64,
    reference: f64,
}

/// A run row before its depth series is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub region_id: String,
    pub slope: f64,
    pub width: f64,
    pub velocity: f64,
    pub flow_lpm: f64,
    pub depth_csv: PathBuf,
}

/// Reads a runs table with header `region_id,S,w,V,flow_lpm[,depth_csv]`.
///
/// A blank `S` falls back to [`DEFAULT_SLOPE`]. Without a `depth_csv` column
/// the depth series of the k-th run (1-based) of a region is looked up at
/// `depth/<region_id>_<k>.csv` next to the runs file. Relative paths resolve
/// against the runs file's directory.
pub fn read_runs_csv(path: &Path) -> Result<Vec<RunSpec>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for row in rdr.deserialize::<RunRow>() {
        let row = row?;
        let k = counters.entry(row.region_id.clone()).or_insert(0);
        *k += 1;
        let depth_csv = match row.depth_csv.filter(|s| !s.is_empty()) {
            Some(p) => base.join(p),
            None => base
                .join("depth")
                .join(format!("{}_{}.csv", row.region_id, k)),
        };
        out.push(RunSpec {
            region_id: row.region_id,
            slope: row.slope.unwrap_or(DEFAULT_SLOPE),
            width: row.w,
            velocity: row.velocity,
            flow_lpm: row.flow_lpm,
            depth_csv,
        });
    }
    Ok(out)
}

/// Reads a depth series `t_seconds,<value>`; only the second column is used.
/// With a calibration curve the values are probe voltages and are converted
/// to depths.
pub fn read_depth_series(path: &Path, calibration: Option<&CalibrationCurve>) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(1).ok_or_else(|| Error::Parse {
            line: i + 2,
            message: format!("{}: expected two columns", path.display()),
        })?;
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            line: i + 2,
            message: format!("{}: malformed number '{field}'", path.display()),
        })?;
        out.push(match calibration {
            Some(c) => c.apply(v),
            None => v,
        });
    }
    Ok(out)
}

/// Reads `voltage,reference` calibration samples.
pub fn read_calibration_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    rdr.deserialize::<CalibrationRow>()
        .map(|r| Ok(r.map(|r| (r.voltage, r.reference))?))
        .collect()
}

/// Loads every run listed in a runs table together with its depth series.
pub fn load_runs(
    path: &Path,
    calibration: Option<&CalibrationCurve>,
) -> Result<Vec<ExperimentRun>> {
    read_runs_csv(path)?
        .into_iter()
        .map(|spec| {
            Ok(ExperimentRun {
                depth_series: read_depth_series(&spec.depth_csv, calibration)?,
                region_id: spec.region_id,
                slope: spec.slope,
                width: spec.width,
                velocity: spec.velocity,
                flow_lpm: spec.flow_lpm,
            })
        })
        .collect()
}

/// Writes `region_id,n,n_runs`.
pub fn write_region_csv(regions: &[RegionN], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region_id", "n", "n_runs"])?;
    for r in regions {
        w.write_record([r.region_id.clone(), r.n.to_string(), r.n_runs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `region_id,n,n_runs` table.
pub fn read_region_csv(path: &Path) -> Result<Vec<RegionN>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let regions = rdr
        .deserialize::<RegionN>()
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(r) = regions
        .iter()
        .find(|r| !(r.n > 0.0 && r.n.is_finite()) || r.n_runs == 0)
    {
        return Err(Error::arg(format!(
            "region '{}' has an invalid n or run count",
            r.region_id
        )));
    }
    Ok(regions)
}

pub(crate) fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn calibration_exact_line() {
        let c = fit_calibration(&[(0.0, 0.0), (1.0, 5.0), (2.0, 10.0)]).unwrap();
        assert!((c.slope - 5.0).abs() < 1e-12);
        assert!(c.intercept.abs() < 1e-12);
        assert!((c.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_constant_response() {
        let c = fit_calibration(&[(1.0, 3.0), (2.0, 3.0)]).unwrap();
        assert_eq!(c.slope, 0.0);
        assert_eq!(c.intercept, 3.0);
        assert_eq!(c.r_squared, 1.0);
    }

    #[test]
    fn calibration_vertical_line_is_degenerate() {
        assert!(matches!(
            fit_calibration(&[(1.0, 3.0), (1.0, 4.0)]),
            Err(Error::DegenerateFit)
        ));
        assert!(matches!(
            fit_calibration(&[(1.0, 3.0)]),
            Err(Error::DegenerateFit)
        ));
    }

    #[test]
    fn calibration_noisy_r_squared() {
        // closed form: mean v = 1.5, mean r = 2.5, sxx = 5, sxy = 10.5
        let c = fit_calibration(&[(0.0, 0.0), (1.0, 2.5), (2.0, 4.0), (3.0, 3.5)]).unwrap();
        assert!((c.slope - 1.2).abs() < 1e-12);
        assert!((c.intercept - 0.7).abs() < 1e-12);
        // ss_tot = 9.5, ss_res = 2.3
        assert!((c.r_squared - (1.0 - 2.3 / 9.5)).abs() < 1e-12);
    }

    #[test]
    fn hydraulic_radius_values() {
        assert_eq!(hydraulic_radius(0.0, 1.0).unwrap(), 0.0);
        assert!(rel_eq(
            hydraulic_radius(0.01, 1.0).unwrap(),
            0.01 / 1.02,
            1e-15
        ));
        let big = hydraulic_radius(1e6, 1.0).unwrap();
        // 1e6 / 2000001
        assert!(rel_eq(big, 0.499_999_750_000_125, 1e-12));
        assert!(big < 0.5);
    }

    #[test]
    fn hydraulic_radius_errors() {
        assert!(hydraulic_radius(0.1, 0.0).is_err());
        assert!(hydraulic_radius(0.1, -1.0).is_err());
        assert!(hydraulic_radius(-0.1, 1.0).is_err());
    }

    #[test]
    fn manning_values() {
        assert_eq!(manning_n(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(manning_n(0.0, 0.125, 0.3).unwrap(), 0.0);
        // frozen from a 30-digit evaluation
        let n = manning_n(0.0098039, 0.125, 0.2).unwrap();
        assert!(rel_eq(n, 0.080_976_237_307_004_86, 1e-12), "{n}");
    }

    #[test]
    fn manning_errors() {
        assert!(manning_n(0.1, 0.125, 0.0).is_err());
        assert!(manning_n(0.1, 0.0, 1.0).is_err());
        assert!(manning_n(0.1, -0.1, 1.0).is_err());
        assert!(manning_n(-0.1, 0.1, 1.0).is_err());
    }

    fn run(region: &str, depths: Vec<f64>, v: f64) -> ExperimentRun {
        ExperimentRun {
            region_id: region.into(),
            slope: DEFAULT_SLOPE,
            width: 0.3,
            depth_series: depths,
            velocity: v,
            flow_lpm: 20.0,
        }
    }

    /// Velocity that makes a run at depth `h` have Manning's n `n`.
    fn velocity_for(n: f64, h: f64, w: f64, s: f64) -> f64 {
        let r = h * w / (2.0 * h + w);
        r.powf(2.0 / 3.0) * s.sqrt() / n
    }

    #[test]
    fn single_constant_run() {
        let r = run("A", vec![0.125; 10], 0.3);
        let region = reduce_region(std::slice::from_ref(&r), DepthReducer::Mean).unwrap();
        let direct = manning_n(hydraulic_radius(0.125, 0.3).unwrap(), DEFAULT_SLOPE, 0.3).unwrap();
        assert_eq!(region.n, direct);
        assert_eq!(region.n_runs, 1);
    }

    #[test]
    fn mean_of_two_runs() {
        let runs = [
            run(
                "A",
                vec![0.02],
                velocity_for(0.04, 0.02, 0.3, DEFAULT_SLOPE),
            ),
            run(
                "A",
                vec![0.02],
                velocity_for(0.06, 0.02, 0.3, DEFAULT_SLOPE),
            ),
        ];
        let r = reduce_region(&runs, DepthReducer::Mean).unwrap();
        assert!((r.n - 0.05).abs() < 1e-15);
    }

    #[test]
    fn inverse_model_recovery() {
        let target = 0.0437;
        let runs: Vec<_> = [0.01, 0.015, 0.02, 0.03]
            .iter()
            .map(|&h| run("A", vec![h; 5], velocity_for(target, h, 0.3, DEFAULT_SLOPE)))
            .collect();
        let r = reduce_region(&runs, DepthReducer::Mean).unwrap();
        assert!((r.n - target).abs() < 1e-12);
    }

    #[test]
    fn reduce_errors() {
        assert!(matches!(
            reduce_region(&[], DepthReducer::Mean),
            Err(Error::EmptyInput(_))
        ));
        let mixed = [run("A", vec![0.01], 0.2), run("B", vec![0.01], 0.2)];
        assert!(matches!(
            reduce_region(&mixed, DepthReducer::Mean),
            Err(Error::Argument(_))
        ));
        let bad = [run("A", vec![], 0.2)];
        assert!(reduce_region(&bad, DepthReducer::Mean).is_err());
        let neg = [run("A", vec![0.01, -0.01], 0.2)];
        assert!(reduce_region(&neg, DepthReducer::Mean).is_err());
    }

    #[test]
    fn median_reducer() {
        assert_eq!(DepthReducer::Median.reduce(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(DepthReducer::Median.reduce(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(DepthReducer::Mean.reduce(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn reduce_all_groups_by_region() {
        let runs = [
            run("B", vec![0.01], 0.2),
            run("A", vec![0.01], 0.2),
            run("B", vec![0.02], 0.2),
        ];
        let out = reduce_all(&runs, DepthReducer::Mean).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].region_id, "A");
        assert_eq!(out[1].n_runs, 2);
    }

    proptest! {
        #[test]
        fn manning_monotonicity(r in 1e-4..2.0f64, s in 1e-4..1.0f64, v in 1e-3..5.0f64,
                                k in 1.01..3.0f64) {
            let base = manning_n(r, s, v).unwrap();
            prop_assert!(manning_n(r, s, v * k).unwrap() < base);
            prop_assert!(manning_n(r * k, s, v).unwrap() > base);
            prop_assert!(manning_n(r, s * k, v).unwrap() > base);
        }

        #[test]
        fn radius_bounded_by_depth_and_half_width(h in 1e-6..1e3f64, w in 1e-3..1e3f64) {
            let r = hydraulic_radius(h, w).unwrap();
            prop_assert!(r < h.min(w / 2.0));
        }

        #[test]
        fn reduction_is_permutation_invariant(
            vs in prop::collection::vec(0.05..2.0f64, 1..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let runs: Vec<_> = vs.iter().enumerate()
                .map(|(i, &v)| run("A", vec![0.01 + 0.001 * i as f64], v))
                .collect();
            let mut shuffled = runs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = reduce_region(&runs, DepthReducer::Mean).unwrap();
            let b = reduce_region(&shuffled, DepthReducer::Mean).unwrap();
            prop_assert_eq!(a.n, b.n);
        }

        #[test]
        fn noise_free_round_trip(n in 0.025..0.25f64, hs in prop::collection::vec(0.002..0.1f64, 1..6)) {
            let runs: Vec<_> = hs.iter()
                .map(|&h| run("A", vec![h; 3], velocity_for(n, h, 0.3, DEFAULT_SLOPE)))
                .collect();
            let r = reduce_region(&runs, DepthReducer::Mean).unwrap();
            prop_assert!((r.n - n).abs() <= 1e-13 * n.max(1.0), "{} vs {}", r.n, n);
        }
    }
}
