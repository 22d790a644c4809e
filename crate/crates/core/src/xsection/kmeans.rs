//! K-Means grouping of cross-section stations into contiguous segments.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterOptions {
    /// Picks the first seeding center.
    pub seed: u64,
    /// Cluster on station position alone.
    pub spatial_only: bool,
    pub max_iter: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            spatial_only: false,
            max_iter: 300,
        }
    }
}

/// Groups stations into at most `k` contiguous, non-overlapping index ranges
/// that cover every station, in station order.
///
/// Features are the station position and, unless `spatial_only`, the
/// station's n, each divided by its standard deviation (a constant feature is
/// dropped). Centers are seeded by farthest-point traversal from a randomly
/// chosen first station and refined with Lloyd iterations until assignments
/// stop changing. Clusters that interleave along the section are split into
/// runs; while there are more than `k` runs the shortest is merged into the
/// neighbour with the closer mean n.
pub fn cluster_stations(
    stations: &[f64],
    n_values: &[f64],
    k: usize,
    opts: &ClusterOptions,
) -> Result<Vec<Range<usize>>> {
    let len = stations.len();
    if n_values.len() != len {
        return Err(Error::arg(format!(
            "{len} stations but {} n values",
            n_values.len()
        )));
    }
    if k == 0 || k > len {
        return Err(Error::arg(format!(
            "cannot form {k} clusters from {len} stations"
        )));
    }
    if k == 1 {
        #[allow(clippy::single_range_in_vec_init)]
        return Ok(vec![0..len]);
    }

    let mut columns = vec![stations];
    if !opts.spatial_only {
        columns.push(n_values);
    }
    let features: Vec<Vec<f64>> = columns.iter().filter_map(|c| standardize(c)).collect();
    let points: Vec<Vec<f64>> = (0..len)
        .map(|i| features.iter().map(|f| f[i]).collect())
        .collect();
    let labels = lloyd(&points, k, opts);
    Ok(merge_runs(runs(&labels), n_values, k))
}

/// Divides by the population standard deviation; `None` when constant.
fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    (sd > 0.0).then(|| v.iter().map(|x| (x - mean) / sd).collect())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the first maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], k: usize, opts: &ClusterOptions) -> Vec<usize> {
    let len = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let first = rng.random_range(0..len);
    let mut centers = vec![points[first].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let next = argmax(&closest);
        centers.push(points[next].clone());
        for (d, p) in closest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; len];
    for _ in 0..opts.max_iter {
        let mut changed = false;
        let mut dists = vec![0.0; len];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            dists[i] = d;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        // refill empty clusters with the point farthest from its center
        for j in 0..k {
            if labels.contains(&j) {
                continue;
            }
            let far = argmax(&dists);
            labels[far] = j;
            dists[far] = 0.0;
            changed = true;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
    labels
}

fn runs(labels: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn merge_runs(mut runs: Vec<Range<usize>>, n: &[f64], k: usize) -> Vec<Range<usize>> {
    let mean = |r: &Range<usize>| n[r.clone()].iter().sum::<f64>() / r.len() as f64;
    while runs.len() > k {
        let mut small = 0;
        for (i, r) in runs.iter().enumerate() {
            if r.len() < runs[small].len() {
                small = i;
            }
        }
        let m = mean(&runs[small]);
        let into_left = match (small.checked_sub(1), runs.get(small + 1)) {
            (Some(l), Some(r)) => (mean(&runs[l]) - m).abs() <= (mean(r) - m).abs(),
            (Some(_), None) => true,
            _ => false,
        };
        let victim = runs.remove(small);
        if into_left {
            runs[small - 1].end = victim.end;
        } else {
            runs[small].start = victim.start;
        }
    }
    runs
}
