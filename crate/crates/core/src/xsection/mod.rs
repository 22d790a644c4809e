//! Friction grids and cross-section roughness tables.
//!
//! Tiled predictions are rasterized into a [`FrictionGrid`]. Each cross
//! section samples the grid at its stations, groups stations into at most 20
//! contiguous segments with K-Means, and compounds each segment's values with
//! the Horton-Einstein relation `n_c = (Σ P_i n_i^1.5 / Σ P_i)^(2/3)`.

mod io;
mod kmeans;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{TileIndex, Tiling};
use crate::{N_MAX, N_MIN};

pub use io::{
    parse_esri_ascii, parse_geojson_sections, read_esri_ascii, read_geojson_sections,
    read_section_csv, write_esri_ascii, write_section_summary, write_section_table,
};
pub use kmeans::{cluster_stations, ClusterOptions};

/// Cap on horizontally varying roughness values per cross section.
pub const MAX_SEGMENTS: usize = 20;
/// Sentinel for cells without a measurement.
pub const NODATA: f64 = -9999.0;

/// North-up raster of Manning's n. Row 0 is the southernmost row; `origin`
/// is the lower-left corner of cell (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionGrid {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
    values: Vec<f64>,
    pub nodata: f64,
}

impl FrictionGrid {
    pub fn new(
        origin: (f64, f64),
        cell_size: f64,
        ncols: usize,
        nrows: usize,
        values: Vec<f64>,
        nodata: f64,
    ) -> Result<Self> {
        Tiling::new(origin, cell_size)?;
        if ncols == 0 || nrows == 0 {
            return Err(Error::arg("grid must have at least one cell"));
        }
        if values.len() != ncols * nrows {
            return Err(Error::arg(format!(
                "{} values for a {ncols}×{nrows} grid",
                values.len()
            )));
        }
        if let Some(bad) = values
            .iter()
            .find(|&&v| v != nodata && !(N_MIN..=N_MAX).contains(&v))
        {
            return Err(Error::arg(format!(
                "grid value {bad} outside [{N_MIN}, {N_MAX}]"
            )));
        }
        Ok(Self {
            origin,
            cell_size,
            ncols,
            nrows,
            values,
            nodata,
        })
    }

    /// Grid of one repeated value.
    pub fn filled(
        origin: (f64, f64),
        cell_size: f64,
        ncols: usize,
        nrows: usize,
        value: f64,
    ) -> Result<Self> {
        Self::new(
            origin,
            cell_size,
            ncols,
            nrows,
            vec![value; ncols * nrows],
            NODATA,
        )
    }

    /// Row-major values, south row first.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        (col < self.ncols && row < self.nrows).then(|| self.values[row * self.ncols + col])
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    /// Cell owning `(x, y)`, lower-left-closed; `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin.0) / self.cell_size).floor();
        let row = ((y - self.origin.1) / self.cell_size).floor();
        (col >= 0.0 && row >= 0.0 && col < self.ncols as f64 && row < self.nrows as f64)
            .then_some((col as usize, row as usize))
    }

    pub fn tiling(&self) -> Tiling {
        Tiling {
            origin: self.origin,
            cell_size: self.cell_size,
        }
    }
}

/// Grid covering the bounding box of the given tiles; missing tiles are
/// [`NODATA`]. The grid origin is the lower-left corner of the lowest
/// occupied column and row.
pub fn rasterize(tiles: &BTreeMap<TileIndex, f64>, tiling: Tiling) -> Result<FrictionGrid> {
    let (first, _) = tiles
        .first_key_value()
        .ok_or_else(|| Error::EmptyInput("no tiles to rasterize".into()))?;
    let (mut c0, mut c1, mut r0, mut r1) = (first.col, first.col, first.row, first.row);
    for idx in tiles.keys() {
        c0 = c0.min(idx.col);
        c1 = c1.max(idx.col);
        r0 = r0.min(idx.row);
        r1 = r1.max(idx.row);
    }
    let ncols = (c1 - c0 + 1) as usize;
    let nrows = (r1 - r0 + 1) as usize;
    let mut values = vec![NODATA; ncols * nrows];
    for (idx, &n) in tiles {
        let at = (idx.row - r0) as usize * ncols + (idx.col - c0) as usize;
        values[at] = n;
    }
    let origin = tiling.corner(TileIndex { col: c0, row: r0 });
    FrictionGrid::new(origin, tiling.cell_size, ncols, nrows, values, NODATA)
}

/// Per-station Manning's n and how many stations fell on no-data or outside
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSample {
    pub n: Vec<f64>,
    pub nodata_count: usize,
}

/// Looks up each station's cell. No-data cells and stations outside the grid
/// get [`N_MIN`].
pub fn sample_n_at_stations(grid: &FrictionGrid, xy: &[(f64, f64)]) -> StationSample {
    let mut nodata_count = 0;
    let n = xy
        .iter()
        .map(|&(x, y)| {
            match grid
                .cell_of(x, y)
                .and_then(|(c, r)| grid.get(c, r))
                .filter(|&v| !grid.is_nodata(v))
            {
                Some(v) => v,
                None => {
                    nodata_count += 1;
                    N_MIN
                }
            }
        })
        .collect();
    StationSample { n, nodata_count }
}

/// Horton-Einstein compound roughness of `(wetted length, n)` pairs.
pub fn horton_einstein(segments: &[(f64, f64)]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no segments to compound".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(p, n) in segments {
        if !(p > 0.0 && p.is_finite() && n > 0.0 && n.is_finite()) {
            return Err(Error::arg(format!(
                "segment length and n must be positive, got P={p}, n={n}"
            )));
        }
        num += p * n.powf(1.5);
        den += p;
        lo = lo.min(n);
        hi = hi.max(n);
    }
    // the power mean always lies within [min n, max n]; clamping removes
    // rounding drift so homogeneous inputs come back exactly
    Ok((num / den).powf(2.0 / 3.0).clamp(lo, hi))
}

/// Station geometry of one cross section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionGeometry {
    pub id: String,
    /// Distance along the section, strictly increasing.
    pub stations: Vec<f64>,
    /// Plan position of each station in grid coordinates.
    pub xy: Vec<(f64, f64)>,
    pub elevations: Option<Vec<f64>>,
}

impl SectionGeometry {
    pub fn new(
        id: impl Into<String>,
        stations: Vec<f64>,
        xy: Vec<(f64, f64)>,
        elevations: Option<Vec<f64>>,
    ) -> Result<Self> {
        let id = id.into();
        if stations.is_empty() {
            return Err(Error::EmptyInput(format!("section '{id}' has no stations")));
        }
        if xy.len() != stations.len()
            || elevations
                .as_ref()
                .is_some_and(|e| e.len() != stations.len())
        {
            return Err(Error::arg(format!(
                "section '{id}' has ragged station columns"
            )));
        }
        let finite = stations.iter().all(|s| s.is_finite())
            && xy.iter().all(|(x, y)| x.is_finite() && y.is_finite())
            && elevations.iter().flatten().all(|z| z.is_finite());
        if !finite {
            return Err(Error::arg(format!(
                "section '{id}' has non-finite geometry"
            )));
        }
        if stations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg(format!(
                "section '{id}' stations are not strictly increasing"
            )));
        }
        Ok(Self {
            id,
            stations,
            xy,
            elevations,
        })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    /// Length of section attributed to each station: half the distance to
    /// each neighbour, measured along the station axis or, with
    /// `along_profile` and elevations present, along the ground profile. A
    /// single station gets unit length.
    pub fn tributary_lengths(&self, along_profile: bool) -> Vec<f64> {
        let n = self.stations.len();
        if n == 1 {
            return vec![1.0];
        }
        let gap = |i: usize| {
            let ds = self.stations[i + 1] - self.stations[i];
            match (&self.elevations, along_profile) {
                (Some(z), true) => ds.hypot(z[i + 1] - z[i]),
                _ => ds,
            }
        };
        (0..n)
            .map(|i| {
                let left = if i > 0 { gap(i - 1) } else { 0.0 };
                let right = if i + 1 < n { gap(i) } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }
}

/// One homogeneous-roughness stretch of a cross section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_station: f64,
    pub end_station: f64,
    /// Member stations as an index range into the section.
    pub stations: Range<usize>,
    /// Wetted length used for compounding.
    pub length: f64,
    pub n: f64,
}

/// A cross section with sampled and compounded roughness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub id: String,
    pub stations: Vec<f64>,
    pub elevations: Option<Vec<f64>>,
    /// Sampled n per station.
    pub n_values: Vec<f64>,
    pub segments: Vec<Segment>,
    /// Length-weighted arithmetic mean of the station values.
    pub mean_n: f64,
    /// Horton-Einstein compound of the segment values.
    pub compound_n: f64,
    /// Stations filled with the no-data value.
    pub nodata_stations: usize,
}

impl CrossSection {
    /// Stations where a new roughness value starts.
    pub fn segment_breaks(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.start_station).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompoundOptions {
    pub max_segments: usize,
    pub seed: u64,
    /// Cluster on station position alone, ignoring roughness.
    pub spatial_only: bool,
    /// Measure wetted lengths along the elevation profile when available.
    pub along_profile: bool,
}

impl Default for CompoundOptions {
    fn default() -> Self {
        Self {
            max_segments: MAX_SEGMENTS,
            seed: 0,
            spatial_only: false,
            along_profile: false,
        }
    }
}

/// Samples the grid along a section, clusters its stations into at most
/// `max_segments` contiguous segments and compounds each segment.
///
/// Segment boundaries sit halfway between the last station of one segment
/// and the first of the next; the outer ends are the first and last
/// stations.
pub fn compound_section(
    geometry: &SectionGeometry,
    grid: &FrictionGrid,
    opts: &CompoundOptions,
) -> Result<CrossSection> {
    if opts.max_segments == 0 || opts.max_segments > MAX_SEGMENTS {
        return Err(Error::arg(format!(
            "max_segments must lie in 1..={MAX_SEGMENTS}, got {}",
            opts.max_segments
        )));
    }
    let sample = sample_n_at_stations(grid, &geometry.xy);
    let k = opts.max_segments.min(geometry.len());
    let ranges = cluster_stations(
        &geometry.stations,
        &sample.n,
        k,
        &ClusterOptions {
            seed: opts.seed,
            spatial_only: opts.spatial_only,
            ..ClusterOptions::default()
        },
    )?;
    let lengths = geometry.tributary_lengths(opts.along_profile);
    let st = &geometry.stations;
    let last = st.len() - 1;

    let mut segments = Vec::with_capacity(ranges.len());
    for r in ranges {
        let members: Vec<(f64, f64)> = r.clone().map(|i| (lengths[i], sample.n[i])).collect();
        let start = if r.start == 0 {
            st[0]
        } else {
            0.5 * (st[r.start - 1] + st[r.start])
        };
        let end = if r.end - 1 == last {
            st[last]
        } else {
            0.5 * (st[r.end - 1] + st[r.end])
        };
        segments.push(Segment {
            start_station: start,
            end_station: end,
            length: members.iter().map(|m| m.0).sum(),
            n: horton_einstein(&members)?,
            stations: r,
        });
    }
    let total: f64 = lengths.iter().sum();
    let mean_n = lengths
        .iter()
        .zip(&sample.n)
        .map(|(p, n)| p * n)
        .sum::<f64>()
        / total;
    let per_segment: Vec<(f64, f64)> = segments.iter().map(|s| (s.length, s.n)).collect();
    Ok(CrossSection {
        id: geometry.id.clone(),
        stations: geometry.stations.clone(),
        elevations: geometry.elevations.clone(),
        n_values: sample.n,
        compound_n: horton_einstein(&per_segment)?,
        mean_n: mean_n.clamp(N_MIN, N_MAX),
        segments,
        nodata_stations: sample.nodata_count,
    })
}
