//! Point cloud types, zero-origin normalization and square tiling.

mod las;
mod xyz;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use las::{parse_las_minimal, write_las, LasWriteOptions};
pub use xyz::{parse_ascii_xyz, write_ascii_xyz};

/// A single 3D point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Where a cloud came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudSource {
    HandheldScan,
    BedProfiler,
    AirborneLidar,
    #[default]
    Synthetic,
}

/// Axis-aligned bounding box of a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Bounds {
    pub fn plan_area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }
}

/// An ordered set of finite 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub crs_tag: Option<String>,
    pub source: CloudSource,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::arg(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            crs_tag: None,
            source: CloudSource::default(),
        })
    }

    pub fn with_source(mut self, source: CloudSource) -> Self {
        self.source = source;
        self
    }

    pub fn with_crs(mut self, crs: impl Into<String>) -> Self {
        self.crs_tag = Some(crs.into());
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<Bounds> {
        let first = *self.points.first()?;
        let mut b = Bounds {
            min: first,
            max: first,
        };
        for p in &self.points[1..] {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.min.z = b.min.z.min(p.z);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
            b.max.z = b.max.z.max(p.z);
        }
        Some(b)
    }

    /// Points per square meter of the plan-view bounding rectangle. `None`
    /// for empty clouds or clouds with zero plan area.
    pub fn density(&self) -> Option<f64> {
        let area = self.bounds()?.plan_area();
        (area > 0.0).then(|| self.points.len() as f64 / area)
    }

    /// Same metadata, different points. Used internally where the points are
    /// already known to be finite.
    pub(crate) fn derive(&self, points: Vec<Point3>) -> Self {
        Self {
            points,
            crs_tag: self.crs_tag.clone(),
            source: self.source,
        }
    }

    pub(crate) fn from_trusted(points: Vec<Point3>) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }
}

/// Translates the cloud so that its per-axis minimum is exactly zero.
///
/// No scaling or rotation is applied: the regressor is sensitive to absolute
/// extent, so scale must survive normalization.
pub fn normalize_zero_origin(cloud: &PointCloud) -> Result<PointCloud> {
    let b = cloud
        .bounds()
        .ok_or_else(|| Error::EmptyInput("cannot normalize an empty cloud".into()))?;
    let points = cloud
        .points
        .iter()
        .map(|p| Point3::new(p.x - b.min.x, p.y - b.min.y, p.z - b.min.z))
        .collect();
    Ok(cloud.derive(points))
}

/// Largest absolute per-axis minimum of the cloud; 0 for a normalized cloud.
pub fn origin_offset(cloud: &PointCloud) -> f64 {
    cloud
        .bounds()
        .map(|b| b.min.x.abs().max(b.min.y.abs()).max(b.min.z.abs()))
        .unwrap_or(0.0)
}

/// Column/row of a square tile on a grid anchored at [`Tiling::origin`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileIndex {
    pub col: i64,
    pub row: i64,
}

/// Geometry of a square tiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tiling {
    pub origin: (f64, f64),
    pub cell_size: f64,
}

impl Tiling {
    pub fn new(origin: (f64, f64), cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::arg(format!(
                "cell size must be positive and finite, got {cell_size}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::arg("tiling origin must be finite"));
        }
        Ok(Self { origin, cell_size })
    }

    /// Tile owning `(x, y)`. Cells are closed on their lower-left edges and
    /// open on their upper-right edges.
    pub fn index_of(&self, x: f64, y: f64) -> TileIndex {
        TileIndex {
            col: ((x - self.origin.0) / self.cell_size).floor() as i64,
            row: ((y - self.origin.1) / self.cell_size).floor() as i64,
        }
    }

    /// Lower-left corner of a tile.
    pub fn corner(&self, idx: TileIndex) -> (f64, f64) {
        (
            self.origin.0 + idx.col as f64 * self.cell_size,
            self.origin.1 + idx.row as f64 * self.cell_size,
        )
    }
}

/// Partitions a cloud into square tiles. Only occupied tiles are returned;
/// within a tile, points keep their input order.
pub fn tile_cloud(cloud: &PointCloud, tiling: Tiling) -> BTreeMap<TileIndex, PointCloud> {
    let mut tiles: BTreeMap<TileIndex, Vec<Point3>> = BTreeMap::new();
    for p in &cloud.points {
        tiles.entry(tiling.index_of(p.x, p.y)).or_default().push(*p);
    }
    tiles
        .into_iter()
        .map(|(k, pts)| (k, cloud.derive(pts)))
        .collect()
}

/// Tiling anchored at the cloud's plan-view minimum.
pub fn default_tiling(cloud: &PointCloud, cell_size: f64) -> Result<Tiling> {
    let b = cloud
        .bounds()
        .ok_or_else(|| Error::EmptyInput("cannot tile an empty cloud".into()))?;
    Tiling::new((b.min.x, b.min.y), cell_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().copied().map(Point3::from).collect()).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
        assert!(PointCloud::new(vec![Point3::new(0.0, f64::INFINITY, 0.0)]).is_err());
    }

    #[test]
    fn normalize_subtracts_minimum() {
        let out = normalize_zero_origin(&cloud(&[[1.0, 1.0, 1.0], [2.0, 3.0, 4.0]])).unwrap();
        assert_eq!(
            out.points(),
            &[Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0)]
        );
    }

    #[test]
    fn normalize_single_point() {
        let out = normalize_zero_origin(&cloud(&[[-5.0, 0.0, 10.0]])).unwrap();
        assert_eq!(out.points(), &[Point3::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn normalize_fixed_point() {
        let c = cloud(&[[0.0, 0.5, 0.0], [1.0, 0.0, 0.25]]);
        assert_eq!(normalize_zero_origin(&c).unwrap(), c);
    }

    #[test]
    fn normalize_empty_is_error() {
        let err = normalize_zero_origin(&PointCloud::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn density_uses_bounding_rectangle() {
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.5, 0.0], [1.0, 0.25, 3.0]]);
        assert_eq!(c.density(), Some(3.0));
        assert_eq!(cloud(&[[1.0, 1.0, 1.0]]).density(), None);
    }

    #[test]
    fn close_points_share_a_tile() {
        let c = cloud(&[[0.4, 0.7, 1.0], [0.6, 0.2, 2.0]]);
        let tiles = tile_cloud(&c, Tiling::new((0.0, 0.0), 1.0).unwrap());
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[&TileIndex { col: 0, row: 0 }].len(), 2);
    }

    #[test]
    fn empty_tiles_are_omitted() {
        let c = cloud(&[[0.1, 0.5, 0.0], [2.4, 0.5, 0.0]]);
        let tiles = tile_cloud(&c, Tiling::new((0.0, 0.0), 1.0).unwrap());
        let cols: Vec<i64> = tiles.keys().map(|k| k.col).collect();
        assert_eq!(cols, vec![0, 2]);
    }

    #[test]
    fn tile_boundaries_are_lower_left_closed() {
        let t = Tiling::new((0.0, 0.0), 1.0).unwrap();
        assert_eq!(t.index_of(1.0, 1.0), TileIndex { col: 1, row: 1 });
        assert_eq!(t.index_of(0.999, 0.0), TileIndex { col: 0, row: 0 });
        assert_eq!(t.index_of(-0.001, 0.0), TileIndex { col: -1, row: 0 });
    }

    #[test]
    fn bad_cell_size() {
        assert!(Tiling::new((0.0, 0.0), 0.0).is_err());
        assert!(Tiling::new((0.0, 0.0), -1.0).is_err());
        assert!(Tiling::new((0.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn uniform_points_over_three_meters_fill_nine_tiles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..0.1),
                )
            })
            .collect();
        let c = PointCloud::new(pts.clone()).unwrap();
        let tiles = tile_cloud(&c, Tiling::new((0.0, 0.0), 1.0).unwrap());
        assert_eq!(tiles.len(), 9);

        // brute-force recount per cell
        for (idx, tile) in &tiles {
            let expected = pts
                .iter()
                .filter(|p| {
                    p.x >= idx.col as f64
                        && p.x < (idx.col + 1) as f64
                        && p.y >= idx.row as f64
                        && p.y < (idx.row + 1) as f64
                })
                .count();
            assert_eq!(tile.len(), expected);
        }
        assert_eq!(tiles.values().map(PointCloud::len).sum::<usize>(), 10_000);
    }

    fn arb_points() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-1.0e3..1.0e3f64), 1..200)
    }

    proptest! {
        #[test]
        fn tiling_partitions_the_cloud(pts in arb_points(), cell in 0.05..10.0f64,
                                       ox in -50.0..50.0f64, oy in -50.0..50.0f64) {
            let c = cloud(&pts);
            let tiling = Tiling::new((ox, oy), cell).unwrap();
            let tiles = tile_cloud(&c, tiling);
            let mut union: Vec<[f64; 3]> = tiles
                .values()
                .flat_map(|t| t.points().iter().map(|&p| <[f64; 3]>::from(p)))
                .collect();
            let mut input = pts.clone();
            let key = |a: &[f64; 3], b: &[f64; 3]| a.partial_cmp(b).unwrap();
            union.sort_by(key);
            input.sort_by(key);
            prop_assert_eq!(union, input);
            for (idx, t) in &tiles {
                for p in t.points() {
                    prop_assert_eq!(tiling.index_of(p.x, p.y), *idx);
                }
            }
        }

        #[test]
        fn normalization_is_idempotent(pts in arb_points()) {
            let once = normalize_zero_origin(&cloud(&pts)).unwrap();
            let twice = normalize_zero_origin(&once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn normalization_quotients_translation(
            pts in arb_points(),
            t in prop::array::uniform3(-1.0e3..1.0e3f64),
        ) {
            let base = normalize_zero_origin(&cloud(&pts)).unwrap();
            let shifted: Vec<[f64; 3]> =
                pts.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
            let moved = normalize_zero_origin(&cloud(&shifted)).unwrap();
            for (a, b) in base.points().iter().zip(moved.points()) {
                for (u, v) in [(a.x, b.x), (a.y, b.y), (a.z, b.z)] {
                    // translation rounds each coordinate once, so allow a few
                    // ulps of the translated magnitude
                    let tol = 4.0 * f64::EPSILON * 2.0e3;
                    prop_assert!((u - v).abs() <= tol, "{u} vs {v}");
                }
            }
        }
    }
}
