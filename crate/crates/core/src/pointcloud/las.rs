//! Minimal uncompressed LAS 1.2–1.4 support (point formats 0–3, XYZ only).

use super::{CloudSource, Point3, PointCloud};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LASF";
const HEADER_LEN_12: usize = 227;
const HEADER_LEN_14: usize = 375;

// Public header block offsets.
const OFF_VERSION_MAJOR: usize = 24;
const OFF_VERSION_MINOR: usize = 25;
const OFF_HEADER_SIZE: usize = 94;
const OFF_POINT_DATA: usize = 96;
const OFF_POINT_FORMAT: usize = 104;
const OFF_RECORD_LEN: usize = 105;
const OFF_LEGACY_COUNT: usize = 107;
const OFF_SCALE: usize = 131;
const OFF_OFFSET: usize = 155;
const OFF_MAX_X: usize = 179;
const OFF_COUNT_14: usize = 247;

fn min_record_len(format: u8) -> Option<usize> {
    match format {
        0 => Some(20),
        1 => Some(28),
        2 => Some(26),
        3 => Some(34),
        _ => None,
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn read_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Decodes the XYZ coordinates of an uncompressed LAS file.
///
/// Each coordinate is reconstructed as `raw * scale + offset` from the public
/// header. Every other point attribute is skipped.
pub fn parse_las_minimal(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing LASF signature".into()));
    }
    if bytes.len() < HEADER_LEN_12 {
        return Err(Error::Format(format!(
            "header truncated: {} bytes, need at least {HEADER_LEN_12}",
            bytes.len()
        )));
    }
    let (major, minor) = (bytes[OFF_VERSION_MAJOR], bytes[OFF_VERSION_MINOR]);
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(Error::Format(format!(
            "LAS version {major}.{minor} not supported (1.2 to 1.4 only)"
        )));
    }
    let header_size = read_u16(bytes, OFF_HEADER_SIZE) as usize;
    let point_data = read_u32(bytes, OFF_POINT_DATA) as usize;
    let format = bytes[OFF_POINT_FORMAT];
    let record_len = read_u16(bytes, OFF_RECORD_LEN) as usize;

    let min_len = min_record_len(format).ok_or(Error::UnsupportedFormat(format))?;
    if record_len < min_len {
        return Err(Error::Format(format!(
            "record length {record_len} too short for point format {format}"
        )));
    }

    let mut count = read_u32(bytes, OFF_LEGACY_COUNT) as u64;
    if count == 0 && minor >= 4 && header_size >= HEADER_LEN_14 && bytes.len() >= HEADER_LEN_14 {
        count = read_u64(bytes, OFF_COUNT_14);
    }
    if count == 0 {
        return Err(Error::EmptyInput("LAS file holds no point records".into()));
    }

    let end = (count as usize)
        .checked_mul(record_len)
        .and_then(|n| n.checked_add(point_data))
        .ok_or_else(|| Error::Format("point count overflows".into()))?;
    if point_data < header_size || end > bytes.len() {
        return Err(Error::Format(format!(
            "point data truncated: header promises {count} records of {record_len} bytes \
             from offset {point_data}, file has {} bytes",
            bytes.len()
        )));
    }

    let scale = [
        read_f64(bytes, OFF_SCALE),
        read_f64(bytes, OFF_SCALE + 8),
        read_f64(bytes, OFF_SCALE + 16),
    ];
    let offset = [
        read_f64(bytes, OFF_OFFSET),
        read_f64(bytes, OFF_OFFSET + 8),
        read_f64(bytes, OFF_OFFSET + 16),
    ];
    if scale.iter().chain(&offset).any(|v| !v.is_finite()) || scale.contains(&0.0) {
        return Err(Error::Format("invalid scale or offset in header".into()));
    }

    let points = bytes[point_data..end]
        .chunks_exact(record_len)
        .map(|rec| {
            Point3::new(
                read_i32(rec, 0) as f64 * scale[0] + offset[0],
                read_i32(rec, 4) as f64 * scale[1] + offset[1],
                read_i32(rec, 8) as f64 * scale[2] + offset[2],
            )
        })
        .collect();
    Ok(PointCloud::from_trusted(points).with_source(CloudSource::AirborneLidar))
}

/// Quantization used when writing LAS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LasWriteOptions {
    pub scale: [f64; 3],
    /// `None` picks the floor of the per-axis minimum.
    pub offset: Option<[f64; 3]>,
}

impl Default for LasWriteOptions {
    fn default() -> Self {
        Self {
            scale: [0.001; 3],
            offset: None,
        }
    }
}

/// Serializes a cloud as LAS 1.2, point format 0.
pub fn write_las(cloud: &PointCloud, opts: LasWriteOptions) -> Result<Vec<u8>> {
    let bounds = cloud
        .bounds()
        .ok_or_else(|| Error::EmptyInput("cannot write an empty cloud".into()))?;
    if opts.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::arg("LAS scale factors must be positive"));
    }
    let offset = opts.offset.unwrap_or([
        bounds.min.x.floor(),
        bounds.min.y.floor(),
        bounds.min.z.floor(),
    ]);
    let count = u32::try_from(cloud.len())
        .map_err(|_| Error::arg("too many points for a LAS 1.2 header"))?;

    let mut header = vec![0u8; HEADER_LEN_12];
    header[..4].copy_from_slice(MAGIC);
    header[OFF_VERSION_MAJOR] = 1;
    header[OFF_VERSION_MINOR] = 2;
    header[26..26 + 9].copy_from_slice(b"manning-p");
    header[OFF_HEADER_SIZE..OFF_HEADER_SIZE + 2]
        .copy_from_slice(&(HEADER_LEN_12 as u16).to_le_bytes());
    header[OFF_POINT_DATA..OFF_POINT_DATA + 4]
        .copy_from_slice(&(HEADER_LEN_12 as u32).to_le_bytes());
    header[OFF_POINT_FORMAT] = 0;
    header[OFF_RECORD_LEN..OFF_RECORD_LEN + 2].copy_from_slice(&20u16.to_le_bytes());
    header[OFF_LEGACY_COUNT..OFF_LEGACY_COUNT + 4].copy_from_slice(&count.to_le_bytes());
    header[111..115].copy_from_slice(&count.to_le_bytes());
    for axis in 0..3 {
        header[OFF_SCALE + 8 * axis..OFF_SCALE + 8 * axis + 8]
            .copy_from_slice(&opts.scale[axis].to_le_bytes());
        header[OFF_OFFSET + 8 * axis..OFF_OFFSET + 8 * axis + 8]
            .copy_from_slice(&offset[axis].to_le_bytes());
    }
    let extents = [
        (bounds.max.x, bounds.min.x),
        (bounds.max.y, bounds.min.y),
        (bounds.max.z, bounds.min.z),
    ];
    for (axis, (hi, lo)) in extents.into_iter().enumerate() {
        let at = OFF_MAX_X + 16 * axis;
        header[at..at + 8].copy_from_slice(&hi.to_le_bytes());
        header[at + 8..at + 16].copy_from_slice(&lo.to_le_bytes());
    }

    let mut out = header;
    out.reserve(cloud.len() * 20);
    for p in cloud.points() {
        for (axis, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            let q = ((v - offset[axis]) / opts.scale[axis]).round();
            if q < i32::MIN as f64 || q > i32::MAX as f64 {
                return Err(Error::arg(format!(
                    "coordinate {v} does not fit the LAS integer range at scale {}",
                    opts.scale[axis]
                )));
            }
            out.extend_from_slice(&(q as i32).to_le_bytes());
        }
        // intensity, flags, classification, scan angle, user data, source id
        out.extend_from_slice(&[0u8; 8]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header_with(format: u8, count: u32, scale: f64) -> Vec<u8> {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]).unwrap();
        let mut b = write_las(
            &cloud,
            LasWriteOptions {
                scale: [scale; 3],
                offset: Some([0.0; 3]),
            },
        )
        .unwrap();
        b.truncate(HEADER_LEN_12);
        b[OFF_POINT_FORMAT] = format;
        b[OFF_LEGACY_COUNT..OFF_LEGACY_COUNT + 4].copy_from_slice(&count.to_le_bytes());
        b
    }

    #[test]
    fn scale_and_offset_arithmetic() {
        let mut b = header_with(0, 1, 0.01);
        for v in [100i32, 200, 300] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[0u8; 8]);
        let c = parse_las_minimal(&b).unwrap();
        assert_eq!(c.len(), 1);
        let p = c.points()[0];
        assert!((p.x - 1.0).abs() < 1e-12);
        assert!((p.y - 2.0).abs() < 1e-12);
        assert!((p.z - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_points_is_empty_input() {
        let b = header_with(0, 0, 0.01);
        assert!(matches!(parse_las_minimal(&b), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bad_magic() {
        let mut b = header_with(0, 0, 0.01);
        b[0] = b'X';
        assert!(matches!(parse_las_minimal(&b), Err(Error::Format(_))));
        assert!(matches!(parse_las_minimal(b"LA"), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_format_lists_id() {
        let b = header_with(6, 1, 0.01);
        match parse_las_minimal(&b) {
            Err(e @ Error::UnsupportedFormat(6)) => assert!(e.to_string().contains('6')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_point_block() {
        let mut b = header_with(0, 3, 0.01);
        b.extend_from_slice(&[0u8; 30]);
        assert!(matches!(parse_las_minimal(&b), Err(Error::Format(_))));
    }

    #[test]
    fn format_three_with_wider_records() {
        let mut b = header_with(3, 2, 0.5);
        b[OFF_RECORD_LEN..OFF_RECORD_LEN + 2].copy_from_slice(&34u16.to_le_bytes());
        for xyz in [[2i32, 4, 6], [-2, 0, 1]] {
            for v in xyz {
                b.extend_from_slice(&v.to_le_bytes());
            }
            b.extend_from_slice(&[7u8; 22]);
        }
        let c = parse_las_minimal(&b).unwrap();
        assert_eq!(
            c.points(),
            &[Point3::new(1.0, 2.0, 3.0), Point3::new(-1.0, 0.0, 0.5)]
        );
    }

    #[test]
    fn las14_extended_count() {
        let mut b = header_with(1, 0, 1.0);
        b[OFF_VERSION_MINOR] = 4;
        b.resize(HEADER_LEN_14, 0);
        b[OFF_HEADER_SIZE..OFF_HEADER_SIZE + 2]
            .copy_from_slice(&(HEADER_LEN_14 as u16).to_le_bytes());
        b[OFF_POINT_DATA..OFF_POINT_DATA + 4]
            .copy_from_slice(&(HEADER_LEN_14 as u32).to_le_bytes());
        b[OFF_RECORD_LEN..OFF_RECORD_LEN + 2].copy_from_slice(&28u16.to_le_bytes());
        b[OFF_COUNT_14..OFF_COUNT_14 + 8].copy_from_slice(&1u64.to_le_bytes());
        for v in [5i32, 6, 7] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[0u8; 16]);
        let c = parse_las_minimal(&b).unwrap();
        assert_eq!(c.points(), &[Point3::new(5.0, 6.0, 7.0)]);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_quantum(
            pts in prop::collection::vec(prop::array::uniform3(-5.0e3..5.0e3f64), 1..100),
            scale in prop::sample::select(vec![0.001, 0.01, 0.25]),
        ) {
            let c = PointCloud::new(pts.into_iter().map(Point3::from).collect()).unwrap();
            let opts = LasWriteOptions { scale: [scale; 3], offset: None };
            let first = parse_las_minimal(&write_las(&c, opts).unwrap()).unwrap();
            for (a, b) in c.points().iter().zip(first.points()) {
                prop_assert!((a.x - b.x).abs() <= scale * 0.5 + 1e-9);
                prop_assert!((a.y - b.y).abs() <= scale * 0.5 + 1e-9);
                prop_assert!((a.z - b.z).abs() <= scale * 0.5 + 1e-9);
            }
            // a second pass re-quantizes onto the same lattice
            let second = parse_las_minimal(&write_las(&first, opts).unwrap()).unwrap();
            for (a, b) in first.points().iter().zip(second.points()) {
                prop_assert!((a.x - b.x).abs() <= scale);
                prop_assert!((a.y - b.y).abs() <= scale);
                prop_assert!((a.z - b.z).abs() <= scale);
            }
        }

        #[test]
        fn arbitrary_bytes_never_panic(mut bytes in prop::collection::vec(any::<u8>(), 0..600)) {
            if bytes.len() >= 4 {
                bytes[..4].copy_from_slice(MAGIC);
            }
            let _ = parse_las_minimal(&bytes);
        }
    }
}
