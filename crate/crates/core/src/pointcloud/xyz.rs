use std::io::{BufRead, Write};

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Parses whitespace- or comma-delimited XYZ rows. Columns past the third are
/// ignored; blank lines and lines starting with `#` are skipped.
pub fn parse_ascii_xyz(reader: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let mut xyz = [0.0; 3];
        for (axis, slot) in xyz.iter_mut().enumerate() {
            let token = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected 3 numeric columns, found {axis}"),
            })?;
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("malformed number '{token}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite coordinate '{token}'"),
                });
            }
            *slot = v;
        }
        points.push(Point3::from(xyz));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("no XYZ rows found".into()));
    }
    Ok(PointCloud::from_trusted(points))
}

/// Writes one `x y z` row per point using the shortest representation that
/// reparses to the same `f64`.
pub fn write_ascii_xyz(cloud: &PointCloud, mut out: impl Write) -> Result<()> {
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rows() {
        let c = parse_ascii_xyz("0 0 0\n1 2 3".as_bytes()).unwrap();
        assert_eq!(
            c.points(),
            &[Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0)]
        );
    }

    #[test]
    fn extra_columns_dropped() {
        let c = parse_ascii_xyz("1.5,2.5,0.25,99".as_bytes()).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.5, 2.5, 0.25)]);
    }

    #[test]
    fn malformed_token_reports_line() {
        match parse_ascii_xyz("1 2 abc".as_bytes()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_ascii_xyz("# header\n1 2 3\n\n4 5\n".as_bytes()) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(
            parse_ascii_xyz("1 NaN 3".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(
            parse_ascii_xyz("".as_bytes()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            parse_ascii_xyz("# only a comment\n\n".as_bytes()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn mixed_delimiters() {
        let c = parse_ascii_xyz("1, 2\t3\r\n".as_bytes()).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0)]);
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(
            pts in prop::collection::vec(prop::array::uniform3(-1.0e6..1.0e6f64), 1..50)
        ) {
            let c = PointCloud::new(pts.into_iter().map(Point3::from).collect()).unwrap();
            let mut buf = Vec::new();
            write_ascii_xyz(&c, &mut buf).unwrap();
            let back = parse_ascii_xyz(buf.as_slice()).unwrap();
            prop_assert_eq!(back.points(), c.points());
        }

        #[test]
        fn arbitrary_text_never_panics(s in "\\PC{0,200}") {
            let _ = parse_ascii_xyz(s.as_bytes());
        }
    }
}
