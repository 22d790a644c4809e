//! Grid and section file formats.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{CrossSection, FrictionGrid, SectionGeometry, NODATA};
use crate::error::{Error, Result};

/// ESRI ASCII grid: `ncols`, `nrows`, `xllcorner`, `yllcorner`, `cellsize`,
/// `NODATA_value` header lines, then one line per row from north to south
/// with values printed to six decimals.
pub fn write_esri_ascii(grid: &FrictionGrid, mut out: impl Write) -> Result<()> {
    writeln!(out, "ncols {}", grid.ncols)?;
    writeln!(out, "nrows {}", grid.nrows)?;
    writeln!(out, "xllcorner {}", grid.origin.0)?;
    writeln!(out, "yllcorner {}", grid.origin.1)?;
    writeln!(out, "cellsize {}", grid.cell_size)?;
    writeln!(out, "NODATA_value {}", grid.nodata)?;
    let mut line = String::new();
    for row in (0..grid.nrows).rev() {
        line.clear();
        for col in 0..grid.ncols {
            if col > 0 {
                line.push(' ');
            }
            let v = grid.values()[row * grid.ncols + col];
            if grid.is_nodata(v) {
                line.push_str(&grid.nodata.to_string());
            } else {
                line.push_str(&format!("{v:.6}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn fmt_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses an ESRI ASCII grid. Header keys are case-insensitive; `xllcenter`
/// and `yllcenter` are accepted and converted to corners. A missing
/// `NODATA_value` defaults to -9999. No-data cells are stored as [`NODATA`].
pub fn parse_esri_ascii(reader: impl BufRead) -> Result<FrictionGrid> {
    let mut header: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut values = Vec::new();
    let mut in_body = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut tokens = line.split_whitespace().peekable();
        let Some(first) = tokens.peek().copied() else {
            continue;
        };
        if !in_body && first.parse::<f64>().is_err() {
            let key = first.to_ascii_lowercase();
            tokens.next();
            let v = tokens
                .next()
                .ok_or_else(|| fmt_err(lineno, format!("header '{first}' has no value")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| fmt_err(lineno, format!("malformed header value '{v}'")))?;
            header.insert(key, (v, lineno));
            continue;
        }
        in_body = true;
        for t in tokens {
            let v: f64 = t
                .parse()
                .map_err(|_| fmt_err(lineno, format!("malformed cell value '{t}'")))?;
            values.push((v, lineno));
        }
    }
    let need = |k: &str| {
        header
            .get(k)
            .map(|v| v.0)
            .ok_or_else(|| Error::Format(format!("ESRI grid header lacks '{k}'")))
    };
    let count = |k: &str| -> Result<usize> {
        let v = need(k)?;
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Format(format!(
                "'{k}' must be a positive integer, got {v}"
            )))
        }
    };
    let ncols = count("ncols")?;
    let nrows = count("nrows")?;
    let cell = need("cellsize")?;
    let corner = |c: &str, m: &str| match (header.get(c), header.get(m)) {
        (Some(v), _) => Ok(v.0),
        (None, Some(v)) => Ok(v.0 - 0.5 * cell),
        _ => Err(Error::Format(format!("ESRI grid header lacks '{c}'"))),
    };
    let origin = (
        corner("xllcorner", "xllcenter")?,
        corner("yllcorner", "yllcenter")?,
    );
    let file_nodata = header.get("nodata_value").map_or(NODATA, |v| v.0);
    if values.len() != ncols * nrows {
        return Err(Error::Format(format!(
            "expected {} cell values, found {}",
            ncols * nrows,
            values.len()
        )));
    }
    let mut grid = vec![NODATA; ncols * nrows];
    for (k, (v, lineno)) in values.into_iter().enumerate() {
        let (row_from_top, col) = (k / ncols, k % ncols);
        let row = nrows - 1 - row_from_top;
        if v == file_nodata {
            continue;
        }
        if !(crate::N_MIN..=crate::N_MAX).contains(&v) {
            return Err(fmt_err(
                lineno,
                format!(
                    "cell value {v} outside [{}, {}]",
                    crate::N_MIN,
                    crate::N_MAX
                ),
            ));
        }
        grid[row * ncols + col] = v;
    }
    FrictionGrid::new(origin, cell, ncols, nrows, grid, NODATA)
}

pub fn read_esri_ascii(path: &Path) -> Result<FrictionGrid> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    parse_esri_ascii(BufReader::new(f))
}

/// CSV `section_id,segment_start_station,segment_end_station,n`, one row
/// per segment in station order.
pub fn write_section_table(sections: &[CrossSection], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "section_id",
        "segment_start_station",
        "segment_end_station",
        "n",
    ])?;
    for s in sections {
        for seg in &s.segments {
            w.write_record([
                s.id.clone(),
                seg.start_station.to_string(),
                seg.end_station.to_string(),
                seg.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV `section_id,mean_n,compound_n,segments,nodata_stations`.
pub fn write_section_summary(sections: &[CrossSection], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "section_id",
        "mean_n",
        "compound_n",
        "segments",
        "nodata_stations",
    ])?;
    for s in sections {
        w.write_record([
            s.id.clone(),
            s.mean_n.to_string(),
            s.compound_n.to_string(),
            s.segments.len().to_string(),
            s.nodata_stations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StationRow {
    section_id: String,
    station: f64,
    x: f64,
    y: f64,
    #[serde(default)]
    elev: Option<f64>,
}

/// Reads `section_id,station,x,y[,elev]`. Rows of one section must be in
/// station order; sections are returned in order of first appearance.
pub fn read_section_csv(path: &Path) -> Result<Vec<SectionGeometry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| crate::flume::csv_open_error(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<StationRow>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<StationRow>().enumerate() {
        let row = row.map_err(|e| fmt_err(i + 2, e.to_string()))?;
        if !rows.contains_key(&row.section_id) {
            order.push(row.section_id.clone());
        }
        rows.entry(row.section_id.clone()).or_default().push(row);
    }
    if order.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no stations",
            path.display()
        )));
    }
    order
        .into_iter()
        .map(|id| {
            let r = rows.remove(&id).unwrap_or_default();
            let elevations = if r.iter().all(|s| s.elev.is_some()) {
                Some(r.iter().map(|s| s.elev.unwrap()).collect())
            } else if r.iter().any(|s| s.elev.is_some()) {
                return Err(Error::arg(format!(
                    "section '{id}' has elevations on only some stations"
                )));
            } else {
                None
            };
            SectionGeometry::new(
                id,
                r.iter().map(|s| s.station).collect(),
                r.iter().map(|s| (s.x, s.y)).collect(),
                elevations,
            )
        })
        .collect()
}

/// Reads sections from GeoJSON: a FeatureCollection, a Feature, or a bare
/// LineString. Each LineString vertex is a station. The feature property
/// `section_id` (or `id`) names the section; an optional `stations` array
/// overrides the default cumulative plan-view distance. Three-component
/// coordinates supply elevations.
pub fn parse_geojson_sections(text: &str) -> Result<Vec<SectionGeometry>> {
    let doc: Value = serde_json::from_str(text)?;
    let features: Vec<&Value> = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format("FeatureCollection without features".into()))?
            .iter()
            .collect(),
        Some("Feature") | Some("LineString") => vec![&doc],
        other => return Err(Error::Format(format!("unsupported GeoJSON type {other:?}"))),
    };
    features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let (geom, props) = match f.get("type").and_then(Value::as_str) {
                Some("Feature") => (
                    f.get("geometry").unwrap_or(&Value::Null),
                    f.get("properties"),
                ),
                _ => (f, None),
            };
            if geom.get("type").and_then(Value::as_str) != Some("LineString") {
                return Err(Error::Format(format!("feature {i} is not a LineString")));
            }
            let coords = geom
                .get("coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Format(format!("feature {i} has no coordinates")))?;
            let mut xy = Vec::with_capacity(coords.len());
            let mut z = Vec::with_capacity(coords.len());
            for c in coords {
                let nums: Option<Vec<f64>> = c
                    .as_array()
                    .and_then(|a| a.iter().map(Value::as_f64).collect());
                match nums.as_deref() {
                    Some([x, y]) => xy.push((*x, *y)),
                    Some([x, y, e, ..]) => {
                        xy.push((*x, *y));
                        z.push(*e);
                    }
                    _ => {
                        return Err(Error::Format(format!(
                            "feature {i} has a malformed coordinate"
                        )))
                    }
                }
            }
            let id = props
                .and_then(|p| p.get("section_id").or_else(|| p.get("id")))
                .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_owned))
                .unwrap_or_else(|| format!("section_{i}"));
            let stations = match props.and_then(|p| p.get("stations")) {
                Some(s) => s
                    .as_array()
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| {
                        Error::Format(format!("section '{id}' has malformed stations"))
                    })?,
                None => {
                    let mut acc = 0.0;
                    let mut out = Vec::with_capacity(xy.len());
                    for (k, p) in xy.iter().enumerate() {
                        if k > 0 {
                            let q: &(f64, f64) = &xy[k - 1];
                            acc += (p.0 - q.0).hypot(p.1 - q.1);
                        }
                        out.push(acc);
                    }
                    out
                }
            };
            let elevations = (z.len() == xy.len() && !z.is_empty()).then_some(z);
            SectionGeometry::new(id, stations, xy, elevations)
        })
        .collect()
}

pub fn read_geojson_sections(path: &Path) -> Result<Vec<SectionGeometry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_geojson_sections(&text)
}
