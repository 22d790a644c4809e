//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use manning_pc::augment::{
    build_corpus, read_manifest, sample_rng, subsample, write_manifest, ManifestHeader, Region,
    Split, MANIFEST_FORMAT,
};
use manning_pc::flume::{self, DepthReducer};
use manning_pc::metrics::{read_series_csv, MaskPair, MetricsReport};
use manning_pc::pointcloud::{
    default_tiling, parse_ascii_xyz, parse_las_minimal, tile_cloud, PointCloud, Tiling,
};
use manning_pc::regressor::{
    evaluate_mae, load_checkpoint_expecting, predict_n_batch, save_checkpoint, train,
    write_loss_log, RegressionNet,
};
use manning_pc::xsection::{
    compound_section, rasterize, read_esri_ascii, read_geojson_sections, read_section_csv,
    write_esri_ascii, write_section_summary, write_section_table, CrossSection, NODATA,
};
use manning_pc::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::log;

/// Clouds per batched inference pass.
const INFER_CHUNK: usize = 256;

pub(crate) fn require(
    flag: Option<PathBuf>,
    config: &Option<PathBuf>,
    name: &str,
) -> Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        Error::Argument(format!(
            "missing --{name} (or paths.{} in the config)",
            name.replace('-', "_")
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::File {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Sidecar `<output>.manifest.json` recording the resolved config and the
/// digests of every input and output.
fn write_run_manifest(
    command: &str,
    config: &RunConfig,
    inputs: &[&Path],
    outputs: &[&Path],
    extra: serde_json::Value,
) -> Result<()> {
    #[derive(Serialize)]
    struct FileDigest {
        path: String,
        sha256: String,
    }
    #[derive(Serialize)]
    struct RunManifest<'a> {
        command: &'a str,
        config: &'a RunConfig,
        inputs: Vec<FileDigest>,
        outputs: Vec<FileDigest>,
        result: serde_json::Value,
    }
    let digest = |ps: &[&Path]| -> Result<Vec<FileDigest>> {
        ps.iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    };
    let m = RunManifest {
        command,
        config,
        inputs: digest(inputs)?,
        outputs: digest(outputs)?,
        result: extra,
    };
    let mut name = outputs[0].as_os_str().to_owned();
    name.push(".manifest.json");
    let path = PathBuf::from(name);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads `.las` files as LAS and anything else as ASCII XYZ.
pub(crate) fn read_cloud(path: &Path) -> Result<PointCloud> {
    let is_las = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("las"));
    if is_las {
        let bytes = std::fs::read(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
        parse_las_minimal(&bytes)
    } else {
        parse_ascii_xyz(open(path)?)
    }
}

pub struct LabcalcArgs {
    pub runs: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub median: bool,
    pub out: Option<PathBuf>,
}

pub fn labcalc(mut config: RunConfig, args: LabcalcArgs) -> Result<()> {
    let runs_path = require(args.runs, &config.paths.runs, "runs")?;
    let out = require(args.out, &config.paths.region_n, "out")?;
    if args.median {
        config.depth_reducer = DepthReducer::Median;
    }
    let calibration_path = args
        .calibration
        .or_else(|| config.paths.calibration.clone());
    let curve = match &calibration_path {
        Some(p) => {
            let c = flume::fit_calibration(&flume::read_calibration_csv(p)?)?;
            log::info(format!(
                "calibration: depth = {} * voltage + {} (r² = {:.4})",
                c.slope, c.intercept, c.r_squared
            ));
            Some(c)
        }
        None => None,
    };
    let runs = flume::load_runs(&runs_path, curve.as_ref())?;
    if runs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no runs",
            runs_path.display()
        )));
    }
    let regions = flume::reduce_all(&runs, config.depth_reducer)?;
    let mut w = create(&out)?;
    flume::write_region_csv(&regions, &mut w)?;
    w.flush()?;
    drop(w);
    log::info(format!(
        "{} runs reduced to {} regions",
        runs.len(),
        regions.len()
    ));
    let mut inputs = vec![runs_path.as_path()];
    if let Some(p) = &calibration_path {
        inputs.push(p);
    }
    write_run_manifest(
        "labcalc",
        &config,
        &inputs,
        &[&out],
        serde_json::json!({ "regions": regions.len() }),
    )
}

pub struct MakeDatasetArgs {
    pub region_n: Option<PathBuf>,
    pub clouds: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub samples_per_region: Option<usize>,
    pub blend_fraction: Option<f64>,
}

/// Finds `<dir>/<region>.xyz` (or `.las`, `.txt`, `.csv`).
fn region_cloud_path(dir: &Path, region: &str) -> Result<PathBuf> {
    ["xyz", "las", "txt", "csv"]
        .iter()
        .map(|ext| dir.join(format!("{region}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::File {
            path: dir.join(format!("{region}.xyz")),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no cloud for region"),
        })
}

pub fn make_dataset(mut config: RunConfig, args: MakeDatasetArgs) -> Result<()> {
    let region_n = require(args.region_n, &config.paths.region_n, "region-n")?;
    let clouds = require(args.clouds, &config.paths.clouds, "clouds")?;
    let out = require(args.out, &config.paths.manifest, "out")?;
    if let Some(s) = args.samples_per_region {
        config.corpus.samples_per_region = s;
    }
    if let Some(b) = args.blend_fraction {
        config.corpus.blend_fraction = b;
    }
    config.corpus.validate()?;

    let labels = flume::read_region_csv(&region_n)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no regions",
            region_n.display()
        )));
    }
    let mut regions = BTreeMap::new();
    let mut inputs = vec![region_n.clone()];
    for label in labels {
        let path = region_cloud_path(&clouds, &label.region_id)?;
        let cloud = read_cloud(&path).map_err(|e| Error::Corpus {
            region: label.region_id.clone(),
            message: e.to_string(),
        })?;
        inputs.push(path);
        regions.insert(label.region_id.clone(), Region { cloud, label });
    }
    let corpus = build_corpus(&regions, &config.corpus)?;
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        seed: config.corpus.seed,
        spec: config.corpus.clone(),
        regions: regions.values().map(|r| r.label.clone()).collect(),
        n_samples: corpus.len(),
        config: serde_json::to_value(&config)?,
    };
    let mut w = create(&out)?;
    write_manifest(&header, &corpus, &mut w)?;
    w.flush()?;
    log::info(format!(
        "wrote {} samples to {}",
        corpus.len(),
        out.display()
    ));
    println!("samples: {}", corpus.len());
    Ok(())
}

pub struct TrainArgs {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub epochs: Option<usize>,
}

pub fn train_cmd(mut config: RunConfig, args: TrainArgs) -> Result<()> {
    let manifest = require(args.manifest, &config.paths.manifest, "manifest")?;
    let out = require(args.out, &config.paths.checkpoint, "out")?;
    let log_path = args
        .log
        .or_else(|| config.paths.loss_log.clone())
        .unwrap_or_else(|| {
            let mut p = out.as_os_str().to_owned();
            p.push(".loss.csv");
            PathBuf::from(p)
        });
    if let Some(e) = args.epochs {
        config.train.max_epochs = e;
    }
    config.train.validate()?;

    let (_, corpus) = read_manifest(open(&manifest)?)?;
    let train_set = corpus.subset(Split::Train);
    let val_set = corpus.subset(Split::Validation);
    let test_set = corpus.subset(Split::Test);
    if train_set.is_empty() {
        return Err(Error::EmptyInput("manifest has no training samples".into()));
    }

    let mut net = match &args.resume {
        Some(p) => {
            let net = load_checkpoint_expecting(p, &config.net)?;
            log::info(format!(
                "resuming from {} at step {} (epoch {})",
                p.display(),
                net.step_count(),
                net.epochs_completed()
            ));
            net
        }
        None => RegressionNet::new(config.net.clone())?,
    };
    let report = train(&mut net, &train_set, &val_set, &config.train)?;
    save_checkpoint(&net, &out)?;
    let mut w = create(&log_path)?;
    write_loss_log(&report.history, &mut w)?;
    w.flush()?;
    drop(w);

    let last = report.last().expect("at least one epoch");
    let val = last
        .val_loss
        .map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!("final train loss: {:.3}", last.train_loss);
    println!("final val loss: {val}");
    let test_mae = if test_set.is_empty() {
        None
    } else {
        Some(evaluate_mae(&net, &test_set)?)
    };
    if let Some(m) = test_mae {
        println!("test MAE (n): {m:.5}");
    }
    println!("steps: {}", net.step_count());
    let mut inputs = vec![manifest.as_path()];
    if let Some(p) = &args.resume {
        inputs.push(p);
    }
    write_run_manifest(
        "train",
        &config,
        &inputs,
        &[&out, &log_path],
        serde_json::json!({
            "epochs": report.history.len(),
            "converged": report.converged,
            "step_count": net.step_count(),
            "final_train_loss": last.train_loss,
            "final_val_loss": last.val_loss,
            "test_mae": test_mae,
        }),
    )
}

pub struct InferArgs {
    pub checkpoint: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub cell_size: Option<f64>,
}

pub fn infer(mut config: RunConfig, args: InferArgs) -> Result<()> {
    let ckpt = require(args.checkpoint, &config.paths.checkpoint, "checkpoint")?;
    let cloud_path = require(args.cloud, &config.paths.survey, "cloud")?;
    let out = require(args.out, &config.paths.grid, "out")?;
    let counts_path = args.counts.or_else(|| config.paths.tile_counts.clone());
    if let Some(c) = args.cell_size {
        config.tiling.cell_size = c;
    }
    config.validate()?;

    let net = manning_pc::regressor::load_checkpoint(&ckpt)?;
    let cloud = read_cloud(&cloud_path)?;
    let tiling = match config.tiling.origin {
        Some(o) => Tiling::new(o, config.tiling.cell_size)?,
        None => default_tiling(&cloud, config.tiling.cell_size)?,
    };
    let tiles = tile_cloud(&cloud, tiling);

    // every tile draws from an identically seeded generator, so identical
    // tiles yield identical network inputs
    let mut inputs = Vec::new();
    let mut keys = Vec::new();
    let mut values = BTreeMap::new();
    for (idx, tile) in &tiles {
        if tile.len() < config.tiling.min_points {
            values.insert(*idx, NODATA);
            continue;
        }
        let t = if tile.len() > config.tiling.max_points {
            let mut rng = sample_rng(config.infer_seed, 0);
            subsample(tile, config.tiling.max_points, &mut rng)?
        } else {
            tile.clone()
        };
        inputs.push(t);
        keys.push(*idx);
    }
    for (chunk_keys, chunk) in keys.chunks(INFER_CHUNK).zip(inputs.chunks(INFER_CHUNK)) {
        for (k, n) in chunk_keys.iter().zip(predict_n_batch(&net, chunk)?) {
            values.insert(*k, n);
        }
    }
    let grid = rasterize(&values, tiling)?;
    let mut w = create(&out)?;
    write_esri_ascii(&grid, &mut w)?;
    w.flush()?;
    drop(w);
    let nodata = values.values().filter(|v| **v == NODATA).count();
    log::info(format!(
        "{} tiles ({} below {} points) on a {}x{} grid",
        tiles.len(),
        nodata,
        config.tiling.min_points,
        grid.ncols,
        grid.nrows
    ));
    println!("grid: {} x {}", grid.ncols, grid.nrows);

    let mut outputs = vec![out.as_path()];
    if let Some(p) = &counts_path {
        let mut w = create(p)?;
        writeln!(w, "col,row,points")?;
        let (c0, r0) = values.keys().fold((i64::MAX, i64::MAX), |(c, r), k| {
            (c.min(k.col), r.min(k.row))
        });
        for (idx, tile) in &tiles {
            writeln!(w, "{},{},{}", idx.col - c0, idx.row - r0, tile.len())?;
        }
        w.flush()?;
        outputs.push(p);
    }
    write_run_manifest(
        "infer",
        &config,
        &[&ckpt, &cloud_path],
        &outputs,
        serde_json::json!({ "tiles": tiles.len(), "nodata_tiles": nodata, "ncols": grid.ncols, "nrows": grid.nrows }),
    )
}

pub struct CompoundArgs {
    pub grid: Option<PathBuf>,
    pub sections: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub max_segments: Option<usize>,
    pub spatial_only: bool,
    pub along_profile: bool,
}

pub fn compound(mut config: RunConfig, args: CompoundArgs) -> Result<()> {
    let grid_path = require(args.grid, &config.paths.grid, "grid")?;
    let sections_path = require(args.sections, &config.paths.sections, "sections")?;
    let out = require(args.out, &config.paths.table, "out")?;
    let summary = args.summary.or_else(|| config.paths.summary.clone());
    if let Some(k) = args.max_segments {
        config.compound.max_segments = k;
    }
    config.compound.spatial_only |= args.spatial_only;
    config.compound.along_profile |= args.along_profile;

    let grid = read_esri_ascii(&grid_path)?;
    let is_geojson = sections_path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("geojson") || e.eq_ignore_ascii_case("json"));
    let geometry = if is_geojson {
        read_geojson_sections(&sections_path)?
    } else {
        read_section_csv(&sections_path)?
    };
    let sections: Vec<CrossSection> = geometry
        .iter()
        .map(|g| compound_section(g, &grid, &config.compound))
        .collect::<Result<_>>()?;
    let warnings: usize = sections.iter().map(|s| s.nodata_stations).sum();
    if warnings > 0 {
        log::warn(format!(
            "{warnings} stations fell on no-data or outside the grid and were set to {}",
            manning_pc::N_MIN
        ));
    }
    let mut w = create(&out)?;
    write_section_table(&sections, &mut w)?;
    w.flush()?;
    drop(w);
    let mut outputs = vec![out.as_path()];
    if let Some(p) = &summary {
        let mut w = create(p)?;
        write_section_summary(&sections, &mut w)?;
        w.flush()?;
        outputs.push(p);
    }
    for s in &sections {
        println!(
            "{}: {} segments, mean n {:.5}, compound n {:.5}",
            s.id,
            s.segments.len(),
            s.mean_n,
            s.compound_n
        );
    }
    write_run_manifest(
        "compound",
        &config,
        &[&grid_path, &sections_path],
        &outputs,
        serde_json::json!({ "sections": sections.len(), "nodata_stations": warnings }),
    )
}

pub struct MetricsArgs {
    pub series: Option<PathBuf>,
    pub pred_mask: Option<PathBuf>,
    pub truth_mask: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Reads a 0/1 mask raster: numeric tokens after any header lines (such as an
/// ESRI ASCII header). Non-zero values other than `NODATA_value` are wet.
pub(crate) fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut nodata = None;
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace().peekable();
        let Some(first) = tokens.peek() else { continue };
        if cells.is_empty() && first.parse::<f64>().is_err() {
            if first.eq_ignore_ascii_case("nodata_value") {
                nodata = tokens.nth(1).and_then(|v| v.parse::<f64>().ok());
            }
            continue;
        }
        for t in tokens {
            let v: f64 = t.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("{}: malformed mask value '{t}'", path.display()),
            })?;
            cells.push(v != 0.0 && Some(v) != nodata);
        }
    }
    Ok(cells)
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let mut report = MetricsReport::default();
    if args.series.is_none() && args.pred_mask.is_none() {
        return Err(Error::Argument(
            "give --series and/or --pred-mask with --truth-mask".into(),
        ));
    }
    if let Some(p) = &args.series {
        report = MetricsReport::from_series(&read_series_csv(p)?);
    }
    match (&args.pred_mask, &args.truth_mask) {
        (Some(p), Some(t)) => {
            let m = MaskPair::from_rasters(&read_mask(p)?, &read_mask(t)?)?;
            report = report.with_masks(&m);
        }
        (None, None) => {}
        _ => {
            return Err(Error::Argument(
                "--pred-mask and --truth-mask must be given together".into(),
            ))
        }
    }
    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}
