//! `manning-pc`: flume reduction, corpus synthesis, training, tiled
//! inference, cross-section compounding and fit metrics.

mod commands;
mod config;
mod demo;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use manning_pc::Error;

use crate::commands::*;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "manning-pc",
    version,
    about = "Manning's n from 3D point clouds"
)]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed overriding every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce flume runs to per-region Manning's n.
    Labcalc {
        /// Runs table `region_id,S,w,V,flow_lpm[,depth_csv]`.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Probe calibration `voltage,reference`; depth files then hold voltages.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Reduce depth series by their median instead of their mean.
        #[arg(long)]
        median: bool,
        /// Output `region_id,n,n_runs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the augmented training corpus.
    MakeDataset {
        /// Region table from `labcalc`.
        #[arg(long)]
        region_n: Option<PathBuf>,
        /// Directory holding `<region_id>.xyz` or `.las` clouds.
        #[arg(long)]
        clouds: Option<PathBuf>,
        /// Output JSON-lines manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples_per_region: Option<usize>,
        #[arg(long)]
        blend_fraction: Option<f64>,
    },
    /// Train the regressor on a corpus manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss history CSV (default `<out>.loss.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Epochs to run, overriding `train.max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Tile a survey cloud and predict n per tile into an ESRI ASCII grid.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Survey cloud (`.las` or ASCII XYZ).
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Output grid.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-tile point counts `col,row,points`.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        cell_size: Option<f64>,
    },
    /// Segment and compound cross-section roughness from a grid.
    Compound {
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Sections as CSV `section_id,station,x,y[,elev]` or GeoJSON.
        #[arg(long)]
        sections: Option<PathBuf>,
        /// Output `section_id,segment_start_station,segment_end_station,n`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-section `mean_n` and `compound_n` table.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        max_segments: Option<usize>,
        /// Cluster stations on position alone.
        #[arg(long)]
        spatial_only: bool,
        /// Measure wetted lengths along the elevation profile.
        #[arg(long)]
        along_profile: bool,
    },
    /// Fit statistics for aligned series and/or flood masks.
    Metrics {
        /// CSV `index,observed,predicted`.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Predicted 0/1 mask raster.
        #[arg(long)]
        pred_mask: Option<PathBuf>,
        /// Reference 0/1 mask raster.
        #[arg(long)]
        truth_mask: Option<PathBuf>,
        /// Output JSON (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic demo workspace.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::File { .. } => 2,
        Error::CheckpointVersion { .. } | Error::ConfigMismatch(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> manning_pc::Result<()> {
    if let Command::Demo { out } = &cli.command {
        demo::write_demo(out, cli.seed.unwrap_or(7))?;
        log::info(format!("demo workspace written to {}", out.display()));
        return Ok(());
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.resolve_seeds(cli.seed);
    config.validate()?;
    log::debug(format!(
        "resolved config: {}",
        serde_json::to_string(&config)?
    ));
    match cli.command {
        Command::Labcalc {
            runs,
            calibration,
            median,
            out,
        } => labcalc(
            config,
            LabcalcArgs {
                runs,
                calibration,
                median,
                out,
            },
        ),
        Command::MakeDataset {
            region_n,
            clouds,
            out,
            samples_per_region,
            blend_fraction,
        } => make_dataset(
            config,
            MakeDatasetArgs {
                region_n,
                clouds,
                out,
                samples_per_region,
                blend_fraction,
            },
        ),
        Command::Train {
            manifest,
            out,
            log,
            resume,
            epochs,
        } => train_cmd(
            config,
            TrainArgs {
                manifest,
                out,
                log,
                resume,
                epochs,
            },
        ),
        Command::Infer {
            checkpoint,
            cloud,
            out,
            counts,
            cell_size,
        } => infer(
            config,
            InferArgs {
                checkpoint,
                cloud,
                out,
                counts,
                cell_size,
            },
        ),
        Command::Compound {
            grid,
            sections,
            out,
            summary,
            max_segments,
            spatial_only,
            along_profile,
        } => compound(
            config,
            CompoundArgs {
                grid,
                sections,
                out,
                summary,
                max_segments,
                spatial_only,
                along_profile,
            },
        ),
        Command::Metrics {
            series,
            pred_mask,
            truth_mask,
            out,
        } => metrics(MetricsArgs {
            series,
            pred_mask,
            truth_mask,
            out,
        }),
        Command::Demo { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
