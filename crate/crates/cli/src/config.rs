//! The declarative run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use manning_pc::augment::CorpusSpec;
use manning_pc::flume::DepthReducer;
use manning_pc::regressor::{NetConfig, TrainConfig};
use manning_pc::xsection::CompoundOptions;
use manning_pc::{Error, Result};
use serde::{Deserialize, Serialize};

/// Input and output locations. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub runs: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub region_n: Option<PathBuf>,
    pub clouds: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub tile_counts: Option<PathBuf>,
    pub sections: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    pub cell_size: f64,
    /// Lower-left anchor of tile (0, 0); the survey's plan minimum if absent.
    pub origin: Option<(f64, f64)>,
    /// Tiles with fewer points are left as no-data.
    pub min_points: usize,
    /// Tiles with more points are subsampled to this many.
    pub max_points: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            origin: None,
            min_points: manning_pc::augment::MIN_SUBSAMPLE,
            max_points: manning_pc::augment::MAX_SUBSAMPLE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    /// When set, overrides every component seed.
    pub seed: Option<u64>,
    pub depth_reducer: DepthReducer,
    pub corpus: CorpusSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub tiling: TilingConfig,
    pub compound: CompoundOptions,
    /// Seeds tile subsampling during inference.
    pub infer_seed: u64,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Applies a master seed to every component.
    pub fn resolve_seeds(&mut self, flag: Option<u64>) {
        if let Some(s) = flag {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.corpus.seed = s;
            self.net.seed = s;
            self.train.seed = s;
            self.compound.seed = s;
            self.infer_seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        let t = &self.tiling;
        if !(t.cell_size > 0.0 && t.cell_size.is_finite()) {
            return Err(Error::Argument("tiling.cell_size must be positive".into()));
        }
        if t.min_points < 1 || t.max_points < t.min_points {
            return Err(Error::Argument(
                "tiling needs 1 <= min_points <= max_points".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"net": {"widths": [3]}}"#).is_err());
        let c: RunConfig =
            serde_json::from_str(r#"{"seed": 3, "train": {"max_epochs": 2}}"#).unwrap();
        assert_eq!(c.train.max_epochs, 2);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn master_seed_propagates() {
        let mut c = RunConfig::default();
        c.resolve_seeds(Some(11));
        assert_eq!(
            (
                c.corpus.seed,
                c.net.seed,
                c.train.seed,
                c.compound.seed,
                c.infer_seed
            ),
            (11, 11, 11, 11, 11)
        );
        let mut d = RunConfig {
            seed: Some(4),
            ..RunConfig::default()
        };
        d.resolve_seeds(None);
        assert_eq!(d.net.seed, 4);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.resolve_seeds(Some(2));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
