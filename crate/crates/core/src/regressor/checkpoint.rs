//! Binary checkpoint format, little-endian throughout:
//!
//! | field | bytes |
//! |---|---|
//! | magic `MNPCNET\0` | 8 |
//! | version | u32 |
//! | config JSON length, then JSON | u32 + len |
//! | parameter count, then f32 values | u64 + 4·count |
//! | norm-stat count, then f32 values | u64 + 4·count |
//! | optimizer step count | u64 |
//! | completed epochs | u64 |
//! | Adam first moments | u64 + 4·count |
//! | Adam second moments | u64 + 4·count |
//! | CRC-32 of everything above | u32 |

use std::path::Path;

use super::net::{Layout, Network};
use super::{NetConfig, RegressionNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MNPCNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(net: &RegressionNet) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&net.config)?;
    let mut out =
        Vec::with_capacity(64 + config.len() + 4 * (3 * net.params.len() + net.running.len()));
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let block = |out: &mut Vec<u8>, v: &[f32]| {
        out.extend_from_slice(&(v.len() as u64).to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    block(&mut out, &net.params);
    block(&mut out, &net.running);
    out.extend_from_slice(&net.step_count.to_le_bytes());
    out.extend_from_slice(&net.epochs_completed.to_le_bytes());
    block(&mut out, &net.adam_m);
    block(&mut out, &net.adam_v);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Corruption {
                offset: self.bytes.len(),
                message: format!("truncated while reading {what} at byte {}", self.at),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn block(&mut self, expected: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.at;
        let n = self.u64(what)?;
        if n != expected as u64 {
            return Err(Error::Corruption {
                offset: start,
                message: format!("{what} holds {n} values, layout expects {expected}"),
            });
        }
        let raw = self.take(4 * expected, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<RegressionNet> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Corruption {
            offset: 0,
            message: "bad magic bytes".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config_at = cur.at;
    let len = cur.u32("config length")? as usize;
    let config: NetConfig =
        serde_json::from_slice(cur.take(len, "config")?).map_err(|e| Error::Corruption {
            offset: config_at,
            message: format!("config is not valid: {e}"),
        })?;
    config.validate().map_err(|e| Error::Corruption {
        offset: config_at,
        message: e.to_string(),
    })?;
    let layout = Layout::new(&config);
    let params = cur.block(layout.total, "parameters")?;
    let running = cur.block(layout.stats_total, "norm stats")?;
    let step_count = cur.u64("step count")?;
    let epochs_completed = cur.u64("epoch count")?;
    let adam_m = cur.block(layout.total, "first moments")?;
    let adam_v = cur.block(layout.total, "second moments")?;
    let body_end = cur.at;
    let stored = cur.u32("checksum")?;
    if cur.at != bytes.len() {
        return Err(Error::Corruption {
            offset: cur.at,
            message: format!("{} trailing bytes", bytes.len() - cur.at),
        });
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::Corruption {
            offset: body_end,
            message: "checksum mismatch".into(),
        });
    }
    Ok(Network {
        config,
        layout,
        params,
        running,
        adam_m,
        adam_v,
        step_count,
        epochs_completed,
    })
}

pub fn save_checkpoint(net: &RegressionNet, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<RegressionNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    read_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless its architecture matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &NetConfig) -> Result<RegressionNet> {
    let net = load_checkpoint(path)?;
    if !net.config.compatible_with(expected) {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has encoder {:?} / head {:?}, expected encoder {:?} / head {:?}",
            net.config.encoder_widths,
            net.config.head_widths,
            expected.encoder_widths,
            expected.head_widths
        )));
    }
    Ok(net)
}
