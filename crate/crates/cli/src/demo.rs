//! Synthetic demo workspace: nine flume regions with textured clouds, a
//! survey cloud, cross sections and a small-network config.

use std::io::Write;
use std::path::Path;

use manning_pc::flume::{hydraulic_radius, DEFAULT_SLOPE};
use manning_pc::regressor::{NetConfig, TrainConfig};
use manning_pc::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Paths, RunConfig};

pub const REGIONS: usize = 9;
const RUNS_PER_REGION: usize = 3;
const CLOUD_POINTS: usize = 400;
const FLUME_WIDTH: f64 = 0.3;

/// Target n of demo region `i` (0-based).
pub fn region_n(i: usize) -> f64 {
    0.03 + 0.02 * i as f64
}

/// Relief amplitude tied monotonically to n.
fn amplitude(n: f64) -> f64 {
    0.2 * n
}

fn textured_point(rng: &mut ChaCha8Rng, x0: f64, y0: f64, size: f64, n: f64) -> [f64; 3] {
    let x = x0 + rng.random_range(0.0..size);
    let y = y0 + rng.random_range(0.0..size);
    let z = amplitude(n) * (25.0 * x).sin() * (25.0 * y).cos() + rng.random_range(0.0..1e-4);
    [x, y, z]
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::File {
            path: d.to_path_buf(),
            source: e,
        })?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn fmt_points(pts: &[[f64; 3]]) -> String {
    pts.iter()
        .map(|p| format!("{} {} {}\n", p[0], p[1], p[2]))
        .collect()
}

pub fn write_demo(dir: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut runs = String::from("region_id,S,w,V,flow_lpm\n");
    for i in 0..REGIONS {
        let id = format!("R{}", i + 1);
        let n = region_n(i);
        for k in 1..=RUNS_PER_REGION {
            let h = 0.02 + 0.01 * k as f64;
            let r = hydraulic_radius(h, FLUME_WIDTH)?;
            let v = r.powf(2.0 / 3.0) * DEFAULT_SLOPE.sqrt() / n;
            runs.push_str(&format!("{id},,{FLUME_WIDTH},{v},{}\n", 60.0 * k as f64));
            // symmetric ripple keeps the mean depth at h
            let mut depth = String::from("t_seconds,h_meters\n");
            for t in 0..20 {
                let ripple = if t % 2 == 0 { 1e-4 } else { -1e-4 };
                depth.push_str(&format!("{},{}\n", t as f64 * 0.5, h + ripple));
            }
            write_file(&dir.join("depth").join(format!("{id}_{k}.csv")), &depth)?;
        }
        let cloud: Vec<[f64; 3]> = (0..CLOUD_POINTS)
            .map(|_| textured_point(&mut rng, 0.0, 0.0, 1.0, n))
            .collect();
        write_file(
            &dir.join("clouds").join(format!("{id}.xyz")),
            &fmt_points(&cloud),
        )?;
    }
    write_file(&dir.join("runs.csv"), &runs)?;

    // 6 x 4 m survey: smooth western half, rough eastern half, and one
    // sparse tile beyond the eastern edge
    let mut survey = Vec::new();
    for col in 0..6 {
        for row in 0..4 {
            let n = if col < 3 { region_n(1) } else { region_n(7) };
            for _ in 0..60 {
                survey.push(textured_point(&mut rng, col as f64, row as f64, 1.0, n));
            }
        }
    }
    survey.push([6.2, 0.3, 0.0]);
    survey.push([6.6, 0.7, 0.01]);
    write_file(&dir.join("survey.xyz"), &fmt_points(&survey))?;

    let mut sections = String::from("section_id,station,x,y\n");
    for (s, y) in [0.5, 1.5, 2.5].iter().enumerate() {
        for i in 0..28 {
            let x = 0.1 + 0.25 * i as f64;
            sections.push_str(&format!("XS{},{},{x},{y}\n", s + 1, 0.25 * i as f64));
        }
    }
    write_file(&dir.join("sections.csv"), &sections)?;

    let config = RunConfig {
        seed: Some(seed),
        paths: Paths {
            runs: Some("runs.csv".into()),
            region_n: Some("out/region_n.csv".into()),
            clouds: Some("clouds".into()),
            manifest: Some("out/corpus.jsonl".into()),
            checkpoint: Some("out/net.ckpt".into()),
            loss_log: Some("out/loss.csv".into()),
            survey: Some("survey.xyz".into()),
            grid: Some("out/grid.asc".into()),
            tile_counts: Some("out/tile_counts.csv".into()),
            sections: Some("sections.csv".into()),
            table: Some("out/sections_table.csv".into()),
            summary: Some("out/sections_summary.csv".into()),
            ..Paths::default()
        },
        corpus: manning_pc::augment::CorpusSpec {
            samples_per_region: 100,
            ..Default::default()
        },
        net: NetConfig::with_widths(&[32], 64, &[32]),
        train: TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 5,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    write_file(
        &dir.join("config.json"),
        &(serde_json::to_string_pretty(&config)? + "\n"),
    )?;
    Ok(())
}
