//! Training corpus synthesis: random subsampling, zero-origin normalization
//! and count-weighted blending of labelled region clouds.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flume::RegionN;
use crate::pointcloud::{normalize_zero_origin, Point3, PointCloud};

pub const MIN_SUBSAMPLE: usize = 3;
pub const MAX_SUBSAMPLE: usize = 100;

/// A normalized cloud with its Manning's n label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub cloud: PointCloud,
    pub target_n: f64,
    /// `(region_id, points contributed)` for every source subsample.
    pub provenance: Vec<(String, usize)>,
}

/// Draws `k` distinct points uniformly without replacement.
pub fn subsample<R: Rng + ?Sized>(cloud: &PointCloud, k: usize, rng: &mut R) -> Result<PointCloud> {
    if k < MIN_SUBSAMPLE {
        return Err(Error::arg(format!(
            "subsample size {k} is below the minimum of {MIN_SUBSAMPLE}"
        )));
    }
    if k > cloud.len() {
        return Err(Error::arg(format!(
            "cannot draw {k} points from a cloud of {}",
            cloud.len()
        )));
    }
    let pts = cloud.points();
    let picked = index::sample(rng, pts.len(), k)
        .into_iter()
        .map(|i| pts[i])
        .collect();
    Ok(cloud.derive(picked))
}

/// Merges two samples; the label is the point-count-weighted mean of the
/// two labels.
pub fn blend(a: &LabeledSample, b: &LabeledSample) -> Result<LabeledSample> {
    let (na, nb) = (a.cloud.len(), b.cloud.len());
    if na == 0 || nb == 0 {
        return Err(Error::EmptyInput("cannot blend an empty sample".into()));
    }
    let target_n = (a.target_n * na as f64 + b.target_n * nb as f64) / (na + nb) as f64;
    let mut points: Vec<Point3> = Vec::with_capacity(na + nb);
    points.extend_from_slice(a.cloud.points());
    points.extend_from_slice(b.cloud.points());
    // both halves were normalized independently; the union's minimum is
    // already zero, so this only guards against unnormalized inputs
    let cloud = normalize_zero_origin(&a.cloud.derive(points))?;
    let mut provenance = a.provenance.clone();
    provenance.extend(b.provenance.iter().cloned());
    Ok(LabeledSample {
        cloud,
        target_n,
        provenance,
    })
}

/// Train/validation/test partition of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub samples_per_region: usize,
    pub blend_fraction: f64,
    pub seed: u64,
    pub size_min: usize,
    pub size_max: usize,
    /// `region -> donor`: the region's clouds are labelled with the donor's n.
    /// Used to reuse the center-zone value for the lateral zones of a slab
    /// whose lateral measurements are unreliable.
    pub label_substitutions: BTreeMap<String, String>,
    pub split: SplitFractions,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            samples_per_region: 10_000,
            blend_fraction: 0.5,
            seed: 0,
            size_min: MIN_SUBSAMPLE,
            size_max: MAX_SUBSAMPLE,
            label_substitutions: BTreeMap::new(),
            split: SplitFractions::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size_min < MIN_SUBSAMPLE || self.size_max < self.size_min {
            return Err(Error::arg(format!(
                "invalid subsample size range {}..={}",
                self.size_min, self.size_max
            )));
        }
        if !(0.0..=1.0).contains(&self.blend_fraction) {
            return Err(Error::arg("blend_fraction must lie in [0, 1]"));
        }
        let s = self.split;
        if !(s.train >= 0.0 && s.validation >= 0.0 && s.train + s.validation <= 1.0) {
            return Err(Error::arg(
                "split fractions must be non-negative and sum to at most 1",
            ));
        }
        Ok(())
    }

    pub fn plain_count(&self, regions: usize) -> usize {
        self.samples_per_region * regions
    }

    pub fn blend_count(&self, regions: usize) -> usize {
        (self.blend_fraction * self.plain_count(regions) as f64).round() as usize
    }
}

/// Generator for sample `index`; independent of every other sample, so
/// corpora can be built in any order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash-based split assignment of a sample.
pub fn split_of(seed: u64, index: u64, fractions: SplitFractions) -> Split {
    let h = splitmix64(seed ^ splitmix64(index));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < fractions.train {
        Split::Train
    } else if u < fractions.train + fractions.validation {
        Split::Validation
    } else {
        Split::Test
    }
}

/// A labelled region cloud ready for augmentation.
#[derive(Debug, Clone)]
pub struct Region {
    pub cloud: PointCloud,
    pub label: RegionN,
}

/// Generated corpus with one split tag per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<LabeledSample>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, split: Split) -> Vec<LabeledSample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x.clone())
            .collect()
    }
}

fn draw_subsample(
    id: &str,
    region: &Region,
    n: f64,
    spec: &CorpusSpec,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSample> {
    let k = rng.random_range(spec.size_min..=spec.size_max);
    let sub = subsample(&region.cloud, k, rng)?;
    Ok(LabeledSample {
        cloud: normalize_zero_origin(&sub)?,
        target_n: n,
        provenance: vec![(id.to_string(), k)],
    })
}

/// Builds the augmented corpus.
///
/// Sample order: `samples_per_region` plain subsamples for every region in
/// region-id order, then `round(blend_fraction * plain)` blends of two
/// subsamples from uniformly drawn regions (the same region may be drawn
/// twice). Sample `i` uses generator [`sample_rng`]`(seed, i)`.
pub fn build_corpus(regions: &BTreeMap<String, Region>, spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    if regions.is_empty() {
        return Err(Error::EmptyInput(
            "no regions to build a corpus from".into(),
        ));
    }
    for (id, r) in regions {
        if r.cloud.len() < spec.size_max {
            return Err(Error::Corpus {
                region: id.clone(),
                message: format!(
                    "cloud has {} points, needs at least {}",
                    r.cloud.len(),
                    spec.size_max
                ),
            });
        }
    }

    let mut labels = BTreeMap::new();
    for id in regions.keys() {
        let donor = spec.label_substitutions.get(id).unwrap_or(id);
        let n = regions
            .get(donor)
            .ok_or_else(|| Error::Corpus {
                region: id.clone(),
                message: format!("label donor '{donor}' is not a known region"),
            })?
            .label
            .n;
        if !(n > 0.0 && n < 1.0) {
            return Err(Error::Corpus {
                region: id.clone(),
                message: format!("label {n} outside (0, 1)"),
            });
        }
        labels.insert(id.as_str(), n);
    }

    let ordered: Vec<(&String, &Region)> = regions.iter().collect();
    let plain = spec.plain_count(ordered.len());
    let blends = spec.blend_count(ordered.len());
    let mut samples = Vec::with_capacity(plain + blends);

    for i in 0..plain {
        let (id, region) = ordered[i / spec.samples_per_region];
        let mut rng = sample_rng(spec.seed, i as u64);
        samples.push(draw_subsample(
            id,
            region,
            labels[id.as_str()],
            spec,
            &mut rng,
        )?);
    }
    for j in 0..blends {
        let mut rng = sample_rng(spec.seed, (plain + j) as u64);
        let ia = rng.random_range(0..ordered.len());
        let ib = rng.random_range(0..ordered.len());
        let (ida, ra) = ordered[ia];
        let (idb, rb) = ordered[ib];
        let a = draw_subsample(ida, ra, labels[ida.as_str()], spec, &mut rng)?;
        let b = draw_subsample(idb, rb, labels[idb.as_str()], spec, &mut rng)?;
        samples.push(blend(&a, &b)?);
    }

    let splits = (0..samples.len() as u64)
        .map(|i| split_of(spec.seed, i, spec.split))
        .collect();
    Ok(Corpus { samples, splits })
}

// ---------------------------------------------------------------------------
// JSON-lines manifest

pub const MANIFEST_FORMAT: &str = "manning-pc-corpus/1";

/// First line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub seed: u64,
    pub spec: CorpusSpec,
    pub regions: Vec<RegionN>,
    pub n_samples: usize,
    /// Free-form resolved run configuration embedded by the caller.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    index: usize,
    split: Split,
    target_n: f64,
    provenance: Vec<(String, usize)>,
    points: Vec<[f64; 3]>,
}

/// Writes the header line followed by one line per sample.
pub fn write_manifest(header: &ManifestHeader, corpus: &Corpus, mut out: impl Write) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for (index, (s, split)) in corpus.samples.iter().zip(&corpus.splits).enumerate() {
        let rec = SampleRecord {
            index,
            split: *split,
            target_n: s.target_n,
            provenance: s.provenance.clone(),
            points: s.cloud.points().iter().map(|&p| p.into()).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a manifest back. Errors carry the 1-based line number.
pub fn read_manifest(reader: impl BufRead) -> Result<(ManifestHeader, Corpus)> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("manifest is empty".into()))??;
    let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad manifest header: {e}"),
    })?;
    if header.format != MANIFEST_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("unknown manifest format '{}'", header.format),
        });
    }
    let mut corpus = Corpus {
        samples: Vec::with_capacity(header.n_samples),
        splits: Vec::with_capacity(header.n_samples),
    };
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.index != corpus.samples.len() {
            return Err(bad(format!(
                "expected sample index {}",
                corpus.samples.len()
            )));
        }
        let cloud = PointCloud::new(rec.points.into_iter().map(Point3::from).collect())
            .map_err(|e| bad(e.to_string()))?;
        if cloud.is_empty() {
            return Err(bad("sample has no points".into()));
        }
        corpus.samples.push(LabeledSample {
            cloud,
            target_n: rec.target_n,
            provenance: rec.provenance,
        });
        corpus.splits.push(rec.split);
    }
    if corpus.samples.len() != header.n_samples {
        return Err(Error::Parse {
            line: corpus.samples.len() + 2,
            message: format!(
                "manifest truncated: header declares {} samples, found {}",
                header.n_samples,
                corpus.samples.len()
            ),
        });
    }
    Ok((header, corpus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cloud(n: usize, relief: f64) -> PointCloud {
        let side = (n as f64).sqrt().ceil() as usize;
        let pts = (0..n)
            .map(|i| {
                let (x, y) = ((i % side) as f64 * 0.01, (i / side) as f64 * 0.01);
                Point3::new(x, y, relief * (x * 40.0).sin())
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn sample(n: f64, k: usize) -> LabeledSample {
        LabeledSample {
            cloud: normalize_zero_origin(&grid_cloud(k, 0.01)).unwrap(),
            target_n: n,
            provenance: vec![("r".into(), k)],
        }
    }

    fn regions(count: usize, pts: usize) -> BTreeMap<String, Region> {
        (0..count)
            .map(|i| {
                let id = format!("R{i}");
                let n = 0.03 + 0.02 * i as f64;
                (
                    id.clone(),
                    Region {
                        cloud: grid_cloud(pts, 0.002 * (i + 1) as f64),
                        label: RegionN {
                            region_id: id,
                            n,
                            n_runs: 4,
                        },
                    },
                )
            })
            .collect()
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let c = grid_cloud(10, 0.01);
        let mut rng = sample_rng(1, 0);
        let s = subsample(&c, 10, &mut rng).unwrap();
        let key = |p: &Point3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        let mut a: Vec<_> = c.points().iter().map(key).collect();
        let mut b: Vec<_> = s.points().iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn draws_are_distinct() {
        let c = grid_cloud(10, 0.01);
        for seed in 0..20 {
            let s = subsample(&c, 3, &mut sample_rng(seed, 0)).unwrap();
            let mut keys: Vec<_> = s
                .points()
                .iter()
                .map(|p| (p.x.to_bits(), p.y.to_bits()))
                .collect();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), 3);
        }
    }

    #[test]
    fn subsample_size_errors() {
        let c = grid_cloud(10, 0.01);
        let mut rng = sample_rng(0, 0);
        assert!(matches!(
            subsample(&c, 11, &mut rng),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            subsample(&c, 2, &mut rng),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        let c = grid_cloud(50, 0.0);
        let mut counts = [0usize; 50];
        let mut rng = sample_rng(42, 0);
        let draws = 10_000;
        for _ in 0..draws {
            for p in subsample(&c, 5, &mut rng).unwrap().points() {
                let i = c.points().iter().position(|q| q == p).unwrap();
                counts[i] += 1;
            }
        }
        for (i, &n) in counts.iter().enumerate() {
            let f = n as f64 / draws as f64;
            assert!((f - 0.1).abs() <= 0.01, "point {i}: frequency {f}");
        }
    }

    #[test]
    fn equal_label_blend() {
        let out = blend(&sample(0.1, 7), &sample(0.1, 40)).unwrap();
        assert!((out.target_n - 0.1).abs() < 1e-15);
        assert_eq!(out.cloud.len(), 47);
    }

    #[test]
    fn weighted_blend() {
        let out = blend(&sample(0.05, 10), &sample(0.15, 30)).unwrap();
        assert!((out.target_n - 0.125).abs() < 1e-15);
        assert_eq!(out.provenance.len(), 2);
    }

    #[test]
    fn blend_is_symmetric() {
        let a = sample(0.05, 10);
        let b = LabeledSample {
            cloud: normalize_zero_origin(&grid_cloud(30, 0.03)).unwrap(),
            ..sample(0.2, 30)
        };
        let ab = blend(&a, &b).unwrap();
        let ba = blend(&b, &a).unwrap();
        assert_eq!(ab.target_n, ba.target_n);
        let key = |p: &Point3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        let mut pa: Vec<_> = ab.cloud.points().iter().map(key).collect();
        let mut pb: Vec<_> = ba.cloud.points().iter().map(key).collect();
        pa.sort();
        pb.sort();
        assert_eq!(pa, pb);
    }

    #[test]
    fn iterated_blending_conserves_labels() {
        // brute force over triples of sizes and labels
        let labels = [0.03, 0.11, 0.24];
        for &ka in &[3usize, 17, 100] {
            for &kb in &[4usize, 50] {
                for &kc in &[3usize, 99] {
                    let (a, b, c) = (
                        sample(labels[0], ka),
                        sample(labels[1], kb),
                        sample(labels[2], kc),
                    );
                    let expected =
                        (labels[0] * ka as f64 + labels[1] * kb as f64 + labels[2] * kc as f64)
                            / (ka + kb + kc) as f64;
                    let left = blend(&blend(&a, &b).unwrap(), &c).unwrap();
                    let right = blend(&a, &blend(&b, &c).unwrap()).unwrap();
                    assert!((left.target_n - expected).abs() < 1e-15);
                    assert!((right.target_n - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn corpus_without_blends_uses_region_labels() {
        let regs = regions(3, 120);
        let spec = CorpusSpec {
            samples_per_region: 20,
            blend_fraction: 0.0,
            seed: 3,
            ..CorpusSpec::default()
        };
        let corpus = build_corpus(&regs, &spec).unwrap();
        assert_eq!(corpus.len(), 60);
        let known: Vec<f64> = regs.values().map(|r| r.label.n).collect();
        for s in &corpus.samples {
            assert!(known.contains(&s.target_n));
            assert!((MIN_SUBSAMPLE..=MAX_SUBSAMPLE).contains(&s.cloud.len()));
        }
    }

    #[test]
    fn corpus_counts_and_hull() {
        let regs = regions(9, 100);
        let spec = CorpusSpec {
            samples_per_region: 1_000,
            blend_fraction: 0.5,
            seed: 9,
            ..CorpusSpec::default()
        };
        let corpus = build_corpus(&regs, &spec).unwrap();
        assert_eq!(corpus.len(), 13_500);
        for s in &corpus.samples[9_000..] {
            assert_eq!(s.provenance.len(), 2);
            let ns: Vec<f64> = s
                .provenance
                .iter()
                .map(|(id, _)| regs[id].label.n)
                .collect();
            let (lo, hi) = (ns[0].min(ns[1]), ns[0].max(ns[1]));
            assert!(s.target_n >= lo - 1e-15 && s.target_n <= hi + 1e-15);
            assert!(s.cloud.len() <= 2 * MAX_SUBSAMPLE);
        }
        for s in &corpus.samples {
            let b = s.cloud.bounds().unwrap();
            assert_eq!((b.min.x, b.min.y, b.min.z), (0.0, 0.0, 0.0));
        }
        let train = corpus.splits.iter().filter(|s| **s == Split::Train).count();
        let frac = train as f64 / corpus.len() as f64;
        assert!((frac - 0.8).abs() < 0.02, "{frac}");
    }

    #[test]
    fn corpus_is_deterministic() {
        let regs = regions(2, 150);
        let spec = CorpusSpec {
            samples_per_region: 30,
            seed: 77,
            ..CorpusSpec::default()
        };
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            seed: spec.seed,
            spec: spec.clone(),
            regions: regs.values().map(|r| r.label.clone()).collect(),
            n_samples: 0,
            config: serde_json::Value::Null,
        };
        let bytes = |c: &Corpus| {
            let mut buf = Vec::new();
            write_manifest(&header, c, &mut buf).unwrap();
            buf
        };
        let a = build_corpus(&regs, &spec).unwrap();
        let b = build_corpus(&regs, &spec).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let other = build_corpus(&regs, &CorpusSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(bytes(&a), bytes(&other));
    }

    #[test]
    fn small_region_is_named() {
        let mut regs = regions(2, 150);
        regs.get_mut("R1").unwrap().cloud = grid_cloud(50, 0.01);
        match build_corpus(&regs, &CorpusSpec::default()) {
            Err(Error::Corpus { region, .. }) => assert_eq!(region, "R1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_substitution() {
        let regs = regions(3, 120);
        let spec = CorpusSpec {
            samples_per_region: 5,
            blend_fraction: 0.0,
            label_substitutions: [("R0".to_string(), "R1".to_string())].into(),
            ..CorpusSpec::default()
        };
        let corpus = build_corpus(&regs, &spec).unwrap();
        for s in &corpus.samples[..5] {
            assert_eq!(s.provenance[0].0, "R0");
            assert_eq!(s.target_n, regs["R1"].label.n);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let regs = regions(2, 120);
        let spec = CorpusSpec {
            samples_per_region: 4,
            ..CorpusSpec::default()
        };
        let corpus = build_corpus(&regs, &spec).unwrap();
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            seed: spec.seed,
            spec,
            regions: regs.values().map(|r| r.label.clone()).collect(),
            n_samples: corpus.len(),
            config: serde_json::json!({"note": "test"}),
        };
        let mut buf = Vec::new();
        write_manifest(&header, &corpus, &mut buf).unwrap();
        let (h2, c2) = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(h2, header);
        assert_eq!(c2, corpus);

        let mut text = String::from_utf8(buf).unwrap();
        text = text.replacen("\"target_n\"", "\"target_x\"", 2);
        match read_manifest(text.as_bytes()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
