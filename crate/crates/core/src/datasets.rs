//! Synthetic streams, the embedding file format, and train/test splitting.
//!
//! File format (UTF-8):
//!
//! ```text
//! #mpart-dataset v1 dims=<n> classes=<k> normalized=<true|false>
//! #calibration <m>                 (optional)
//! <f1>,...,<fn>,<label>
//! ```
//!
//! With `normalized=false` the first `m` rows are the calibration split: the
//! per-dimension min and max are fitted on them and applied to every row.
//! Calibration rows are not part of the train/test pool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{ClassId, FeatureVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub features: FeatureVector,
    pub label: ClassId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: usize,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
    /// Leading rows that form the calibration split.
    pub calibration: usize,
}

impl Dataset {
    /// Samples available for training and testing.
    pub fn pool(&self) -> &[LabeledSample] {
        &self.samples[self.calibration..]
    }

    /// Generates or loads the dataset a run configuration points at.
    pub fn from_config(cfg: &RunConfig) -> Result<Dataset> {
        let n = cfg.n_train + cfg.n_test;
        let samples = match cfg.dataset.as_str() {
            "blobs" => gen_blobs(cfg.classes, n, cfg.spread, cfg.dims, cfg.data_seed)?,
            "imbalanced" => gen_imbalanced(
                cfg.classes,
                n,
                &cfg.ratios,
                cfg.spread,
                cfg.dims,
                cfg.data_seed,
            )?,
            path => return load_embeddings(path),
        };
        Ok(Dataset {
            dims: cfg.dims,
            classes: cfg.classes,
            samples,
            calibration: 0,
        })
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`; remainder
/// ties go to the lower index. Afterwards every class with a positive ratio
/// that received nothing takes one item from the currently largest class,
/// as long as `n` covers all such classes.
pub fn apportion(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = ratios.iter().sum();
    if ratios.is_empty()
        || ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0))
        || (total - 1.0).abs() > 1e-9
    {
        return Err(Error::config("ratios", "must be non-negative and sum to 1"));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if ratios.iter().filter(|&&r| r > 0.0).count() <= n {
        for i in 0..sizes.len() {
            if ratios[i] > 0.0 && sizes[i] == 0 {
                let largest = (0..sizes.len())
                    .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                sizes[largest] -= 1;
                sizes[i] = 1;
            }
        }
    }
    Ok(sizes)
}

/// Isotropic Gaussian clusters around the given centres, clipped to the
/// unit cube. Samples are emitted class by class with ids `0..`.
pub fn gen_blobs_at(
    centers: &[Vec<f64>],
    sizes: &[usize],
    spread: f64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if centers.len() != sizes.len() || centers.is_empty() {
        return Err(Error::config("classes", "need one size per centre"));
    }
    let dims = centers[0].len();
    if dims == 0 || centers.iter().any(|c| c.len() != dims) {
        return Err(Error::config(
            "dims",
            "centres must share a non-zero dimension",
        ));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::config("spread", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (class, (center, &size)) in centers.iter().zip(sizes).enumerate() {
        for _ in 0..size {
            let values = center
                .iter()
                .map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            out.push(LabeledSample {
                id: out.len() as u64,
                features: FeatureVector::new(values)?,
                label: ClassId(class as u32),
            });
        }
    }
    Ok(out)
}

/// Per-dimension min-max rescaling fitted on `fit`, applied to `apply`.
/// Constant dimensions are left unchanged.
fn min_max(fit: &[Vec<f64>], dims: usize) -> Vec<(f64, f64)> {
    (0..dims)
        .map(|k| {
            let lo = fit.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let hi = fit.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect()
}

fn rescale(v: &mut [f64], ranges: &[(f64, f64)]) {
    for (x, &(lo, hi)) in v.iter_mut().zip(ranges) {
        if hi > lo {
            *x = (*x - lo) / (hi - lo);
        }
    }
}

fn random_centers(k: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..dims).map(|_| rng.random_range(0.15..=0.85)).collect())
        .collect()
}

fn normalize_all(samples: &mut [LabeledSample], dims: usize) -> Result<()> {
    let raw: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.features.as_slice().to_vec())
        .collect();
    let ranges = min_max(&raw, dims);
    for (s, mut v) in samples.iter_mut().zip(raw) {
        rescale(&mut v, &ranges);
        s.features = FeatureVector::new(v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect())?;
    }
    Ok(())
}

fn clustered(sizes: &[usize], spread: f64, dims: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if dims == 0 {
        return Err(Error::config("dims", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = random_centers(sizes.len(), dims, &mut rng);
    let mut samples = gen_blobs_at(&centers, sizes, spread, rng.random())?;
    normalize_all(&mut samples, dims)?;
    Ok(samples)
}

/// `k` equally sized Gaussian clusters with centres drawn in
/// `[0.15, 0.85]^dims`, clipped and min-max normalized to the unit cube.
pub fn gen_blobs(
    k: usize,
    n: usize,
    spread: f64,
    dims: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if k == 0 {
        return Err(Error::config("classes", "must be at least 1"));
    }
    let sizes = apportion(n, &vec![1.0 / k as f64; k])?;
    clustered(&sizes, spread, dims, seed)
}

/// Like [`gen_blobs`] with class sizes apportioned by `ratios`.
pub fn gen_imbalanced(
    k: usize,
    n: usize,
    ratios: &[f64],
    spread: f64,
    dims: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if ratios.len() != k || k == 0 {
        return Err(Error::config(
            "ratios",
            format!("expected {k} ratios, got {}", ratios.len()),
        ));
    }
    clustered(&apportion(n, ratios)?, spread, dims, seed)
}

fn ingest(line: usize, reason: impl Into<String>) -> Error {
    Error::Ingest {
        line,
        reason: reason.into(),
    }
}

struct Header {
    dims: usize,
    classes: usize,
    normalized: bool,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some("#mpart-dataset") || parts.next() != Some("v1") {
        return Err(ingest(1, "expected `#mpart-dataset v1` header"));
    }
    let mut fields = BTreeMap::new();
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| ingest(1, format!("malformed header field `{part}`")))?;
        fields.insert(k, v);
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| ingest(1, format!("missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| ingest(1, format!("`{key}` is not an integer")))
    };
    let header = Header {
        dims: num("dims")?,
        classes: num("classes")?,
        normalized: match get("normalized")? {
            "true" => true,
            "false" => false,
            other => return Err(ingest(1, format!("bad `normalized` value `{other}`"))),
        },
    };
    if header.dims == 0 {
        return Err(ingest(1, "dims must be at least 1"));
    }
    Ok(header)
}

/// Parses the dataset text format.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = parse_header(lines.next().map(|(_, l)| l).unwrap_or(""))?;

    let mut calibration = 0;
    let mut rows: Vec<(usize, Vec<f64>, u32)> = Vec::new();
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#calibration") {
            if !rows.is_empty() || no != 2 {
                return Err(ingest(no, "calibration marker must be the second line"));
            }
            calibration = rest
                .trim()
                .parse()
                .map_err(|_| ingest(no, "calibration count is not an integer"))?;
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.dims + 1 {
            return Err(ingest(
                no,
                format!(
                    "expected {} columns, found {}",
                    header.dims + 1,
                    cells.len()
                ),
            ));
        }
        let mut values = Vec::with_capacity(header.dims);
        for cell in &cells[..header.dims] {
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(no, format!("bad number `{cell}`")))?;
            if !v.is_finite() {
                return Err(ingest(no, format!("non-finite value `{cell}`")));
            }
            values.push(v);
        }
        let label: u32 = cells[header.dims]
            .parse()
            .map_err(|_| ingest(no, format!("bad label `{}`", cells[header.dims])))?;
        if label as usize >= header.classes {
            return Err(ingest(
                no,
                format!("label {label} outside 0..{}", header.classes),
            ));
        }
        rows.push((no, values, label));
    }
    if calibration > rows.len() {
        return Err(ingest(2, "calibration split is larger than the file"));
    }
    if !header.normalized && calibration > 0 {
        let fit: Vec<Vec<f64>> = rows[..calibration]
            .iter()
            .map(|(_, v, _)| v.clone())
            .collect();
        let ranges = min_max(&fit, header.dims);
        for (_, v, _) in &mut rows {
            rescale(v, &ranges);
        }
    }
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(id, (no, values, label))| {
            let features = FeatureVector::new(values).map_err(|e| match e {
                Error::InputDomain { index, value } => {
                    ingest(no, format!("feature {index} = {value} is outside [0, 1]"))
                }
                other => other,
            })?;
            Ok(LabeledSample {
                id: id as u64,
                features,
                label: ClassId(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        dims: header.dims,
        classes: header.classes,
        samples,
        calibration,
    })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// Serializes already-normalized samples.
pub fn format_dataset(dataset: &Dataset) -> String {
    let mut out = format!(
        "#mpart-dataset v1 dims={} classes={} normalized=true\n",
        dataset.dims, dataset.classes
    );
    if dataset.calibration > 0 {
        let _ = writeln!(out, "#calibration {}", dataset.calibration);
    }
    for s in &dataset.samples {
        for v in s.features.as_slice() {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", s.label);
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, format_dataset(dataset))?;
    Ok(())
}

/// Sidecar path for class names: `<file>.classes.json`.
pub fn class_names_path(path: impl AsRef<Path>) -> PathBuf {
    let mut p = path.as_ref().as_os_str().to_owned();
    p.push(".classes.json");
    PathBuf::from(p)
}

/// Reads the optional `{ "0": "name", ... }` sidecar.
pub fn load_class_names(path: impl AsRef<Path>) -> Result<Option<BTreeMap<u32, String>>> {
    let side = class_names_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let raw: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|k| (k, v))
                .map_err(|_| Error::config("classes", format!("bad class key `{k}`")))
        })
        .collect::<Result<_>>()
        .map(Some)
}

/// Single-pass training stream.
#[derive(Debug)]
pub struct TrainStream(std::vec::IntoIter<LabeledSample>);

impl TrainStream {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    /// Labels of the remaining samples, for a dataset-backed oracle.
    pub fn peek_all(&self) -> &[LabeledSample] {
        self.0.as_slice()
    }
}

impl Iterator for TrainStream {
    type Item = LabeledSample;

    fn next(&mut self) -> Option<LabeledSample> {
        self.0.next()
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.0.size_hint()
    }
}

/// Seeded shuffle of `pool`, then the first `n_train` samples become the
/// stream and the next `n_test` the hold-out set.
pub fn split_and_shuffle(
    pool: &[LabeledSample],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(TrainStream, Vec<LabeledSample>)> {
    if n_train + n_test > pool.len() {
        return Err(Error::config(
            "n_train",
            format!(
                "n_train + n_test = {} exceeds {} samples",
                n_train + n_test,
                pool.len()
            ),
        ));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled[n_train..n_train + n_test].to_vec();
    shuffled.truncate(n_train);
    Ok((TrainStream(shuffled.into_iter()), test))
}
