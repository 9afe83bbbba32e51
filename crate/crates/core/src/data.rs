//! Synthetic open-set datasets: Gaussian clusters for seen and unseen
//! classes, labeled/unlabeled/validation/test splits, planted high-variance
//! ("unfriendly") unlabeled items, feature-space augmentations and the CSV
//! interchange format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::{derive_seed, gaussian_vec, rng_from, LabRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSetConfig {
    pub dim: usize,
    pub k_seen: usize,
    pub k_unseen: usize,
    pub labels_per_class: usize,
    pub unlabeled_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub cluster_separation: f64,
    pub cluster_stddev: f64,
    pub unfriendly_fraction: f64,
    pub unfriendly_noise_scale: f64,
    pub seed: u64,
}

impl OpenSetConfig {
    pub fn mismatch_ratio(&self) -> f64 {
        self.k_unseen as f64 / (self.k_seen + self.k_unseen) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_seen < 2 {
            return Err(config(format!("k_seen must be >= 2, got {}", self.k_seen)));
        }
        if self.dim == 0 {
            return Err(config("dim must be positive"));
        }
        let n_classes = self.k_seen + self.k_unseen;
        if self.dim < n_classes {
            return Err(config(format!(
                "dim {} too small to place {} class means at separation {}",
                self.dim, n_classes, self.cluster_separation
            )));
        }
        if !(self.cluster_separation >= 0.0) || !self.cluster_separation.is_finite() {
            return Err(config("cluster_separation must be finite and >= 0"));
        }
        if !(self.cluster_stddev >= 0.0) || !self.cluster_stddev.is_finite() {
            return Err(config("cluster_stddev must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.unfriendly_fraction) {
            return Err(config("unfriendly_fraction must lie in [0, 1]"));
        }
        if !(self.unfriendly_noise_scale >= 1.0) || !self.unfriendly_noise_scale.is_finite() {
            return Err(config("unfriendly_noise_scale must be finite and >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledItem {
    pub idx: usize,
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledItem {
    pub idx: usize,
    pub x: Vec<f64>,
    /// Global class id; `< k_seen` means a seen class. Evaluation only.
    pub hidden_truth: usize,
    pub planted_unfriendly: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestItem {
    pub idx: usize,
    pub x: Vec<f64>,
    /// Global class id; `< k_seen` means in-distribution.
    pub truth: usize,
}

/// Labeled set `S`, unlabeled set `U`, validation `V` and test `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetData {
    pub dim: usize,
    pub k_seen: usize,
    pub k_unseen: usize,
    pub labeled: Vec<LabeledItem>,
    pub unlabeled: Vec<UnlabeledItem>,
    pub validation: Vec<LabeledItem>,
    pub test: Vec<TestItem>,
}

impl OpenSetData {
    pub fn is_seen(&self, class: usize) -> bool {
        class < self.k_seen
    }

    pub fn mismatch_ratio(&self) -> f64 {
        self.k_unseen as f64 / (self.k_seen + self.k_unseen) as f64
    }

    pub fn planted_flags(&self) -> Vec<bool> {
        self.unlabeled
            .iter()
            .map(|u| u.planted_unfriendly)
            .collect()
    }
}

/// Random orthogonal matrix (rows orthonormal) by Gram-Schmidt on Gaussian rows.
fn random_rotation(rng: &mut LabRng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian_vec(rng, dim);
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(vi, ri)| *vi -= d * ri);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows
}

/// Class means: centred scaled basis vectors (pairwise distance exactly
/// `separation`) under a seeded random rotation.
fn class_means(rng: &mut LabRng, dim: usize, n_classes: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    let centre = scale / n_classes as f64;
    let rot = random_rotation(rng, dim);
    (0..n_classes)
        .map(|c| {
            let frame: Vec<f64> = (0..dim)
                .map(|j| {
                    if j == c {
                        scale - centre
                    } else if j < n_classes {
                        -centre
                    } else {
                        0.0
                    }
                })
                .collect();
            rot.iter()
                .map(|row| row.iter().zip(&frame).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

fn draw_point(rng: &mut LabRng, mean: &[f64], stddev: f64) -> Vec<f64> {
    gaussian_vec(rng, mean.len())
        .into_iter()
        .zip(mean)
        .map(|(z, m)| m + stddev * z)
        .collect()
}

/// Generates the open-set mixture described by `cfg`. Seen classes are
/// `0..k_seen`, unseen classes `k_seen..k_seen + k_unseen`. `S` and `V`
/// hold seen classes only; `U` and `T` hold both.
pub fn make_openset_mixture(cfg: &OpenSetConfig) -> Result<OpenSetData> {
    cfg.validate()?;
    let n_classes = cfg.k_seen + cfg.k_unseen;
    let mut rng = rng_from(cfg.seed);
    let means = class_means(&mut rng, cfg.dim, n_classes, cfg.cluster_separation);
    let mut next_idx = 0usize;
    let mut idx = || {
        next_idx += 1;
        next_idx - 1
    };

    let mut labeled = Vec::with_capacity(cfg.k_seen * cfg.labels_per_class);
    for c in 0..cfg.k_seen {
        for _ in 0..cfg.labels_per_class {
            let x = draw_point(&mut rng, &means[c], cfg.cluster_stddev);
            labeled.push(LabeledItem {
                idx: idx(),
                x,
                label: c,
            });
        }
    }
    let mut unlabeled = Vec::with_capacity(n_classes * cfg.unlabeled_per_class);
    for c in 0..n_classes {
        for _ in 0..cfg.unlabeled_per_class {
            let planted =
                cfg.unfriendly_fraction > 0.0 && rng.random::<f64>() < cfg.unfriendly_fraction;
            let sd = if planted {
                cfg.cluster_stddev * cfg.unfriendly_noise_scale
            } else {
                cfg.cluster_stddev
            };
            let x = draw_point(&mut rng, &means[c], sd);
            unlabeled.push(UnlabeledItem {
                idx: idx(),
                x,
                hidden_truth: c,
                planted_unfriendly: planted,
            });
        }
    }
    let mut validation = Vec::with_capacity(cfg.k_seen * cfg.val_per_class);
    for c in 0..cfg.k_seen {
        for _ in 0..cfg.val_per_class {
            let x = draw_point(&mut rng, &means[c], cfg.cluster_stddev);
            validation.push(LabeledItem {
                idx: idx(),
                x,
                label: c,
            });
        }
    }
    let mut test = Vec::with_capacity(n_classes * cfg.test_per_class);
    for c in 0..n_classes {
        for _ in 0..cfg.test_per_class {
            let x = draw_point(&mut rng, &means[c], cfg.cluster_stddev);
            test.push(TestItem {
                idx: idx(),
                x,
                truth: c,
            });
        }
    }
    Ok(OpenSetData {
        dim: cfg.dim,
        k_seen: cfg.k_seen,
        k_unseen: cfg.k_unseen,
        labeled,
        unlabeled,
        validation,
        test,
    })
}

/// Feature-space stand-ins for weak (small jitter) and strong (masking plus
/// larger jitter) augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_jitter: f64,
    pub strong_jitter: f64,
    #[serde(default)]
    pub mask_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_jitter: 0.05,
            strong_jitter: 0.2,
            mask_fraction: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_jitter >= 0.0) || !(self.strong_jitter >= 0.0) {
            return Err(config("augmentation jitter must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(config("mask_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn weak(&self, x: &[f64], seed: u64) -> Vec<f64> {
        weak_augment(x, self.weak_jitter, seed)
    }

    pub fn strong(&self, x: &[f64], seed: u64) -> Vec<f64> {
        strong_augment(x, self.strong_jitter, self.mask_fraction, seed)
    }

    pub fn pair(&self, x: &[f64], seeds: AugSeeds) -> AugmentedPair {
        AugmentedPair {
            a0: self.weak(x, seeds.weak0),
            a1: self.weak(x, seeds.weak1),
            strong: self.strong(x, seeds.strong),
        }
    }
}

/// Two weak views and one strong view of the same instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub strong: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AugSeeds {
    pub weak0: u64,
    pub weak1: u64,
    pub strong: u64,
}

impl AugSeeds {
    pub fn derive(base: u64, tags: &[u64]) -> Self {
        let root = derive_seed(base, tags);
        Self {
            weak0: derive_seed(root, &[0]),
            weak1: derive_seed(root, &[1]),
            strong: derive_seed(root, &[2]),
        }
    }
}

/// `x` plus isotropic Gaussian jitter of standard deviation `jitter`.
pub fn weak_augment(x: &[f64], jitter: f64, seed: u64) -> Vec<f64> {
    if jitter == 0.0 {
        return x.to_vec();
    }
    let mut rng = rng_from(seed);
    x.iter()
        .zip(gaussian_vec(&mut rng, x.len()))
        .map(|(a, z)| a + jitter * z)
        .collect()
}

/// Zeroes `round(mask_fraction * dim)` random coordinates, then adds jitter.
pub fn strong_augment(x: &[f64], jitter: f64, mask_fraction: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let mut out = x.to_vec();
    let n_mask = ((mask_fraction * x.len() as f64).round() as usize).min(x.len());
    if n_mask > 0 {
        for i in sample(&mut rng, x.len(), n_mask) {
            out[i] = 0.0;
        }
    }
    if jitter > 0.0 {
        for (o, z) in out.iter_mut().zip(gaussian_vec(&mut rng, x.len())) {
            *o += jitter * z;
        }
    }
    out
}

const FIXED_COLUMNS: [&str; 5] = [
    "split",
    "idx",
    "label",
    "hidden_truth",
    "planted_unfriendly",
];

/// Writes `data` as CSV with header `split,idx,label,hidden_truth,planted_unfriendly,x0..`.
pub fn export_csv(data: &OpenSetData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    write_dataset(data, &mut w)?;
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(data: &OpenSetData, w: &mut csv::Writer<W>) -> Result<()> {
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..data.dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut row =
        |split: &str, idx: usize, label: Option<usize>, truth: usize, planted: bool, x: &[f64]| {
            let mut rec = vec![
                split.to_string(),
                idx.to_string(),
                label.map(|l| l.to_string()).unwrap_or_default(),
                truth.to_string(),
                if planted { "1" } else { "0" }.to_string(),
            ];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)
        };
    for s in &data.labeled {
        row("S", s.idx, Some(s.label), s.label, false, &s.x)?;
    }
    for u in &data.unlabeled {
        row("U", u.idx, None, u.hidden_truth, u.planted_unfriendly, &u.x)?;
    }
    for v in &data.validation {
        row("V", v.idx, Some(v.label), v.label, false, &v.x)?;
    }
    for t in &data.test {
        let label = (t.truth < data.k_seen).then_some(t.truth);
        row("T", t.idx, label, t.truth, false, &t.x)?;
    }
    Ok(())
}

struct RawRow {
    line: usize,
    split: String,
    idx: usize,
    label: Option<usize>,
    truth: usize,
    planted: bool,
    x: Vec<f64>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads a dataset written by [`export_csv`]. `k_seen` is recovered as one
/// past the largest label.
pub fn import_csv(path: &Path) -> Result<OpenSetData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().take(5).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(parse_err(
            1,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }
    let dim = header.len() - FIXED_COLUMNS.len();
    for (j, name) in header.iter().skip(5).enumerate() {
        if name != format!("x{j}") {
            return Err(parse_err(1, format!("expected column x{j}, found {name}")));
        }
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != dim + 5 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 5, rec.len()),
            ));
        }
        let int = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad {what} '{s}'")))
        };
        let label = match &rec[2] {
            "" => None,
            s => Some(int(s, "label")?),
        };
        let planted = match &rec[4] {
            "0" => false,
            "1" => true,
            s => return Err(parse_err(line, format!("bad planted_unfriendly '{s}'"))),
        };
        let x = rec
            .iter()
            .skip(5)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad feature '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(RawRow {
            line,
            split: rec[0].to_string(),
            idx: int(&rec[1], "idx")?,
            label,
            truth: int(&rec[3], "hidden_truth")?,
            planted,
            x,
        });
    }

    let k_seen = rows
        .iter()
        .filter_map(|r| r.label)
        .max()
        .map_or(0, |m| m + 1);
    let k_total = rows
        .iter()
        .map(|r| r.truth + 1)
        .max()
        .unwrap_or(0)
        .max(k_seen);
    let mut data = OpenSetData {
        dim,
        k_seen,
        k_unseen: k_total - k_seen,
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for r in rows {
        let line = r.line;
        let need_label = |r: &RawRow| -> Result<usize> {
            match r.label {
                Some(l) if l == r.truth => Ok(l),
                Some(_) => Err(parse_err(line, "label and hidden_truth disagree")),
                None => Err(parse_err(line, "labeled row without a label")),
            }
        };
        if r.planted && r.split != "U" {
            return Err(parse_err(line, "only unlabeled rows may be planted"));
        }
        match r.split.as_str() {
            "S" => data.labeled.push(LabeledItem {
                idx: r.idx,
                label: need_label(&r)?,
                x: r.x,
            }),
            "V" => data.validation.push(LabeledItem {
                idx: r.idx,
                label: need_label(&r)?,
                x: r.x,
            }),
            "U" => {
                if r.label.is_some() {
                    return Err(parse_err(line, "unlabeled row carries a label"));
                }
                data.unlabeled.push(UnlabeledItem {
                    idx: r.idx,
                    x: r.x,
                    hidden_truth: r.truth,
                    planted_unfriendly: r.planted,
                })
            }
            "T" => {
                if r.truth < k_seen {
                    need_label(&r)?;
                } else if r.label.is_some() {
                    return Err(parse_err(line, "unseen-class test row carries a label"));
                }
                data.test.push(TestItem {
                    idx: r.idx,
                    x: r.x,
                    truth: r.truth,
                })
            }
            other => return Err(parse_err(line, format!("unknown split '{other}'"))),
        }
    }
    Ok(data)
}
