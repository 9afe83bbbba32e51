use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::rng::rng_from;

/// Version tag of the flat parameter ordering written into checkpoint sidecars.
///
/// Ordering v1: each trunk layer in order (weights row-major `out x in`, then
/// bias), then the class head (`K x feat`, bias `K`), then the one-vs-all head
/// (`2K x feat`, bias `2K`). OVA logits `2k` and `2k + 1` form the pair for
/// class `k`: index 0 is "inlier of k", index 1 is "not k".
pub const FLAT_ORDERING_VERSION: u32 = 1;

/// A dense block inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl DenseBlock {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.in_dim * self.out_dim
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.in_dim * self.out_dim;
        start..start + self.out_dim
    }

    pub fn len(&self) -> usize {
        (self.in_dim + 1) * self.out_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }
}

/// Block structure of a network: tanh trunk layers followed by the two heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    layer_sizes: Vec<usize>,
    k_classes: usize,
    trunk: Vec<DenseBlock>,
    class_head: DenseBlock,
    ova_head: DenseBlock,
}

impl Layout {
    pub fn new(layer_sizes: &[usize], k_classes: usize) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(config("layer_sizes must be nonempty"));
        }
        if layer_sizes.contains(&0) {
            return Err(config("layer sizes must be positive"));
        }
        if k_classes < 2 {
            return Err(config(format!("k_classes must be >= 2, got {k_classes}")));
        }
        let mut offset = 0;
        let mut trunk = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let block = DenseBlock {
                in_dim: pair[0],
                out_dim: pair[1],
                offset,
            };
            offset = block.end();
            trunk.push(block);
        }
        let feat = *layer_sizes.last().unwrap();
        let class_head = DenseBlock {
            in_dim: feat,
            out_dim: k_classes,
            offset,
        };
        let ova_head = DenseBlock {
            in_dim: feat,
            out_dim: 2 * k_classes,
            offset: class_head.end(),
        };
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            k_classes,
            trunk,
            class_head,
            ova_head,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn trunk(&self) -> &[DenseBlock] {
        &self.trunk
    }

    pub fn class_head(&self) -> DenseBlock {
        self.class_head
    }

    pub fn ova_head(&self) -> DenseBlock {
        self.ova_head
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.ova_head.end()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Range of the flat vector covering both heads.
    pub fn heads_range(&self) -> std::ops::Range<usize> {
        self.class_head.offset..self.ova_head.end()
    }
}

/// Trainable weights of the classifier: a tanh MLP trunk shared by a K-way
/// class head and a K-pair one-vs-all head, stored as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    seed: u64,
    flat: Vec<f64>,
}

/// Builds a network with weights drawn uniformly from `±1/sqrt(fan_in)` and
/// zero biases. `layer_sizes[0]` is the input width and the last entry is the
/// width of the features fed to both heads.
pub fn init_mlp(layer_sizes: &[usize], k_classes: usize, seed: u64) -> Result<ModelParams> {
    let layout = Layout::new(layer_sizes, k_classes)?;
    let mut rng = rng_from(seed);
    let mut flat = vec![0.0; layout.len()];
    let blocks = layout
        .trunk()
        .iter()
        .copied()
        .chain([layout.class_head(), layout.ova_head()]);
    for block in blocks {
        let bound = 1.0 / (block.in_dim as f64).sqrt();
        for w in &mut flat[block.weight_range()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(ModelParams { layout, seed, flat })
}

impl ModelParams {
    /// Rebuilds parameters from a flat vector in the documented ordering.
    pub fn from_flat(
        layer_sizes: &[usize],
        k_classes: usize,
        seed: u64,
        flat: Vec<f64>,
    ) -> Result<Self> {
        let layout = Layout::new(layer_sizes, k_classes)?;
        Self::with_layout(layout, seed, flat)
    }

    pub fn with_layout(layout: Layout, seed: u64, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != layout.len() {
            return Err(shape(format!(
                "flat parameter length {} does not match layout length {}",
                flat.len(),
                layout.len()
            )));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(Self { layout, seed, flat })
    }

    /// Zero weights and biases everywhere.
    pub fn zeros(layer_sizes: &[usize], k_classes: usize) -> Result<Self> {
        let layout = Layout::new(layer_sizes, k_classes)?;
        let flat = vec![0.0; layout.len()];
        Ok(Self {
            layout,
            seed: 0,
            flat,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    /// Replaces the flat vector, keeping layout and provenance.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        Self::with_layout(self.layout.clone(), self.seed, flat)
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn weights(&self, block: DenseBlock) -> &[f64] {
        &self.flat[block.weight_range()]
    }

    pub fn bias(&self, block: DenseBlock) -> &[f64] {
        &self.flat[block.bias_range()]
    }

    /// Writes `path` as little-endian f64s and `path.json` as the sidecar.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.flat.len() * 8);
        for v in &self.flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        let meta = CheckpointMeta {
            layer_sizes: self.layout.layer_sizes().to_vec(),
            k_classes: self.layout.k_classes(),
            seed: self.seed,
            flat_ordering_version: FLAT_ORDERING_VERSION,
            param_count: self.flat.len(),
        };
        fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        if meta.flat_ordering_version != FLAT_ORDERING_VERSION {
            return Err(config(format!(
                "unsupported flat ordering version {}",
                meta.flat_ordering_version
            )));
        }
        let bytes = fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(shape("checkpoint length is not a multiple of 8 bytes"));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(&meta.layer_sizes, meta.k_classes, meta.seed, flat)
    }
}

/// JSON sidecar stored next to a binary checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub layer_sizes: Vec<usize>,
    pub k_classes: usize,
    pub seed: u64,
    pub flat_ordering_version: u32,
    pub param_count: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
