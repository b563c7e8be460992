use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment_hdr, is_hdr_path, is_image_path, load_any, resize, ImagePlane, PlaneKind};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Low-light enhancement.
    #[serde(rename = "LLE", alias = "lle")]
    Lle,
    /// Exposure correction.
    #[serde(rename = "EC", alias = "ec")]
    Ec,
    /// HDR tone mapping.
    #[serde(rename = "TM", alias = "tm")]
    Tm,
}

/// Where a dataset lives and how its samples are prepared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub input_dir: PathBuf,
    /// May be absent for inference-only tone-mapping runs.
    pub target_dir: Option<PathBuf>,
    /// `(height, width)`; `None` keeps native resolution.
    pub resize: Option<(usize, usize)>,
    /// `(β_min, β_max)` for `(I / max I)^β` input augmentation.
    pub augmentation: Option<(f64, f64)>,
    /// Use a random subset of this many pairs.
    pub subset: Option<usize>,
    pub subset_seed: u64,
}

impl DatasetSpec {
    /// The standard `<root>/input`, `<root>/target` layout.
    pub fn from_root(root: impl AsRef<Path>, task: Task) -> Self {
        let root = root.as_ref();
        Self {
            task,
            input_dir: root.join("input"),
            target_dir: Some(root.join("target")),
            resize: Some((512, 512)),
            augmentation: None,
            subset: None,
            subset_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.augmentation {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "augmentation range ({lo}, {hi}) must satisfy 0 < min <= max"
                )));
            }
        }
        if let Some((h, w)) = self.resize {
            if h < 8 || w < 8 {
                return Err(Error::Config(format!("resize target {h}×{w} is below 8×8")));
            }
        }
        if self.target_dir.is_none() && self.task != Task::Tm {
            return Err(Error::Config("only tone-mapping datasets may omit target_dir".into()));
        }
        if !self.input_dir.is_dir() {
            return Err(Error::Dataset(format!(
                "input directory {} does not exist",
                self.input_dir.display()
            )));
        }
        if let Some(t) = &self.target_dir {
            if !t.is_dir() {
                return Err(Error::Dataset(format!("target directory {} does not exist", t.display())));
            }
        }
        Ok(())
    }
}

/// One training pair; both planes share dimensions.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub name: String,
    pub input: ImagePlane,
    pub target: ImagePlane,
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image_path(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Dataset(format!(
                    "ambiguous pairing: {} and {} share a basename",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Input files of a dataset in name order, regardless of targets.
pub fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(images_by_stem(dir)?.into_values().collect())
}

/// A paired dataset: inputs and targets matched by basename.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    spec: DatasetSpec,
    pairs: Vec<(String, PathBuf, PathBuf)>,
}

impl PairedDataset {
    pub fn open(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let target_dir = spec
            .target_dir
            .as_ref()
            .ok_or_else(|| Error::Dataset("paired iteration needs a target directory".into()))?;
        let inputs = images_by_stem(&spec.input_dir)?;
        let targets = images_by_stem(target_dir)?;
        let mut pairs: Vec<_> = inputs
            .into_iter()
            .filter_map(|(stem, ip)| targets.get(&stem).map(|tp| (stem, ip, tp.clone())))
            .collect();
        if pairs.is_empty() {
            return Err(Error::Dataset(format!(
                "no basenames shared between {} and {}",
                spec.input_dir.display(),
                target_dir.display()
            )));
        }
        if let Some(n) = spec.subset {
            if n < pairs.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.subset_seed);
                pairs.shuffle(&mut rng);
                pairs.truncate(n);
                pairs.sort_by(|a, b| a.0.cmp(&b.0));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.0.as_str())
    }

    /// Loads pair `i`, resized per the spec and with augmentation exponent
    /// `beta` (HDR inputs are always normalised by their maximum).
    pub fn load(&self, i: usize, beta: Option<f64>, resize_to: Option<(usize, usize)>) -> Result<PairedSample> {
        let (name, ip, tp) = &self.pairs[i];
        let mut input = load_any(ip)?;
        if is_hdr_path(ip) || beta.is_some() {
            input = augment_hdr(&input, beta.unwrap_or(1.0))?;
        }
        let mut target = load_any(tp)?;
        if target.kind() == PlaneKind::Hdr {
            target = augment_hdr(&target, 1.0)?;
        }
        if let Some((h, w)) = resize_to {
            input = resize(&input, h, w)?;
            target = resize(&target, h, w)?;
        }
        assert_eq!(input.dims(), target.dims(), "pair {name} differs in size after resize");
        Ok(PairedSample {
            name: name.clone(),
            input,
            target,
        })
    }

    /// Batches for one epoch. Order and augmentation draws are a pure
    /// function of `(seed, epoch)`.
    pub fn epoch(&self, epoch: usize, batch: usize, shuffle: bool, seed: u64) -> EpochBatches<'_> {
        assert!(batch >= 1, "batch size must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        if shuffle {
            order.shuffle(&mut rng);
        }
        let betas = order
            .iter()
            .map(|_| self.spec.augmentation.map(|(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) }))
            .collect();
        EpochBatches {
            dataset: self,
            order,
            betas,
            batch,
            next: 0,
        }
    }
}

/// Iterator over the batches of one epoch.
pub struct EpochBatches<'a> {
    dataset: &'a PairedDataset,
    order: Vec<usize>,
    betas: Vec<Option<f64>>,
    batch: usize,
    next: usize,
}

impl EpochBatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

impl Iterator for EpochBatches<'_> {
    type Item = Result<Vec<PairedSample>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch).min(self.order.len());
        let resize_to = self.dataset.spec.resize;
        let items = (self.next..end)
            .map(|slot| self.dataset.load(self.order[slot], self.betas[slot], resize_to))
            .collect();
        self.next = end;
        Some(items)
    }
}

/// Opens `spec` and returns the batches of epoch 0.
pub fn iterate_pairs(spec: &DatasetSpec, batch: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<PairedSample>>> {
    let ds = PairedDataset::open(spec)?;
    ds.epoch(0, batch, shuffle, seed).collect()
}
