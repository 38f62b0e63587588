use std::path::{Path, PathBuf};

use hdgcn_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{SkeletonSequence, Stream};
use super::streams::{apply_synthetic, derive_stream, preprocess, random_crop};
use crate::error::{data, Result};
use crate::topology::SkeletonTopology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub topology: String,
    pub classes: Vec<String>,
    pub split: Split,
    #[serde(default)]
    pub generator_seed: Option<u64>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Parses a manifest and checks its labels; files are not opened.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if m.classes.is_empty() {
            return Err(data(format!("{}: no classes", path.display())));
        }
        if let Some(e) = m.samples.iter().find(|e| e.label >= m.classes.len()) {
            return Err(data(format!(
                "{}: `{}` has label {} but there are {} classes",
                path.display(),
                e.file,
                e.label,
                m.classes.len()
            )));
        }
        Ok(m)
    }

    /// Loads the manifest and every listed sequence. A sequence that carries
    /// its own label must agree with the manifest.
    pub fn load_all(path: impl AsRef<Path>) -> Result<(Self, Vec<SkeletonSequence>)> {
        let path = path.as_ref();
        let m = Self::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seqs = Vec::with_capacity(m.samples.len());
        for e in &m.samples {
            let file: PathBuf = base.join(&e.file);
            let mut seq = SkeletonSequence::load(&file)?;
            match seq.label {
                Some(l) if l != e.label => {
                    return Err(data(format!("{}: label {l} but the manifest says {}", file.display(), e.label)))
                }
                _ => seq.label = Some(e.label),
            }
            seqs.push(seq);
        }
        Ok((m, seqs))
    }
}

/// Network input for a list of samples.
pub struct Batch<T> {
    /// `[N, M, 3, T, V]`
    pub x: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Sequences windowed and converted to one stream, ready for batching.
pub struct Dataset {
    pub classes: Vec<String>,
    pub topology: SkeletonTopology,
    pub stream: Stream,
    pub com: usize,
    pub window: usize,
    pub persons: usize,
    /// Joint sequences on the full topology, kept for crop augmentation.
    raw: Vec<SkeletonSequence>,
    samples: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl Dataset {
    /// Synthesizes missing joints, centers, windows and derives `stream`.
    /// Sequences with fewer persons are padded with zeros.
    pub fn prepare(
        seqs: Vec<SkeletonSequence>,
        classes: Vec<String>,
        topology: &SkeletonTopology,
        stream: Stream,
        com: usize,
        window: usize,
    ) -> Result<Self> {
        if seqs.is_empty() {
            return Err(data("dataset is empty"));
        }
        let mut raw = Vec::with_capacity(seqs.len());
        let mut labels = Vec::with_capacity(seqs.len());
        for (i, seq) in seqs.into_iter().enumerate() {
            let label = seq.label.ok_or_else(|| data(format!("sample {i} has no label")))?;
            if label >= classes.len() {
                return Err(data(format!("sample {i} has label {label} but there are {} classes", classes.len())));
            }
            let seq = if seq.joints() != topology.num_joints && !topology.synthetic_rules.is_empty() {
                apply_synthetic(&seq, topology)?
            } else {
                seq
            };
            seq.validate(topology).map_err(|e| data(format!("sample {i}: {e}")))?;
            if seq.stream != Stream::Joint && seq.stream != stream {
                return Err(data(format!("sample {i} is a {} stream; {} was requested", seq.stream.name(), stream.name())));
            }
            raw.push(seq);
            labels.push(label);
        }
        let persons = raw.iter().map(SkeletonSequence::persons).max().unwrap_or(1);
        let mut ds = Self { classes, topology: topology.clone(), stream, com, window, persons, raw, samples: Vec::new(), labels };
        ds.samples = (0..ds.raw.len())
            .map(|i| ds.convert(&ds.raw[i]).map_err(|e| data(format!("sample {i}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(ds)
    }

    /// Reads a manifest and prepares it.
    pub fn open(path: impl AsRef<Path>, topology: &SkeletonTopology, stream: Stream, com: usize, window: usize) -> Result<Self> {
        let (m, seqs) = DatasetManifest::load_all(path)?;
        Self::prepare(seqs, m.classes, topology, stream, com, window)
    }

    fn convert(&self, seq: &SkeletonSequence) -> Result<Tensor<f32>> {
        let windowed = preprocess(seq, &self.topology, self.com, self.window)?;
        let s = derive_stream(&windowed, self.stream, &self.topology, self.com)?;
        let (m, v) = (s.persons(), s.joints());
        if m == self.persons {
            return Ok(s.data);
        }
        let mut padded = s.data.into_data();
        padded.resize(self.persons * 3 * self.window * v, 0.0);
        Ok(Tensor::new(&[self.persons, 3, self.window, v], padded)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Prepared `(M, 3, T, V)` input of one sample.
    pub fn sample(&self, i: usize) -> &Tensor<f32> {
        &self.samples[i]
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let per = self.samples[0].numel();
        let mut x = Vec::with_capacity(per * indices.len());
        for &i in indices {
            x.extend(self.samples[i].data().iter().map(|&v| T::of(v as f64)));
        }
        let shape = [&[indices.len()][..], self.samples[0].shape()].concat();
        Batch { x: Tensor::new(&shape, x).expect("sample shapes agree"), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Like `batch`, but each sample is first cropped to a random span of at
    /// least `min_ratio` of its frames.
    pub fn cropped_batch<T: Real>(&self, indices: &[usize], min_ratio: f64, rng: &mut impl Rng) -> Result<Batch<T>> {
        let mut x = Vec::new();
        for &i in indices {
            let t = self.convert(&random_crop(&self.raw[i], min_ratio, rng)?)?;
            x.extend(t.data().iter().map(|&v| T::of(v as f64)));
        }
        let shape = [&[indices.len()][..], self.samples[0].shape()].concat();
        Ok(Batch { x: Tensor::new(&shape, x)?, labels: indices.iter().map(|&i| self.labels[i]).collect() })
    }

    /// Index chunks in order, or in a shuffled order when `rng` is given.
    pub fn batches(&self, batch_size: usize, rng: Option<&mut impl Rng>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = rng {
            order.shuffle(rng);
        }
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}
