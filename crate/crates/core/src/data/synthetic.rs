//! Procedural ntu25 motions for desk-scale training.
//!
//! Every class rotates one or two limb subtrees about a pivot joint with a
//! sinusoidal angle. Classes differ in where the motion happens (distal
//! forearm, whole arm, leg, torso, head), in left/right placement and in the
//! relative phase of paired limbs. A sample only draws a phase and an
//! amplitude scale, then Gaussian coordinate noise on top.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use hdgcn_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetManifest, ManifestEntry, Split};
use super::sequence::{SkeletonSequence, Stream};
use crate::error::{config, Result};
use crate::topology::{parent_map, SkeletonTopology};

/// Rest pose in metres, 1-based joint `j` at index `j - 1`. x points to the
/// subject's left, y up, z forward.
const REST: [[f64; 3]; 25] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.30, 0.0],
    [0.0, 0.65, 0.0],
    [0.0, 0.80, 0.0],
    [0.18, 0.52, 0.0],
    [0.22, 0.25, 0.0],
    [0.24, 0.02, 0.0],
    [0.25, -0.06, 0.0],
    [-0.18, 0.52, 0.0],
    [-0.22, 0.25, 0.0],
    [-0.24, 0.02, 0.0],
    [-0.25, -0.06, 0.0],
    [0.10, -0.02, 0.0],
    [0.11, -0.45, 0.0],
    [0.11, -0.85, 0.0],
    [0.11, -0.90, 0.10],
    [-0.10, -0.02, 0.0],
    [-0.11, -0.45, 0.0],
    [-0.11, -0.85, 0.0],
    [-0.11, -0.90, 0.10],
    [0.0, 0.55, 0.0],
    [0.26, -0.14, 0.0],
    [0.22, -0.06, 0.04],
    [-0.26, -0.14, 0.0],
    [-0.22, -0.06, 0.04],
];

/// Where the skeleton stands in camera space.
const ORIGIN: [f64; 3] = [0.0, 0.9, 3.0];

const LATERAL: [f64; 3] = [1.0, 0.0, 0.0];
const FORWARD: [f64; 3] = [0.0, 0.0, 1.0];

/// Rotation of the subtree hanging from `root` about `pivot`.
struct Swing {
    pivot: usize,
    root: usize,
    axis: [f64; 3],
    /// Radians at amplitude scale 1.
    amplitude: f64,
    /// Added to the sample phase.
    phase: f64,
}

struct Motion {
    name: &'static str,
    /// Cycles per sequence.
    cycles: f64,
    swings: &'static [Swing],
}

const fn swing(pivot: usize, root: usize, axis: [f64; 3], amplitude: f64, phase: f64) -> Swing {
    Swing { pivot, root, axis, amplitude, phase }
}

const MOTIONS: [Motion; 8] = [
    Motion { name: "wave_right", cycles: 3.0, swings: &[swing(10, 11, FORWARD, 0.9, 0.0)] },
    Motion { name: "wave_left", cycles: 3.0, swings: &[swing(6, 7, FORWARD, 0.9, 0.0)] },
    Motion {
        name: "arms_in_phase",
        cycles: 1.5,
        swings: &[swing(9, 10, LATERAL, 0.7, 0.0), swing(5, 6, LATERAL, 0.7, 0.0)],
    },
    Motion {
        name: "arms_anti_phase",
        cycles: 1.5,
        swings: &[swing(9, 10, LATERAL, 0.7, 0.0), swing(5, 6, LATERAL, 0.7, PI)],
    },
    Motion { name: "kick_right", cycles: 1.5, swings: &[swing(17, 18, LATERAL, 0.6, 0.0)] },
    Motion {
        name: "walk",
        cycles: 2.0,
        swings: &[swing(17, 18, LATERAL, 0.4, 0.0), swing(13, 14, LATERAL, 0.4, PI)],
    },
    Motion { name: "bow", cycles: 1.0, swings: &[swing(2, 21, LATERAL, 0.5, 0.0)] },
    Motion { name: "nod", cycles: 2.0, swings: &[swing(3, 4, LATERAL, 0.6, 0.0)] },
];

pub const MAX_CLASSES: usize = MOTIONS.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the coordinate noise, metres.
    pub noise: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 8, train_per_class: 100, test_per_class: 25, noise: 0.02, frames: 64, seed: 0 }
    }
}

/// What a sample drew besides its noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub class: usize,
    pub phase: f64,
    pub amplitude: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(config(format!("synthetic class count {} must be in 2..={MAX_CLASSES}", self.classes)));
        }
        if self.frames < 2 {
            return Err(config("synthetic sequences need at least 2 frames"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(config(format!("noise {} must be finite and non-negative", self.noise)));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        MOTIONS[..self.classes].iter().map(|m| m.name.to_string()).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.classes
            * match split {
                Split::Train => self.train_per_class,
                Split::Test => self.test_per_class,
            }
    }

    /// Sample `index` of a split. Classes are interleaved, so sample `i` has
    /// label `i % classes`. Each sample owns an RNG stream, which makes the
    /// result independent of generation order.
    pub fn sample(&self, split: Split, index: usize) -> Result<(SkeletonSequence, SampleParams)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((split as u64) << 40) | index as u64);
        let params = SampleParams {
            class: index % self.classes,
            phase: rng.gen_range(0.0..2.0 * PI),
            amplitude: rng.gen_range(0.6..1.0),
        };
        let seq = render(params, self.frames, self.noise, &mut rng)?;
        Ok((seq, params))
    }

    pub fn split(&self, split: Split) -> Result<Vec<(SkeletonSequence, SampleParams)>> {
        (0..self.count(split)).map(|i| self.sample(split, i)).collect()
    }

    /// Writes `dir/{train,test}/NNNNN.hds` plus `dir/train.json` and
    /// `dir/test.json` manifests; returns the manifest paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        for split in [Split::Train, Split::Test] {
            let sub = dir.join(split.name());
            std::fs::create_dir_all(&sub)?;
            let mut samples = Vec::new();
            for i in 0..self.count(split) {
                let (seq, params) = self.sample(split, i)?;
                let file = format!("{}/{i:05}.hds", split.name());
                seq.save(dir.join(&file))?;
                samples.push(ManifestEntry { file, label: params.class });
            }
            let manifest = DatasetManifest {
                name: format!("synthetic-{}", self.seed),
                topology: "ntu25".into(),
                classes: self.class_names(),
                split,
                generator_seed: Some(self.seed),
                samples,
            };
            let path = dir.join(format!("{}.json", split.name()));
            manifest.save(&path)?;
            paths.push(path);
        }
        Ok((paths.remove(0), paths.remove(0)))
    }
}

/// One sequence `(1, 3, frames, 25)` of the given motion. With zero noise
/// the RNG is not touched.
pub fn render(params: SampleParams, frames: usize, noise: f64, rng: &mut impl Rng) -> Result<SkeletonSequence> {
    let motion = MOTIONS
        .get(params.class)
        .ok_or_else(|| config(format!("class {} has no motion (max {MAX_CLASSES})", params.class)))?;
    let topo = SkeletonTopology::ntu25();
    let parents = parent_map(&topo, 2)?;
    // Subtree membership: walk up from each joint until the root or the CoM.
    let in_subtree = |j: usize, root: usize| {
        let mut k = j;
        loop {
            if k == root {
                return true;
            }
            let p = parents[&k];
            if p == k {
                return false;
            }
            k = p;
        }
    };
    let members: Vec<Vec<usize>> =
        motion.swings.iter().map(|s| (1..=25).filter(|&j| in_subtree(j, s.root)).collect()).collect();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let mut out = Tensor::<f32>::zeros(&[1, 3, frames, 25]);
    let d = out.data_mut();
    for t in 0..frames {
        let mut pose = REST;
        let progress = 2.0 * PI * motion.cycles * t as f64 / frames as f64;
        for (s, joints) in motion.swings.iter().zip(&members) {
            let angle = params.amplitude * s.amplitude * (progress + params.phase + s.phase).sin();
            let pivot = REST[s.pivot - 1];
            for &j in joints {
                pose[j - 1] = rotate(REST[j - 1], pivot, s.axis, angle);
            }
        }
        for (j, p) in pose.iter().enumerate() {
            for c in 0..3 {
                let jitter = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                d[(c * frames + t) * 25 + j] = (ORIGIN[c] + p[c] + jitter) as f32;
            }
        }
    }
    SkeletonSequence::new("ntu25", Stream::Joint, Some(params.class), out)
}

/// Rodrigues rotation of `p` about the unit `axis` through `pivot`.
fn rotate(p: [f64; 3], pivot: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let v = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
    let (s, c) = angle.sin_cos();
    let k = axis;
    let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    let dot = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let mut r = [0.0; 3];
    for i in 0..3 {
        r[i] = pivot[i] + v[i] * c + cross[i] * s + k[i] * dot * (1.0 - c);
    }
    r
}
