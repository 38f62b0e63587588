use hdgcn_tensor::Tensor;
use rand::Rng;

use super::sequence::{SkeletonSequence, Stream};
use crate::error::{data, Result};
use crate::topology::{parent_map, SkeletonTopology, SyntheticRule};

/// `bone[v] = joint[v] - joint[parent(v)]` in the tree rooted at `com`; the
/// root's bone is zero. Accepts joint (gives bone) and joint motion (gives
/// bone motion, the same linear map).
pub fn derive_bone(seq: &SkeletonSequence, topology: &SkeletonTopology, com: usize) -> Result<SkeletonSequence> {
    let stream = match seq.stream {
        Stream::Joint => Stream::Bone,
        Stream::JointMotion => Stream::BoneMotion,
        s => return Err(data(format!("derive_bone needs a joint stream, got {}", s.name()))),
    };
    seq.validate(topology)?;
    let parents = parent_map(topology, com)?;
    let (m, t, v) = (seq.persons(), seq.frames(), seq.joints());
    let src = seq.data.data();
    let mut out = Tensor::zeros(seq.data.shape());
    let dst = out.data_mut();
    for row in 0..m * 3 * t {
        let base = row * v;
        for (&j, &p) in &parents {
            if j != p {
                dst[base + j - 1] = src[base + j - 1] - src[base + p - 1];
            }
        }
    }
    SkeletonSequence::new(seq.topology.clone(), stream, seq.label, out)
}

/// `x[t + 1] - x[t]`, with the last frame zero.
pub fn derive_motion(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let stream = match seq.stream {
        Stream::Joint => Stream::JointMotion,
        Stream::Bone => Stream::BoneMotion,
        s => return Err(data(format!("{} is already a motion stream", s.name()))),
    };
    let (m, t, v) = (seq.persons(), seq.frames(), seq.joints());
    if t < 2 {
        return Err(data(format!("motion needs at least 2 frames, got {t}")));
    }
    let src = seq.data.data();
    let mut out = Tensor::zeros(seq.data.shape());
    let dst = out.data_mut();
    for mc in 0..m * 3 {
        for f in 0..t - 1 {
            for j in 0..v {
                let i = (mc * t + f) * v + j;
                dst[i] = src[i + v] - src[i];
            }
        }
    }
    SkeletonSequence::new(seq.topology.clone(), stream, seq.label, out)
}

/// Any stream from a joint sequence.
pub fn derive_stream(
    seq: &SkeletonSequence,
    target: Stream,
    topology: &SkeletonTopology,
    com: usize,
) -> Result<SkeletonSequence> {
    if seq.stream == target {
        return Ok(seq.clone());
    }
    if seq.stream != Stream::Joint {
        return Err(data(format!("cannot derive {} from {}", target.name(), seq.stream.name())));
    }
    match target {
        Stream::Joint => unreachable!("handled above"),
        Stream::Bone => derive_bone(seq, topology, com),
        Stream::JointMotion => derive_motion(seq),
        Stream::BoneMotion => derive_motion(&derive_bone(seq, topology, com)?),
    }
}

fn person_present(seq: &SkeletonSequence, m: usize) -> bool {
    let n = 3 * seq.frames() * seq.joints();
    seq.data.data()[m * n..(m + 1) * n].iter().any(|&x| x != 0.0)
}

/// Centers on the CoM joint of the first frame (joint streams only) and
/// resamples to `window` frames by linear interpolation.
///
/// The origin is the first present person's CoM at frame 0; every present
/// person moves by the same offset and all-zero (absent) persons stay zero.
pub fn preprocess(seq: &SkeletonSequence, topology: &SkeletonTopology, com: usize, window: usize) -> Result<SkeletonSequence> {
    seq.validate(topology)?;
    topology.check_joint(com)?;
    let (m, t, v) = (seq.persons(), seq.frames(), seq.joints());
    if m == 0 || t == 0 {
        return Err(data("empty sequence"));
    }
    if window == 0 {
        return Err(data("window must be positive"));
    }
    let mut x = seq.data.clone();
    if seq.stream == Stream::Joint {
        let present: Vec<usize> = (0..m).filter(|&p| person_present(seq, p)).collect();
        if let Some(&first) = present.first() {
            let origin: Vec<f32> = (0..3).map(|c| seq.at(first, c, 0, com - 1)).collect();
            let d = x.data_mut();
            for &p in &present {
                for (c, &o) in origin.iter().enumerate() {
                    let base = (p * 3 + c) * t * v;
                    d[base..base + t * v].iter_mut().for_each(|val| *val -= o);
                }
            }
        }
    }
    let x = if t == window { x } else { resample(&x, window) };
    SkeletonSequence::new(seq.topology.clone(), seq.stream, seq.label, x)
}

/// Linear interpolation along frames, endpoints kept.
fn resample(x: &Tensor<f32>, window: usize) -> Tensor<f32> {
    let sh = x.shape();
    let (mc, t, v) = (sh[0] * sh[1], sh[2], sh[3]);
    let mut out = Tensor::zeros(&[sh[0], sh[1], window, v]);
    let src = x.data();
    let dst = out.data_mut();
    for f in 0..window {
        let pos = if window == 1 { 0.0 } else { f as f64 * (t - 1) as f64 / (window - 1) as f64 };
        let lo = (pos.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let w = (pos - lo as f64) as f32;
        for row in 0..mc {
            for j in 0..v {
                let a = src[(row * t + lo) * v + j];
                let b = src[(row * t + hi) * v + j];
                dst[(row * window + f) * v + j] = if w == 0.0 { a } else { a + w * (b - a) };
            }
        }
    }
    out
}

/// A random contiguous span covering at least `min_ratio` of the frames.
/// Training-time augmentation; `preprocess` then resamples it.
pub fn random_crop(seq: &SkeletonSequence, min_ratio: f64, rng: &mut impl Rng) -> Result<SkeletonSequence> {
    if !(0.0..=1.0).contains(&min_ratio) || min_ratio == 0.0 {
        return Err(data(format!("crop ratio {min_ratio} must be in (0, 1]")));
    }
    let (m, t, v) = (seq.persons(), seq.frames(), seq.joints());
    let min_len = ((t as f64 * min_ratio).ceil() as usize).clamp(1, t.max(1));
    let len = rng.gen_range(min_len..=t);
    let start = rng.gen_range(0..=t - len);
    let src = seq.data.data();
    let mut out = Tensor::zeros(&[m, 3, len, v]);
    let dst = out.data_mut();
    for row in 0..m * 3 {
        let from = (row * t + start) * v;
        dst[row * len * v..(row + 1) * len * v].copy_from_slice(&src[from..from + len * v]);
    }
    SkeletonSequence::new(seq.topology.clone(), seq.stream, seq.label, out)
}

/// Appends the joints a topology synthesizes (e.g. the Kinetics hip and
/// belly) to a sequence recorded on the base skeleton.
pub fn apply_synthetic(seq: &SkeletonSequence, topology: &SkeletonTopology) -> Result<SkeletonSequence> {
    let base = topology.num_joints - topology.synthetic_rules.len();
    if seq.joints() != base {
        return Err(data(format!(
            "`{}` synthesizes joints onto a {base}-joint sequence, got {} joints",
            topology.name,
            seq.joints()
        )));
    }
    if seq.stream != Stream::Joint {
        return Err(data("synthetic joints are defined on joint coordinates"));
    }
    let (m, t, v) = (seq.persons(), seq.frames(), topology.num_joints);
    let src = seq.data.data();
    let mut out = Tensor::zeros(&[m, 3, t, v]);
    let dst = out.data_mut();
    for row in 0..m * 3 * t {
        dst[row * v..row * v + base].copy_from_slice(&src[row * base..(row + 1) * base]);
        for rule in &topology.synthetic_rules {
            let (a, b) = rule.source;
            dst[row * v + rule.new_joint - 1] = match rule.rule {
                SyntheticRule::Midpoint => 0.5 * (dst[row * v + a - 1] + dst[row * v + b - 1]),
            };
        }
    }
    SkeletonSequence::new(topology.name.clone(), Stream::Joint, seq.label, out)
}
