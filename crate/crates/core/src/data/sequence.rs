use std::io::{Read, Write};
use std::path::Path;

use hdgcn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{data, HdError, Result};
use crate::topology::SkeletonTopology;

pub const HDS1_MAGIC: &[u8; 4] = b"HDS1";
const VERSION: u8 = 1;
const NO_LABEL: u16 = 0xFFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Joint, Stream::Bone, Stream::JointMotion, Stream::BoneMotion];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Stream::ALL.get(tag as usize).copied().ok_or_else(|| data(format!("unknown stream tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Joint => "joint",
            Stream::Bone => "bone",
            Stream::JointMotion => "joint_motion",
            Stream::BoneMotion => "bone_motion",
        }
    }

    pub fn is_bone(self) -> bool {
        matches!(self, Stream::Bone | Stream::BoneMotion)
    }

    pub fn is_motion(self) -> bool {
        matches!(self, Stream::JointMotion | Stream::BoneMotion)
    }
}

impl std::str::FromStr for Stream {
    type Err = HdError;

    fn from_str(s: &str) -> Result<Self> {
        Stream::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| HdError::Config(format!("unknown stream `{s}` (joint, bone, joint_motion, bone_motion)")))
    }
}

/// Coordinates `(M, 3, T, V)` of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub topology: String,
    pub stream: Stream,
    pub label: Option<usize>,
    pub data: Tensor<f32>,
}

/// JSON form; values are written as the exact decimal of each f32.
#[derive(Serialize, Deserialize)]
struct SequenceJson {
    topology: String,
    stream: Stream,
    label: Option<usize>,
    persons: usize,
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl SkeletonSequence {
    pub fn new(topology: impl Into<String>, stream: Stream, label: Option<usize>, data: Tensor<f32>) -> Result<Self> {
        let s = Self { topology: topology.into(), stream, label, data };
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        let sh = self.data.shape();
        if sh.len() != 4 || sh[1] != 3 {
            return Err(data(format!("sequence data must be (M, 3, T, V), got {sh:?}")));
        }
        if !self.data.all_finite() {
            return Err(data("sequence contains non-finite coordinates"));
        }
        Ok(())
    }

    pub fn persons(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[3]
    }

    /// Coordinate `c` of joint `v` (0-based) at frame `t` of person `m`.
    pub fn at(&self, m: usize, c: usize, t: usize, v: usize) -> f32 {
        self.data.get(&[m, c, t, v])
    }

    /// Shape, finiteness and joint count against the topology.
    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        self.check_shape()?;
        if self.joints() != topology.num_joints {
            return Err(data(format!(
                "sequence has {} joints but topology `{}` has {}",
                self.joints(),
                topology.name,
                topology.num_joints
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let j = SequenceJson {
            topology: self.topology.clone(),
            stream: self.stream,
            label: self.label,
            persons: self.persons(),
            frames: self.frames(),
            joints: self.joints(),
            data: self.data.data().iter().map(|&v| v as f64).collect(),
        };
        serde_json::to_string(&j).expect("sequence serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: SequenceJson = serde_json::from_str(text)?;
        let shape = [j.persons, 3, j.frames, j.joints];
        let values: Vec<f32> = j.data.iter().map(|&v| v as f32).collect();
        let t = Tensor::new(&shape, values).map_err(|e| data(format!("sequence JSON: {e}")))?;
        Self::new(j.topology, j.stream, j.label, t)
    }

    pub fn to_hds1(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.topology.len() + 4 * self.data.numel());
        out.extend_from_slice(HDS1_MAGIC);
        out.push(VERSION);
        out.push(self.stream.tag());
        let narrow = |v: usize, what: &str, max: usize| -> Result<usize> {
            if v > max {
                Err(data(format!("{what} {v} does not fit the HDS1 header")))
            } else {
                Ok(v)
            }
        };
        out.extend_from_slice(&(narrow(self.persons(), "person count", u16::MAX as usize)? as u16).to_le_bytes());
        out.extend_from_slice(&(narrow(self.frames(), "frame count", u32::MAX as usize)? as u32).to_le_bytes());
        out.extend_from_slice(&(narrow(self.joints(), "joint count", u16::MAX as usize)? as u16).to_le_bytes());
        let label = match self.label {
            Some(l) => narrow(l, "label", NO_LABEL as usize - 1)? as u16,
            None => NO_LABEL,
        };
        out.extend_from_slice(&label.to_le_bytes());
        let name = self.topology.as_bytes();
        out.extend_from_slice(&(narrow(name.len(), "topology name length", u16::MAX as usize)? as u16).to_le_bytes());
        out.extend_from_slice(name);
        for v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_hds1(mut bytes: &[u8]) -> Result<Self> {
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() < n {
                return Err(data("truncated HDS1 file"));
            }
            let (head, rest) = bytes.split_at(n);
            bytes = rest;
            Ok(head)
        };
        if take(4)? != HDS1_MAGIC {
            return Err(data("not an HDS1 file (bad magic)"));
        }
        let version = take(1)?[0];
        if version != VERSION {
            return Err(data(format!("unsupported HDS1 version {version}")));
        }
        let stream = Stream::from_tag(take(1)?[0])?;
        let u16_at = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]) as usize;
        let m = u16_at(take(2)?);
        let t = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let v = u16_at(take(2)?);
        let label = match u16_at(take(2)?) {
            l if l == NO_LABEL as usize => None,
            l => Some(l),
        };
        let name_len = u16_at(take(2)?);
        let topology = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| data("topology name is not UTF-8"))?;
        let n = m * 3 * t * v;
        let raw = take(4 * n)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if !bytes.is_empty() {
            return Err(data(format!("{} trailing bytes after HDS1 payload", bytes.len())));
        }
        Self::new(topology, stream, label, Tensor::new(&[m, 3, t, v], values)?)
    }

    /// JSON when the extension is `.json`, HDS1 otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if is_json(path) { self.to_json().into_bytes() } else { self.to_hds1()? };
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    /// Reads either format, detected from the content.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| data(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        let parsed = if bytes.starts_with(HDS1_MAGIC) {
            Self::from_hds1(&bytes)
        } else {
            std::str::from_utf8(&bytes)
                .map_err(|_| data("neither HDS1 nor UTF-8 JSON"))
                .and_then(Self::from_json)
        };
        parsed.map_err(|e| data(format!("{}: {e}", path.display())))
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
