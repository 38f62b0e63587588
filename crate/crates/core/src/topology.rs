//! Skeleton graphs: joints, physically connected (PC) edges and CoM candidates.
//!
//! Joint ids are 1-based everywhere in this module and its file format;
//! dense arrays elsewhere index joint `j` at `j - 1`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComRole {
    Chest,
    Belly,
    Hip,
}

impl ComRole {
    pub const ALL: [ComRole; 3] = [ComRole::Chest, ComRole::Belly, ComRole::Hip];

    pub fn name(self) -> &'static str {
        match self {
            ComRole::Chest => "chest",
            ComRole::Belly => "belly",
            ComRole::Hip => "hip",
        }
    }
}

impl std::str::FromStr for ComRole {
    type Err = HdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chest" => Ok(ComRole::Chest),
            "belly" => Ok(ComRole::Belly),
            "hip" => Ok(ComRole::Hip),
            _ => Err(HdError::Config(format!("unknown CoM role `{s}` (chest, belly, hip)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticRule {
    Midpoint,
}

/// A joint synthesized from two existing joints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticJoint {
    pub new_joint: usize,
    pub source: (usize, usize),
    pub rule: SyntheticRule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub num_joints: usize,
    /// Inward `(child, parent)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub com_candidates: BTreeMap<ComRole, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synthetic_rules: Vec<SyntheticJoint>,
    /// Joints whose hierarchy level is taken from a different anchor than
    /// their tree neighbour (`joint -> anchor`); the anchor's level plus one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hierarchy_overrides: BTreeMap<usize, usize>,
}

const NTU25_EDGES: [(usize, usize); 24] = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21), (10, 9),
    (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1), (18, 17), (19, 18),
    (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
];

const NTU25_NAMES: [&str; 25] = [
    "spine_base", "spine_mid", "neck", "head", "left_shoulder", "left_elbow", "left_wrist",
    "left_hand", "right_shoulder", "right_elbow", "right_wrist", "right_hand", "left_hip",
    "left_knee", "left_ankle", "left_foot", "right_hip", "right_knee", "right_ankle",
    "right_foot", "spine_shoulder", "left_hand_tip", "left_thumb", "right_hand_tip",
    "right_thumb",
];

// OpenPose-18 layout, 1-based.
const KINETICS18_EDGES: [(usize, usize); 17] = [
    (5, 4), (4, 3), (8, 7), (7, 6), (14, 13), (13, 12), (11, 10), (10, 9), (12, 6), (9, 3),
    (6, 2), (3, 2), (1, 2), (16, 1), (15, 1), (18, 16), (17, 15),
];

const KINETICS18_NAMES: [&str; 18] = [
    "nose", "neck", "right_shoulder", "right_elbow", "right_wrist", "left_shoulder",
    "left_elbow", "left_wrist", "right_hip", "right_knee", "right_ankle", "left_hip",
    "left_knee", "left_ankle", "right_eye", "left_eye", "right_ear", "left_ear",
];

fn names(list: &[&str]) -> Option<Vec<String>> {
    Some(list.iter().map(|s| s.to_string()).collect())
}

impl SkeletonTopology {
    /// Builds and validates a topology.
    pub fn new(
        name: impl Into<String>,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        com_candidates: BTreeMap<ComRole, usize>,
    ) -> Result<Self> {
        let t = Self {
            name: name.into(),
            num_joints,
            edges,
            com_candidates,
            joint_names: None,
            synthetic_rules: Vec::new(),
            hierarchy_overrides: BTreeMap::new(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn ntu25() -> Self {
        let t = Self {
            name: "ntu25".into(),
            num_joints: 25,
            edges: NTU25_EDGES.to_vec(),
            com_candidates: [(ComRole::Belly, 2), (ComRole::Chest, 21), (ComRole::Hip, 1)].into(),
            joint_names: names(&NTU25_NAMES),
            synthetic_rules: Vec::new(),
            // Hand tips sit at the hand's depth, not one level past the thumb.
            hierarchy_overrides: [(22, 8), (24, 12)].into(),
        };
        t.validate().expect("builtin ntu25 is valid");
        t
    }

    pub fn kinetics18() -> Self {
        let t = Self {
            name: "kinetics18".into(),
            num_joints: 18,
            edges: KINETICS18_EDGES.to_vec(),
            com_candidates: [(ComRole::Chest, 2)].into(),
            joint_names: names(&KINETICS18_NAMES),
            synthetic_rules: Vec::new(),
            hierarchy_overrides: BTreeMap::new(),
        };
        t.validate().expect("builtin kinetics18 is valid");
        t
    }

    pub fn kinetics20() -> Self {
        extend_kinetics(&Self::kinetics18()).expect("builtin kinetics20 is valid")
    }

    /// Five-joint fixture for micro-model checks: a trunk 1-2-3 with one
    /// limb joint hanging off each end.
    pub fn micro5() -> Self {
        let t = Self {
            name: "micro5".into(),
            num_joints: 5,
            edges: vec![(1, 2), (3, 2), (4, 3), (5, 1)],
            com_candidates: [(ComRole::Belly, 2), (ComRole::Chest, 3), (ComRole::Hip, 1)].into(),
            joint_names: None,
            synthetic_rules: Vec::new(),
            hierarchy_overrides: BTreeMap::new(),
        };
        t.validate().expect("builtin micro5 is valid");
        t
    }

    /// A registered builtin, or a JSON topology file when `name` is a path.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "ntu25" => Ok(Self::ntu25()),
            "micro5" => Ok(Self::micro5()),
            "kinetics18" => Ok(Self::kinetics18()),
            "kinetics20" => Ok(Self::kinetics20()),
            other if other.ends_with(".json") || Path::new(other).is_file() => Self::from_file(other),
            other => Err(HdError::Topology(format!(
                "unknown topology `{other}` (ntu25, kinetics18, kinetics20, micro5 or a JSON file)"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints;
        let bad = |msg: String| Err(HdError::Topology(format!("{}: {msg}", self.name)));
        if v == 0 {
            return bad("num_joints must be positive".into());
        }
        if self.edges.len() != v - 1 {
            return bad(format!("a tree on {v} joints needs {} edges, found {}", v - 1, self.edges.len()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a == 0 || b == 0 || a > v || b > v {
                return bad(format!("edge ({a}, {b}) has a joint outside [1, {v}]"));
            }
            if a == b {
                return bad(format!("self-loop at joint {a}"));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return bad(format!("duplicate edge ({a}, {b})"));
            }
        }
        let reached = self.bfs_levels(1, &self.neighbours())[1..].iter().filter(|l| l.is_some()).count();
        if reached != v {
            return bad(format!("PC graph is not connected ({reached} of {v} joints reachable)"));
        }
        for (role, &j) in &self.com_candidates {
            if j == 0 || j > v {
                return bad(format!("CoM candidate {} = {j} is not a joint", role.name()));
            }
        }
        if let Some(n) = &self.joint_names {
            if n.len() != v {
                return bad(format!("{} joint names for {v} joints", n.len()));
            }
        }
        for (&j, &anchor) in &self.hierarchy_overrides {
            if j == 0 || j > v || anchor == 0 || anchor > v || j == anchor {
                return bad(format!("hierarchy override {j} -> {anchor} is invalid"));
            }
        }
        for r in &self.synthetic_rules {
            let (a, b) = r.source;
            if a == b || r.new_joint == 0 || r.new_joint > v || a == 0 || a > v || b == 0 || b > v {
                return bad(format!("synthetic joint {} has invalid sources ({a}, {b})", r.new_joint));
            }
        }
        Ok(())
    }

    /// Undirected adjacency lists, 1-based, neighbours sorted.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints + 1];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        adj
    }

    /// BFS depth of every joint from `root` (index 0 unused).
    fn bfs_levels(&self, root: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
        let mut level = vec![None; self.num_joints + 1];
        level[root] = Some(0);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let next = level[u].map(|l| l + 1);
            for &w in &adj[u] {
                if level[w].is_none() {
                    level[w] = next;
                    queue.push_back(w);
                }
            }
        }
        level
    }

    /// Tree depth of every joint from `com` (1-based, index 0 unused).
    pub fn depths(&self, com: usize) -> Result<Vec<usize>> {
        self.check_joint(com)?;
        let levels = self.bfs_levels(com, &self.neighbours());
        let mut depth = vec![0; levels.len()];
        for j in 1..levels.len() {
            depth[j] = levels[j].ok_or_else(|| HdError::Topology("disconnected topology".into()))?;
        }
        Ok(depth)
    }

    /// Hierarchy level of every joint: the tree depth, except that a joint in
    /// `hierarchy_overrides` whose anchor is one of its ancestors sits one
    /// level below the anchor.
    pub fn hierarchy_levels(&self, com: usize) -> Result<Vec<usize>> {
        let depth = self.depths(com)?;
        let parents = parent_map(self, com)?;
        let mut levels = depth.clone();
        for (&j, &anchor) in &self.hierarchy_overrides {
            let mut a = j;
            while a != com && a != anchor {
                a = parents[&a];
            }
            if a == anchor {
                levels[j] = depth[anchor] + 1;
            }
        }
        Ok(levels)
    }

    pub fn com_joint(&self, role: ComRole) -> Result<usize> {
        self.com_candidates.get(&role).copied().ok_or_else(|| {
            HdError::Topology(format!("{} has no {} CoM candidate", self.name, role.name()))
        })
    }

    pub fn check_joint(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.num_joints {
            return Err(HdError::Topology(format!(
                "joint {j} is outside [1, {}] for {}",
                self.num_joints, self.name
            )));
        }
        Ok(())
    }

    /// Joints renamed by `perm[old - 1] = new`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let v = self.num_joints;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (1..=v).collect::<Vec<_>>() {
            return Err(HdError::Topology(format!("relabel needs a permutation of 1..={v}")));
        }
        let p = |j: usize| perm[j - 1];
        let mut joint_names = self.joint_names.clone();
        if let (Some(new), Some(old)) = (&mut joint_names, &self.joint_names) {
            for (j, name) in old.iter().enumerate() {
                new[p(j + 1) - 1] = name.clone();
            }
        }
        let t = Self {
            name: self.name.clone(),
            num_joints: v,
            edges: self.edges.iter().map(|&(a, b)| (p(a), p(b))).collect(),
            com_candidates: self.com_candidates.iter().map(|(&r, &j)| (r, p(j))).collect(),
            joint_names,
            synthetic_rules: self
                .synthetic_rules
                .iter()
                .map(|r| SyntheticJoint {
                    new_joint: p(r.new_joint),
                    source: (p(r.source.0), p(r.source.1)),
                    rule: r.rule,
                })
                .collect(),
            hierarchy_overrides: self.hierarchy_overrides.iter().map(|(&a, &b)| (p(a), p(b))).collect(),
        };
        t.validate()?;
        Ok(t)
    }
}

/// Orients the PC tree away from `com`; `com` maps to itself.
pub fn parent_map(topology: &SkeletonTopology, com: usize) -> Result<BTreeMap<usize, usize>> {
    let depth = topology.depths(com)?;
    let adj = topology.neighbours();
    let mut parents = BTreeMap::new();
    for j in 1..=topology.num_joints {
        let p = if j == com {
            j
        } else {
            *adj[j].iter().find(|&&w| depth[w] + 1 == depth[j]).expect("tree has a parent")
        };
        parents.insert(j, p);
    }
    Ok(parents)
}

/// Adds a hip joint (midpoint of the two hips) and a belly joint (midpoint of
/// neck and the new hip) to the 18-joint pose skeleton, rewiring the torso so
/// the result stays a tree: both shoulder-hip edges are replaced by
/// hip -> new hip -> belly -> neck.
pub fn extend_kinetics(base: &SkeletonTopology) -> Result<SkeletonTopology> {
    if base.num_joints != 18 {
        return Err(HdError::Topology(format!(
            "extend_kinetics needs the 18-joint skeleton, got {} joints",
            base.num_joints
        )));
    }
    let (neck, r_hip, l_hip, r_sho, l_sho) = (2, 9, 12, 3, 6);
    let (hip, belly) = (19, 20);
    let mut edges: Vec<(usize, usize)> = base
        .edges
        .iter()
        .copied()
        .filter(|&(a, b)| {
            let e = (a.min(b), a.max(b));
            e != (r_sho, r_hip) && e != (l_sho, l_hip)
        })
        .collect();
    if edges.len() != base.edges.len() - 2 {
        return Err(HdError::Topology(
            "base skeleton lacks the shoulder-hip edges of the 18-joint layout".into(),
        ));
    }
    edges.extend([(r_hip, hip), (l_hip, hip), (hip, belly), (belly, neck)]);
    let mut joint_names = base.joint_names.clone();
    if let Some(n) = &mut joint_names {
        n.push("hip".into());
        n.push("belly".into());
    }
    let t = SkeletonTopology {
        name: "kinetics20".into(),
        num_joints: 20,
        edges,
        com_candidates: [(ComRole::Chest, neck), (ComRole::Belly, belly), (ComRole::Hip, hip)].into(),
        joint_names,
        synthetic_rules: vec![
            SyntheticJoint { new_joint: hip, source: (r_hip, l_hip), rule: SyntheticRule::Midpoint },
            SyntheticJoint { new_joint: belly, source: (neck, hip), rule: SyntheticRule::Midpoint },
        ],
        hierarchy_overrides: BTreeMap::new(),
    };
    t.validate()?;
    Ok(t)
}
