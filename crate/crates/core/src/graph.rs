//! Hierarchy decomposition and adjacency tensors (conventional, HD-PC, HD-FC).
//!
//! Adjacency entry `[i, j] = 1` means node `j`'s features aggregate into node
//! `i`, i.e. the matrix left-multiplies the feature matrix. Tensors use
//! 0-based joint indices (`joint - 1`).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use hdgcn_tensor::{ParamId, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config, HdError, Result};
use crate::topology::SkeletonTopology;

pub const SUBSETS: [&str; 3] = ["id", "cp", "cf"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyDecomposition {
    pub com: usize,
    /// `H_1 .. H_{N_H}`, each sorted ascending.
    pub sets: Vec<Vec<usize>>,
}

impl HierarchyDecomposition {
    pub fn n_h(&self) -> usize {
        self.sets.len()
    }

    pub fn n_l(&self) -> usize {
        self.sets.len().saturating_sub(1)
    }

    pub fn num_joints(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// `H_k ∪ H_{k+1}` for 0-based layer `k`.
    pub fn layer_joints(&self, k: usize) -> Vec<usize> {
        let mut j: Vec<usize> = self.sets[k].iter().chain(&self.sets[k + 1]).copied().collect();
        j.sort_unstable();
        j
    }

    /// 0-based set index of every joint (index 0 unused).
    pub fn level_of(&self) -> Vec<usize> {
        let mut level = vec![0; self.num_joints() + 1];
        for (k, set) in self.sets.iter().enumerate() {
            for &j in set {
                level[j] = k;
            }
        }
        level
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decomposition serializes")
    }
}

/// Sets of joints by hierarchy level from `com`.
pub fn decompose(topology: &SkeletonTopology, com: usize) -> Result<HierarchyDecomposition> {
    let levels = topology.hierarchy_levels(com)?;
    let n_h = levels[1..].iter().max().copied().unwrap_or(0) + 1;
    let mut sets = vec![Vec::new(); n_h];
    for j in 1..=topology.num_joints {
        sets[levels[j]].push(j);
    }
    if sets.iter().any(Vec::is_empty) {
        return Err(HdError::Topology("hierarchy has an empty level".into()));
    }
    Ok(HierarchyDecomposition { com, sets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Conventional,
    HdPc,
    HdFc,
}

/// Which matrix receives `[child, parent]` entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `s_cp[child, parent] = 1`, as the construction pseudocode assigns it.
    #[default]
    Assignment,
    /// `s_cp[parent, child] = 1`: children's features flow toward the CoM.
    Flow,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerSubset,
    /// Column degree counted over all three subsets of a layer.
    Pooled,
}

/// `[L, 3, V, V]` adjacency; `L = 1` for the conventional graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub kind: GraphKind,
    pub normalized: bool,
    pub tensor: Tensor<f64>,
}

impl Adjacency {
    fn empty(kind: GraphKind, layers: usize, v: usize) -> Self {
        Self { kind, normalized: false, tensor: Tensor::zeros(&[layers, 3, v, v]) }
    }

    pub fn layers(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn get(&self, layer: usize, subset: usize, i: usize, j: usize) -> f64 {
        self.tensor.get(&[layer, subset, i, j])
    }

    fn set(&mut self, layer: usize, subset: usize, i: usize, j: usize, v: f64) {
        self.tensor.set(&[layer, subset, i, j], v);
    }

    /// One `[V, V]` matrix.
    pub fn matrix(&self, layer: usize, subset: usize) -> Tensor<f64> {
        let v = self.num_joints();
        let off = (layer * 3 + subset) * v * v;
        Tensor::new(&[v, v], self.tensor.data()[off..off + v * v].to_vec()).expect("slice shape")
    }

    /// Nonzero `(i, j)` entries (0-based) of one matrix.
    pub fn nonzeros(&self, layer: usize, subset: usize) -> Vec<(usize, usize)> {
        let v = self.num_joints();
        let mut out = Vec::new();
        for i in 0..v {
            for j in 0..v {
                if self.get(layer, subset, i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn put_edge(&mut self, layer: usize, child: usize, parent: usize, orientation: Orientation) {
        let (c, p) = (child - 1, parent - 1);
        let (cp, cf) = match orientation {
            Orientation::Assignment => ((c, p), (p, c)),
            Orientation::Flow => ((p, c), (c, p)),
        };
        self.set(layer, 1, cp.0, cp.1, 1.0);
        self.set(layer, 2, cf.0, cf.1, 1.0);
    }
}

/// Identity plus one centripetal and one centrifugal entry per PC edge.
pub fn build_conventional(topology: &SkeletonTopology, orientation: Orientation) -> Adjacency {
    let v = topology.num_joints;
    let mut a = Adjacency::empty(GraphKind::Conventional, 1, v);
    for i in 0..v {
        a.set(0, 0, i, i, 1.0);
    }
    for &(child, parent) in &topology.edges {
        a.put_edge(0, child, parent, orientation);
    }
    a
}

/// HD adjacency over `N_L` layers. FC links every pair of `H_l x H_{l+1}`;
/// PC keeps the tree edges that lie inside `H_l ∪ H_{l+1}` and touch
/// `H_{l+1}`, oriented from the deeper joint to the shallower one, and keeps
/// the listed orientation for the rare edge joining two joints of one set.
pub fn build_hd(
    topology: &SkeletonTopology,
    decomp: &HierarchyDecomposition,
    kind: GraphKind,
    orientation: Orientation,
) -> Result<Adjacency> {
    let v = topology.num_joints;
    if decomp.num_joints() != v {
        return Err(config(format!(
            "decomposition covers {} joints, topology has {v}",
            decomp.num_joints()
        )));
    }
    let n_l = decomp.n_l();
    let mut a = Adjacency::empty(kind, n_l, v);
    let level = decomp.level_of();
    for l in 0..n_l {
        for j in decomp.layer_joints(l) {
            a.set(l, 0, j - 1, j - 1, 1.0);
        }
        match kind {
            GraphKind::HdFc => {
                for &parent in &decomp.sets[l] {
                    for &child in &decomp.sets[l + 1] {
                        a.put_edge(l, child, parent, orientation);
                    }
                }
            }
            GraphKind::HdPc => {
                for &(x, y) in &topology.edges {
                    let (lx, ly) = (level[x], level[y]);
                    let inside = |k: usize| k == l || k == l + 1;
                    if !(inside(lx) && inside(ly) && (lx == l + 1 || ly == l + 1)) {
                        continue;
                    }
                    let (child, parent) = if lx >= ly { (x, y) } else { (y, x) };
                    a.put_edge(l, child, parent, orientation);
                }
            }
            GraphKind::Conventional => {
                return Err(config("build_hd needs an HD graph kind"));
            }
        }
    }
    Ok(a)
}

/// `Λ^{-1/2} A Λ^{-1/2}` per matrix, `Λ[n] = max(1, nonzeros in column n)`.
pub fn normalize(adj: &Adjacency, scope: NormScope) -> Adjacency {
    let mut out = adj.clone();
    let v = adj.num_joints();
    for l in 0..adj.layers() {
        let pooled: Vec<f64> = (0..v)
            .map(|n| (0..3).map(|s| column_nonzeros(adj, l, s, n)).sum::<usize>().max(1) as f64)
            .collect();
        for s in 0..3 {
            let deg: Vec<f64> = match scope {
                NormScope::PerSubset => (0..v).map(|n| column_nonzeros(adj, l, s, n).max(1) as f64).collect(),
                NormScope::Pooled => pooled.clone(),
            };
            for i in 0..v {
                for j in 0..v {
                    let x = adj.get(l, s, i, j);
                    if x != 0.0 {
                        out.set(l, s, i, j, x / (deg[i].sqrt() * deg[j].sqrt()));
                    }
                }
            }
        }
    }
    out.normalized = true;
    out
}

fn column_nonzeros(adj: &Adjacency, l: usize, s: usize, n: usize) -> usize {
    (0..adj.num_joints()).filter(|&i| adj.get(l, s, i, n) != 0.0).count()
}

/// One trainable `[V, V]` parameter per (layer, subset), named
/// `{prefix}.{layer}.{subset}` and initialized to the adjacency values.
pub fn to_parameters<T: Real>(
    adj: &Adjacency,
    store: &mut ParamStore<T>,
    prefix: &str,
) -> Result<Vec<[ParamId; 3]>> {
    let mut ids = Vec::with_capacity(adj.layers());
    for l in 0..adj.layers() {
        let mut row = [ParamId(0); 3];
        for (s, slot) in row.iter_mut().enumerate() {
            let m = adj.matrix(l, s).cast::<T>();
            *slot = store.add(format!("{prefix}.{l}.{}", SUBSETS[s]), m, true)?;
        }
        ids.push(row);
    }
    Ok(ids)
}

/// DOT rendering: one cluster per hierarchy set, plus the layer edges of the
/// chosen graph (PC or FC), drawn parent -> child.
pub fn to_dot(topology: &SkeletonTopology, decomp: &HierarchyDecomposition, adj: &Adjacency) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", topology.name);
    let _ = writeln!(s, "  rankdir=TB;");
    for (k, set) in decomp.sets.iter().enumerate() {
        let _ = writeln!(s, "  subgraph cluster_h{} {{", k + 1);
        let _ = writeln!(s, "    label=\"H{}\";", k + 1);
        let nodes: Vec<String> = set.iter().map(|j| j.to_string()).collect();
        let _ = writeln!(s, "    {};", nodes.join("; "));
        let _ = writeln!(s, "  }}");
    }
    let level = decomp.level_of();
    let mut edges = BTreeSet::new();
    for l in 0..adj.layers() {
        for (i, j) in adj.nonzeros(l, 1) {
            let (child, parent) = if level[i + 1] >= level[j + 1] { (i + 1, j + 1) } else { (j + 1, i + 1) };
            edges.insert((l, parent, child));
        }
    }
    for (l, parent, child) in edges {
        let _ = writeln!(s, "  {parent} -> {child} [layer={}];", l + 1);
    }
    s.push_str("}\n");
    s
}
