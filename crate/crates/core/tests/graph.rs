use std::collections::{BTreeMap, BTreeSet};

use hdgcn::graph::{
    build_conventional, build_hd, decompose, normalize, to_dot, to_parameters, Adjacency, GraphKind,
    NormScope, Orientation,
};
use hdgcn::topology::{ComRole, SkeletonTopology};
use hdgcn_tensor::{ParamStore, Session};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALG1: [(usize, usize); 24] = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21), (10, 9),
    (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1), (18, 17), (19, 18),
    (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
];

fn path3() -> SkeletonTopology {
    SkeletonTopology::new("path", 3, vec![(1, 2), (3, 2)], BTreeMap::new()).unwrap()
}

/// Random tree on `v` joints, joint `i + 1` attached to a random earlier one.
fn random_tree(rng: &mut ChaCha8Rng, v: usize) -> SkeletonTopology {
    let edges = (2..=v).map(|j| (j, rng.gen_range(1..j))).collect();
    SkeletonTopology::new("rand", v, edges, BTreeMap::new()).unwrap()
}

fn set_of(adj: &Adjacency, subset: usize) -> BTreeSet<(usize, usize)> {
    (0..adj.layers())
        .flat_map(|l| adj.nonzeros(l, subset))
        .map(|(i, j)| (i + 1, j + 1))
        .collect()
}

#[test]
fn ntu_decomposition_matches_published_sets() {
    let d = decompose(&SkeletonTopology::ntu25(), 2).unwrap();
    let expect: Vec<Vec<usize>> = vec![
        vec![2],
        vec![1, 21],
        vec![13, 17, 3, 5, 9],
        vec![14, 18, 4, 6, 10],
        vec![15, 19, 7, 11],
        vec![16, 20, 8, 12],
        vec![22, 23, 24, 25],
    ];
    let as_sets = |v: &[Vec<usize>]| v.iter().map(|s| s.iter().copied().collect::<BTreeSet<_>>()).collect::<Vec<_>>();
    assert_eq!(as_sets(&d.sets), as_sets(&expect));
    assert_eq!((d.n_h(), d.n_l()), (7, 6));
}

#[test]
fn path_decomposition() {
    let d = decompose(&path3(), 2).unwrap();
    assert_eq!(d.sets, vec![vec![2], vec![1, 3]]);
}

#[test]
fn decomposition_partitions_and_edges_join_adjacent_levels() {
    let t = SkeletonTopology::ntu25();
    for role in ComRole::ALL {
        let d = decompose(&t, t.com_joint(role).unwrap()).unwrap();
        assert_eq!(d.sets[0], vec![d.com]);
        let all: BTreeSet<usize> = d.sets.iter().flatten().copied().collect();
        assert_eq!(all.len(), 25);
        assert_eq!(d.num_joints(), 25);
        let level = d.level_of();
        for &(a, b) in &t.edges {
            assert!(level[a].abs_diff(level[b]) <= 1, "{role:?} edge ({a},{b})");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let t = random_tree(&mut rng, 9);
        let d = decompose(&t, rng.gen_range(1..=9)).unwrap();
        let level = d.level_of();
        for &(a, b) in &t.edges {
            assert_eq!(level[a].abs_diff(level[b]), 1);
        }
    }
}

#[test]
fn conventional_matches_edge_list() {
    let a = build_conventional(&SkeletonTopology::ntu25(), Orientation::Assignment);
    let alg1: BTreeSet<_> = ALG1.iter().copied().collect();
    let rev: BTreeSet<_> = ALG1.iter().map(|&(c, p)| (p, c)).collect();
    assert_eq!(set_of(&a, 1), alg1);
    assert_eq!(set_of(&a, 2), rev);
    assert_eq!(set_of(&a, 0), (1..=25).map(|i| (i, i)).collect());

    let two = SkeletonTopology::new("two", 2, vec![(1, 2)], BTreeMap::new()).unwrap();
    let a = build_conventional(&two, Orientation::Assignment);
    assert_eq!(a.nonzeros(0, 1), vec![(0, 1)]);
    assert_eq!(a.nonzeros(0, 2), vec![(1, 0)]);
}

#[test]
fn flow_orientation_swaps_subsets() {
    let t = SkeletonTopology::ntu25();
    let a = build_conventional(&t, Orientation::Assignment);
    let b = build_conventional(&t, Orientation::Flow);
    assert_eq!(set_of(&a, 1), set_of(&b, 2));
    assert_eq!(set_of(&a, 2), set_of(&b, 1));
}

#[test]
fn fc_layer_counts() {
    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 2).unwrap();
    let a = build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap();
    assert_eq!(a.layers(), 6);
    // Layer between H_3 and H_4.
    assert_eq!(a.nonzeros(2, 1).len(), 25);
    assert_eq!(a.nonzeros(2, 2).len(), 25);
    assert_eq!(a.nonzeros(2, 0).len(), 10);
    for l in 0..6 {
        let n = d.sets[l].len() * d.sets[l + 1].len();
        assert_eq!(a.nonzeros(l, 1).len(), n);
        for (i, j) in a.nonzeros(l, 0) {
            assert_eq!(i, j);
        }
    }
}

#[test]
fn fc_path_layer() {
    let t = path3();
    let d = decompose(&t, 2).unwrap();
    let a = build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap();
    assert_eq!(a.nonzeros(0, 1), vec![(0, 1), (2, 1)]);
    assert_eq!(a.nonzeros(0, 2), vec![(1, 0), (1, 2)]);
}

#[test]
fn pc_union_equals_edge_list() {
    let t = SkeletonTopology::ntu25();
    let alg1: BTreeSet<_> = ALG1.iter().copied().collect();
    let undirected = |s: &BTreeSet<(usize, usize)>| s.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect::<BTreeSet<_>>();
    for role in ComRole::ALL {
        let d = decompose(&t, t.com_joint(role).unwrap()).unwrap();
        let a = build_hd(&t, &d, GraphKind::HdPc, Orientation::Assignment).unwrap();
        let cp = set_of(&a, 1);
        assert_eq!(cp.len(), 24);
        assert_eq!(undirected(&cp), undirected(&alg1));
    }
    // Rooted at the chest, every listed pair already points child -> parent.
    let d = decompose(&t, 21).unwrap();
    let a = build_hd(&t, &d, GraphKind::HdPc, Orientation::Assignment).unwrap();
    assert_eq!(set_of(&a, 1), alg1);
}

#[test]
fn pc_union_equals_tree_edges_on_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let v = rng.gen_range(2..11);
        let t = random_tree(&mut rng, v);
        let com = rng.gen_range(1..=v);
        let d = decompose(&t, com).unwrap();
        let a = build_hd(&t, &d, GraphKind::HdPc, Orientation::Assignment).unwrap();
        let parents = hdgcn::topology::parent_map(&t, com).unwrap();
        let expect: BTreeSet<_> = (1..=v).filter(|&j| j != com).map(|j| (j, parents[&j])).collect();
        assert_eq!(set_of(&a, 1), expect);
    }
}

#[test]
fn subsets_stay_inside_their_layer() {
    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 2).unwrap();
    for kind in [GraphKind::HdPc, GraphKind::HdFc] {
        let a = build_hd(&t, &d, kind, Orientation::Assignment).unwrap();
        for l in 0..d.n_l() {
            let inside: BTreeSet<usize> = d.layer_joints(l).into_iter().collect();
            for s in 0..3 {
                for (i, j) in a.nonzeros(l, s) {
                    assert!(inside.contains(&(i + 1)) && inside.contains(&(j + 1)));
                }
            }
            let diag: BTreeSet<usize> = a.nonzeros(l, 0).into_iter().map(|(i, _)| i + 1).collect();
            assert_eq!(diag, inside);
        }
        assert!(a.tensor.data().iter().all(|&x| x == 0.0 || x == 1.0));
    }
}

/// `D^{-1/2} A D^{-1/2}` by explicit dense products.
fn dense_oracle(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let v = a.len();
    let mut dinv = vec![vec![0.0; v]; v];
    for n in 0..v {
        let deg = (0..v).filter(|&i| a[i][n] != 0.0).count().max(1) as f64;
        dinv[n][n] = 1.0 / deg.sqrt();
    }
    let mul = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..v).map(|i| (0..v).map(|j| (0..v).map(|k| x[i][k] * y[k][j]).sum()).collect()).collect()
    };
    mul(&mul(&dinv, a), &dinv)
}

#[test]
fn normalization_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let v = rng.gen_range(2..=10);
        let t = random_tree(&mut rng, v);
        let d = decompose(&t, rng.gen_range(1..=v)).unwrap();
        let kind = [GraphKind::HdPc, GraphKind::HdFc][rng.gen_range(0..2)];
        let raw = build_hd(&t, &d, kind, Orientation::Assignment).unwrap();
        let norm = normalize(&raw, NormScope::PerSubset);
        for l in 0..raw.layers() {
            for s in 0..3 {
                let dense: Vec<Vec<f64>> = (0..v).map(|i| (0..v).map(|j| raw.get(l, s, i, j)).collect()).collect();
                let oracle = dense_oracle(&dense);
                for i in 0..v {
                    for j in 0..v {
                        assert!((norm.get(l, s, i, j) - oracle[i][j]).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn normalization_examples() {
    let two = SkeletonTopology::new("two", 2, vec![(1, 2)], BTreeMap::new()).unwrap();
    let a = normalize(&build_conventional(&two, Orientation::Assignment), NormScope::PerSubset);
    assert_eq!(a.get(0, 0, 0, 0), 1.0);
    assert_eq!(a.get(0, 0, 1, 1), 1.0);
    assert_eq!(a.get(0, 1, 0, 1), 1.0);
    assert!(a.normalized);

    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 2).unwrap();
    let fc = build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap();
    for scope in [NormScope::PerSubset, NormScope::Pooled] {
        let n = normalize(&fc, scope);
        assert!(n.tensor.data().iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    // Pooled degree of a column counts all three subsets.
    let pooled = normalize(&fc, NormScope::Pooled);
    let j = 21 - 1;
    let deg = |n: usize| (0..3).map(|s| (0..25).filter(|&i| fc.get(0, s, i, n) != 0.0).count()).sum::<usize>() as f64;
    let expect = 1.0 / (deg(j).sqrt() * deg(j).sqrt());
    assert!((pooled.get(0, 0, j, j) - expect).abs() < 1e-15);
}

#[test]
fn parameters_start_at_adjacency_and_take_gradients() {
    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 2).unwrap();
    let adj = normalize(&build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap(), NormScope::PerSubset);
    let mut store = ParamStore::<f64>::new();
    let ids = to_parameters(&adj, &mut store, "adj").unwrap();
    assert_eq!(ids.len(), 6);
    for (l, row) in ids.iter().enumerate() {
        for (s, &id) in row.iter().enumerate() {
            assert_eq!(store.get(id).value, adj.matrix(l, s));
            assert!(store.get(id).trainable);
        }
    }
    // d/dA of ||A||^2 = 2A on every element.
    let id = ids[2][1];
    {
        let mut s = Session::new(&mut store, true);
        let a = s.param(id);
        let g = a.square().sum_all().backward().unwrap();
        s.accumulate(&g);
    }
    let p = store.get(id);
    for (g, v) in p.grad.data().iter().zip(p.value.data()) {
        assert_eq!(*g, 2.0 * v);
    }
    let report = hdgcn_tensor::gradcheck::check_store_gradients(
        &mut store,
        |s| Ok(s.param(id).square().sum_all()),
        Default::default(),
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-6);
}

#[test]
fn exports() {
    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 2).unwrap();
    let a = build_hd(&t, &d, GraphKind::HdPc, Orientation::Assignment).unwrap();
    let dot = to_dot(&t, &d, &a);
    assert!(dot.contains("label=\"H7\"") && dot.contains("22; 23; 24; 25;"));
    assert!(dot.contains("8 -> 23"));
    let back: hdgcn::graph::HierarchyDecomposition = serde_json::from_str(&d.to_json()).unwrap();
    assert_eq!(back, d);
}

fn permutation(v: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((1..=v).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn decompose_commutes_with_relabel(perm in permutation(25), role in 0usize..3) {
        let t = SkeletonTopology::ntu25();
        let com = t.com_joint(ComRole::ALL[role]).unwrap();
        let d = decompose(&t, com).unwrap();
        let r = decompose(&t.relabel(&perm).unwrap(), perm[com - 1]).unwrap();
        prop_assert_eq!(d.n_h(), r.n_h());
        for (a, b) in d.sets.iter().zip(&r.sets) {
            let mapped: BTreeSet<usize> = a.iter().map(|&j| perm[j - 1]).collect();
            prop_assert_eq!(mapped, b.iter().copied().collect::<BTreeSet<_>>());
        }
    }

    #[test]
    fn fc_pattern_invariant_under_within_set_swap(level in 1usize..7, x in 0usize..5, y in 0usize..5) {
        let t = SkeletonTopology::ntu25();
        let d = decompose(&t, 2).unwrap();
        let set = &d.sets[level];
        let (a, b) = (set[x % set.len()] - 1, set[y % set.len()] - 1);
        let adj = build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap();
        let swap = |i: usize| if i == a { b } else if i == b { a } else { i };
        for l in 0..adj.layers() {
            for s in 0..3 {
                for i in 0..25 {
                    for j in 0..25 {
                        prop_assert_eq!(adj.get(l, s, i, j), adj.get(l, s, swap(i), swap(j)));
                    }
                }
            }
        }
    }
}

#[test]
fn tensor_shape_is_layers_subsets_joints() {
    let t = SkeletonTopology::ntu25();
    let d = decompose(&t, 1).unwrap();
    let a = build_hd(&t, &d, GraphKind::HdFc, Orientation::Assignment).unwrap();
    assert_eq!(a.tensor.shape(), &[d.n_l(), 3, 25, 25]);
    let c = build_conventional(&t, Orientation::Assignment);
    assert_eq!(c.tensor.shape(), &[1, 3, 25, 25]);
}
