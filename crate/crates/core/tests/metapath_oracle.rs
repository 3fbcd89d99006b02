mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use shgnn::hetgraph::NodeId;
use shgnn::metapath::{
    build_tree, build_tree_capped, enumerate_instances, metapath_neighbors, neighbor_counts_via_matrices, CountMatrix,
};
use shgnn::MetaPath;

fn instance_counts(g: &shgnn::HeteroGraph, p: &MetaPath) -> BTreeMap<(NodeId, NodeId), u64> {
    let mut counts = BTreeMap::new();
    for target in g.nodes_of_type(p.end_type()) {
        for inst in enumerate_instances(g, p, target).unwrap() {
            *counts.entry((inst.start(), inst.end())).or_insert(0) += 1;
        }
    }
    counts
}

#[test]
fn fifty_random_graphs_match_the_matrix_product() {
    for seed in 0..50 {
        let g = random_tri_graph(seed, 50, 0.3);
        for p in tri_metapaths(&g) {
            let counts = instance_counts(&g, &p);
            let m = neighbor_counts_via_matrices(&g, &p);
            let dense = dense_path_counts(&g, &p);
            let (s0, e0) = (g.type_range(p.start_type()).start, g.type_range(p.end_type()).start);
            for (i, row) in dense.iter().enumerate() {
                for (j, &want) in row.iter().enumerate() {
                    let got = counts.get(&(s0 + i, e0 + j)).copied().unwrap_or(0);
                    assert_eq!(got, want, "seed {seed} {p} ({i},{j})");
                    assert_eq!(m.get(i, j), want, "seed {seed} {p} sparse ({i},{j})");
                }
            }
            for target in g.nodes_of_type(p.end_type()) {
                let tree = build_tree(&g, &p, target).unwrap();
                let col: u64 = dense.iter().map(|r| r[target - e0]).sum();
                assert_eq!(tree.leaf_count() as u64, col, "seed {seed} {p} leaves of {target}");
            }
        }
    }
}

#[test]
fn dfs_matches_brute_force_tuples() {
    for seed in 0..10 {
        let g = random_tri_graph(seed, 24, 0.4);
        for p in tri_metapaths(&g) {
            let mut dfs: Vec<Vec<NodeId>> = g
                .nodes_of_type(p.end_type())
                .flat_map(|t| enumerate_instances(&g, &p, t).unwrap())
                .map(|i| i.nodes)
                .collect();
            let mut brute = brute_force_instances(&g, &p);
            dfs.sort();
            brute.sort();
            assert_eq!(dfs, brute, "seed {seed} {p}");
        }
    }
}

#[test]
fn shared_actor_structure() {
    let g = fig1b(false);
    let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
    let mi = g.node_id("mi").unwrap();
    let a1 = g.node_id("a1").unwrap();
    let tree = build_tree(&g, &p, mi).unwrap();
    // root, two actors, five movies (mi appears under both actors)
    assert_eq!(tree.nodes().len(), 8);
    assert_eq!(tree.leaf_count(), 5);
    let actors = tree.level(1);
    assert_eq!(actors.len(), 2);
    let under_a1 = actors.iter().find(|&&i| tree.node(i).node == a1).unwrap();
    let mut kids: Vec<&str> = tree
        .node(*under_a1)
        .children
        .iter()
        .map(|&k| g.node_name(tree.node(k).node))
        .collect();
    kids.sort();
    assert_eq!(kids, ["m1", "m2", "mi"]);

    let iso = fig1b(true);
    let tree = build_tree(&iso, &p, iso.node_id("mi").unwrap()).unwrap();
    assert_eq!(tree.level(1).len(), 3);
    assert_eq!(tree.leaf_count(), 6);
}

#[test]
fn movie_sharing_two_actors_is_listed_twice() {
    let g = fig1b(false);
    let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
    let nbrs = metapath_neighbors(&g, &p, g.node_id("mi").unwrap()).unwrap();
    let mut names: Vec<&str> = nbrs.iter().map(|&v| g.node_name(v)).collect();
    names.sort();
    assert_eq!(names, ["m1", "m2", "m3", "mi", "mi"]);
}

#[test]
fn edgeless_graph_has_no_instances() {
    let g = random_tri_graph(3, 30, 0.0);
    for p in tri_metapaths(&g) {
        let m = neighbor_counts_via_matrices(&g, &p);
        assert_eq!(m.total(), 0);
        for t in g.nodes_of_type(p.end_type()) {
            assert!(enumerate_instances(&g, &p, t).unwrap().is_empty());
            assert!(build_tree(&g, &p, t).unwrap().is_bare());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_is_a_trie_of_the_instances(seed in 0u64..10_000, p_edge in 0.1f64..0.6) {
        let g = random_tri_graph(seed, 30, p_edge);
        for p in tri_metapaths(&g) {
            for t in g.nodes_of_type(p.end_type()) {
                let tree = build_tree(&g, &p, t).unwrap();
                let inst = enumerate_instances(&g, &p, t).unwrap();
                prop_assert_eq!(tree.instances(), inst.clone());
                prop_assert_eq!(tree.leaf_count(), inst.len());
                for (i, node) in tree.nodes().iter().enumerate() {
                    // siblings are distinct nodes in ascending order
                    let kids: Vec<NodeId> = node.children.iter().map(|&k| tree.node(k).node).collect();
                    prop_assert!(kids.windows(2).all(|w| w[0] < w[1]));
                    // every node lies on some complete instance
                    if node.depth < tree.depth() {
                        prop_assert!(!node.children.is_empty() || (i == 0 && tree.is_bare()));
                    }
                    // node types follow the path backward
                    let want = p.types()[p.hops() - node.depth];
                    prop_assert_eq!(g.node_type(node.node), want);
                }
                // reversed root-to-leaf paths are edges of the graph
                let edges = edge_set(&g);
                for i in inst {
                    for w in i.nodes.windows(2) {
                        prop_assert!(edges.contains(&(w[0].min(w[1]), w[0].max(w[1]))));
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_paths_give_symmetric_counts(seed in 0u64..10_000) {
        let g = random_tri_graph(seed, 36, 0.35);
        for p in tri_metapaths(&g).into_iter().filter(MetaPath::is_symmetric) {
            let m = neighbor_counts_via_matrices(&g, &p);
            prop_assert_eq!(m.transpose(), m);
        }
    }

    #[test]
    fn neighbor_lists_match_a_scan(seed in 0u64..10_000) {
        let g = random_tri_graph(seed, 36, 0.35);
        let edges = edge_set(&g);
        for v in 0..g.num_nodes() {
            for t in 0..g.num_types() {
                let scan: Vec<NodeId> = g
                    .nodes_of_type(t)
                    .filter(|&u| edges.contains(&(u.min(v), u.max(v))))
                    .collect();
                prop_assert_eq!(g.neighbors_of_type(v, t), &scan[..]);
                for &u in &scan {
                    prop_assert!(g.neighbors_of_type(u, g.node_type(v)).contains(&v));
                }
            }
        }
    }

    #[test]
    fn capped_tree_keeps_a_prefix(seed in 0u64..10_000, cap in 1usize..6) {
        let g = random_tri_graph(seed, 30, 0.5);
        let p = MetaPath::parse(g.schema(), "X-Y-Z-X").unwrap();
        for t in g.nodes_of_type(p.end_type()) {
            let full = enumerate_instances(&g, &p, t).unwrap();
            let tree = build_tree_capped(&g, &p, t, Some(cap)).unwrap();
            let kept = full.len().min(cap);
            prop_assert_eq!(tree.instances(), full[..kept].to_vec());
        }
    }

    #[test]
    fn biadjacency_product_matches_dense(seed in 0u64..10_000) {
        let g = random_tri_graph(seed, 30, 0.4);
        let a = CountMatrix::biadjacency(&g, 0, 1);
        let b = CountMatrix::biadjacency(&g, 1, 2);
        let dense = dense_matmul(&dense_biadjacency(&g, 0, 1), &dense_biadjacency(&g, 1, 2));
        let m = a.matmul(&b).unwrap();
        for (i, row) in dense.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                prop_assert_eq!(m.get(i, j), x);
            }
        }
        prop_assert_eq!(b.matmul(&b).is_ok(), b.shape().0 == b.shape().1);
    }
}
