//! Graph generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shgnn::hetgraph::{GraphBuilder, HeteroGraph, NodeId, Schema};
use shgnn::MetaPath;

/// Three node types `X`, `Y`, `Z` with all three edge types between them,
/// at most `max_nodes` nodes, each possible edge kept with probability `p`.
pub fn random_tri_graph(seed: u64, max_nodes: usize, p: f64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(&["X", "Y", "Z"], &[("X", "Y"), ("Y", "Z"), ("X", "Z")], "X", 2).unwrap();
    let mut b = GraphBuilder::new(schema).unwrap();
    let per = max_nodes / 3;
    let counts = [rng.random_range(1..=per), rng.random_range(1..=per), rng.random_range(1..=per)];
    let names: Vec<Vec<String>> = ["x", "y", "z"]
        .iter()
        .zip(counts)
        .map(|(pre, n)| (0..n).map(|i| format!("{pre}{i:02}")).collect())
        .collect();
    for (t, list) in ["X", "Y", "Z"].iter().zip(&names) {
        for n in list {
            b.add_node(t, n).unwrap();
        }
    }
    for (ta, tb, ia, ib) in [("X", "Y", 0, 1), ("Y", "Z", 1, 2), ("X", "Z", 0, 2)] {
        for u in &names[ia] {
            for v in &names[ib] {
                if rng.random_bool(p) {
                    b.add_edge(ta, u, tb, v).unwrap();
                }
            }
        }
    }
    b.build().unwrap().0
}

/// Meta-paths exercised on tri-type graphs: every 2- and 3-hop sequence
/// that starts and ends at the same type.
pub fn tri_metapaths(g: &HeteroGraph) -> Vec<MetaPath> {
    [
        "X-Y-X", "X-Z-X", "Y-X-Y", "Y-Z-Y", "Z-X-Z", "Z-Y-Z", "X-Y-Z-X", "Y-Z-X-Y", "X-Y-X-Y", "X-Y-Z", "Z-X-Y",
    ]
    .iter()
    .map(|s| MetaPath::parse(g.schema(), s).unwrap())
    .collect()
}

/// Edge set as unordered id pairs, read straight from the edge lists.
pub fn edge_set(g: &HeteroGraph) -> BTreeSet<(NodeId, NodeId)> {
    let mut set = BTreeSet::new();
    for e in 0..g.schema().edge_types.len() {
        for &(u, v) in g.edges(e) {
            set.insert((u.min(v), u.max(v)));
        }
    }
    set
}

/// Every node tuple whose types follow `p` and whose consecutive members
/// are joined by an edge, found by trying all tuples.
pub fn brute_force_instances(g: &HeteroGraph, p: &MetaPath) -> Vec<Vec<NodeId>> {
    let edges = edge_set(g);
    let mut out: Vec<Vec<NodeId>> = vec![vec![]];
    for (i, &t) in p.types().iter().enumerate() {
        let mut next = Vec::new();
        for prefix in &out {
            for v in g.nodes_of_type(t) {
                if i > 0 {
                    let u = prefix[i - 1];
                    if !edges.contains(&(u.min(v), u.max(v))) {
                        continue;
                    }
                }
                let mut seq = prefix.clone();
                seq.push(v);
                next.push(seq);
            }
        }
        out = next;
    }
    out
}

/// Dense 0/1 biadjacency between two types, by local index.
pub fn dense_biadjacency(g: &HeteroGraph, a: usize, b: usize) -> Vec<Vec<u64>> {
    let ra = g.type_range(a);
    let rb = g.type_range(b);
    let edges = edge_set(g);
    ra.clone()
        .map(|u| rb.clone().map(|v| u64::from(edges.contains(&(u.min(v), u.max(v))))).collect())
        .collect()
}

pub fn dense_matmul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let m = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..m)
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Product of the dense biadjacency matrices along `p`.
pub fn dense_path_counts(g: &HeteroGraph, p: &MetaPath) -> Vec<Vec<u64>> {
    let t = p.types();
    let mut acc = dense_biadjacency(g, t[0], t[1]);
    for w in t[1..].windows(2) {
        acc = dense_matmul(&acc, &dense_biadjacency(g, w[0], w[1]));
    }
    acc
}

/// Node-position counts over brute-force instances of every path, and
/// the neighbor sums over the raw edge list.
pub fn brute_force_coverage(g: &HeteroGraph, paths: &[MetaPath]) -> (Vec<u64>, Vec<u64>) {
    let mut c = vec![0u64; g.num_nodes()];
    for p in paths {
        for inst in brute_force_instances(g, p) {
            for v in inst {
                c[v] += 1;
            }
        }
    }
    let mut c_plus = vec![0u64; g.num_nodes()];
    for (u, v) in edge_set(g) {
        c_plus[u] += c[v];
        if u != v {
            c_plus[v] += c[u];
        }
    }
    (c, c_plus)
}

/// The shared-actor structure: `mi` reaches `m1` and `m2` through `a1`
/// and `m3` through `a2`. With `isolated`, `m2` goes through its own copy
/// `a1b` of `a1` instead, so the three instances share no actor.
pub fn fig1b(isolated: bool) -> HeteroGraph {
    let schema = Schema::new(&["M", "A"], &[("M", "A")], "M", 0).unwrap();
    let mut b = GraphBuilder::new(schema).unwrap();
    for m in ["m1", "m2", "m3", "mi"] {
        b.add_node("M", m).unwrap();
    }
    for a in ["a1", "a1b", "a2"] {
        b.add_node("A", a).unwrap();
    }
    let m2_actor = if isolated { "a1b" } else { "a1" };
    for (m, a) in [("m1", "a1"), ("mi", "a1"), ("m2", m2_actor), ("m3", "a2"), ("mi", "a2")] {
        b.add_edge("M", m, "A", a).unwrap();
    }
    if isolated {
        b.add_edge("M", "mi", "A", "a1b").unwrap();
    }
    b.build().unwrap().0
}

fn pair_counts(pred: &[usize], truth: &[usize]) -> (f64, f64, f64, f64) {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    (a, b, c, d)
}

/// Adjusted Rand index from the four pair categories.
pub fn ari_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let (a, b, c, d) = pair_counts(pred, truth);
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

/// NMI from empirical probabilities, normalized by the mean entropy.
pub fn nmi_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in pred.iter().zip(truth) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *px.entry(x).or_default() += 1.0 / n;
        *py.entry(y).or_default() += 1.0 / n;
    }
    let mi: f64 = joint.iter().map(|(&(x, y), &p)| p * (p / (px[&x] * py[&y])).ln()).sum();
    let h = |m: &BTreeMap<usize, f64>| -> f64 { m.values().map(|p| -p * p.ln()).sum() };
    let denom = (h(&px) + h(&py)) / 2.0;
    if denom.abs() < 1e-15 {
        return 1.0;
    }
    mi / denom
}

/// Mean of per-class F1 from precision and recall, over classes seen in
/// either sequence.
pub fn macro_f1_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = pred.iter().chain(truth).copied().collect();
    let f1s: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let actual = truth.iter().filter(|&&t| t == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect();
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// F1 of the counts pooled over classes.
pub fn micro_f1_oracle(pred: &[usize], truth: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = pred.iter().chain(truth).copied().collect();
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for &c in &classes {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// A random pair of labelings of equal length.
pub fn random_labelings(seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..60);
    let (kp, kt) = (rng.random_range(1..6), rng.random_range(1..6));
    let pred = (0..n).map(|_| rng.random_range(0..kp)).collect();
    let truth = (0..n).map(|_| rng.random_range(0..kt)).collect();
    (pred, truth)
}
