//! Meta-paths, their instances, and the per-target aggregation trie.
//!
//! Instances are ordered node sequences and may revisit nodes, so a
//! symmetric meta-path such as `M-A-M` yields `m-a-m` for every actor `a`
//! of `m`. That is how a node ends up among its own meta-path based
//! neighbors, and it keeps instance counts equal to entries of the product
//! of the biadjacency matrices along the path.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, NodeId, Schema, TypeId};

/// A sequence of node types joined by declared edge types.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetaPath {
    types: Vec<TypeId>,
    names: Vec<String>,
}

impl MetaPath {
    pub fn new<S: AsRef<str>>(schema: &Schema, names: &[S]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::MetaPath(format!(
                "a meta-path needs at least two types, got {}",
                names.len()
            )));
        }
        let mut types = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            types.push(
                schema
                    .type_id(n)
                    .ok_or_else(|| Error::MetaPath(format!("unknown node type {n}")))?,
            );
        }
        for w in types.windows(2) {
            if schema.edge_type_between(w[0], w[1]).is_none() {
                return Err(Error::MetaPath(format!(
                    "no edge type between {} and {}",
                    schema.node_types[w[0]], schema.node_types[w[1]]
                )));
            }
        }
        Ok(MetaPath {
            types,
            names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        })
    }

    /// Parses the dashed form, e.g. `"M-A-M"`.
    pub fn parse(schema: &Schema, spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split('-').map(str::trim).collect();
        Self::new(schema, &parts)
    }

    pub fn types(&self) -> &[TypeId] {
        &self.types
    }

    pub fn type_names(&self) -> &[String] {
        &self.names
    }

    /// Number of node positions in an instance.
    pub fn num_nodes(&self) -> usize {
        self.types.len()
    }

    /// Number of edges in an instance; also the depth of aggregation trees.
    pub fn hops(&self) -> usize {
        self.types.len() - 1
    }

    pub fn start_type(&self) -> TypeId {
        self.types[0]
    }

    pub fn end_type(&self) -> TypeId {
        *self.types.last().unwrap()
    }

    pub fn is_symmetric(&self) -> bool {
        self.types.iter().eq(self.types.iter().rev())
    }

    fn check_target(&self, g: &HeteroGraph, target: NodeId) -> Result<()> {
        if target >= g.num_nodes() {
            return Err(Error::Contract(format!("node {target} does not exist")));
        }
        if g.node_type(target) != self.end_type() {
            return Err(Error::Contract(format!(
                "target {} has type {}, meta-path {self} ends in {}",
                g.node_name(target),
                g.type_name(g.node_type(target)),
                g.type_name(self.end_type())
            )));
        }
        Ok(())
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names.join("-"))
    }
}

/// One concrete node sequence following a meta-path, start first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MetaPathInstance {
    pub nodes: Vec<NodeId>,
}

impl MetaPathInstance {
    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }
}

/// All instances of `p` ending at `target`.
///
/// Expansion runs backward from the target, visiting neighbors in id order,
/// so the output is sorted by the reversed node sequence.
pub fn enumerate_instances(g: &HeteroGraph, p: &MetaPath, target: NodeId) -> Result<Vec<MetaPathInstance>> {
    enumerate_instances_capped(g, p, target, None)
}

/// [`enumerate_instances`] stopping after `cap` instances.
pub fn enumerate_instances_capped(
    g: &HeteroGraph,
    p: &MetaPath,
    target: NodeId,
    cap: Option<usize>,
) -> Result<Vec<MetaPathInstance>> {
    p.check_target(g, target)?;
    let mut out = Vec::new();
    let mut reversed = vec![target];
    walk_back(g, p.types(), &mut reversed, cap.unwrap_or(usize::MAX), &mut out);
    Ok(out)
}

fn walk_back(
    g: &HeteroGraph,
    types: &[TypeId],
    reversed: &mut Vec<NodeId>,
    cap: usize,
    out: &mut Vec<MetaPathInstance>,
) {
    if out.len() >= cap {
        return;
    }
    let depth = reversed.len() - 1;
    if depth == types.len() - 1 {
        let mut nodes = reversed.clone();
        nodes.reverse();
        out.push(MetaPathInstance { nodes });
        return;
    }
    let want = types[types.len() - 2 - depth];
    let last = *reversed.last().unwrap();
    for &nb in g.neighbors_of_type(last, want) {
        reversed.push(nb);
        walk_back(g, types, reversed, cap, out);
        reversed.pop();
        if out.len() >= cap {
            return;
        }
    }
}

/// Meta-path based neighbors of `v`: the start node of every instance ending
/// at `v`, one entry per instance.
pub fn metapath_neighbors(g: &HeteroGraph, p: &MetaPath, v: NodeId) -> Result<Vec<NodeId>> {
    Ok(enumerate_instances(g, p, v)?.iter().map(MetaPathInstance::start).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub node: NodeId,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Prefix-merged tree of every instance of a meta-path that ends at a target.
///
/// The root (index 0) is the target. Depth `k` holds the node at position
/// `hops - k` of the instance, so leaves sit at depth `hops` and are the
/// instance start nodes. Instances sharing a suffix toward the target share
/// tree nodes; siblings are distinct graph nodes in ascending id order.
#[derive(Clone, Debug)]
pub struct AggregationTree {
    metapath: MetaPath,
    nodes: Vec<TreeNode>,
    leaves: usize,
}

impl AggregationTree {
    pub fn metapath(&self) -> &MetaPath {
        &self.metapath
    }

    pub fn target(&self) -> NodeId {
        self.nodes[0].node
    }

    pub fn depth(&self) -> usize {
        self.metapath.hops()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    /// True when no instance ends at the target.
    pub fn is_bare(&self) -> bool {
        self.nodes[0].children.is_empty()
    }

    /// Tree-node indices at `depth`, in breadth-first order.
    pub fn level(&self, depth: usize) -> Vec<usize> {
        let mut frontier = vec![0];
        for _ in 0..depth {
            frontier = frontier.iter().flat_map(|&i| self.nodes[i].children.iter().copied()).collect();
        }
        frontier
    }

    /// Reconstructs the instances, start first, in leaf order.
    pub fn instances(&self) -> Vec<MetaPathInstance> {
        if self.is_bare() {
            return Vec::new();
        }
        self.level(self.depth())
            .into_iter()
            .map(|mut i| {
                let mut nodes = vec![self.nodes[i].node];
                while let Some(p) = self.nodes[i].parent {
                    nodes.push(self.nodes[p].node);
                    i = p;
                }
                MetaPathInstance { nodes }
            })
            .collect()
    }
}

/// Builds the aggregation tree of `p` rooted at `target`.
pub fn build_tree(g: &HeteroGraph, p: &MetaPath, target: NodeId) -> Result<AggregationTree> {
    build_tree_capped(g, p, target, None)
}

/// [`build_tree`] keeping only the first `cap` instances (in enumeration order).
pub fn build_tree_capped(g: &HeteroGraph, p: &MetaPath, target: NodeId, cap: Option<usize>) -> Result<AggregationTree> {
    p.check_target(g, target)?;
    let mut nodes = vec![TreeNode {
        node: target,
        depth: 0,
        parent: None,
        children: Vec::new(),
    }];
    let mut budget = cap.unwrap_or(usize::MAX);
    let leaves = grow(g, p.types(), &mut nodes, 0, &mut budget);
    Ok(AggregationTree {
        metapath: p.clone(),
        nodes,
        leaves,
    })
}

fn grow(g: &HeteroGraph, types: &[TypeId], nodes: &mut Vec<TreeNode>, at: usize, budget: &mut usize) -> usize {
    let hops = types.len() - 1;
    let depth = nodes[at].depth;
    if depth == hops {
        *budget -= 1;
        return 1;
    }
    let want = types[hops - depth - 1];
    let mut leaves = 0;
    for &nb in g.neighbors_of_type(nodes[at].node, want) {
        if *budget == 0 {
            break;
        }
        let mark = nodes.len();
        nodes.push(TreeNode {
            node: nb,
            depth: depth + 1,
            parent: Some(at),
            children: Vec::new(),
        });
        let added = grow(g, types, nodes, mark, budget);
        if added == 0 {
            // dead end: no complete instance runs through this branch
            nodes.truncate(mark);
        } else {
            nodes[at].children.push(mark);
            leaves += added;
        }
    }
    leaves
}

/// Sparse non-negative integer matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CountMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    fn from_rows(cols: usize, rows: Vec<BTreeMap<usize, u64>>) -> Self {
        let mut m = CountMatrix::zeros(rows.len(), cols);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row {
                if v != 0 {
                    m.col_idx.push(j);
                    m.values.push(v);
                }
            }
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        m
    }

    /// 0/1 matrix between the nodes of `from` and `to` (local indices),
    /// assembled from the edge list of the connecting edge type.
    pub fn biadjacency(g: &HeteroGraph, from: TypeId, to: TypeId) -> Self {
        let rf = g.type_range(from);
        let rt = g.type_range(to);
        let mut rows = vec![BTreeMap::new(); rf.len()];
        if let Some(e) = g.schema().edge_type_between(from, to) {
            for &(u, v) in g.edges(e) {
                for (a, b) in [(u, v), (v, u)] {
                    if g.node_type(a) == from && g.node_type(b) == to {
                        rows[a - rf.start].insert(b - rt.start, 1);
                    }
                }
            }
        }
        CountMatrix::from_rows(rt.len(), rows)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0,
        }
    }

    /// Non-zero `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matmul(&self, other: &CountMatrix) -> Result<CountMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "count matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let rows = (0..self.rows)
            .map(|i| {
                let mut acc = BTreeMap::new();
                for (k, a) in self.row(i) {
                    for (j, b) in other.row(k) {
                        *acc.entry(j).or_insert(0) += a * b;
                    }
                }
                acc
            })
            .collect();
        Ok(CountMatrix::from_rows(other.cols, rows))
    }

    pub fn transpose(&self) -> CountMatrix {
        let mut rows = vec![BTreeMap::new(); self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                rows[j].insert(i, v);
            }
        }
        CountMatrix::from_rows(self.rows, rows)
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut sums = vec![0; self.cols];
        for (j, v) in self.col_idx.iter().zip(&self.values) {
            sums[*j] += v;
        }
        sums
    }
}

/// Instance counts between every start node and end node of `p`, computed
/// as the product of the biadjacency matrices along the path. Rows index the
/// start type and columns the end type, both by local position.
pub fn neighbor_counts_via_matrices(g: &HeteroGraph, p: &MetaPath) -> CountMatrix {
    let types = p.types();
    let mut acc = CountMatrix::biadjacency(g, types[0], types[1]);
    for w in types[1..].windows(2) {
        acc = acc
            .matmul(&CountMatrix::biadjacency(g, w[0], w[1]))
            .expect("consecutive biadjacency shapes agree");
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::GraphBuilder;

    /// m1 - a1 - m2, plus an isolated movie m3.
    fn g0() -> HeteroGraph {
        let schema = Schema::new(&["M", "A"], &[("M", "A")], "M", 0).unwrap();
        let mut b = GraphBuilder::new(schema).unwrap();
        for m in ["m1", "m2", "m3"] {
            b.add_node("M", m).unwrap();
        }
        b.add_node("A", "a1").unwrap();
        b.add_edge("M", "m1", "A", "a1").unwrap();
        b.add_edge("M", "m2", "A", "a1").unwrap();
        b.build().unwrap().0
    }

    fn names(g: &HeteroGraph, ids: &[NodeId]) -> Vec<String> {
        ids.iter().map(|&v| g.node_name(v).to_string()).collect()
    }

    #[test]
    fn metapath_parsing() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        assert!(p.is_symmetric());
        assert_eq!(p.hops(), 2);
        assert_eq!(p.to_string(), "M-A-M");
        assert!(MetaPath::parse(g.schema(), "M-M").is_err());
        assert!(MetaPath::parse(g.schema(), "M").is_err());
        assert!(MetaPath::parse(g.schema(), "M-X").is_err());
    }

    #[test]
    fn g0_instances_at_m2() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let m2 = g.node_id("m2").unwrap();
        let got: Vec<_> = enumerate_instances(&g, &p, m2)
            .unwrap()
            .into_iter()
            .map(|i| names(&g, &i.nodes).join("-"))
            .collect();
        assert_eq!(got, ["m1-a1-m2", "m2-a1-m2"]);
        let nb = metapath_neighbors(&g, &p, m2).unwrap();
        assert_eq!(names(&g, &nb), ["m1", "m2"]);
    }

    #[test]
    fn isolated_target_has_no_instances_and_a_bare_tree() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let m3 = g.node_id("m3").unwrap();
        assert!(enumerate_instances(&g, &p, m3).unwrap().is_empty());
        assert!(metapath_neighbors(&g, &p, m3).unwrap().is_empty());
        let t = build_tree(&g, &p, m3).unwrap();
        assert!(t.is_bare());
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.leaf_count(), 0);
    }

    #[test]
    fn wrong_target_type_is_a_contract_error() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let a1 = g.node_id("a1").unwrap();
        assert!(matches!(enumerate_instances(&g, &p, a1), Err(Error::Contract(_))));
        assert!(build_tree(&g, &p, a1).is_err());
    }

    #[test]
    fn g0_tree_merges_the_shared_actor() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let t = build_tree(&g, &p, g.node_id("m2").unwrap()).unwrap();
        assert_eq!(t.level(1).len(), 1);
        assert_eq!(g.node_name(t.node(t.level(1)[0]).node), "a1");
        let leaves: Vec<_> = t.level(2).iter().map(|&i| t.node(i).node).collect();
        assert_eq!(names(&g, &leaves), ["m1", "m2"]);
        assert_eq!(t.instances(), enumerate_instances(&g, &p, t.target()).unwrap());
    }

    #[test]
    fn g0_count_matrix_is_all_ones_on_connected_movies() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let c = neighbor_counts_via_matrices(&g, &p);
        assert_eq!(c.shape(), (3, 3));
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(c.get(i, j), 1);
            }
        }
        assert_eq!(c.get(2, 2), 0);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn cap_limits_instances_and_leaves() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let m2 = g.node_id("m2").unwrap();
        assert_eq!(enumerate_instances_capped(&g, &p, m2, Some(1)).unwrap().len(), 1);
        assert_eq!(build_tree_capped(&g, &p, m2, Some(1)).unwrap().leaf_count(), 1);
    }

    #[test]
    fn dead_end_branches_are_pruned() {
        // p1 has a term but no author: A-P-T-P-A through p1 cannot complete.
        let schema = Schema::new(&["A", "P", "T"], &[("A", "P"), ("P", "T")], "A", 0).unwrap();
        let mut b = GraphBuilder::new(schema).unwrap();
        b.add_node("A", "x").unwrap();
        for p in ["p0", "p1"] {
            b.add_node("P", p).unwrap();
        }
        b.add_node("T", "t").unwrap();
        b.add_edge("A", "x", "P", "p0").unwrap();
        b.add_edge("P", "p0", "T", "t").unwrap();
        b.add_edge("P", "p1", "T", "t").unwrap();
        let g = b.build().unwrap().0;
        let p = MetaPath::parse(g.schema(), "A-P-T-P-A").unwrap();
        let t = build_tree(&g, &p, g.node_id("x").unwrap()).unwrap();
        assert_eq!(t.leaf_count(), 1);
        // root, p0, t, p0, x: the p1 branch was dropped
        assert_eq!(t.nodes().len(), 5);
    }
}
