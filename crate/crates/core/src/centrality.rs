//! Coverage centrality.
//!
//! `c(v)` counts how many times `v` occupies a position in the enumerated
//! instances of all configured meta-paths; a node appearing twice in one
//! instance (`v-a-v`) counts twice, so `Σ_v c(v)` equals the instance count
//! times the path length for every meta-path. `c⁺(v)` sums `c` over all
//! direct neighbors of `v`, regardless of type.
//!
//! Both counts are turned into one-hot vectors of width `d1`, concatenated,
//! and projected by a per-type matrix into the centrality embedding `ẑ_v`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, TypeId};
use crate::metapath::{enumerate_instances_capped, MetaPath};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CentralityTable {
    /// Indexed by node id.
    pub c: Vec<u64>,
    pub c_plus: Vec<u64>,
}

/// Coverage counts over every instance of every meta-path, ending at any
/// node of the path's end type.
pub fn count_coverage(g: &HeteroGraph, metapaths: &[MetaPath]) -> Result<CentralityTable> {
    count_coverage_capped(g, metapaths, None)
}

/// [`count_coverage`] with at most `cap` instances per (meta-path, target).
pub fn count_coverage_capped(g: &HeteroGraph, metapaths: &[MetaPath], cap: Option<usize>) -> Result<CentralityTable> {
    let n = g.num_nodes();
    let mut c = vec![0u64; n];
    for p in metapaths {
        let partial = g
            .nodes_of_type(p.end_type())
            .into_par_iter()
            .map(|target| -> Result<BTreeMap<usize, u64>> {
                let mut local = BTreeMap::new();
                for inst in enumerate_instances_capped(g, p, target, cap)? {
                    for v in inst.nodes {
                        *local.entry(v).or_insert(0) += 1;
                    }
                }
                Ok(local)
            })
            .collect::<Result<Vec<_>>>()?;
        for local in partial {
            for (v, k) in local {
                c[v] += k;
            }
        }
    }
    let c_plus = (0..n).map(|v| g.neighbors(v).map(|k| c[k]).sum()).collect();
    Ok(CentralityTable { c, c_plus })
}

/// How raw counts map to one-hot positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    /// `min(count, d1 - 1)`
    #[default]
    Clamp,
    /// `min(⌊log2(1 + count)⌋, d1 - 1)`
    Log2,
}

impl Bucketing {
    pub fn index(self, count: u64, d1: usize) -> usize {
        let raw = match self {
            Bucketing::Clamp => count,
            Bucketing::Log2 => (count + 1).ilog2() as u64,
        };
        raw.min(d1 as u64 - 1) as usize
    }
}

/// Which centrality indicators enter the encoding; a disabled indicator
/// contributes an all-zero block instead of a one-hot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CentralityOptions {
    pub use_c: bool,
    pub use_c_plus: bool,
    pub bucketing: Bucketing,
}

impl Default for CentralityOptions {
    fn default() -> Self {
        CentralityOptions {
            use_c: true,
            use_c_plus: true,
            bucketing: Bucketing::Clamp,
        }
    }
}

/// `[n_t, 2·d1]` rows `z_{c(v)} ‖ z'_{c⁺(v)}` for the nodes of type `t`.
pub fn one_hot_block(g: &HeteroGraph, table: &CentralityTable, t: TypeId, d1: usize, opts: CentralityOptions) -> Tensor {
    let range = g.type_range(t);
    let n = range.len();
    let mut data = vec![0.0; n * 2 * d1];
    for (i, v) in range.enumerate() {
        let row = &mut data[i * 2 * d1..(i + 1) * 2 * d1];
        if opts.use_c {
            row[opts.bucketing.index(table.c[v], d1)] = 1.0;
        }
        if opts.use_c_plus {
            row[d1 + opts.bucketing.index(table.c_plus[v], d1)] = 1.0;
        }
    }
    Tensor::matrix(n, 2 * d1, data).expect("sized above")
}

/// Centrality embeddings `ẑ = W^z_t (z_c ‖ z'_c⁺)` for every type.
/// `weights[t]` has shape `[d1, 2·d1]`.
pub fn encode_centrality(
    tape: &mut Tape,
    g: &HeteroGraph,
    table: &CentralityTable,
    d1: usize,
    weights: &[Var],
    opts: CentralityOptions,
) -> Result<Vec<Var>> {
    if d1 == 0 {
        return Err(Error::Config("d1 must be at least 1".into()));
    }
    if weights.len() != g.num_types() {
        return Err(Error::shape("encode_centrality", format!("{} weights for {} types", weights.len(), g.num_types())));
    }
    (0..g.num_types())
        .map(|t| {
            let z = tape.constant(one_hot_block(g, table, t, d1, opts));
            tape.linear(z, weights[t])
        })
        .collect()
}

/// Latent rows `ĥ_v = (x̂_v ‖ ẑ_v)`, structural features first.
pub fn build_latent(tape: &mut Tape, xhat: Var, zhat: Var) -> Result<Var> {
    let (sx, sz) = (tape.shape(xhat), tape.shape(zhat));
    if sx != sz {
        return Err(Error::shape("build_latent", format!("{sx:?} vs {sz:?}")));
    }
    if sx.len() == 2 {
        tape.concat(&[xhat, zhat], 1)
    } else {
        tape.concat(&[xhat, zhat], 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeCentralitySummary {
    pub nodes: usize,
    pub c_max: u64,
    pub c_mean: f64,
    pub c_distinct: usize,
    pub c_plus_max: u64,
    pub c_plus_distinct: usize,
    /// Share of nodes having the most common degree.
    pub modal_degree_share: f64,
    pub c_histogram: BTreeMap<u64, usize>,
    pub c_plus_histogram: BTreeMap<u64, usize>,
}

/// Per-type histogram summary of a centrality table.
pub fn summarize(g: &HeteroGraph, table: &CentralityTable) -> BTreeMap<String, TypeCentralitySummary> {
    (0..g.num_types())
        .map(|t| {
            let range = g.type_range(t);
            let mut ch = BTreeMap::new();
            let mut ph = BTreeMap::new();
            let mut degrees = BTreeMap::new();
            for v in range.clone() {
                *ch.entry(table.c[v]).or_insert(0) += 1;
                *ph.entry(table.c_plus[v]).or_insert(0) += 1;
                *degrees.entry(g.degree(v)).or_insert(0usize) += 1;
            }
            let n = range.len();
            let modal = degrees.values().copied().max().unwrap_or(0);
            let summary = TypeCentralitySummary {
                nodes: n,
                c_max: range.clone().map(|v| table.c[v]).max().unwrap_or(0),
                c_mean: if n == 0 {
                    0.0
                } else {
                    range.clone().map(|v| table.c[v] as f64).sum::<f64>() / n as f64
                },
                c_distinct: ch.len(),
                c_plus_max: range.clone().map(|v| table.c_plus[v]).max().unwrap_or(0),
                c_plus_distinct: ph.len(),
                modal_degree_share: if n == 0 { 0.0 } else { modal as f64 / n as f64 },
                c_histogram: ch,
                c_plus_histogram: ph,
            };
            (g.type_name(t).to_string(), summary)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{GraphBuilder, Schema};

    fn g0() -> HeteroGraph {
        let schema = Schema::new(&["M", "A"], &[("M", "A")], "M", 0).unwrap();
        let mut b = GraphBuilder::new(schema).unwrap();
        b.add_node("M", "m1").unwrap();
        b.add_node("M", "m2").unwrap();
        b.add_node("A", "a1").unwrap();
        b.add_edge("M", "m1", "A", "a1").unwrap();
        b.add_edge("M", "m2", "A", "a1").unwrap();
        b.build().unwrap().0
    }

    #[test]
    fn g0_coverage() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let t = count_coverage(&g, &[p]).unwrap();
        let (m1, m2, a1) = (0, 1, 2);
        assert_eq!((t.c[m1], t.c[m2], t.c[a1]), (4, 4, 4));
        assert_eq!(t.c_plus[m1], 4);
        assert_eq!(t.c_plus[a1], 8);
    }

    #[test]
    fn edgeless_graph_has_zero_counts() {
        let schema = Schema::new(&["M", "A"], &[("M", "A")], "M", 0).unwrap();
        let mut b = GraphBuilder::new(schema).unwrap();
        b.add_node("M", "m1").unwrap();
        b.add_node("A", "a1").unwrap();
        let g = b.build().unwrap().0;
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let t = count_coverage(&g, &[p]).unwrap();
        assert!(t.c.iter().chain(&t.c_plus).all(|&x| x == 0));
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(Bucketing::Clamp.index(0, 8), 0);
        assert_eq!(Bucketing::Clamp.index(8 + 5, 8), 7);
        assert_eq!(Bucketing::Clamp.index(3, 8), 3);
        assert_eq!(Bucketing::Log2.index(0, 8), 0);
        assert_eq!(Bucketing::Log2.index(1, 8), 1);
        assert_eq!(Bucketing::Log2.index(3, 8), 2);
        assert_eq!(Bucketing::Log2.index(1 << 20, 8), 7);
    }

    #[test]
    fn stacked_identity_weight_sums_the_one_hots() {
        let g = g0();
        let p = MetaPath::parse(g.schema(), "M-A-M").unwrap();
        let table = count_coverage(&g, &[p]).unwrap();
        let d1 = 6;
        let mut w = vec![0.0; d1 * 2 * d1];
        for i in 0..d1 {
            w[i * 2 * d1 + i] = 1.0;
            w[i * 2 * d1 + d1 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let wz: Vec<_> = (0..2)
            .map(|_| tape.leaf(Tensor::matrix(d1, 2 * d1, w.clone()).unwrap()))
            .collect();
        let z = encode_centrality(&mut tape, &g, &table, d1, &wz, CentralityOptions::default()).unwrap();
        // movies: c = 4, c+ = 4 -> 2 at index 4
        assert_eq!(tape.value(z[0]).row(0), &[0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        // actor: c = 4, c+ = 8 clamped to 5
        assert_eq!(tape.value(z[1]).row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn disabled_indicators_give_zero_blocks() {
        let g = g0();
        let table = CentralityTable {
            c: vec![1, 2, 3],
            c_plus: vec![0, 0, 0],
        };
        let off = CentralityOptions {
            use_c: false,
            use_c_plus: false,
            ..Default::default()
        };
        assert!(one_hot_block(&g, &table, 0, 4, off).data().iter().all(|&x| x == 0.0));
        let only_c = CentralityOptions {
            use_c_plus: false,
            ..Default::default()
        };
        let z = one_hot_block(&g, &table, 0, 4, only_c);
        assert_eq!(z.row(1), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn latent_concatenation_order() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let z = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let h = build_latent(&mut tape, x, z).unwrap();
        assert_eq!(tape.value(h).data(), &[1.0, 2.0, 3.0, 4.0]);
        let bad = tape.leaf(Tensor::vector(vec![1.0]));
        assert!(build_latent(&mut tape, x, bad).is_err());
    }
}
