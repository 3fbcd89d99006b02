//! Feature propagation across the schema and type-specific projection.
//!
//! Only the basic type is required to carry raw features. Every other type
//! without features receives, per node, the mean feature row of its
//! neighbors in the nearest already-featured type. Types are filled in
//! order of schema distance from the basic type (ties by type name), so a
//! type two hops away averages rows that were themselves propagated.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, TypeId};

/// Dense feature matrix per node type; rows follow the type's id range.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub per_type: Vec<Tensor>,
    /// For propagated types, the type their rows were averaged from.
    pub sources: Vec<Option<TypeId>>,
}

impl FeatureTable {
    pub fn dim(&self, t: TypeId) -> usize {
        self.per_type[t].cols()
    }

    pub fn row(&self, g: &HeteroGraph, v: usize) -> &[f64] {
        self.per_type[g.node_type(v)].row(g.local_index(v))
    }
}

/// Fills in features for every type, starting from the basic type.
pub fn propagate_features(g: &HeteroGraph) -> Result<FeatureTable> {
    let schema = g.schema();
    let basic = schema.basic_type_id();
    if g.features(basic).is_none() {
        return Err(Error::Validation(format!("basic type {} has no features", schema.basic_type)));
    }
    let dist = schema.bfs_distances(basic);
    let mut order: Vec<TypeId> = (0..g.num_types()).collect();
    order.sort_by(|&a, &b| {
        dist[a]
            .cmp(&dist[b])
            .then_with(|| schema.node_types[a].cmp(&schema.node_types[b]))
    });

    let mut per_type: Vec<Option<Tensor>> = vec![None; g.num_types()];
    let mut sources = vec![None; g.num_types()];
    for t in order {
        if let Some(raw) = g.features(t) {
            let dense = raw.to_dense();
            per_type[t] = Some(Tensor::matrix(dense.len(), raw.dim, dense.concat())?);
            continue;
        }
        let source = schema
            .adjacent_types(t)
            .into_iter()
            .filter(|&u| per_type[u].is_some())
            .min_by(|&a, &b| {
                dist[a]
                    .cmp(&dist[b])
                    .then_with(|| schema.node_types[a].cmp(&schema.node_types[b]))
            })
            .expect("connected schema: an adjacent type is processed first");
        let src = per_type[source].as_ref().unwrap();
        let d0 = src.cols();
        let src_start = g.type_range(source).start;
        let mut data = Vec::with_capacity(g.type_range(t).len() * d0);
        let mut lonely = 0;
        for v in g.nodes_of_type(t) {
            let nbrs = g.neighbors_of_type(v, source);
            let mut row = vec![0.0; d0];
            if nbrs.is_empty() {
                lonely += 1;
            } else {
                for &k in nbrs {
                    for (r, x) in row.iter_mut().zip(src.row(k - src_start)) {
                        *r += x;
                    }
                }
                let n = nbrs.len() as f64;
                row.iter_mut().for_each(|r| *r /= n);
            }
            data.extend(row);
        }
        if lonely > 0 {
            log::warn!(
                "{lonely} nodes of type {} have no {} neighbors; their features are zero",
                schema.node_types[t],
                schema.node_types[source]
            );
        }
        per_type[t] = Some(Tensor::matrix(g.type_range(t).len(), d0, data)?);
        sources[t] = Some(source);
    }
    Ok(FeatureTable {
        per_type: per_type.into_iter().map(Option::unwrap).collect(),
        sources,
    })
}

/// Projects every type's feature rows with its own weight: `x̂_v = W_{φ(v)} x_v`.
///
/// `features[t]` is `[n_t, d0_t]`, `weights[t]` is `[d1, d0_t]`; the result
/// for type `t` is `[n_t, d1]`. No bias, no activation.
pub fn transform_features(tape: &mut Tape, features: &[Var], weights: &[Var]) -> Result<Vec<Var>> {
    if features.len() != weights.len() {
        return Err(Error::shape(
            "transform_features",
            format!("{} feature blocks, {} weights", features.len(), weights.len()),
        ));
    }
    features
        .iter()
        .zip(weights)
        .map(|(&x, &w)| tape.linear(x, w))
        .collect()
}
