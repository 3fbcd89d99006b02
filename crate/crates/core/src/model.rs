//! The forward pass: tree attention per meta-path, meta-path fusion, layer
//! projections, and the classification loss.
//!
//! All aggregation trees of one meta-path are batched into a [`Forest`]:
//! level `k` lists every depth-`k` tree node of every target, ordered so that
//! the children of each level-`k` node are contiguous at level `k + 1`. One
//! bottom-up sweep then runs the whole meta-path with segment operations.
//!
//! Attention scores compare layer-input vectors of parent and child, while
//! the values being mixed are the messages coming up from the level below.
//! Leaves start with their own input vectors as messages.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{grad_check_many, GradCheckReport, Tape, Tensor, Var};
use crate::centrality::{count_coverage_capped, one_hot_block, CentralityTable};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::featprop::propagate_features;
use crate::hetgraph::{Dataset, HeteroGraph, NodeId, TypeId};
use crate::metapath::{build_tree_capped, enumerate_instances_capped, AggregationTree, MetaPath};

/// One depth of a [`Forest`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForestLevel {
    /// Graph node of every tree node at this depth.
    pub nodes: Vec<NodeId>,
    /// Graph node of each entry's parent; empty at the root level.
    pub parents: Vec<NodeId>,
    /// Children of entry `i` are `offsets[i]..offsets[i+1]` of the next
    /// level; empty at the leaf level.
    pub offsets: Vec<usize>,
}

/// The aggregation trees of one meta-path for all targets that have at
/// least one instance, laid out level by level.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Forest {
    /// Level 0 holds the targets in ascending id order.
    pub levels: Vec<ForestLevel>,
}

impl Forest {
    /// Batches trees of the same meta-path. Bare trees are skipped.
    pub fn from_trees(trees: &[AggregationTree]) -> Forest {
        let trees: Vec<&AggregationTree> = trees.iter().filter(|t| !t.is_bare()).collect();
        let Some(first) = trees.first() else {
            return Forest::default();
        };
        let depth = first.depth();
        // (tree, tree-node) pairs per level
        let mut frontier: Vec<(usize, usize)> = (0..trees.len()).map(|i| (i, 0)).collect();
        let mut levels = Vec::with_capacity(depth + 1);
        let mut parents = Vec::new();
        for d in 0..=depth {
            let nodes = frontier.iter().map(|&(t, i)| trees[t].node(i).node).collect();
            let mut offsets = Vec::new();
            let mut next = Vec::new();
            let mut next_parents = Vec::new();
            if d < depth {
                offsets.push(0);
                for &(t, i) in &frontier {
                    let tn = trees[t].node(i);
                    for &c in &tn.children {
                        next.push((t, c));
                        next_parents.push(tn.node);
                    }
                    offsets.push(next.len());
                }
            }
            levels.push(ForestLevel {
                nodes,
                parents: std::mem::take(&mut parents),
                offsets,
            });
            frontier = next;
            parents = next_parents;
        }
        Forest { levels }
    }

    /// Star-shaped alternative without shared intermediate nodes: every
    /// target is joined directly to the start node of each of its instances.
    pub fn flat(g: &HeteroGraph, p: &MetaPath, cap: Option<usize>) -> Result<Forest> {
        let per_target: Vec<(NodeId, Vec<NodeId>)> = g
            .nodes_of_type(p.end_type())
            .into_par_iter()
            .map(|t| -> Result<_> {
                let starts = enumerate_instances_capped(g, p, t, cap)?.iter().map(|i| i.start()).collect();
                Ok((t, starts))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut root = ForestLevel {
            offsets: vec![0],
            ..Default::default()
        };
        let mut leaves = ForestLevel::default();
        for (t, starts) in per_target {
            if starts.is_empty() {
                continue;
            }
            root.nodes.push(t);
            leaves.parents.extend(std::iter::repeat(t).take(starts.len()));
            leaves.nodes.extend(starts);
            root.offsets.push(leaves.nodes.len());
        }
        if root.nodes.is_empty() {
            return Ok(Forest::default());
        }
        Ok(Forest {
            levels: vec![root, leaves],
        })
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn targets(&self) -> &[NodeId] {
        self.levels.first().map(|l| l.nodes.as_slice()).unwrap_or(&[])
    }
}

/// Runs tree attention over a forest. `latents` holds the attention vectors
/// and `leaf_messages` the initial messages, both indexed by graph node.
/// Returns one message row per forest target and, per level below the
/// root, the attention weights (deepest first).
pub fn aggregate_forest(
    tape: &mut Tape,
    forest: &Forest,
    latents: Var,
    leaf_messages: Var,
    tree_sigma: bool,
) -> Result<(Var, Vec<Var>)> {
    if forest.is_empty() {
        return Err(Error::Contract("aggregating an empty forest".into()));
    }
    let d = forest.depth();
    let mut msg = tape.gather_rows(leaf_messages, &forest.levels[d].nodes)?;
    let mut alphas = Vec::with_capacity(d);
    for k in (0..d).rev() {
        let child = &forest.levels[k + 1];
        let parent_vec = tape.gather_rows(latents, &child.parents)?;
        let child_vec = tape.gather_rows(latents, &child.nodes)?;
        let scores = tape.row_cosine(parent_vec, child_vec)?;
        let alpha = tape.segment_softmax(scores, &forest.levels[k].offsets)?;
        msg = tape.segment_weighted_sum(msg, alpha, &forest.levels[k].offsets)?;
        if tree_sigma {
            msg = tape.elu(msg);
        }
        alphas.push(alpha);
    }
    Ok((msg, alphas))
}

/// Root message of a single tree. Rows of `latents` and `messages` are
/// indexed by graph node; leaves take their message row, every parent mixes
/// its children's messages with weights from the cosine of latent rows. A
/// tree without instances returns the target's own latent.
///
/// ```
/// use shgnn::autodiff::Tensor;
/// use shgnn::hetgraph::{GraphBuilder, Schema};
/// use shgnn::metapath::{build_tree, MetaPath};
/// use shgnn::model::tree_attention_aggregate;
///
/// let schema = Schema::new(&["M", "A"], &[("M", "A")], "M", 0).unwrap();
/// let mut b = GraphBuilder::new(schema.clone()).unwrap();
/// for m in ["m1", "m2"] {
///     b.add_node("M", m).unwrap();
/// }
/// b.add_node("A", "a1").unwrap();
/// b.add_edge("M", "m1", "A", "a1").unwrap();
/// let (g, _) = b.build().unwrap();
///
/// let p = MetaPath::parse(&schema, "M-A-M").unwrap();
/// let latents = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
/// // m1 has the single instance m1-a1-m1, so its own message comes back
/// let tree = build_tree(&g, &p, 0).unwrap();
/// assert_eq!(tree_attention_aggregate(&tree, &latents, &latents, false).unwrap(), [1.0, 0.0]);
/// ```
pub fn tree_attention_aggregate(
    tree: &AggregationTree,
    latents: &Tensor,
    messages: &Tensor,
    tree_sigma: bool,
) -> Result<Vec<f64>> {
    if tree.is_bare() {
        return Ok(latents.row(tree.target()).to_vec());
    }
    let forest = Forest::from_trees(std::slice::from_ref(tree));
    let mut tape = Tape::new();
    let l = tape.constant(latents.clone());
    let m = tape.constant(messages.clone());
    let (root, _) = aggregate_forest(&mut tape, &forest, l, m, tree_sigma)?;
    Ok(tape.value(root).row(0).to_vec())
}

/// `s = mean_v tanh(W^h h_v + b)` over the message rows of one meta-path.
pub fn metapath_summary(tape: &mut Tape, messages: Var, wh: Var, b: Var) -> Result<Var> {
    if tape.shape(messages).first() == Some(&0) {
        return Err(Error::Contract("meta-path summary over an empty node set".into()));
    }
    let z = tape.linear(messages, wh)?;
    let z = tape.add_row(z, b)?;
    let z = tape.tanh(z);
    tape.row_mean(z)
}

/// Weights `β = softmax_j(q · s_j)` and the fused rows `Σ_j β_j H_j`.
pub fn metapath_fuse(tape: &mut Tape, summaries: &[Var], q: Var, messages: &[Var]) -> Result<(Var, Var)> {
    if summaries.is_empty() || summaries.len() != messages.len() {
        return Err(Error::Contract(format!(
            "fusing {} summaries with {} message blocks",
            summaries.len(),
            messages.len()
        )));
    }
    let scores = summaries
        .iter()
        .map(|&s| tape.dot(q, s))
        .collect::<Result<Vec<_>>>()?;
    let u = tape.concat(&scores, 0)?;
    let beta = tape.softmax_vec(u)?;
    let fused = tape.weighted_sum(messages, beta)?;
    Ok((fused, beta))
}

/// Graph-derived inputs of the model, computed once per dataset and config.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub d1: usize,
    pub layers: usize,
    pub num_classes: usize,
    pub tree_sigma: bool,
    pub basic_type: TypeId,
    pub type_names: Vec<String>,
    pub type_ranges: Vec<Range<NodeId>>,
    /// Raw (propagated) feature rows per type.
    pub features: Vec<Tensor>,
    /// Centrality one-hot rows per type, `[n_t, 2·d1]`.
    pub one_hots: Vec<Tensor>,
    pub centrality: CentralityTable,
    pub metapaths: Vec<MetaPath>,
    pub forests: Vec<Forest>,
    /// Per meta-path: for each node of its end type, the row of
    /// `[root messages; own inputs]` that becomes its message.
    pub message_rows: Vec<Option<Vec<usize>>>,
}

impl ModelInputs {
    pub fn prepare(g: &HeteroGraph, config: &TrainConfig) -> Result<ModelInputs> {
        config.validate()?;
        let schema = g.schema();
        if schema.num_classes == 0 {
            return Err(Error::Config("schema declares no classes".into()));
        }
        let metapaths = config.resolve_metapaths(schema)?;
        let basic = schema.basic_type_id();
        if !metapaths.iter().any(|p| p.end_type() == basic) {
            log::warn!("no meta-path ends at the basic type {}; its rows skip aggregation", schema.basic_type);
        }
        let features = propagate_features(g)?.per_type;
        let centrality = count_coverage_capped(g, &metapaths, config.max_instances)?;
        let one_hots = (0..g.num_types())
            .map(|t| one_hot_block(g, &centrality, t, config.d1, config.centrality_options()))
            .collect();

        let mut forests = Vec::with_capacity(metapaths.len());
        let mut message_rows = Vec::with_capacity(metapaths.len());
        for p in &metapaths {
            let forest = if config.use_tree_attention {
                let trees = g
                    .nodes_of_type(p.end_type())
                    .into_par_iter()
                    .map(|t| build_tree_capped(g, p, t, config.max_instances))
                    .collect::<Result<Vec<_>>>()?;
                Forest::from_trees(&trees)
            } else {
                Forest::flat(g, p, config.max_instances)?
            };
            let range = g.type_range(p.end_type());
            let targets = forest.targets();
            let rows = if targets.len() == range.len() {
                None
            } else {
                let mut rows = Vec::with_capacity(range.len());
                let mut next = 0;
                for (i, v) in range.clone().enumerate() {
                    if next < targets.len() && targets[next] == v {
                        rows.push(next);
                        next += 1;
                    } else {
                        rows.push(targets.len() + i);
                    }
                }
                Some(rows)
            };
            forests.push(forest);
            message_rows.push(rows);
        }

        Ok(ModelInputs {
            d1: config.d1,
            layers: config.layers,
            num_classes: schema.num_classes,
            tree_sigma: config.tree_sigma,
            basic_type: basic,
            type_names: schema.node_types.clone(),
            type_ranges: (0..g.num_types()).map(|t| g.type_range(t)).collect(),
            features,
            one_hots,
            centrality,
            metapaths,
            forests,
            message_rows,
        })
    }

    pub fn num_types(&self) -> usize {
        self.type_ranges.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.type_ranges.last().map(|r| r.end).unwrap_or(0)
    }

    /// Indices of the meta-paths ending at `t`.
    pub fn metapaths_ending_at(&self, t: TypeId) -> Vec<usize> {
        (0..self.metapaths.len())
            .filter(|&j| self.metapaths[j].end_type() == t)
            .collect()
    }

    /// Types whose rows are aggregated at layer `l` (1-based). The last
    /// layer only needs the basic type.
    fn attended_types(&self, l: usize) -> Vec<TypeId> {
        (0..self.num_types())
            .filter(|&t| (l < self.layers || t == self.basic_type) && !self.metapaths_ending_at(t).is_empty())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct AttnSlots {
    wh: usize,
    b: usize,
    q: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerSlots {
    attn: Vec<Option<AttnSlots>>,
    wo: usize,
}

/// All trainable tensors, in a fixed order with stable names.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
    wx: Vec<usize>,
    wz: Vec<usize>,
    layers: Vec<LayerSlots>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases drawn from a seeded stream.
    pub fn init(inputs: &ModelInputs, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams {
            names: Vec::new(),
            values: Vec::new(),
            wx: Vec::new(),
            wz: Vec::new(),
            layers: Vec::new(),
        };
        let d1 = inputs.d1;
        let mut push = |p: &mut ModelParams, name: String, shape: &[usize], fan: (usize, usize), zero: bool| {
            let n: usize = shape.iter().product();
            let data = if zero {
                vec![0.0; n]
            } else {
                let a = (6.0 / (fan.0 + fan.1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            };
            p.names.push(name);
            p.values.push(Tensor::new(shape.to_vec(), data).expect("shape matches data"));
            p.values.len() - 1
        };
        for t in 0..inputs.num_types() {
            let d0 = inputs.features[t].cols();
            let name = &inputs.type_names[t];
            let i = push(&mut p, format!("W_x.{name}"), &[d1, d0], (d0, d1), false);
            p.wx.push(i);
        }
        for t in 0..inputs.num_types() {
            let name = &inputs.type_names[t];
            let i = push(&mut p, format!("W_z.{name}"), &[d1, 2 * d1], (2 * d1, d1), false);
            p.wz.push(i);
        }
        for l in 1..=inputs.layers {
            let mut attn = vec![None; inputs.num_types()];
            for t in inputs.attended_types(l) {
                let name = &inputs.type_names[t];
                let wh = push(&mut p, format!("layer{l}.W_h.{name}"), &[d1, 2 * d1], (2 * d1, d1), false);
                let b = push(&mut p, format!("layer{l}.b.{name}"), &[d1], (0, 0), true);
                let q = push(&mut p, format!("layer{l}.q.{name}"), &[d1], (d1, 1), false);
                attn[t] = Some(AttnSlots { wh, b, q });
            }
            let wo = if l < inputs.layers {
                push(&mut p, format!("layer{l}.W_o"), &[2 * d1, 2 * d1], (2 * d1, 2 * d1), false)
            } else {
                let c = inputs.num_classes;
                push(&mut p, "W_o".to_string(), &[c, 2 * d1], (2 * d1, c), false)
            };
            p.layers.push(LayerSlots { attn, wo });
        }
        p
    }

    /// Replaces every tensor by the entry of the same name in `named`.
    pub fn assign(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.names.len() {
            return Err(Error::Validation(format!(
                "{} tensors supplied, model has {}",
                named.len(),
                self.names.len()
            )));
        }
        for (name, value) in named {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))?;
            if value.shape() != self.values[i].shape() {
                return Err(Error::Validation(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = value.clone();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on the tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }
}

/// Attention weights recorded during one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub tree: Vec<TreeWeights>,
    pub metapath: Vec<MetaPathWeights>,
}

/// Tree-attention weights of one forest level: each segment of `weights`
/// delimited by `offsets` is one parent's child distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeWeights {
    pub layer: usize,
    pub metapath: usize,
    pub depth: usize,
    pub weights: Vec<f64>,
    pub offsets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaPathWeights {
    pub layer: usize,
    pub node_type: TypeId,
    pub beta: Vec<f64>,
}

pub struct ForwardOutput {
    /// Basic-type rows after the final ELU projection, `[n_basic, C]`.
    pub embeddings: Var,
    pub trace: Option<AttentionTrace>,
}

/// The full model on one tape. `params` are the tape leaves returned by
/// [`ModelParams::register`].
pub fn forward(
    tape: &mut Tape,
    inputs: &ModelInputs,
    layout: &ModelParams,
    params: &[Var],
    record: bool,
) -> Result<ForwardOutput> {
    if params.len() != layout.len() {
        return Err(Error::Contract(format!(
            "{} parameter vars for {} parameters",
            params.len(),
            layout.len()
        )));
    }
    let mut trace = record.then(AttentionTrace::default);

    let mut latent_blocks = Vec::with_capacity(inputs.num_types());
    for t in 0..inputs.num_types() {
        let x = tape.constant(inputs.features[t].clone());
        let xhat = tape.linear(x, params[layout.wx[t]])?;
        let z = tape.constant(inputs.one_hots[t].clone());
        let zhat = tape.linear(z, params[layout.wz[t]])?;
        latent_blocks.push(tape.concat(&[xhat, zhat], 1)?);
    }
    let mut h = if latent_blocks.len() == 1 {
        latent_blocks[0]
    } else {
        tape.concat(&latent_blocks, 0)?
    };

    for l in 1..=inputs.layers {
        let slots = &layout.layers[l - 1];
        let last = l == inputs.layers;
        let types: Vec<TypeId> = if last {
            vec![inputs.basic_type]
        } else {
            (0..inputs.num_types()).collect()
        };
        let mut fused_blocks = Vec::with_capacity(types.len());
        for &t in &types {
            let own = tape.slice(h, 0, inputs.type_ranges[t].clone())?;
            let Some(attn) = slots.attn[t] else {
                fused_blocks.push(own);
                continue;
            };
            let mut messages = Vec::new();
            for j in inputs.metapaths_ending_at(t) {
                let forest = &inputs.forests[j];
                let m = if forest.is_empty() {
                    own
                } else {
                    let (roots, alphas) = aggregate_forest(tape, forest, h, h, inputs.tree_sigma)?;
                    if let Some(tr) = trace.as_mut() {
                        for (i, &a) in alphas.iter().enumerate() {
                            let depth = forest.depth() - 1 - i;
                            tr.tree.push(TreeWeights {
                                layer: l,
                                metapath: j,
                                depth,
                                weights: tape.value(a).data().to_vec(),
                                offsets: forest.levels[depth].offsets.clone(),
                            });
                        }
                    }
                    match &inputs.message_rows[j] {
                        None => roots,
                        Some(rows) => {
                            let stacked = tape.concat(&[roots, own], 0)?;
                            tape.gather_rows(stacked, rows)?
                        }
                    }
                };
                messages.push(m);
            }
            let summaries = messages
                .iter()
                .map(|&m| metapath_summary(tape, m, params[attn.wh], params[attn.b]))
                .collect::<Result<Vec<_>>>()?;
            let (fused, beta) = metapath_fuse(tape, &summaries, params[attn.q], &messages)?;
            if let Some(tr) = trace.as_mut() {
                tr.metapath.push(MetaPathWeights {
                    layer: l,
                    node_type: t,
                    beta: tape.value(beta).data().to_vec(),
                });
            }
            fused_blocks.push(fused);
        }
        let fused = if fused_blocks.len() == 1 {
            fused_blocks[0]
        } else {
            tape.concat(&fused_blocks, 0)?
        };
        let projected = tape.linear(fused, params[slots.wo])?;
        h = tape.elu(projected);
    }
    Ok(ForwardOutput { embeddings: h, trace })
}

/// Summed cross-entropy of the softmax of `embeddings` over `nodes`.
pub fn loss(tape: &mut Tape, g: &HeteroGraph, embeddings: Var, nodes: &[NodeId]) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::Contract("loss over an empty labeled set".into()));
    }
    let basic = g.schema().basic_type_id();
    let mut rows = Vec::with_capacity(nodes.len());
    let mut labels = Vec::with_capacity(nodes.len());
    for &v in nodes {
        if g.node_type(v) != basic {
            return Err(Error::Contract(format!("{} is not a {} node", g.node_name(v), g.type_name(basic))));
        }
        let y = g
            .label(v)
            .ok_or_else(|| Error::Contract(format!("node {} has no label", g.node_name(v))))?;
        rows.push(g.local_index(v));
        labels.push(y);
    }
    let picked = tape.gather_rows(embeddings, &rows)?;
    tape.cross_entropy(picked, &labels)
}

/// Embedding rows of the basic type under the given parameters.
pub fn embed(inputs: &ModelInputs, params: &ModelParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values.iter().map(|v| tape.constant(v.clone())).collect();
    let out = forward(&mut tape, inputs, params, &vars, false)?;
    Ok(tape.value(out.embeddings).clone())
}

/// Compares the gradient of the training loss with respect to every
/// parameter element against central differences, starting from the
/// parameters initialized with `config.seed`.
pub fn check_gradients(dataset: &Dataset, config: &TrainConfig, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let inputs = ModelInputs::prepare(&dataset.graph, config)?;
    let layout = ModelParams::init(&inputs, config.seed);
    let train = &dataset.splits.train;
    grad_check_many(
        |tape, vars| {
            let out = forward(tape, &inputs, &layout, vars, false)?;
            loss(tape, &dataset.graph, out.embeddings, train)
        },
        &layout.values,
        step,
        tolerance,
    )
}
