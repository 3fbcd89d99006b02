//! Typed heterogeneous graphs.
//!
//! A [`HeteroGraph`] holds nodes of several types and undirected edges whose
//! endpoint types are fixed by a [`Schema`]. Nodes get dense global ids:
//! within a type they are ordered by their original identifier, and the
//! types are laid out one after another in schema order, so every type
//! occupies a contiguous id range.
//!
//! Datasets live in a directory of tab-separated files, see [`load_dataset`]
//! and [`write_dataset`].

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense global node index.
pub type NodeId = usize;

/// Index into [`Schema::node_types`].
pub type TypeId = usize;

/// Node and edge types of a heterogeneous graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub node_types: Vec<String>,
    /// Unordered type pairs; `["M", "A"]` and `["A", "M"]` name the same type.
    pub edge_types: Vec<(String, String)>,
    pub basic_type: String,
    /// Number of label classes on the basic type (0 when unlabeled).
    #[serde(default)]
    pub num_classes: usize,
    /// Raw feature dimension per type; inferred from the feature file when absent.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_dims: BTreeMap<String, usize>,
}

impl Schema {
    pub fn new(
        node_types: &[&str],
        edge_types: &[(&str, &str)],
        basic_type: &str,
        num_classes: usize,
    ) -> Result<Self> {
        let schema = Schema {
            node_types: node_types.iter().map(|s| s.to_string()).collect(),
            edge_types: edge_types
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            basic_type: basic_type.to_string(),
            num_classes,
            feature_dims: BTreeMap::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Checks the heterogeneity condition, type references and connectivity.
    pub fn validate(&self) -> Result<()> {
        let declared: BTreeSet<&str> = self.node_types.iter().map(String::as_str).collect();
        if declared.len() != self.node_types.len() {
            return Err(Error::Schema("duplicate node type name".into()));
        }
        if let Some(t) = self.node_types.iter().find(|t| t.is_empty() || t.contains(['\t', '-', '_'])) {
            return Err(Error::Schema(format!(
                "node type name {t:?} must be non-empty and free of tabs, '-' and '_'"
            )));
        }
        if self.node_types.len() + self.edge_types.len() <= 2 {
            return Err(Error::Schema(format!(
                "a heterogeneous graph needs |node types| + |edge types| > 2, got {} + {}",
                self.node_types.len(),
                self.edge_types.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (a, b) in &self.edge_types {
            for t in [a, b] {
                if !declared.contains(t.as_str()) {
                    return Err(Error::Schema(format!("edge type {a}-{b} references undeclared node type {t}")));
                }
            }
            let key = if a <= b { (a, b) } else { (b, a) };
            if !seen.insert(key) {
                return Err(Error::Schema(format!("edge type {a}-{b} declared twice")));
            }
        }
        if !declared.contains(self.basic_type.as_str()) {
            return Err(Error::Schema(format!("basic type {} is not a declared node type", self.basic_type)));
        }
        for t in self.feature_dims.keys() {
            if !declared.contains(t.as_str()) {
                return Err(Error::Schema(format!("feature_dims names undeclared type {t}")));
            }
        }
        let reached = self.bfs_distances(0);
        if reached.iter().any(Option::is_none) {
            return Err(Error::Schema("the schema graph is not connected".into()));
        }
        Ok(())
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.node_types.iter().position(|t| t == name)
    }

    pub fn basic_type_id(&self) -> TypeId {
        self.type_id(&self.basic_type).expect("validated schema")
    }

    /// Index of the edge type joining `a` and `b`, in either orientation.
    pub fn edge_type_between(&self, a: TypeId, b: TypeId) -> Option<usize> {
        let (na, nb) = (&self.node_types[a], &self.node_types[b]);
        self.edge_types
            .iter()
            .position(|(x, y)| (x == na && y == nb) || (x == nb && y == na))
    }

    /// Types adjacent to `t` on the schema graph, in schema order.
    pub fn adjacent_types(&self, t: TypeId) -> Vec<TypeId> {
        (0..self.node_types.len())
            .filter(|&u| self.edge_type_between(t, u).is_some())
            .collect()
    }

    /// Hop distance from `from` to every type, `None` when unreachable.
    pub fn bfs_distances(&self, from: TypeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_types.len()];
        if self.node_types.is_empty() {
            return dist;
        }
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(t) = queue.pop_front() {
            let d = dist[t].unwrap();
            for u in self.adjacent_types(t) {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

/// Sparse feature rows for one node type, indexed by position within the type.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub dim: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.dim];
                for &(j, v) in row {
                    dense[j] += v;
                }
                dense
            })
            .collect()
    }
}

/// An immutable typed graph with dense node ids.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    schema: Schema,
    names: Vec<String>,
    node_type: Vec<TypeId>,
    type_ranges: Vec<Range<NodeId>>,
    index: HashMap<String, NodeId>,
    /// Per edge type: unique unordered pairs, first endpoint of the first declared type.
    edges: Vec<Vec<(NodeId, NodeId)>>,
    /// `adjacency[v][t]`: sorted neighbors of `v` with type `t`.
    adjacency: Vec<Vec<Vec<NodeId>>>,
    labels: Vec<Option<usize>>,
    features: Vec<Option<SparseRows>>,
}

impl HeteroGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_types(&self) -> usize {
        self.schema.node_types.len()
    }

    /// The type mapping φ.
    pub fn node_type(&self, v: NodeId) -> TypeId {
        self.node_type[v]
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.schema.node_types[t]
    }

    pub fn type_range(&self, t: TypeId) -> Range<NodeId> {
        self.type_ranges[t].clone()
    }

    pub fn nodes_of_type(&self, t: TypeId) -> Range<NodeId> {
        self.type_range(t)
    }

    /// Position of `v` inside its type's id range.
    pub fn local_index(&self, v: NodeId) -> usize {
        v - self.type_ranges[self.node_type[v]].start
    }

    pub fn node_name(&self, v: NodeId) -> &str {
        &self.names[v]
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn label(&self, v: NodeId) -> Option<usize> {
        self.labels[v]
    }

    pub fn labeled_nodes(&self) -> Vec<NodeId> {
        (0..self.num_nodes()).filter(|&v| self.labels[v].is_some()).collect()
    }

    pub fn features(&self, t: TypeId) -> Option<&SparseRows> {
        self.features[t].as_ref()
    }

    /// Unique undirected edges of edge type `e`.
    pub fn edges(&self, e: usize) -> &[(NodeId, NodeId)] {
        &self.edges[e]
    }

    /// Sorted, duplicate-free neighbors of `v` whose type is `t`.
    ///
    /// Empty when no edge type joins `φ(v)` and `t`.
    pub fn neighbors_of_type(&self, v: NodeId, t: TypeId) -> &[NodeId] {
        &self.adjacency[v][t]
    }

    /// Same as [`neighbors_of_type`](Self::neighbors_of_type) with the type given by name.
    pub fn neighbors_of_type_name(&self, v: NodeId, t: &str) -> &[NodeId] {
        match self.schema.type_id(t) {
            Some(t) => self.neighbors_of_type(v, t),
            None => &[],
        }
    }

    /// All direct neighbors of `v`, every type, ascending.
    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[v].iter().flatten().copied()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].iter().map(Vec::len).sum()
    }

    pub fn stats(&self, splits: Option<&Splits>) -> DatasetStats {
        DatasetStats {
            node_counts: self
                .schema
                .node_types
                .iter()
                .zip(&self.type_ranges)
                .map(|(t, r)| (t.clone(), r.len()))
                .collect(),
            edge_counts: self
                .schema
                .edge_types
                .iter()
                .zip(&self.edges)
                .map(|((a, b), e)| (format!("{a}-{b}"), e.len()))
                .collect(),
            num_classes: self.schema.num_classes,
            split_sizes: splits.map(|s| SplitSizes {
                train: s.train.len(),
                validation: s.validation.len(),
                test: s.test.len(),
            }),
        }
    }
}

/// Accumulates nodes, edges, labels and features, then validates into a [`HeteroGraph`].
#[derive(Debug)]
pub struct GraphBuilder {
    schema: Schema,
    nodes: Vec<BTreeSet<String>>,
    edges: Vec<Vec<(String, String, usize)>>,
    labels: Vec<(String, usize)>,
    features: BTreeMap<TypeId, Vec<(String, Vec<(usize, f64)>)>>,
    warnings: Vec<String>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Result<Self> {
        schema.validate()?;
        let n_types = schema.node_types.len();
        let n_edges = schema.edge_types.len();
        Ok(GraphBuilder {
            schema,
            nodes: vec![BTreeSet::new(); n_types],
            edges: vec![Vec::new(); n_edges],
            labels: Vec::new(),
            features: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn add_node(&mut self, node_type: &str, name: &str) -> Result<&mut Self> {
        let t = self
            .schema
            .type_id(node_type)
            .ok_or_else(|| Error::Validation(format!("unknown node type {node_type}")))?;
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Validation(format!("bad node id {name:?}")));
        }
        if !self.nodes[t].insert(name.to_string()) {
            self.warnings.push(format!("node {name} of type {node_type} listed twice"));
        }
        Ok(self)
    }

    /// Adds an undirected edge of the edge type with the given index.
    /// `line` is reported in validation errors (0 when not from a file).
    pub fn add_edge_at(&mut self, edge_type: usize, a: &str, b: &str, line: usize) -> &mut Self {
        self.edges[edge_type].push((a.to_string(), b.to_string(), line));
        self
    }

    /// Adds an undirected edge between two named nodes; the edge type is
    /// inferred from their node types at build time.
    pub fn add_edge(&mut self, a_type: &str, a: &str, b_type: &str, b: &str) -> Result<&mut Self> {
        let (ta, tb) = match (self.schema.type_id(a_type), self.schema.type_id(b_type)) {
            (Some(ta), Some(tb)) => (ta, tb),
            _ => return Err(Error::Validation(format!("unknown node type in edge {a_type}-{b_type}"))),
        };
        let e = self
            .schema
            .edge_type_between(ta, tb)
            .ok_or_else(|| Error::Validation(format!("no edge type {a_type}-{b_type}")))?;
        let (first, _) = &self.schema.edge_types[e];
        if *first == self.schema.node_types[ta] {
            self.add_edge_at(e, a, b, 0);
        } else {
            self.add_edge_at(e, b, a, 0);
        }
        Ok(self)
    }

    pub fn set_label(&mut self, name: &str, class: usize) -> &mut Self {
        self.labels.push((name.to_string(), class));
        self
    }

    pub fn set_features(&mut self, node_type: &str, name: &str, row: Vec<(usize, f64)>) -> Result<&mut Self> {
        let t = self
            .schema
            .type_id(node_type)
            .ok_or_else(|| Error::Validation(format!("unknown node type {node_type}")))?;
        self.features.entry(t).or_default().push((name.to_string(), row));
        Ok(self)
    }

    /// Validates and freezes the graph. Non-fatal findings are returned as warnings.
    pub fn build(self) -> Result<(HeteroGraph, Vec<String>)> {
        let GraphBuilder {
            schema,
            nodes,
            edges: raw_edges,
            labels: raw_labels,
            features: raw_features,
            mut warnings,
        } = self;

        let mut names = Vec::new();
        let mut node_type = Vec::new();
        let mut type_ranges = Vec::new();
        let mut index = HashMap::new();
        for (t, set) in nodes.into_iter().enumerate() {
            let start = names.len();
            for name in set {
                if let Some(prev) = index.insert(name.clone(), names.len()) {
                    return Err(Error::Validation(format!(
                        "node id {name} is used by types {} and {}",
                        schema.node_types[node_type[prev]], schema.node_types[t]
                    )));
                }
                names.push(name);
                node_type.push(t);
            }
            type_ranges.push(start..names.len());
        }

        let n_types = schema.node_types.len();
        let mut adjacency = vec![vec![Vec::new(); n_types]; names.len()];
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (e, list) in raw_edges.into_iter().enumerate() {
            let (ta_name, tb_name) = &schema.edge_types[e];
            let ta = schema.type_id(ta_name).unwrap();
            let tb = schema.type_id(tb_name).unwrap();
            let label = format!("edges_{ta_name}_{tb_name}");
            let resolve = |name: &str, want: TypeId, line: usize| -> Result<NodeId> {
                let v = *index.get(name).ok_or_else(|| {
                    Error::Validation(format!("{label} line {line}: dangling endpoint {name}"))
                })?;
                if node_type[v] != want {
                    return Err(Error::Validation(format!(
                        "{label} line {line}: node {name} has type {}, expected {}",
                        schema.node_types[node_type[v]], schema.node_types[want]
                    )));
                }
                Ok(v)
            };
            let mut pairs = BTreeSet::new();
            let mut raw_count = 0usize;
            for (a, b, line) in &list {
                let u = resolve(a, ta, *line)?;
                let v = resolve(b, tb, *line)?;
                raw_count += 1;
                let key = if ta == tb { (u.min(v), u.max(v)) } else { (u, v) };
                pairs.insert(key);
            }
            if list.is_empty() {
                warnings.push(format!("edge type {ta_name}-{tb_name} has no edges"));
            }
            let dups = raw_count - pairs.len();
            if dups > 0 {
                warnings.push(format!("edge type {ta_name}-{tb_name}: {dups} duplicate edges removed"));
            }
            for &(u, v) in &pairs {
                adjacency[u][node_type[v]].push(v);
                if u != v {
                    adjacency[v][node_type[u]].push(u);
                }
            }
            edges.push(pairs.into_iter().collect::<Vec<_>>());
        }
        for per_type in &mut adjacency {
            for list in per_type {
                list.sort_unstable();
                list.dedup();
            }
        }

        let basic = schema.basic_type_id();
        let mut labels = vec![None; names.len()];
        for (name, class) in raw_labels {
            let v = *index
                .get(&name)
                .ok_or_else(|| Error::Validation(format!("label for unknown node {name}")))?;
            if node_type[v] != basic {
                return Err(Error::Validation(format!(
                    "label on node {name} of non-basic type {}",
                    schema.node_types[node_type[v]]
                )));
            }
            if class >= schema.num_classes {
                return Err(Error::Validation(format!(
                    "label {class} of node {name} outside [0, {})",
                    schema.num_classes
                )));
            }
            if labels[v].replace(class).is_some() {
                return Err(Error::Validation(format!("node {name} labeled twice")));
            }
        }

        let mut features = vec![None; n_types];
        for (t, rows) in raw_features {
            let range = type_ranges[t].clone();
            let mut dense_rows = vec![None; range.len()];
            let mut dim = schema.feature_dims.get(&schema.node_types[t]).copied();
            let inferred = rows
                .iter()
                .flat_map(|(_, r)| r.iter().map(|&(j, _)| j + 1))
                .max()
                .unwrap_or(0);
            match dim {
                Some(d) if inferred > d => {
                    return Err(Error::Validation(format!(
                        "features of type {} use dimension {} but feature_dims is {d}",
                        schema.node_types[t],
                        inferred - 1
                    )))
                }
                None => dim = Some(inferred),
                _ => {}
            }
            for (name, mut row) in rows {
                let v = *index
                    .get(&name)
                    .ok_or_else(|| Error::Validation(format!("features for unknown node {name}")))?;
                if node_type[v] != t {
                    return Err(Error::Validation(format!(
                        "features for node {name} listed under type {}",
                        schema.node_types[t]
                    )));
                }
                row.sort_by_key(|&(j, _)| j);
                if dense_rows[v - range.start].replace(row).is_some() {
                    return Err(Error::Validation(format!("node {name} has two feature rows")));
                }
            }
            let missing = dense_rows.iter().filter(|r| r.is_none()).count();
            if missing > 0 {
                warnings.push(format!(
                    "{missing} nodes of type {} have no feature row; using zeros",
                    schema.node_types[t]
                ));
            }
            features[t] = Some(SparseRows {
                dim: dim.unwrap(),
                rows: dense_rows.into_iter().map(Option::unwrap_or_default).collect(),
            });
        }

        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((
            HeteroGraph {
                schema,
                names,
                node_type,
                type_ranges,
                index,
                edges,
                adjacency,
                labels,
                features,
            },
            warnings,
        ))
    }
}

/// Train / validation / test node lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<NodeId>,
    pub validation: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl Splits {
    /// Splits must be disjoint and together cover exactly the labeled nodes.
    pub fn validate(&self, graph: &HeteroGraph) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, list) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            for &v in list {
                if !seen.insert(v) {
                    return Err(Error::Validation(format!(
                        "node {} appears in more than one split (again in {name})",
                        graph.node_name(v)
                    )));
                }
                if graph.label(v).is_none() {
                    return Err(Error::Validation(format!(
                        "{name} split contains unlabeled node {}",
                        graph.node_name(v)
                    )));
                }
            }
        }
        let labeled = graph.labeled_nodes();
        if labeled.len() != seen.len() {
            let missing = labeled.iter().find(|v| !seen.contains(v)).unwrap();
            return Err(Error::Validation(format!(
                "labeled node {} is in no split",
                graph.node_name(*missing)
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Cardinalities of a loaded dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub node_counts: BTreeMap<String, usize>,
    pub edge_counts: BTreeMap<String, usize>,
    pub num_classes: usize,
    pub split_sizes: Option<SplitSizes>,
}

/// A graph together with its label splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: HeteroGraph,
    pub splits: Splits,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Lines with their 1-based numbers, skipping blanks.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_feature_row(file: &str, line: usize, fields: &[&str]) -> Result<Vec<(usize, f64)>> {
    fields
        .iter()
        .map(|f| {
            let (d, v) = f.split_once(':').ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line,
                message: format!("expected dim:value, got {f:?}"),
            })?;
            let d = d.parse::<usize>().map_err(|e| Error::Parse {
                file: file.to_string(),
                line,
                message: format!("bad dimension {d:?}: {e}"),
            })?;
            let v = v.parse::<f64>().map_err(|e| Error::Parse {
                file: file.to_string(),
                line,
                message: format!("bad value {v:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    message: "non-finite feature value".into(),
                });
            }
            Ok((d, v))
        })
        .collect()
}

/// Loads a dataset directory.
///
/// Layout (UTF-8, tab-separated):
///
/// | file | content |
/// |---|---|
/// | `schema.json` | node types, edge type pairs, basic type, class count |
/// | `nodes_<Type>.tsv` | one node id per line |
/// | `edges_<A>_<B>.tsv` | `src<TAB>dst` |
/// | `features_<Type>.tsv` | `node<TAB>dim:value<TAB>...`; required for the basic type |
/// | `labels.tsv` | `node<TAB>class` |
/// | `splits.json` | `{"train": [...], "validation": [...], "test": [...]}` |
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let schema_path = dir.join("schema.json");
    let schema: Schema = serde_json::from_str(&read_text(&schema_path)?).map_err(|source| Error::Json {
        file: "schema.json".into(),
        source,
    })?;
    let mut builder = GraphBuilder::new(schema.clone())?;

    for t in &schema.node_types {
        let path = dir.join(format!("nodes_{t}.tsv"));
        let text = read_text(&path)?;
        for (line, l) in data_lines(&text) {
            let id = l.trim();
            builder.add_node(t, id).map_err(|e| Error::Parse {
                file: file_name(&path),
                line,
                message: e.to_string(),
            })?;
        }
    }

    for (e, (a, b)) in schema.edge_types.iter().enumerate() {
        let path = dir.join(format!("edges_{a}_{b}.tsv"));
        let text = read_text(&path)?;
        for (line, l) in data_lines(&text) {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    file: file_name(&path),
                    line,
                    message: format!("expected 2 fields, got {}", fields.len()),
                });
            }
            builder.add_edge_at(e, fields[0].trim(), fields[1].trim(), line);
        }
    }

    for t in &schema.node_types {
        let path = dir.join(format!("features_{t}.tsv"));
        if !path.exists() {
            if *t == schema.basic_type {
                return Err(Error::MissingFile(path));
            }
            continue;
        }
        let text = read_text(&path)?;
        let fname = file_name(&path);
        for (line, l) in data_lines(&text) {
            let fields: Vec<&str> = l.split('\t').collect();
            let row = parse_feature_row(&fname, line, &fields[1..])?;
            builder.set_features(t, fields[0].trim(), row)?;
        }
    }

    let labels_path = dir.join("labels.tsv");
    let text = read_text(&labels_path)?;
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split('\t').collect();
        let class = fields
            .get(1)
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                file: "labels.tsv".into(),
                line,
                message: "expected node<TAB>class".into(),
            })?;
        builder.set_label(fields[0].trim(), class);
    }

    let (graph, warnings) = builder.build()?;
    if graph.features(graph.schema().basic_type_id()).is_none() {
        return Err(Error::Validation("basic type has no features".into()));
    }

    let splits_text = read_text(&dir.join("splits.json"))?;
    let raw: SplitsFile = serde_json::from_str(&splits_text).map_err(|source| Error::Json {
        file: "splits.json".into(),
        source,
    })?;
    let resolve = |ids: Vec<String>| -> Result<Vec<NodeId>> {
        ids.into_iter()
            .map(|id| {
                graph
                    .node_id(&id)
                    .ok_or_else(|| Error::Validation(format!("splits.json names unknown node {id}")))
            })
            .collect()
    };
    let splits = Splits {
        train: resolve(raw.train)?,
        validation: resolve(raw.validation)?,
        test: resolve(raw.test)?,
    };
    splits.validate(&graph)?;
    Ok(Dataset { graph, splits, warnings })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` in the directory layout read by [`load_dataset`].
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &dataset.graph;
    let mut schema = g.schema().clone();
    for t in 0..g.num_types() {
        if let Some(f) = g.features(t) {
            schema.feature_dims.insert(g.type_name(t).to_string(), f.dim);
        }
    }
    let json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    write_file(&dir.join("schema.json"), &(json + "\n"))?;

    for t in 0..g.num_types() {
        let mut out = String::new();
        for v in g.nodes_of_type(t) {
            out.push_str(g.node_name(v));
            out.push('\n');
        }
        write_file(&dir.join(format!("nodes_{}.tsv", g.type_name(t))), &out)?;

        if let Some(f) = g.features(t) {
            let mut out = String::new();
            for (i, v) in g.nodes_of_type(t).enumerate() {
                out.push_str(g.node_name(v));
                for &(j, x) in &f.rows[i] {
                    out.push_str(&format!("\t{j}:{x}"));
                }
                out.push('\n');
            }
            write_file(&dir.join(format!("features_{}.tsv", g.type_name(t))), &out)?;
        }
    }
    for (e, (a, b)) in g.schema().edge_types.iter().enumerate() {
        let mut out = String::new();
        for &(u, v) in g.edges(e) {
            out.push_str(&format!("{}\t{}\n", g.node_name(u), g.node_name(v)));
        }
        write_file(&dir.join(format!("edges_{a}_{b}.tsv")), &out)?;
    }
    let mut out = String::new();
    for v in g.labeled_nodes() {
        out.push_str(&format!("{}\t{}\n", g.node_name(v), g.label(v).unwrap()));
    }
    write_file(&dir.join("labels.tsv"), &out)?;

    let names = |ids: &[NodeId]| ids.iter().map(|&v| g.node_name(v).to_string()).collect();
    let splits = SplitsFile {
        train: names(&dataset.splits.train),
        validation: names(&dataset.splits.validation),
        test: names(&dataset.splits.test),
    };
    let json = serde_json::to_string_pretty(&splits).expect("splits serialize");
    write_file(&dir.join("splits.json"), &(json + "\n"))
}
