//! Downstream evaluation of embeddings: a linear SVM for classification,
//! k-means for clustering, and the four reported metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;

/// Training fractions of the classification protocol.
pub const FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Repetitions averaged per fraction or clustering run.
pub const RUNS: usize = 10;

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metric", format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    Ok(())
}

fn per_class_f1(pred: &[usize], truth: &[usize], classes: &[usize]) -> Vec<f64> {
    classes
        .iter()
        .map(|&c| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for (&p, &t) in pred.iter().zip(truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                log::info!("class {c} is neither predicted nor present; its F1 counts as 0");
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// sequence.
///
/// ```
/// use shgnn::eval::{macro_f1, micro_f1};
///
/// // a constant predictor on balanced data
/// let truth = [0, 0, 1, 1];
/// let pred = [0, 0, 0, 0];
/// assert!((macro_f1(&pred, &truth).unwrap() - 1.0 / 3.0).abs() < 1e-15);
/// assert_eq!(micro_f1(&pred, &truth).unwrap(), 0.5);
/// ```
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mut classes: Vec<usize> = pred.iter().chain(truth).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Ok(0.0);
    }
    let f = per_class_f1(pred, truth, &classes);
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// [`macro_f1`] over the fixed class set `0..num_classes`; a class that is
/// neither predicted nor present scores 0.
pub fn macro_f1_with_classes(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(pred, truth)?;
    if num_classes == 0 {
        return Ok(0.0);
    }
    let classes: Vec<usize> = (0..num_classes).collect();
    let f = per_class_f1(pred, truth, &classes);
    Ok(f.iter().sum::<f64>() / num_classes as f64)
}

/// F1 from pooled counts; for single-label data this is the accuracy.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Contingency counts `n_ij` with row and column sums.
struct Contingency {
    cells: Vec<u64>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Contingency {
    let relabel = |xs: &[usize]| -> Vec<usize> {
        let mut ids = BTreeMap::new();
        xs.iter()
            .map(|x| {
                let next = ids.len();
                *ids.entry(*x).or_insert(next)
            })
            .collect()
    };
    let (a, b) = (relabel(truth), relabel(pred));
    let r = a.iter().max().map_or(0, |m| m + 1);
    let c = b.iter().max().map_or(0, |m| m + 1);
    let mut cells = vec![0u64; r * c];
    for (&i, &j) in a.iter().zip(&b) {
        cells[i * c + j] += 1;
    }
    let rows = (0..r).map(|i| cells[i * c..(i + 1) * c].iter().sum()).collect();
    let cols = (0..c).map(|j| (0..r).map(|i| cells[i * c + j]).sum()).collect();
    Contingency {
        cells,
        rows,
        cols,
        n: pred.len() as u64,
    }
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies. Two
/// single-cluster partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let ct = contingency(pred, truth);
    let n = ct.n as f64;
    let c = ct.cols.len();
    let mut mi = 0.0;
    for (i, &ri) in ct.rows.iter().enumerate() {
        for (j, &cj) in ct.cols.iter().enumerate() {
            let nij = ct.cells[i * c + j];
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (ri as f64 * cj as f64)).ln();
            }
        }
    }
    let (hu, hv) = (entropy(&ct.rows, n), entropy(&ct.cols, n));
    let denom = (hu + hv) / 2.0;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(k: u64) -> f64 {
    (k * k.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index. When both partitions are trivial in the same way
/// (all singletons, or one cluster) the adjustment is 0/0 and the index is 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let ct = contingency(pred, truth);
    let index: f64 = ct.cells.iter().map(|&k| pairs(k)).sum();
    let a: f64 = ct.rows.iter().map(|&k| pairs(k)).sum();
    let b: f64 = ct.cols.iter().map(|&k| pairs(k)).sum();
    let total = pairs(ct.n);
    let expected = if total == 0.0 { 0.0 } else { a * b / total };
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Classification scores for one training fraction, averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionScores {
    pub fraction: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub k: usize,
    pub nmi: f64,
    pub ari: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Clustering,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classification: Vec<FractionScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringScores>,
}

/// One-vs-rest linear SVM trained by full-batch subgradient descent on the
/// L2-regularized hinge loss. Inputs are standardized with the training
/// mean and deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Per class: weights then bias.
    planes: Vec<(Vec<f64>, f64)>,
}

pub const SVM_LEARNING_RATE: f64 = 0.01;
pub const SVM_ITERATIONS: usize = 500;
pub const SVM_LAMBDA: f64 = 1e-4;

impl LinearSvm {
    pub fn train(x: &[&[f64]], y: &[usize], num_classes: usize) -> Result<LinearSvm> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::shape("svm", format!("{} rows, {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for row in x {
            for ((s, v), m) in scale.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|row| row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
            .collect();

        let planes = (0..num_classes)
            .map(|c| {
                let sign: Vec<f64> = y.iter().map(|&t| if t == c { 1.0 } else { -1.0 }).collect();
                let mut w = vec![0.0; d];
                let mut b = 0.0;
                let mut gw = vec![0.0; d];
                for _ in 0..SVM_ITERATIONS {
                    for (g, wi) in gw.iter_mut().zip(&w) {
                        *g = SVM_LAMBDA * wi;
                    }
                    let mut gb = 0.0;
                    for (row, &s) in z.iter().zip(&sign) {
                        let margin = s * (dot(&w, row) + b);
                        if margin < 1.0 {
                            for (g, v) in gw.iter_mut().zip(row) {
                                *g -= s * v / n;
                            }
                            gb -= s / n;
                        }
                    }
                    for (wi, g) in w.iter_mut().zip(&gw) {
                        *wi -= SVM_LEARNING_RATE * g;
                    }
                    b -= SVM_LEARNING_RATE * gb;
                }
                (w, b)
            })
            .collect();
        Ok(LinearSvm { mean, scale, planes })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let z: Vec<f64> = row
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, (w, b)) in self.planes.iter().enumerate() {
            let s = dot(w, &z) + b;
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per class, the first `round(fraction · n_c)` members of a seeded
/// shuffle go to training, keeping at least one on each side when the
/// class has two or more members.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = n;
        }
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn split_seed(seed: u64, fraction_index: usize, run: usize) -> u64 {
    seed.wrapping_mul(1_000_003)
        .wrapping_add((fraction_index * RUNS + run) as u64)
}

/// SVM classification at every fraction, averaged over [`RUNS`] splits.
/// `embeddings` rows align with `labels`.
pub fn svm_evaluate(embeddings: &Tensor, labels: &[usize], fractions: &[f64], seed: u64) -> Result<EvalReport> {
    if embeddings.rank() != 2 || embeddings.rows() != labels.len() {
        return Err(Error::shape(
            "svm_evaluate",
            format!("{:?} embeddings for {} labels", embeddings.shape(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no labeled rows to evaluate".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::Config(format!("training fraction {f} is outside (0, 1)")));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let jobs: Vec<(usize, usize)> = (0..fractions.len()).flat_map(|f| (0..RUNS).map(move |r| (f, r))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(f, r)| -> Result<(f64, f64)> {
            let (train, test) = stratified_split(labels, fractions[f], split_seed(seed, f, r));
            if test.is_empty() {
                return Err(Error::Validation("no rows left for testing".into()));
            }
            let x: Vec<&[f64]> = train.iter().map(|&i| embeddings.row(i)).collect();
            let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let svm = LinearSvm::train(&x, &y, num_classes)?;
            let pred: Vec<usize> = test.iter().map(|&i| svm.predict(embeddings.row(i))).collect();
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            Ok((macro_f1(&pred, &truth)?, micro_f1(&pred, &truth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let classification = fractions
        .iter()
        .enumerate()
        .map(|(f, &fraction)| {
            let runs = &scores[f * RUNS..(f + 1) * RUNS];
            FractionScores {
                fraction,
                macro_f1: runs.iter().map(|s| s.0).sum::<f64>() / RUNS as f64,
                micro_f1: runs.iter().map(|s| s.1).sum::<f64>() / RUNS as f64,
            }
        })
        .collect();
    Ok(EvalReport {
        task: Task::Classification,
        seeds: vec![seed],
        runs: RUNS,
        classification,
        clustering: None,
    })
}

/// Result of one k-means fit.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

pub const KMEANS_MAX_ITERATIONS: usize = 300;
pub const KMEANS_TOLERANCE: f64 = 1e-8;
pub const KMEANS_RESTARTS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(row, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the largest
/// centroid shift drops below [`KMEANS_TOLERANCE`]. An emptied cluster is
/// moved onto the point farthest from its centroid.
pub fn kmeans_once(data: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Result<KMeansFit> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut centroids = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(data.row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), &centroids[centroids.len() - 1]));
        }
    }

    let dim = data.cols();
    let mut assignments = vec![0; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = nearest(data.row(i), &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&i, &j| {
                        let di = sq_dist(data.row(i), &centroids[assignments[i]]);
                        let dj = sq_dist(data.row(j), &centroids[assignments[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("k <= n leaves a cluster with two points");
                let old = assignments[far];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(data.row(far)) {
                    *s -= v;
                }
                assignments[far] = c;
                counts[c] = 1;
                sums[c] = data.row(far).to_vec();
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, a) in assignments.iter_mut().enumerate() {
        let (c, d) = nearest(data.row(i), &centroids);
        *a = c;
        inertia += d;
    }
    Ok(KMeansFit {
        assignments,
        centroids,
        inertia,
    })
}

/// Best of [`KMEANS_RESTARTS`] fits by inertia; earlier restarts win ties.
pub fn kmeans(data: &Tensor, k: usize, seed: u64) -> Result<KMeansFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let fit = kmeans_once(data, k, &mut rng)?;
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// NMI and ARI of k-means clusters against the labels, averaged over
/// [`RUNS`] seeds.
pub fn kmeans_evaluate(embeddings: &Tensor, labels: &[usize], k: usize, seed: u64) -> Result<EvalReport> {
    if embeddings.rank() != 2 || embeddings.rows() != labels.len() {
        return Err(Error::shape(
            "kmeans_evaluate",
            format!("{:?} embeddings for {} labels", embeddings.shape(), labels.len()),
        ));
    }
    let seeds: Vec<u64> = (0..RUNS as u64).map(|r| seed.wrapping_add(r)).collect();
    let scores = seeds
        .par_iter()
        .map(|&s| -> Result<(f64, f64)> {
            let fit = kmeans(embeddings, k, s)?;
            Ok((nmi(&fit.assignments, labels)?, ari(&fit.assignments, labels)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        task: Task::Clustering,
        seeds,
        runs: RUNS,
        classification: Vec::new(),
        clustering: Some(ClusteringScores {
            k,
            nmi: scores.iter().map(|s| s.0).sum::<f64>() / RUNS as f64,
            ari: scores.iter().map(|s| s.1).sum::<f64>() / RUNS as f64,
        }),
    })
}

/// TSV text `node<TAB>v1<TAB>...` with one row per basic-type node. Values
/// use the shortest representation that parses back to the same `f64`.
pub fn embeddings_tsv(g: &HeteroGraph, embeddings: &Tensor) -> Result<String> {
    let basic = g.schema().basic_type_id();
    let range = g.type_range(basic);
    if embeddings.rank() != 2 || embeddings.rows() != range.len() {
        return Err(Error::shape(
            "export_embeddings",
            format!("{:?} rows for {} nodes", embeddings.shape(), range.len()),
        ));
    }
    let mut out = String::new();
    for (i, v) in range.enumerate() {
        out.push_str(g.node_name(v));
        for x in embeddings.row(i) {
            write!(out, "\t{x}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(g: &HeteroGraph, embeddings: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, embeddings_tsv(g, embeddings)?).map_err(|e| Error::io(path, e))
}

/// Reads an embeddings TSV back into node names and a matrix.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Tensor)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        names.push(fields.next().unwrap_or_default().to_string());
        let row = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    message: format!("bad value {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!("expected {} values, found {}", width.unwrap(), row.len()),
            });
        }
        data.extend(row);
    }
    let n = names.len();
    Ok((names, Tensor::matrix(n, width.unwrap_or(0), data)?))
}

/// Reads `node<TAB>class` lines.
pub fn load_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .and_then(|(n, c)| c.trim().parse::<usize>().ok().map(|c| (n.to_string(), c)));
        let (name, class) = parsed.ok_or_else(|| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: "expected node<TAB>class".into(),
        })?;
        out.insert(name, class);
    }
    Ok(out)
}
