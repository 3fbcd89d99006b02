//! Built-in synthetic datasets.
//!
//! The planted dataset has movies (`M`) in a few classes and two kinds of
//! actors (`A`). Each *group actor* plays in several movies of one
//! class; each *crowd actor* plays in many movies drawn from every class.
//! Movie features carry a weak class signal under heavy noise, so a movie
//! is classified well only by pooling over the movies it shares a group
//! actor with. Along `M-A-M`, the trie keeps the two actor kinds apart and
//! lets attention weigh them; the flat instance list is dominated by the
//! crowd actors' many instances.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::Result;
use crate::hetgraph::{Dataset, GraphBuilder, Schema, Splits};

/// Shape of the planted dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub classes: usize,
    pub movies_per_class: usize,
    /// Movies per group actor; every movie has exactly one group actor.
    pub group_size: usize,
    pub crowd_actors: usize,
    /// Movies per crowd actor.
    pub crowd_degree: usize,
    pub feature_dim: usize,
    /// Mean of the class coordinate of a movie's features.
    pub signal: f64,
    /// Standard deviation of the noise on every coordinate.
    pub noise: f64,
    /// Per class: training and validation counts; the rest is test.
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            classes: 3,
            movies_per_class: 20,
            group_size: 10,
            crowd_actors: 3,
            crowd_degree: 30,
            feature_dim: 8,
            signal: 1.0,
            noise: 0.7,
            train_per_class: 6,
            val_per_class: 4,
        }
    }
}

fn name(prefix: &str, i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Generates the planted dataset for `seed`.
pub fn planted(cfg: &PlantedConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = Schema::new(&["M", "A"], &[("M", "A")], "M", cfg.classes)?;
    schema.feature_dims = BTreeMap::from([("M".to_string(), cfg.feature_dim)]);
    let mut b = GraphBuilder::new(schema)?;

    let n = cfg.classes * cfg.movies_per_class;
    // shuffled class assignment so ids carry no class order
    let mut class_of: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    class_of.shuffle(&mut rng);
    let movies: Vec<String> = (0..n).map(|i| name("m", i, n)).collect();
    for m in &movies {
        b.add_node("M", m)?;
    }

    let groups_per_class = cfg.movies_per_class.div_ceil(cfg.group_size);
    let group_actors = groups_per_class * cfg.classes;
    let total_actors = group_actors + cfg.crowd_actors;
    let mut actor = 0;
    for c in 0..cfg.classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| class_of[i] == c).collect();
        members.shuffle(&mut rng);
        for chunk in members.chunks(cfg.group_size) {
            let a = name("a", actor, total_actors);
            b.add_node("A", &a)?;
            for &i in chunk {
                b.add_edge("M", &movies[i], "A", &a)?;
            }
            actor += 1;
        }
    }
    for _ in 0..cfg.crowd_actors {
        let a = name("a", actor, total_actors);
        b.add_node("A", &a)?;
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for &i in all.iter().take(cfg.crowd_degree.min(n)) {
            b.add_edge("M", &movies[i], "A", &a)?;
        }
        actor += 1;
    }

    let normal = Normal::new(0.0, cfg.noise).expect("finite noise");
    for (i, m) in movies.iter().enumerate() {
        let row = (0..cfg.feature_dim)
            .map(|j| {
                let mean = if j == class_of[i] % cfg.feature_dim { cfg.signal } else { 0.0 };
                (j, mean + normal.sample(&mut rng))
            })
            .collect();
        b.set_features("M", m, row)?;
        b.set_label(m, class_of[i]);
    }

    let (graph, warnings) = b.build()?;
    let mut splits = Splits::default();
    for c in 0..cfg.classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| class_of[i] == c).collect();
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            let v = graph.node_id(&movies[i]).expect("added above");
            if k < cfg.train_per_class {
                splits.train.push(v);
            } else if k < cfg.train_per_class + cfg.val_per_class {
                splits.validation.push(v);
            } else {
                splits.test.push(v);
            }
        }
    }
    splits.train.sort_unstable();
    splits.validation.sort_unstable();
    splits.test.sort_unstable();
    splits.validate(&graph)?;
    Ok(Dataset { graph, splits, warnings })
}

/// A 30-node graph with movies, actors, and directors for gradient checks:
/// 14 movies in 3 classes with 4 dense features, 10 actors, 6 directors.
pub fn gradcheck_toy(seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = Schema::new(&["M", "A", "D"], &[("M", "A"), ("M", "D")], "M", 3)?;
    schema.feature_dims = BTreeMap::from([("M".to_string(), 4)]);
    let mut b = GraphBuilder::new(schema)?;
    let movies: Vec<String> = (0..14).map(|i| name("m", i, 14)).collect();
    let actors: Vec<String> = (0..10).map(|i| name("a", i, 10)).collect();
    let directors: Vec<String> = (0..6).map(|i| name("d", i, 6)).collect();
    for m in &movies {
        b.add_node("M", m)?;
    }
    for a in &actors {
        b.add_node("A", a)?;
    }
    for d in &directors {
        b.add_node("D", d)?;
    }
    for (i, m) in movies.iter().enumerate() {
        // the last movie has no actor, so one tree per meta-path is bare
        if i + 1 < movies.len() {
            let k = rng.random_range(1..=3);
            let mut picks: Vec<usize> = (0..actors.len()).collect();
            picks.shuffle(&mut rng);
            for &a in picks.iter().take(k) {
                b.add_edge("M", m, "A", &actors[a])?;
            }
        }
        // the first movies cover every director once
        let d = if i < directors.len() { i } else { rng.random_range(0..directors.len()) };
        b.add_edge("M", m, "D", &directors[d])?;
        let row = (0..4).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
        b.set_features("M", m, row)?;
        b.set_label(m, i % 3);
    }
    let (graph, warnings) = b.build()?;
    let mut splits = Splits::default();
    for v in graph.nodes_of_type(0) {
        match graph.local_index(v) % 7 {
            0 => splits.validation.push(v),
            1 => splits.test.push(v),
            _ => splits.train.push(v),
        }
    }
    Ok(Dataset { graph, splits, warnings })
}

/// Configuration used with [`gradcheck_toy`]: two layers and two
/// meta-paths, so every parameter kind is exercised.
pub fn gradcheck_config(seed: u64) -> TrainConfig {
    let path = |x: &str| vec!["M".to_string(), x.to_string(), "M".to_string()];
    TrainConfig {
        d1: 4,
        layers: 2,
        seed,
        metapaths: vec![path("A"), path("D")],
        ..TrainConfig::default()
    }
}
