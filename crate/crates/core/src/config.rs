//! Training configuration as read from `config.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::centrality::{Bucketing, CentralityOptions};
use crate::error::{Error, Result};
use crate::hetgraph::Schema;
use crate::metapath::MetaPath;

/// Every knob of a training run. Missing keys take their defaults, unknown
/// keys are rejected.
///
/// ```
/// use shgnn::TrainConfig;
///
/// let cfg: TrainConfig = serde_json::from_str(r#"{"d1": 8, "L": 2}"#).unwrap();
/// assert_eq!(cfg.layers, 2);
/// assert_eq!(cfg.learning_rate, 0.005);
/// assert!(serde_json::from_str::<TrainConfig>(r#"{"d_1": 8}"#).is_err());
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Latent width; latents and messages have `2·d1` entries.
    pub d1: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(rename = "L", alias = "layers")]
    pub layers: usize,
    pub seed: u64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub use_centrality_c: bool,
    pub use_centrality_cplus: bool,
    /// Off: aggregate over the flat list of instances instead of the trie.
    pub use_tree_attention: bool,
    /// ELU after every tree level.
    pub tree_sigma: bool,
    /// Type sequences such as `["M", "A", "M"]`. Empty means one
    /// `B-X-B` path for every type `X` adjacent to the basic type `B`.
    pub metapaths: Vec<Vec<String>>,
    pub bucketing: Bucketing,
    /// Cap on instances per (meta-path, target).
    pub max_instances: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d1: 64,
            learning_rate: 0.005,
            epochs: 200,
            layers: 1,
            seed: 0,
            patience: 30,
            weight_decay: 0.0,
            use_centrality_c: true,
            use_centrality_cplus: true,
            use_tree_attention: true,
            tree_sigma: false,
            metapaths: Vec::new(),
            bucketing: Bucketing::Clamp,
            max_instances: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            file: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 {
            return Err(Error::Config("d1 must be at least 1".into()));
        }
        // zero is allowed: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} is not a finite non-negative number", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("L must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} is not a finite non-negative number", self.weight_decay)));
        }
        if self.max_instances == Some(0) {
            return Err(Error::Config("max_instances must be positive".into()));
        }
        Ok(())
    }

    pub fn centrality_options(&self) -> CentralityOptions {
        CentralityOptions {
            use_c: self.use_centrality_c,
            use_c_plus: self.use_centrality_cplus,
            bucketing: self.bucketing,
        }
    }

    /// The configured meta-paths, or the default set for the schema.
    pub fn resolve_metapaths(&self, schema: &Schema) -> Result<Vec<MetaPath>> {
        if self.metapaths.is_empty() {
            return Ok(default_metapaths(schema));
        }
        self.metapaths.iter().map(|names| MetaPath::new(schema, names)).collect()
    }

    /// The config with its meta-path list filled in, as persisted next to results.
    pub fn resolved(&self, schema: &Schema) -> Result<TrainConfig> {
        let mut out = self.clone();
        out.metapaths = self
            .resolve_metapaths(schema)?
            .iter()
            .map(|p| p.type_names().to_vec())
            .collect();
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `B-X-B` for every type `X` adjacent to the basic type `B`, by name.
pub fn default_metapaths(schema: &Schema) -> Vec<MetaPath> {
    let b = schema.basic_type_id();
    let mut adjacent = schema.adjacent_types(b);
    adjacent.sort_by(|&x, &y| schema.node_types[x].cmp(&schema.node_types[y]));
    adjacent
        .into_iter()
        .map(|x| {
            let name = [&schema.basic_type, &schema.node_types[x], &schema.basic_type];
            MetaPath::new(schema, &name).expect("adjacent types are joined by an edge type")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        assert!(json.contains("\"L\":1"));
    }

    #[test]
    fn layers_key_accepted() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"layers": 3}"#).unwrap();
        assert_eq!(cfg.layers, 3);
    }

    #[test]
    fn invalid_values() {
        for bad in [
            TrainConfig { d1: 0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { layers: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        let frozen = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(frozen.validate().is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..Default::default() };
        assert_eq!(a.hash(), TrainConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn default_paths_go_through_each_neighbor_type() {
        let schema = Schema::new(&["P", "A", "C", "T"], &[("P", "A"), ("P", "C"), ("P", "T")], "P", 4).unwrap();
        let names: Vec<String> = default_metapaths(&schema).iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["P-A-P", "P-C-P", "P-T-P"]);
    }
}
