//! Structure-aware heterogeneous graph neural network.
//!
//! The crate covers the whole pipeline on a typed graph: loading
//! ([`hetgraph`]), meta-path instances and their aggregation tries
//! ([`metapath`]), feature propagation ([`featprop`]), coverage centrality
//! ([`centrality`]), a small reverse-mode differentiation engine
//! ([`autodiff`]), the forward pass ([`model`]), training ([`train`]) and
//! downstream evaluation ([`eval`]).

pub mod autodiff;
pub mod centrality;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod featprop;
pub mod hetgraph;
pub mod metapath;
pub mod model;
pub mod synth;
pub mod train;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use hetgraph::{load_dataset, Dataset, HeteroGraph, Schema};
pub use metapath::MetaPath;
pub use model::{ModelInputs, ModelParams};
pub use train::{fit, TrainOutcome};
