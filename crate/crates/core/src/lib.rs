//! Online active semi-supervised learning over a Fuzzy-ART topology.
//!
//! A stream of feature vectors in `[0, 1]^n` grows a graph of category
//! nodes whose edges count co-activations. Labels obtained from an oracle
//! accumulate as per-node densities; predictions and query scores come from
//! discounted message passing around the winning node. A query strategy
//! spends a hard budget of `B` labels per window of `W` samples.
//!
//! Module map:
//!
//! * [`graph`]: activation, winner selection, node and edge formation.
//! * [`message_passing`]: layered aggregation of node information.
//! * [`inference`]: probabilities, uncertainties and query scores.
//! * [`strategies`]: Random, Memory and Explorer query selection.
//! * [`engine`]: the per-sample loop and evaluation-time classification.
//! * [`datasets`]: synthetic generators and the embedding file format.
//! * [`harness`]: repeated trials, ablations and graph statistics.

pub mod config;
pub mod datasets;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod message_passing;
pub mod strategies;

pub use config::{Hyperparams, RunConfig, ScoreMode, StrategyKind};
pub use engine::{DatasetOracle, Engine, Oracle, OracleAnswer, PendingQuery, StepRecord};
pub use error::{Error, Result};
pub use graph::{ClassId, CodedInput, FeatureVector, NodeId, TopoGraph};
pub use inference::{InferenceRecord, Prediction};
