//! Hybrid question answering over mixed corpora: a heterogeneous
//! chunk/entity graph for retrieval, model-extracted tables queried through
//! validated relational plans, and semantic-entropy answer review.
//!
//! Every model call goes through [`gateway::Gateway`]; its mock backend makes
//! the whole pipeline deterministic and offline.

pub mod config;
pub mod entropy;
pub mod extraction;
pub mod gateway;
pub mod hetgraph;
pub mod ids;
pub mod ingest;
pub mod pipeline;
pub mod relexec;
pub mod retrieval;
pub mod table;
pub mod text;

pub use config::CliConfig;
pub use gateway::{BackendConfig, Gateway, GatewayError};
pub use hetgraph::HetGraph;
pub use table::{Catalog, Column, DataType, Table, TableSchema, TableSet, Value};
