//! Hybrid legal-evidence retrieval, rubric-based judgment rewards and a
//! group-relative policy optimization core.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: legal documents, case records and the snapshot store.
//! - [`sparse`], [`dense`], [`rerank`]: the standard retrieval route.
//! - [`agent`]: query planning, multi-view recall, evidence selection and
//!   the stage rewards used to optimise them.
//! - [`fusion`]: weighted reciprocal rank fusion of the two routes.
//! - [`rubric`]: judgment parsing and the three-part rubric reward.
//! - [`grpo`]: group advantages, the toy categorical policy and its trainer.
//! - [`metrics`]: retrieval and generation evaluation.
//! - [`llm`]: text-generation clients (remote and transcript stub).
//! - [`synthetic`]: deterministic fixture generators.

pub mod agent;
pub mod corpus;
pub mod dense;
pub mod fsio;
pub mod fusion;
pub mod grpo;
pub mod llm;
pub mod metrics;
pub mod rerank;
pub mod rubric;
pub mod sparse;
pub mod synthetic;
pub mod text;
pub mod types;

pub use types::{EvidenceSet, RankedList, Scored};
