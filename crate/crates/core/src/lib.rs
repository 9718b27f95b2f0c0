//! Knowledge-tracing benchmark: data loading, DKT, SAKT and a content-embedding
//! temporal transformer, LLM prompting, and latency/cost accounting.

pub mod bench;
pub mod data;
pub mod embedding;
pub mod llm;
pub mod metrics;
pub mod models;
pub mod synth;
