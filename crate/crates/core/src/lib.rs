pub mod agent;
pub mod domain;
pub mod evaluation;
pub mod http;
pub mod llm;
pub mod pipelines;
pub mod retrieval;
pub mod report;
