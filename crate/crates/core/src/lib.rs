pub mod cli;
pub mod engine;
pub mod graph;
pub mod llm;
pub mod policy;
pub mod prompts;
pub mod tasks;
pub mod trainer;
