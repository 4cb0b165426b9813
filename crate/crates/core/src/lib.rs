pub mod catalog;
pub mod cluster;
pub mod embed;
pub mod llm;
pub mod text;
pub mod summarize;
pub mod tree;
pub mod ranked;
pub mod search;
pub mod baselines;
pub mod eval;
