pub mod annotation;
pub mod balance;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod jsonl;
pub mod label;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod textnorm;
