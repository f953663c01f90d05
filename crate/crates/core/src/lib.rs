//! Intrinsic self-correction experiments for multiple-choice vision-language
//! benchmarks: corpus handling, a chat gateway, the multi-turn protocol,
//! answer grading, preference-set construction, a desk-scale preference
//! optimizer, and evaluation reports.

pub mod corpus;
pub mod dpo;
pub mod evalkit;
pub mod gateway;
pub mod grading;
pub mod jsonl;
pub mod pipeline;
pub mod prefset;
pub mod rng;
pub mod selfcorrect;
pub mod synthetic;
