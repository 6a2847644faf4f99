pub mod canonicalizer;
pub mod error;
pub mod model;
pub mod ontology;
pub mod resources;
pub mod verbalizer;
pub mod parallel;
pub mod seed;
pub mod synthetic;
pub mod rule_dst;
pub mod noise;
pub mod lm;
pub mod decoding;
pub mod metrics;
pub mod backend;
pub mod ingestion;
pub mod config;
pub mod harness;
pub mod report;
