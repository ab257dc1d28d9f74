pub mod annotate;
pub mod checkpoint;
pub mod data;
pub mod diff;
pub mod embed;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod reasoner;
pub mod rng;
pub mod selector;
pub mod synth;
pub mod text;
