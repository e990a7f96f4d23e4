//! Routing audio segments to the ASR system most likely to transcribe them best.

pub mod config;
pub mod datamodel;
pub mod ensemble;
pub mod features;
pub mod gbm;
pub mod hpo;
pub mod labeling;
pub mod metrics;
pub mod modelio;
pub mod pipeline;
pub mod synth;
pub mod training;
