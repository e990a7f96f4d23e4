#![allow(dead_code)]

use asr_router::datamodel::{Dataset, SystemProfile};
use asr_router::ensemble::TrainingInfo;
use asr_router::features::{FeatureSchema, GroupToggles};
use asr_router::gbm::Hyperparams;
use asr_router::labeling::Weighting;
use asr_router::synth::{synthesize_dataset, RuleTerm, SynthConfig, SynthSystem};

/// The four-system preset plus a fifth system that never beats the pivot.
pub fn five_system(n: usize, noise: f64) -> SynthConfig {
    let mut cfg = SynthConfig::four_system(n, noise);
    cfg.systems.push(SynthSystem {
        profile: SystemProfile::new("sys_lose", 0.5, 0.2, false),
        base_wer: 0.9,
        terms: vec![RuleTerm::linear(3, 0.0)],
    });
    cfg
}

/// Same records, restricted to the given systems.
pub fn restrict(ds: &Dataset, ids: &[&str]) -> Dataset {
    Dataset {
        systems: ds.systems.subset(ids).unwrap(),
        schema: ds.schema,
        records: ds.records.clone(),
    }
}

pub fn split_at(ds: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    (
        ds.with_records(ds.records[..n_train].to_vec()),
        ds.with_records(ds.records[n_train..].to_vec()),
    )
}

pub fn schema(ds: &Dataset) -> FeatureSchema {
    FeatureSchema::for_records(&ds.schema, &ds.records, GroupToggles::default())
}

pub fn quick_info(weighting: Weighting) -> TrainingInfo {
    TrainingInfo {
        hyperparams: Hyperparams {
            n_rounds: 40,
            max_depth: 3,
            learning_rate: 0.2,
            ..Default::default()
        },
        weighting,
        seed: 7,
    }
}

pub fn synth(cfg: &SynthConfig, seed: u64) -> Dataset {
    synthesize_dataset(cfg, seed).unwrap()
}
