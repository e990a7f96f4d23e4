//! Planted-rule dataset generator.
//!
//! Each segment draws a standard-normal latent vector `z`. A system's target
//! WER is `base_wer + Σ terms(z) + U(-noise, noise)` (floored at zero), and
//! its hypothesis is the reference with `round(target · N)` errors made of
//! fresh tokens, so the realized WER is exactly `k / N`. Feature families
//! listed as informative carry `z` (plus Gaussian observation noise) in their
//! leading coordinates; the rest are pure noise. The planted best system is
//! the argmin of the continuous target WERs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    DataError, Dataset, DatasetSchema, FeatureBundle, SegmentRecord, SystemOutcome, SystemProfile,
    SystemSet,
};
use crate::features::{confidence_summary, ConfidenceMode, FeatureFamily};
use crate::metrics::{normalize_text, wer};

/// `weight · z[latent]`, or `weight · max(z[latent] - hinge, 0)` when `hinge` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTerm {
    pub latent: usize,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinge: Option<f64>,
}

impl RuleTerm {
    pub fn linear(latent: usize, weight: f64) -> Self {
        Self { latent, weight, hinge: None }
    }

    pub fn hinge(latent: usize, weight: f64, at: f64) -> Self {
        Self {
            latent,
            weight,
            hinge: Some(at),
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let v = z[self.latent];
        match self.hinge {
            None => self.weight * v,
            Some(h) => self.weight * (v - h).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSystem {
    pub profile: SystemProfile,
    pub base_wer: f64,
    #[serde(default)]
    pub terms: Vec<RuleTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDims {
    pub audio: usize,
    pub asr: usize,
    pub qe: usize,
}

impl Default for SynthDims {
    fn default() -> Self {
        Self { audio: 8, asr: 8, qe: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_segments: usize,
    pub systems: Vec<SynthSystem>,
    /// Half-width of the uniform noise added to each target WER.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Standard deviation of observation noise on informative features.
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    #[serde(default)]
    pub dims: SynthDims,
    #[serde(default = "default_informative")]
    pub informative: Vec<FeatureFamily>,
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
    #[serde(default = "default_wps")]
    pub words_per_second: f64,
    #[serde(default = "default_min_duration")]
    pub min_duration: f64,
    #[serde(default = "default_max_duration")]
    pub max_duration: f64,
}

fn default_latent_dim() -> usize {
    4
}
fn default_feature_noise() -> f64 {
    0.05
}
fn default_informative() -> Vec<FeatureFamily> {
    vec![FeatureFamily::Audio, FeatureFamily::Asr, FeatureFamily::Qe]
}
fn default_languages() -> Vec<String> {
    ["en", "fr", "es", "de", "ru"].iter().map(|s| s.to_string()).collect()
}
fn default_wps() -> f64 {
    2.5
}
fn default_min_duration() -> f64 {
    2.0
}
fn default_max_duration() -> f64 {
    12.0
}

impl SynthConfig {
    /// Minimal config with default feature layout.
    pub fn new(n_segments: usize, systems: Vec<SynthSystem>, noise: f64) -> Self {
        Self {
            n_segments,
            systems,
            noise,
            latent_dim: default_latent_dim(),
            feature_noise: default_feature_noise(),
            dims: SynthDims::default(),
            informative: default_informative(),
            languages: default_languages(),
            words_per_second: default_wps(),
            min_duration: default_min_duration(),
            max_duration: default_max_duration(),
        }
    }

    /// Four systems shaped like a realistic deployment: a cheap pivot that
    /// wins most segments outright, a strong but expensive system that wins
    /// the hard ones, and two mid-priced systems that win narrow slices.
    pub fn four_system(n_segments: usize, noise: f64) -> Self {
        let sys = |id: &str, cost: f64, lat: f64, pivot: bool, base: f64, terms: Vec<RuleTerm>| {
            SynthSystem {
                profile: SystemProfile::new(id, cost, lat, pivot),
                base_wer: base,
                terms,
            }
        };
        Self::new(
            n_segments,
            vec![
                sys("pivot", 0.02, 0.05, true, 0.10, vec![RuleTerm::hinge(0, 0.14, 0.0)]),
                sys(
                    "sys_a",
                    0.6,
                    0.25,
                    false,
                    0.20,
                    vec![RuleTerm::hinge(1, -0.14, 0.6), RuleTerm::hinge(0, 0.10, 0.0)],
                ),
                sys(
                    "sys_b",
                    0.7,
                    0.30,
                    false,
                    0.20,
                    vec![RuleTerm::hinge(2, -0.14, 0.6), RuleTerm::hinge(0, 0.10, 0.0)],
                ),
                sys("sys_c", 1.0, 0.40, false, 0.13, vec![RuleTerm::hinge(0, 0.02, 0.0)]),
            ],
            noise,
        )
    }

    pub fn validate(&self) -> Result<SystemSet, DataError> {
        let bad = |m: String| Err(DataError::Generator(m));
        if self.n_segments == 0 {
            return bad("n_segments must be > 0".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be > 0".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be >= 0".into());
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return bad("feature_noise must be >= 0".into());
        }
        if !(self.min_duration > 0.0 && self.max_duration >= self.min_duration && self.max_duration.is_finite()) {
            return bad("need 0 < min_duration <= max_duration".into());
        }
        if !(self.words_per_second > 0.0 && self.words_per_second.is_finite()) {
            return bad("words_per_second must be > 0".into());
        }
        if self.languages.is_empty() {
            return bad("at least one language required".into());
        }
        for s in &self.systems {
            if !(s.base_wer.is_finite() && s.base_wer >= 0.0) {
                return bad(format!("system '{}': base_wer must be >= 0", s.profile.id));
            }
            for t in &s.terms {
                if t.latent >= self.latent_dim || !t.weight.is_finite() {
                    return bad(format!("system '{}': bad rule term {t:?}", s.profile.id));
                }
            }
        }
        SystemSet::new(self.systems.iter().map(|s| s.profile.clone()).collect())
    }

    pub fn schema(&self) -> DatasetSchema {
        let dim = |d: usize| (d > 0).then_some(d);
        DatasetSchema {
            audio_dim: dim(self.dims.audio),
            asr_dim: dim(self.dims.asr),
            confidence: true,
            qe_score: true,
            qe_dim: dim(self.dims.qe),
            signal: true,
        }
    }
}

fn vocabulary() -> Vec<String> {
    const ONSET: [&str; 10] = ["b", "d", "f", "k", "l", "m", "n", "p", "s", "t"];
    const VOWEL: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut v = Vec::new();
    for a in ONSET {
        for b in VOWEL {
            for c in ["", "n", "r", "l"] {
                v.push(format!("{a}{b}{c}"));
            }
        }
    }
    v
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn embedding(rng: &mut ChaCha8Rng, dim: usize, z: Option<&[f64]>, noise: f64) -> Vec<f64> {
    (0..dim)
        .map(|j| match z {
            Some(z) if j < z.len() => z[j] + noise * normal(rng),
            _ => normal(rng),
        })
        .collect()
}

fn hypothesis(rng: &mut ChaCha8Rng, reference: &[String], errors: usize, fresh: &mut usize) -> String {
    let n = reference.len();
    let mut tokens: Vec<String> = reference.to_vec();
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    let mut next_sub = 0;
    for _ in 0..errors {
        *fresh += 1;
        let tok = format!("x{fresh}");
        if next_sub < n && rng.gen_bool(0.8) {
            tokens[positions[next_sub]] = tok;
            next_sub += 1;
        } else {
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, tok);
        }
    }
    tokens.join(" ")
}

/// Generates a dataset from `config`. Identical seeds give identical datasets.
pub fn synthesize_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset, DataError> {
    let systems = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary();
    let informative = |f: FeatureFamily| config.informative.contains(&f);
    let mut records = Vec::with_capacity(config.n_segments);
    let id_width = config.n_segments.to_string().len();
    for idx in 0..config.n_segments {
        let z: Vec<f64> = (0..config.latent_dim).map(|_| normal(&mut rng)).collect();
        let duration = rng.gen_range(config.min_duration..=config.max_duration);
        let language = config.languages[rng.gen_range(0..config.languages.len())].clone();
        let n_words = ((duration * config.words_per_second).round() as usize).max(1);
        let reference: Vec<String> = (0..n_words)
            .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
            .collect();

        let mut outcomes = BTreeMap::new();
        let mut targets = Vec::with_capacity(config.systems.len());
        let mut fresh = 0usize;
        for s in &config.systems {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            let target = (s.base_wer + s.terms.iter().map(|t| t.eval(&z)).sum::<f64>()
                + config.noise * u)
                .max(0.0);
            targets.push(target);
            let k = (target * n_words as f64).round() as usize;
            let hyp = hypothesis(&mut rng, &reference, k, &mut fresh);
            let realized = wer(&reference, &normalize_text(&hyp)).expect("non-empty reference");
            outcomes.insert(
                s.profile.id.clone(),
                SystemOutcome {
                    hypothesis: Some(hyp),
                    wer: realized,
                    cost: duration * s.profile.cost_rate,
                    runtime: duration * s.profile.latency_rate,
                },
            );
        }
        let planted_best = {
            let mut best = 0;
            for i in 1..config.systems.len() {
                let (a, b) = (&config.systems[i].profile, &config.systems[best].profile);
                let key = |t: f64, p: &SystemProfile| (t, p.cost_rate, !p.is_pivot);
                let (ka, kb) = (key(targets[i], a), key(targets[best], b));
                if ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
                    || (ka == kb && a.id < b.id)
                {
                    best = i;
                }
            }
            config.systems[best].profile.id.clone()
        };

        let fnoise = config.feature_noise;
        let audio_z = informative(FeatureFamily::Audio).then_some(z.as_slice());
        let asr_z = informative(FeatureFamily::Asr).then_some(z.as_slice());
        let qe_z = informative(FeatureFamily::Qe).then_some(z.as_slice());
        let audio_embedding = embedding(&mut rng, config.dims.audio, audio_z, fnoise);
        let asr_embedding = embedding(&mut rng, config.dims.asr, asr_z, fnoise);
        let difficulty = match asr_z {
            Some(z) => z[0],
            None => normal(&mut rng),
        };
        let logprobs: Vec<f64> = (0..n_words)
            .map(|_| {
                let logit = 3.0 - difficulty + 0.8 * normal(&mut rng);
                -(-logit).exp().ln_1p()
            })
            .map(|l: f64| l.min(0.0))
            .collect();
        let confidence = confidence_summary(&logprobs, ConfidenceMode::Probability)
            .expect("at least one token");
        let qe_base = match qe_z {
            Some(z) => z[0],
            None => normal(&mut rng),
        };
        let qe_score = 1.0 / (1.0 + (qe_base - 1.5).exp()) + fnoise * normal(&mut rng);
        let qe_embedding = embedding(&mut rng, config.dims.qe, qe_z, fnoise);
        let rms: f64 = rng.gen_range(0.02..0.3);
        let zcr: f64 = rng.gen_range(500.0..4000.0);
        let signal_props = vec![
            duration,
            rms,
            zcr,
            (rms * rng.gen_range(3.0..6.0)).min(1.0),
            rng.gen_range(0.0..0.4),
            zcr / 2.0 * rng.gen_range(0.8..1.2),
        ];
        let dim = |v: Vec<f64>| (!v.is_empty()).then_some(v);
        records.push(SegmentRecord {
            segment_id: format!("seg{idx:0id_width$}"),
            language,
            duration,
            features: FeatureBundle {
                audio_embedding: dim(audio_embedding),
                asr_embedding: dim(asr_embedding),
                confidence_stats: Some(confidence.to_vec()),
                confidence_missing: false,
                qe_score: Some(qe_score),
                qe_embedding: dim(qe_embedding),
                signal_props: Some(signal_props),
            },
            outcomes,
            reference: Some(reference),
            planted_best: Some(planted_best),
        });
    }
    Ok(Dataset {
        systems,
        schema: config.schema(),
        records,
    })
}
