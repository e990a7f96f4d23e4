//! Training the C-1 pairwise classifiers of a router.

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{Dataset, SegmentRecord, SystemProfile};
use crate::ensemble::{EnsembleError, RouterModel, TrainingInfo};
use crate::features::{FeatureError, FeatureSchema};
use crate::gbm::{train_binary, BinaryClassifier, Booster, GbmError, Matrix, Tree, LEAF_CLAMP};
use crate::labeling::{make_pair_labels, sample_weights, LabelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error("pair {challenger} vs {pivot}: {source}")]
    Gbm {
        challenger: String,
        pivot: String,
        #[source]
        source: GbmError,
    },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("no training records")]
    Empty,
}

/// Assembles every record into a row of a dense matrix.
pub fn assemble_matrix(records: &[SegmentRecord], schema: &FeatureSchema) -> Result<Matrix, FeatureError> {
    let d = schema.total_dim();
    let mut data = Vec::with_capacity(records.len() * d);
    for r in records {
        schema.assemble_into(r, &mut data)?;
    }
    Ok(Matrix::new(records.len(), d, data).expect("assembled rows have schema width"))
}

/// Seed for one pair, stable under adding or removing other systems.
pub fn pair_seed(seed: u64, challenger_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(challenger_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Trains the classifier for one challenger on pre-assembled features.
///
/// A pair whose training labels are all one class yields a constant model
/// (a single zero leaf on a saturated base logit), so a system that never
/// beats the pivot never fires.
pub fn train_pair(
    records: &[SegmentRecord],
    x: &Matrix,
    challenger: &SystemProfile,
    pivot: &SystemProfile,
    schema_hash: &str,
    info: &TrainingInfo,
) -> Result<BinaryClassifier, TrainError> {
    let labels = make_pair_labels(records, challenger, pivot)?;
    let weights = sample_weights(&labels, info.weighting)?;
    let hp = info.hyperparams;
    let booster = if labels.positives == 0 || labels.negatives == 0 {
        let logit = if labels.positives == 0 { -LEAF_CLAMP } else { LEAF_CLAMP };
        let mut b = Booster::constant(x.cols(), logit, hp);
        b.trees.push(Tree::leaf(0.0));
        b
    } else {
        train_binary(x, &labels.labels, &weights, &hp, pair_seed(info.seed, &challenger.id))
            .map_err(|source| TrainError::Gbm {
                challenger: challenger.id.clone(),
                pivot: pivot.id.clone(),
                source,
            })?
    };
    Ok(BinaryClassifier {
        challenger_id: challenger.id.clone(),
        pivot_id: pivot.id.clone(),
        schema_hash: schema_hash.to_string(),
        booster,
    })
}

/// Trains all pairs on an already assembled matrix.
pub fn train_router_on(
    ds: &Dataset,
    x: &Matrix,
    schema: &FeatureSchema,
    info: &TrainingInfo,
) -> Result<RouterModel, TrainError> {
    if ds.records.is_empty() {
        return Err(TrainError::Empty);
    }
    let hash = schema.hash();
    let pivot = ds.systems.pivot();
    let challengers: Vec<&SystemProfile> = ds.systems.challengers().collect();
    let classifiers = challengers
        .par_iter()
        .map(|c| train_pair(&ds.records, x, c, pivot, &hash, info))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RouterModel::new(
        ds.systems.clone(),
        schema.clone(),
        *info,
        classifiers,
    )?)
}

pub fn train_router(
    ds: &Dataset,
    schema: &FeatureSchema,
    info: &TrainingInfo,
) -> Result<RouterModel, TrainError> {
    let x = assemble_matrix(&ds.records, schema)?;
    train_router_on(ds, &x, schema, info)
}

/// Trains one classifier for a new system and appends it to `router`.
pub fn add_system(
    router: &RouterModel,
    profile: SystemProfile,
    ds: &Dataset,
) -> Result<RouterModel, TrainError> {
    if router.systems.contains(&profile.id) {
        return Err(EnsembleError::DuplicateChallenger(profile.id).into());
    }
    let x = assemble_matrix(&ds.records, &router.feature_schema)?;
    let classifier = train_pair(
        &ds.records,
        &x,
        &profile,
        router.systems.pivot(),
        &router.schema_hash,
        &router.training,
    )?;
    Ok(router.add_system(profile, classifier)?)
}
