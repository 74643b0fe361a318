//! 1:1 mixing of an original and an augmented dataset as an explicit,
//! seeded epoch order.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, rng};
use crate::store::Dataset;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MixError {
    #[error("cannot mix: {0} dataset has no episodes")]
    Empty(&'static str),
    #[error("invalid mix manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "orig")]
    Original,
    #[serde(rename = "aug")]
    Augmented,
}

/// A dataset reference (usually its directory) plus its episode ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixSource {
    pub reference: String,
    pub ids: Vec<String>,
}

impl MixSource {
    pub fn new(reference: impl Into<String>, ids: Vec<String>) -> Self {
        Self {
            reference: reference.into(),
            ids,
        }
    }

    pub fn from_dataset(reference: impl Into<String>, dataset: &Dataset) -> Self {
        Self::new(reference, dataset.ids())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub original: f64,
    pub augmented: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        Self {
            original: 0.5,
            augmented: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub original: String,
    pub augmented: String,
    pub weights: MixWeights,
    pub seed: u64,
    pub epoch_order: Vec<(Origin, String)>,
}

impl MixManifest {
    pub fn validate(&self) -> Result<(), MixError> {
        if self.weights != MixWeights::default() {
            return Err(MixError::Invalid(format!("weights {:?} are not 0.5/0.5", self.weights)));
        }
        if self.epoch_order.first().is_some_and(|e| e.0 != Origin::Original) {
            return Err(MixError::Invalid("epoch order must start with an original episode".into()));
        }
        if let Some(i) = self.epoch_order.windows(2).position(|w| w[0].0 == w[1].0) {
            return Err(MixError::Invalid(format!("entries {i} and {} share an origin", i + 1)));
        }
        Ok(())
    }
}

/// `n` ids drawn by concatenating seeded shuffles of `ids`; each pass over
/// the side gets its own derived seed.
fn cycled(ids: &[String], n: usize, seed: u64, side: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(n + ids.len());
    let mut cycle = 0u64;
    while out.len() < n {
        let mut pass = ids.to_vec();
        pass.shuffle(&mut rng(derive_seed(seed, &["mix".into(), side.into(), cycle.into()])));
        out.extend(pass);
        cycle += 1;
    }
    out.truncate(n);
    out
}

/// Alternate original and augmented ids starting with an original one. The
/// smaller side is reshuffled and cycled until the larger side is used up,
/// so the order has `2 * max(N, Ñ)` entries.
pub fn mix_datasets(original: &MixSource, augmented: &MixSource, seed: u64) -> Result<MixManifest, MixError> {
    if original.ids.is_empty() {
        return Err(MixError::Empty("original"));
    }
    if augmented.ids.is_empty() {
        return Err(MixError::Empty("augmented"));
    }
    let mut orig_ids = original.ids.clone();
    orig_ids.sort();
    let mut aug_ids = augmented.ids.clone();
    aug_ids.sort();
    let n = orig_ids.len().max(aug_ids.len());
    let orig = cycled(&orig_ids, n, seed, "orig");
    let aug = cycled(&aug_ids, n, seed, "aug");
    let epoch_order = orig
        .into_iter()
        .zip(aug)
        .flat_map(|(o, a)| [(Origin::Original, o), (Origin::Augmented, a)])
        .collect();
    Ok(MixManifest {
        original: original.reference.clone(),
        augmented: augmented.reference.clone(),
        weights: MixWeights::default(),
        seed,
        epoch_order,
    })
}
