//! Per-user fold construction: three folds, each validating one sequence of
//! every modality and training on the remaining six.

use std::collections::BTreeMap;

use handstate_core::types::Modality;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const FOLDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Builds the plan from `(id, modality)` pairs; exactly three sequences per
/// modality are required. Ids are sorted within each modality before the
/// seeded shuffle, so the input order does not matter.
pub fn make_fold_plan<'a>(seqs: impl IntoIterator<Item = (&'a str, Modality)>, seed: u64) -> Result<FoldPlan> {
    let mut by_modality: BTreeMap<Modality, Vec<String>> = Modality::ALL.iter().map(|m| (*m, Vec::new())).collect();
    for (id, m) in seqs {
        by_modality.get_mut(&m).expect("all modalities present").push(id.to_string());
    }
    let counts: Vec<usize> = Modality::ALL.iter().map(|m| by_modality[m].len()).collect();
    if counts.iter().any(|&c| c != FOLDS) {
        return Err(EvalError::Validation(format!(
            "fold plan needs 3 sequences per modality, got helping/passive/opposing = {counts:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ids in by_modality.values_mut() {
        ids.sort();
        ids.shuffle(&mut rng);
    }
    let folds = (0..FOLDS)
        .map(|k| {
            let mut fold = Fold {
                train: Vec::new(),
                validation: Vec::new(),
            };
            for m in Modality::ALL {
                for (i, id) in by_modality[&m].iter().enumerate() {
                    if i == k {
                        fold.validation.push(id.clone());
                    } else {
                        fold.train.push(id.clone());
                    }
                }
            }
            fold
        })
        .collect();
    Ok(FoldPlan { folds })
}
