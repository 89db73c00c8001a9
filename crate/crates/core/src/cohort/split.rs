use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{CohortError, CohortManifest, Contrast};
use crate::rng::seeded;

/// Case ids assigned to training and holdout, optionally with k folds over
/// the training ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub holdout: Vec<String>,
    pub folds: Option<Vec<Vec<String>>>,
    pub seed: u64,
}

fn shuffled(mut ids: Vec<String>, seed: u64, stream: u64) -> Vec<String> {
    ids.sort();
    ids.shuffle(&mut seeded(seed, stream));
    ids
}

/// Draws the requested number of cases per contrast stratum without
/// replacement; everything else goes to holdout. Strata absent from the
/// request contribute only to holdout. Row order of the manifest does not
/// matter.
pub fn stratified_split(
    manifest: &CohortManifest,
    per_stratum: &BTreeMap<Contrast, usize>,
    seed: u64,
) -> Result<SplitAssignment, CohortError> {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (stream, contrast) in Contrast::ALL.into_iter().enumerate() {
        let ids: Vec<String> = manifest
            .records
            .iter()
            .filter(|r| r.contrast == contrast)
            .map(|r| r.case_id.clone())
            .collect();
        let wanted = per_stratum.get(&contrast).copied().unwrap_or(0);
        if wanted > ids.len() {
            return Err(CohortError::InsufficientStratum {
                stratum: contrast.to_string(),
                requested: wanted,
                available: ids.len(),
            });
        }
        let ids = shuffled(ids, seed, stream as u64);
        train.extend_from_slice(&ids[..wanted]);
        holdout.extend_from_slice(&ids[wanted..]);
    }
    train.sort();
    holdout.sort();
    Ok(SplitAssignment {
        train,
        holdout,
        folds: None,
        seed,
    })
}

/// Seeded shuffle of the ids, then `k` contiguous chunks; the first
/// `len % k` folds get one extra case. Each fold is returned sorted.
pub fn kfold(train_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>, CohortError> {
    if k < 2 || k > train_ids.len() {
        return Err(CohortError::InvalidFolds { k, n: train_ids.len() });
    }
    let ids = shuffled(train_ids.to_vec(), seed, 100);
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = ids[at..at + size].to_vec();
        fold.sort();
        folds.push(fold);
        at += size;
    }
    Ok(folds)
}
