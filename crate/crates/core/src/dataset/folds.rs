use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out: u32,
    pub train: Vec<u32>,
}

/// One fold per subject, ascending by held-out id.
pub fn loso_folds(subject_ids: &[u32]) -> Result<Vec<Fold>, DataError> {
    let mut ids = subject_ids.to_vec();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(DataError::DuplicateSubject(w[0]));
    }
    if ids.len() < 2 {
        return Err(DataError::TooFewSubjects(ids.len()));
    }
    Ok(ids
        .iter()
        .map(|&held_out| Fold {
            held_out,
            train: ids.iter().copied().filter(|&s| s != held_out).collect(),
        })
        .collect())
}
