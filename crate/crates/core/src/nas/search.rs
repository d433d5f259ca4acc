use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stressnas_nn::{par, Inputs, Network};

use super::{naswot_score, Genotype, NasError, ScoreConfig, SearchSpace};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub genotype_index: usize,
    pub genotype: Genotype,
    /// `−∞` for degenerate candidates.
    pub score: f64,
    pub degenerate: bool,
    /// Parameter init seed used for scoring.
    pub seed: u64,
    pub batch_id: u64,
}

/// `n` distinct genotypes drawn uniformly without replacement, in draw order.
pub fn sample_genotypes(space: SearchSpace, n: usize, seed: u64) -> Result<Vec<Genotype>, NasError> {
    let size = space.size();
    if n > size {
        return Err(NasError::TooMany { n, size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, size, n)
        .into_iter()
        .map(|i| space.decode(i))
        .collect()
}

/// Scores each candidate on the same batch with its own freshly initialized
/// network. The init seed depends only on `cfg.seed` and the genotype index.
pub fn score_candidates<F>(
    genotypes: &[Genotype],
    build: F,
    batch: &Inputs,
    cfg: &ScoreConfig,
    batch_id: u64,
) -> Result<Vec<ScoredCandidate>, NasError>
where
    F: Fn(&Genotype) -> Result<Network, NasError> + Sync + Send,
{
    cfg.validate()?;
    par::map(genotypes, |g| {
        let index = g.encode();
        let seed = derive_seed(cfg.seed, index as u32, "init");
        let mut net = build(g)?;
        net.init_params(seed);
        let s = naswot_score(&mut net, batch, cfg)?;
        Ok(ScoredCandidate {
            genotype_index: index,
            genotype: g.clone(),
            score: s.value,
            degenerate: s.degenerate,
            seed,
            batch_id,
        })
    })
    .into_iter()
    .collect()
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    a.degenerate
        .cmp(&b.degenerate)
        .then_with(|| if a.degenerate { Ordering::Equal } else { b.score.total_cmp(&a.score) })
        .then(a.genotype_index.cmp(&b.genotype_index))
}

/// Best `k` candidates: score descending, ties by genotype index, degenerate last.
pub fn rank_candidates(scored: &[ScoredCandidate], k: usize) -> Vec<ScoredCandidate> {
    let mut v = scored.to_vec();
    v.sort_by(rank_order);
    v.truncate(k);
    v
}
