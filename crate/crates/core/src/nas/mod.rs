//! Cell search space, candidate networks, the training-free gradient-correlation
//! score, random sampling and ranking.

mod cell;
mod score;
mod search;
mod space;

use thiserror::Error;

pub use cell::{build_cell, build_features, instantiate, Head, MacroConfig};
pub use score::{input_jacobian, naswot_score, score_from_jacobian, Score, ScoreConfig, DEGENERATE_DIAG};
pub use search::{rank_candidates, sample_genotypes, score_candidates, ScoredCandidate};
pub use space::{Genotype, Op, SearchSpace};

#[derive(Debug, Error)]
pub enum NasError {
    #[error("genotype index {index} outside a space of {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("malformed genotype: {0}")]
    Malformed(String),

    #[error("cannot sample {n} distinct genotypes from a space of {size}")]
    TooMany { n: usize, size: usize },

    #[error("invalid score config: {0}")]
    InvalidConfig(String),

    #[error("eigen-solver did not converge")]
    EigenSolver,

    #[error("candidate network: {0}")]
    Network(#[from] stressnas_nn::NnError),
}
