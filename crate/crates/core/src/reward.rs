//! Intrinsic reward on a frozen embedding snapshot, and reward combination.
//!
//! The scorer keeps a copy of the Q-network taken every `refresh_interval`
//! steps, projects the unlabeled data through it, and fits an isolation
//! forest on the projection. Between refreshes the scorer is immutable, so
//! the same observation always scores the same value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::iforest::{IsolationForest, DEFAULT_SUBSAMPLE, DEFAULT_TREES};
use crate::nn::QNetwork;

pub const DEFAULT_REFRESH_INTERVAL: usize = 2000;
/// Refitting on very large unlabeled pools is capped by uniform subsampling.
pub const DEFAULT_FIT_CAP: usize = 50_000;

pub struct IntrinsicScorer {
    embedding: QNetwork,
    forest: IsolationForest,
    pub refresh_interval: usize,
    steps_since_refresh: usize,
    trees: usize,
    subsample: usize,
    fit_cap: usize,
    rng: ChaCha8Rng,
}

impl IntrinsicScorer {
    pub fn new(
        net: &QNetwork,
        unlabeled: &[Vec<f64>],
        refresh_interval: usize,
        trees: usize,
        subsample: usize,
        seed: u64,
    ) -> Result<IntrinsicScorer> {
        if refresh_interval == 0 {
            return Err(Error::Config("refresh interval must be >= 1".into()));
        }
        let mut scorer = IntrinsicScorer {
            embedding: net.clone(),
            forest: IsolationForest {
                trees: Vec::new(),
                subsample_size: 0,
                train_dim: 0,
            },
            refresh_interval,
            steps_since_refresh: 0,
            trees,
            subsample,
            fit_cap: DEFAULT_FIT_CAP,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        scorer.refresh(net, unlabeled)?;
        Ok(scorer)
    }

    pub fn with_defaults(net: &QNetwork, unlabeled: &[Vec<f64>], seed: u64) -> Result<IntrinsicScorer> {
        IntrinsicScorer::new(
            net,
            unlabeled,
            DEFAULT_REFRESH_INTERVAL,
            DEFAULT_TREES,
            DEFAULT_SUBSAMPLE,
            seed,
        )
    }

    /// Snapshot the current embedding parameters and refit the forest on
    /// the projected unlabeled data.
    pub fn refresh(&mut self, net: &QNetwork, unlabeled: &[Vec<f64>]) -> Result<()> {
        if unlabeled.is_empty() {
            return Err(Error::Config("cannot refresh on empty unlabeled data".into()));
        }
        self.embedding = net.clone();
        let fit_seed: u64 = self.rng.random();
        let projected: Vec<Vec<f64>> = if unlabeled.len() > self.fit_cap {
            let mut pick_rng = ChaCha8Rng::seed_from_u64(fit_seed ^ 0xa5a5);
            rand::seq::index::sample(&mut pick_rng, unlabeled.len(), self.fit_cap)
                .into_iter()
                .map(|i| self.embedding.embed(&unlabeled[i]))
                .collect::<Result<_>>()?
        } else {
            unlabeled
                .iter()
                .map(|r| self.embedding.embed(r))
                .collect::<Result<_>>()?
        };
        self.forest = IsolationForest::fit(&projected, self.trees, self.subsample, fit_seed)?;
        self.steps_since_refresh = 0;
        Ok(())
    }

    /// Count one environment step; true when a refresh is due.
    pub fn tick(&mut self) -> bool {
        self.steps_since_refresh += 1;
        self.steps_since_refresh >= self.refresh_interval
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.embedding_dim()
    }

    /// Isolation-forest score of the observation in the frozen embedding,
    /// in [0,1], larger meaning more abnormal.
    pub fn intrinsic_reward(&self, s: &[f64]) -> Result<f64> {
        let e = self.embedding.embed(s)?;
        self.forest.score(&e)
    }
}

/// Combined per-step reward: external plus intrinsic, in [-1, 2].
pub fn combined_reward(r_external: f64, r_intrinsic: f64) -> f64 {
    r_external + r_intrinsic
}
