//! Anomaly-biased simulation environment: observation sampling over the
//! labeled and unlabeled pools, the external reward, and episode
//! bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};

pub const DEFAULT_SUBSAMPLE: usize = 1000;
pub const DEFAULT_P_LABELED: f64 = 0.5;
pub const DEFAULT_EPISODE_LEN: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// a0: label the observation normal.
    Normal = 0,
    /// a1: label the observation anomalous.
    Anomalous = 1,
}

impl Action {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        if i == 1 {
            Action::Anomalous
        } else {
            Action::Normal
        }
    }
}

/// Reward for acting on an observation from the given partition:
/// +1 for flagging a labeled anomaly, 0 for passing an unlabeled
/// observation, -1 otherwise.
pub fn external_reward(partition: Partition, action: Action) -> f64 {
    match (action, partition) {
        (Action::Anomalous, Partition::LabeledAnomaly) => 1.0,
        (Action::Normal, Partition::Unlabeled) => 0.0,
        _ => -1.0,
    }
}

/// How the next observation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// With probability p uniform over the labeled anomalies, otherwise
    /// nearest/farthest neighbor in embedding space over a fresh subsample
    /// of the unlabeled pool.
    AnomalyBiased,
    /// Uniform over the full training data (labeled and unlabeled).
    UniformOverD,
}

pub struct Environment<'d> {
    dataset: &'d Dataset,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    sampling: Sampling,
    p_labeled: f64,
    subsample_size: usize,
    episode_len: usize,
    current: Option<usize>,
    step_in_episode: usize,
    terminated: bool,
    rng: ChaCha8Rng,
}

pub struct StepOutcome {
    pub next: usize,
    pub external_reward: f64,
    pub terminal: bool,
}

impl<'d> Environment<'d> {
    pub fn new(
        dataset: &'d Dataset,
        sampling: Sampling,
        p_labeled: f64,
        subsample_size: usize,
        episode_len: usize,
        seed: u64,
    ) -> Result<Environment<'d>> {
        let labeled = dataset.labeled_indices();
        let unlabeled = dataset.unlabeled_indices();
        if unlabeled.is_empty() {
            return Err(Error::Config("unlabeled pool is empty".into()));
        }
        if sampling == Sampling::AnomalyBiased && p_labeled > 0.0 && labeled.is_empty() {
            return Err(Error::Config(
                "labeled anomaly pool is empty but p > 0".into(),
            ));
        }
        if episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        Ok(Environment {
            dataset,
            labeled,
            unlabeled,
            sampling,
            p_labeled,
            subsample_size,
            episode_len,
            current: None,
            step_in_episode: 0,
            terminated: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_defaults(dataset: &'d Dataset, seed: u64) -> Result<Environment<'d>> {
        Environment::new(
            dataset,
            Sampling::AnomalyBiased,
            DEFAULT_P_LABELED,
            DEFAULT_SUBSAMPLE,
            DEFAULT_EPISODE_LEN,
            seed,
        )
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    /// Start an episode at a uniform draw from the unlabeled pool.
    pub fn reset(&mut self) -> usize {
        let idx = self.unlabeled[self.rng.random_range(0..self.unlabeled.len())];
        self.current = Some(idx);
        self.step_in_episode = 0;
        self.terminated = false;
        idx
    }

    fn features(&self, row: usize) -> &[f64] {
        &self.dataset.features[row]
    }

    /// Draw the next observation. `embed_fn` maps a raw feature row to the
    /// agent's embedding space.
    pub fn sample_next<F>(&mut self, action: Action, embed_fn: &F) -> Result<usize>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let current = self
            .current
            .ok_or_else(|| Error::Environment("sample_next before reset".into()))?;
        match self.sampling {
            Sampling::UniformOverD => {
                let total = self.labeled.len() + self.unlabeled.len();
                let k = self.rng.random_range(0..total);
                Ok(if k < self.labeled.len() {
                    self.labeled[k]
                } else {
                    self.unlabeled[k - self.labeled.len()]
                })
            }
            Sampling::AnomalyBiased => {
                if self.rng.random::<f64>() < self.p_labeled {
                    // g_a: uniform over the labeled anomalies.
                    Ok(self.labeled[self.rng.random_range(0..self.labeled.len())])
                } else {
                    self.sample_proximity(current, action, embed_fn)
                }
            }
        }
    }

    /// g_u: nearest (a1) / farthest (a0) neighbor of the current
    /// observation over a fresh subsample of the unlabeled pool, distances
    /// in embedding space, ties to the lowest row index. The current
    /// observation is excluded from the subsample.
    fn sample_proximity<F>(&mut self, current: usize, action: Action, embed_fn: &F) -> Result<usize>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let pool: Vec<usize> = self
            .unlabeled
            .iter()
            .copied()
            .filter(|&i| i != current)
            .collect();
        if pool.is_empty() {
            // |D^u| == 1 and it is the current observation; self-transition
            // is the only option.
            return Ok(current);
        }
        let k = self.subsample_size.min(pool.len());
        let subsample: Vec<usize> = rand::seq::index::sample(&mut self.rng, pool.len(), k)
            .into_iter()
            .map(|j| pool[j])
            .collect();

        let anchor = embed_fn(self.features(current));
        let mut best_row = usize::MAX;
        let mut best_dist = match action {
            Action::Anomalous => f64::INFINITY,
            Action::Normal => f64::NEG_INFINITY,
        };
        for &row in &subsample {
            let e = embed_fn(self.features(row));
            let d2: f64 = anchor
                .iter()
                .zip(&e)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let better = match action {
                Action::Anomalous => {
                    d2 < best_dist || (d2 == best_dist && row < best_row)
                }
                Action::Normal => d2 > best_dist || (d2 == best_dist && row < best_row),
            };
            if better {
                best_dist = d2;
                best_row = row;
            }
        }
        Ok(best_row)
    }

    /// Apply `action` to the current observation: external reward for the
    /// current observation, transition, episode-step accounting.
    pub fn step<F>(&mut self, action: Action, embed_fn: &F) -> Result<StepOutcome>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if self.terminated {
            return Err(Error::Environment(
                "step after terminal without reset".into(),
            ));
        }
        let current = self
            .current
            .ok_or_else(|| Error::Environment("step before reset".into()))?;
        let reward = external_reward(self.dataset.partition[current], action);
        let next = self.sample_next(action, embed_fn)?;
        self.step_in_episode += 1;
        let terminal = self.step_in_episode >= self.episode_len;
        self.terminated = terminal;
        self.current = Some(next);
        Ok(StepOutcome {
            next,
            external_reward: reward,
            terminal,
        })
    }
}
