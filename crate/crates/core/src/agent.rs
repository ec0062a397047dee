//! DQN training loop, replay buffer, epsilon-greedy policy and anomaly
//! scoring.
//!
//! The trained Q-value of the "anomalous" action is the anomaly score.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};
use crate::environment::{Action, Environment, Sampling};
use crate::error::{Error, Result};
use crate::nn::{self, Arch, Gradients, Mode, OptimizerState, QNetwork};
use crate::reward::{combined_reward, IntrinsicScorer};

#[derive(Debug, Clone, Copy)]
pub struct Experience {
    pub state: usize,
    pub action: Action,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// Bounded FIFO of experiences with uniform with-replacement sampling.
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<Experience> {
        (0..k)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_episodes: usize,
    pub steps_per_episode: usize,
    pub warmup_steps: usize,
    pub target_update_interval: usize,
    pub embedding_refresh_interval: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: usize,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    pub p_labeled: f64,
    pub subsample_size: usize,
    pub seed: u64,
    /// ERew ablation: drop the intrinsic reward.
    pub disable_intrinsic: bool,
    /// REnv ablation: sample every next observation uniformly from the full
    /// training data instead of the anomaly-biased sampler.
    pub random_environment: bool,
    /// Use the deeper 500-100-20 architecture with dropout 0.9.
    pub deep_arch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_episodes: 10,
            steps_per_episode: 2000,
            warmup_steps: 10_000,
            target_update_interval: 10_000,
            embedding_refresh_interval: 2000,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal_steps: 10_000,
            minibatch: 32,
            buffer_capacity: 100_000,
            p_labeled: 0.5,
            subsample_size: 1000,
            seed: 0,
            disable_intrinsic: false,
            random_environment: false,
            deep_arch: false,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.n_episodes * self.steps_per_episode
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0
            || self.steps_per_episode == 0
            || self.minibatch == 0
            || self.buffer_capacity == 0
            || self.target_update_interval == 0
            || self.embedding_refresh_interval == 0
        {
            return Err(Error::Config("all counts must be positive".into()));
        }
        if self.warmup_steps > self.total_steps() {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total steps {}",
                self.warmup_steps,
                self.total_steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_end > self.epsilon_start
        {
            return Err(Error::Config(
                "epsilon schedule must satisfy 0 <= end <= start <= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_labeled) {
            return Err(Error::Config("p_labeled must be in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Linear anneal from `epsilon_start` to `epsilon_end` over
/// `epsilon_anneal_steps`, clamped afterward. `step` is zero-based.
pub fn epsilon_at(step: usize, cfg: &TrainConfig) -> f64 {
    if step >= cfg.epsilon_anneal_steps {
        return cfg.epsilon_end;
    }
    let frac = step as f64 / cfg.epsilon_anneal_steps as f64;
    cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)
}

/// Epsilon-greedy action selection; greedy ties break to the normal action.
pub fn select_action(net: &QNetwork, s: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Action> {
    if rng.random::<f64>() < epsilon {
        return Ok(Action::from_index(rng.random_range(0..2usize)));
    }
    let q = net.q_values(s)?;
    Ok(if q[1] > q[0] {
        Action::Anomalous
    } else {
        Action::Normal
    })
}

/// Bootstrapped target: r for terminal transitions, otherwise
/// r + gamma * max_a Q_target(s', a).
pub fn q_target(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    target_net: &QNetwork,
    gamma: f64,
) -> Result<f64> {
    if terminal {
        return Ok(reward);
    }
    let q = target_net.q_values(next_state)?;
    Ok(reward + gamma * q[0].max(q[1]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub step_losses: Vec<f64>,
    pub gradient_updates: usize,
}

impl TrainLog {
    /// CSV with one row per episode; `verbose` appends the per-step loss
    /// trace as additional (step, loss) rows.
    pub fn to_csv(&self, verbose: bool) -> String {
        let mut out = String::from("episode,total_reward,mean_loss\n");
        for e in &self.episodes {
            out.push_str(&format!("{},{},{}\n", e.episode, e.total_reward, e.mean_loss));
        }
        if verbose {
            out.push_str("step,loss\n");
            for (i, l) in self.step_losses.iter().enumerate() {
                out.push_str(&format!("{i},{l}\n"));
            }
        }
        out
    }
}

/// Run the full training loop on a prepared dataset.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(QNetwork, TrainLog)> {
    cfg.validate()?;
    if dataset.labeled_indices().is_empty() {
        return Err(Error::Config("dataset has no labeled anomalies".into()));
    }
    if dataset.unlabeled_indices().is_empty() {
        return Err(Error::Config("dataset has no unlabeled data".into()));
    }

    // Independent seeded streams; drawn unconditionally so ablation switches
    // do not shift the other streams.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net_seed: u64 = master.random();
    let env_seed: u64 = master.random();
    let policy_seed: u64 = master.random();
    let batch_seed: u64 = master.random();
    let scorer_seed: u64 = master.random();
    let dropout_seed: u64 = master.random();

    let arch = if cfg.deep_arch {
        Arch::deep_for(dataset.dim())
    } else {
        Arch::default_for(dataset.dim())
    };
    let mut net = nn::init_network(&arch, net_seed)?;
    let mut target = net.clone();
    target.zero_weights();
    let mut optimizer = OptimizerState::new(&net);

    let unlabeled_rows: Vec<Vec<f64>> = dataset
        .unlabeled_indices()
        .into_iter()
        .map(|i| dataset.features[i].clone())
        .collect();
    let mut scorer = if cfg.disable_intrinsic {
        None
    } else {
        Some(IntrinsicScorer::new(
            &net,
            &unlabeled_rows,
            cfg.embedding_refresh_interval,
            crate::iforest::DEFAULT_TREES,
            crate::iforest::DEFAULT_SUBSAMPLE,
            scorer_seed,
        )?)
    };

    let sampling = if cfg.random_environment {
        Sampling::UniformOverD
    } else {
        Sampling::AnomalyBiased
    };
    let mut env = Environment::new(
        dataset,
        sampling,
        cfg.p_labeled,
        cfg.subsample_size,
        cfg.steps_per_episode,
        env_seed,
    )?;

    let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(batch_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut log = TrainLog::default();
    let mut global_step = 0usize;

    for episode in 0..cfg.n_episodes {
        env.reset();
        let mut total_reward = 0.0;
        let mut episode_losses: Vec<f64> = Vec::new();

        for _ in 0..cfg.steps_per_episode {
            let state = env.current().expect("environment was reset");
            let epsilon = epsilon_at(global_step, cfg);
            let action = select_action(&net, &dataset.features[state], epsilon, &mut policy_rng)?;

            let outcome = {
                let embed = |x: &[f64]| net.embed(x).expect("row width matches network input");
                env.step(action, &embed)?
            };
            let r_intrinsic = match &scorer {
                Some(sc) => sc.intrinsic_reward(&dataset.features[state])?,
                None => 0.0,
            };
            let reward = combined_reward(outcome.external_reward, r_intrinsic);
            total_reward += reward;
            buffer.push(Experience {
                state,
                action,
                reward,
                next_state: outcome.next,
                terminal: outcome.terminal,
            });

            // Minibatch update after warm-up, once the buffer can fund one.
            if global_step >= cfg.warmup_steps && buffer.len() >= cfg.minibatch {
                let batch = buffer.sample(&mut batch_rng, cfg.minibatch);
                let mut grads = Gradients::zeros_like(&net);
                let mut loss_sum = 0.0;
                for exp in &batch {
                    let y = q_target(
                        exp.reward,
                        &dataset.features[exp.next_state],
                        exp.terminal,
                        &target,
                        cfg.gamma,
                    )?;
                    let cache =
                        net.forward(&dataset.features[exp.state], Mode::Train, Some(&mut dropout_rng))?;
                    let err = y - cache.output[exp.action.index()];
                    loss_sum += err * err;
                    let g = net.backward(&cache, exp.action.index(), err)?;
                    grads.add(&g);
                }
                grads.scale(1.0 / cfg.minibatch as f64);
                nn::rmsprop_step(&mut net, &mut optimizer, &grads);
                let loss = loss_sum / cfg.minibatch as f64;
                episode_losses.push(loss);
                log.step_losses.push(loss);
                log.gradient_updates += 1;
            }

            if let Some(sc) = scorer.as_mut() {
                if sc.tick() {
                    sc.refresh(&net, &unlabeled_rows)?;
                }
            }
            if (global_step + 1) % cfg.target_update_interval == 0 {
                target.copy_weights_from(&net);
            }
            global_step += 1;
        }

        let mean_loss = if episode_losses.is_empty() {
            0.0
        } else {
            episode_losses.iter().sum::<f64>() / episode_losses.len() as f64
        };
        log.episodes.push(EpisodeLog {
            episode,
            total_reward,
            mean_loss,
        });
    }
    Ok((net, log))
}

/// Q-value of the anomalous action in eval mode.
pub fn anomaly_score(net: &QNetwork, s: &[f64]) -> Result<f64> {
    Ok(net.q_values(s)?[1])
}

/// Score every row of the requested partition; returns (row index, score).
pub fn score_dataset(net: &QNetwork, dataset: &Dataset, partition: Partition) -> Result<Vec<(usize, f64)>> {
    dataset
        .indices_of(partition)
        .into_iter()
        .map(|i| anomaly_score(net, &dataset.features[i]).map(|s| (i, s)))
        .collect()
}
