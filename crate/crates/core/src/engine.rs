//! Budgeted sequential selection over arms.
//!
//! Each pull evaluates one arm on one not-yet-seen sample of that arm's
//! seeded permutation. Correctness bits are Bernoulli and tracked with a
//! Beta posterior; the static size/complexity terms are known constants and
//! are added outside the posterior.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::backend::{evaluate, Dataset, EvalBackend};
use crate::domain::{normalize_static, ArmScores, ExperimentConfig, MetricWeights, ModelPool, StaticScores, Strategy};
use crate::error::{Error, Result};
use crate::report::{ArmOutcome, ConfigEcho, Method, SelectionReport};

pub const PRIOR_ALPHA: f64 = 1.0;
pub const PRIOR_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub pulls: u64,
    pub successes: u64,
    pub alpha: f64,
    pub beta: f64,
    /// Dataset indices in evaluation order; `cursor` marks the next one.
    order: Vec<usize>,
    cursor: usize,
}

impl ArmState {
    pub fn new(order: Vec<usize>) -> Self {
        Self::with_counts(0, 0, order)
    }

    /// State with given counts; the posterior follows from the prior.
    pub fn with_counts(pulls: u64, successes: u64, order: Vec<usize>) -> Self {
        assert!(successes <= pulls, "successes exceed pulls");
        Self {
            pulls,
            successes,
            alpha: PRIOR_ALPHA + successes as f64,
            beta: PRIOR_BETA + (pulls - successes) as f64,
            cursor: 0,
            order,
        }
    }

    pub fn saturated(&self) -> bool {
        self.cursor >= self.order.len()
    }

    pub fn remaining(&self) -> &[usize] {
        &self.order[self.cursor.min(self.order.len())..]
    }

    /// Empirical accuracy, or the prior mean before any pull.
    pub fn accuracy_estimate(&self) -> f64 {
        if self.pulls > 0 {
            self.successes as f64 / self.pulls as f64
        } else {
            self.alpha / (self.alpha + self.beta)
        }
    }

    fn next_sample(&mut self) -> Option<usize> {
        let s = self.order.get(self.cursor).copied();
        self.cursor += 1;
        s
    }

    fn record(&mut self, correct: bool) {
        self.pulls += 1;
        if correct {
            self.successes += 1;
            self.alpha += 1.0;
        } else {
            self.beta += 1.0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BanditState {
    pub arms: Vec<ArmState>,
    pub total_pulls: u64,
    rng: ChaCha8Rng,
}

impl BanditState {
    /// Builds per-arm permutations of `dataset_size` indices from `seed`; the
    /// same generator then drives selection.
    pub fn new(arms: usize, dataset_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arms = (0..arms)
            .map(|_| {
                let mut order: Vec<usize> = (0..dataset_size).collect();
                order.shuffle(&mut rng);
                ArmState::new(order)
            })
            .collect();
        Self {
            arms,
            total_pulls: 0,
            rng,
        }
    }
}

/// `w.accuracy * accuracy` plus the weighted static terms. Every selector
/// ranks with this one formula so equal inputs give bit-equal values.
pub fn composite_value(w: &MetricWeights, accuracy: f64, s: ArmScores) -> f64 {
    w.accuracy * accuracy + w.size * s.size + w.complexity * s.complexity
}

pub fn composite_reward(correct: bool, arm: usize, scores: &StaticScores, w: &MetricWeights) -> f64 {
    composite_value(w, if correct { 1.0 } else { 0.0 }, scores.get(arm))
}

pub fn estimated_value(state: &ArmState, arm: usize, scores: &StaticScores, w: &MetricWeights) -> f64 {
    composite_value(w, state.accuracy_estimate(), scores.get(arm))
}

/// First index holding the largest score; `None` when nothing is eligible.
fn argmax(candidates: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (arm, v) in candidates {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((arm, v)),
        }
    }
    best.map(|(arm, _)| arm)
}

fn open_arms(arms: &[ArmState]) -> impl Iterator<Item = (usize, &ArmState)> {
    arms.iter().enumerate().filter(|(_, a)| !a.saturated())
}

pub fn select_epsilon_greedy<R: Rng + ?Sized>(
    arms: &[ArmState],
    scores: &StaticScores,
    w: &MetricWeights,
    epsilon: f64,
    rng: &mut R,
) -> Option<usize> {
    let open: Vec<usize> = open_arms(arms).map(|(i, _)| i).collect();
    if open.is_empty() {
        return None;
    }
    if rng.random::<f64>() < epsilon {
        return Some(open[rng.random_range(0..open.len())]);
    }
    argmax(open.iter().map(|&i| (i, estimated_value(&arms[i], i, scores, w))))
}

/// UCB1 on the accuracy term. Unpulled arms go first; the bonus is scaled by
/// the accuracy weight since the static terms carry no uncertainty.
pub fn select_ucb<R: Rng + ?Sized>(
    arms: &[ArmState],
    scores: &StaticScores,
    w: &MetricWeights,
    _rng: &mut R,
) -> Option<usize> {
    if let Some((i, _)) = open_arms(arms).find(|(_, a)| a.pulls == 0) {
        return Some(i);
    }
    let t: u64 = arms.iter().map(|a| a.pulls).sum();
    let log_t = (t as f64).ln();
    argmax(open_arms(arms).map(|(i, a)| {
        let bonus = (2.0 * log_t / a.pulls as f64).sqrt();
        (i, estimated_value(a, i, scores, w) + w.accuracy * bonus)
    }))
}

pub fn select_thompson<R: Rng + ?Sized>(
    arms: &[ArmState],
    scores: &StaticScores,
    w: &MetricWeights,
    rng: &mut R,
) -> Option<usize> {
    let mut draws = Vec::with_capacity(arms.len());
    for (i, a) in open_arms(arms) {
        let theta = Beta::new(a.alpha, a.beta)
            .expect("posterior parameters are positive")
            .sample(rng);
        draws.push((i, composite_value(w, theta, scores.get(i))));
    }
    argmax(draws.into_iter())
}

/// Receives progress notifications from running experiments.
pub trait Observer: Sync {
    fn on_pull(&self) {}
    fn on_repetition(&self, _repetition: u32, _report: &SelectionReport) {}
}

/// Observer that ignores everything.
pub struct Silent;

impl Observer for Silent {}

/// One experiment under `config.seed`. `config.repetitions` is ignored here.
pub fn run_experiment<B: EvalBackend + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
) -> Result<SelectionReport> {
    run_experiment_observed(config, pool, backend, dataset, &Silent)
}

pub fn run_experiment_observed<B: EvalBackend + ?Sized, O: Observer + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    observer: &O,
) -> Result<SelectionReport> {
    config.validate()?;
    let scores = normalize_static(pool);
    let w = config.weights;
    let mut state = BanditState::new(pool.len(), dataset.len(), config.seed);

    while state.total_pulls < config.budget {
        let BanditState { arms, rng, .. } = &mut state;
        let choice = match config.strategy {
            Strategy::EpsilonGreedy => select_epsilon_greedy(arms, &scores, &w, config.epsilon, rng),
            Strategy::Ucb => select_ucb(arms, &scores, &w, rng),
            Strategy::Thompson => select_thompson(arms, &scores, &w, rng),
        };
        let Some(arm) = choice else { break };
        let sample = state.arms[arm]
            .next_sample()
            .expect("selected arms are never saturated");
        let sample_id = &dataset.sample_ids()[sample];
        let pull = evaluate(backend, pool, arm, sample_id).map_err(|source| Error::Aborted {
            completed_pulls: state.total_pulls,
            source: Box::new(source),
        })?;
        state.arms[arm].record(pull.correct);
        state.total_pulls += 1;
        observer.on_pull();
    }

    let outcomes: Vec<ArmOutcome> = state
        .arms
        .iter()
        .enumerate()
        .map(|(i, a)| ArmOutcome {
            value: estimated_value(a, i, &scores, &w),
            accuracy: a.accuracy_estimate(),
            pulls: a.pulls,
        })
        .collect();
    Ok(SelectionReport::build(
        Method::Bandit,
        ConfigEcho::from(config),
        pool,
        dataset.len(),
        &outcomes,
    ))
}

/// Config for repetition `r`: identical except for the seed, `seed + r`.
pub fn repetition_config(config: &ExperimentConfig, r: u32) -> ExperimentConfig {
    ExperimentConfig {
        seed: config.seed.wrapping_add(u64::from(r)),
        ..config.clone()
    }
}

/// Runs every repetition one after another.
pub fn run_repetitions_sequential<B: EvalBackend + ?Sized, O: Observer + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    observer: &O,
) -> Result<Vec<SelectionReport>> {
    config.validate()?;
    (0..config.repetitions)
        .map(|r| {
            let report = run_experiment_observed(&repetition_config(config, r), pool, backend, dataset, observer)?;
            observer.on_repetition(r, &report);
            Ok(report)
        })
        .collect()
}

/// Runs repetitions on the rayon pool. Output order and content match
/// [`run_repetitions_sequential`].
#[cfg(feature = "parallel")]
pub fn run_repetitions_parallel<B: EvalBackend + ?Sized, O: Observer + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    observer: &O,
) -> Result<Vec<SelectionReport>> {
    use rayon::prelude::*;

    config.validate()?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            let report = run_experiment_observed(&repetition_config(config, r), pool, backend, dataset, observer)?;
            observer.on_repetition(r, &report);
            Ok(report)
        })
        .collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_repetitions<B: EvalBackend + ?Sized, O: Observer + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    observer: &O,
) -> Result<Vec<SelectionReport>> {
    crate::if_parallel!(
        run_repetitions_parallel(config, pool, backend, dataset, observer),
        run_repetitions_sequential(config, pool, backend, dataset, observer)
    )
}
