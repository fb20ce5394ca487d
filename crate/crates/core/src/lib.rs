//! Budgeted selection of pretrained models under weighted accuracy, size and
//! complexity trade-offs.
//!
//! Arms are candidate models; a pull evaluates one arm on one target sample.
//! The [`engine`] spends a fixed pull budget with ε-greedy, UCB1 or Thompson
//! sampling, [`baselines`] provides benchmark-table and brute-force
//! selectors, and [`reasoning`] turns a use-case description into weights.

mod par;

pub mod backend;
pub mod baselines;
pub mod canonical;
pub mod domain;
pub mod engine;
pub mod error;
pub mod reasoning;
pub mod report;

pub use backend::{
    evaluate, exact_accuracies, generate_pool, generate_synthetic, load_trace, synthetic_dataset, Dataset, EvalBackend,
    PullResult, RemoteBackend, SyntheticBackend, SyntheticFixture, SyntheticSpec, TraceTable,
};
pub use baselines::{benchmark_select, brute_force};
pub use domain::{
    load_pool, normalize_static, ArmScores, ExperimentConfig, MetricWeights, ModelCandidate, ModelPool, StaticScores,
    Strategy,
};
pub use engine::{run_experiment, run_repetitions, Observer, Silent};
pub use error::{Error, Result};
pub use reasoning::{fallback_weights, parse_llm_response, propose_weights, LlmClient, Provenance, WeightProposal};
pub use report::{aggregate, compute_savings, AggregateReport, ConfigEcho, Method, SelectionReport};

/// Runs all repetitions of `config` and aggregates them, scoring each run's
/// winner with the arm's exact accuracy over `dataset`.
pub fn run_aggregate<B: EvalBackend + ?Sized, O: Observer + ?Sized>(
    config: &ExperimentConfig,
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    observer: &O,
) -> Result<AggregateReport> {
    let reports = run_repetitions(config, pool, backend, dataset, observer)?;
    let exact = exact_accuracies(backend, pool, dataset)?;
    let scores = normalize_static(pool);
    let statics: Vec<f64> = (0..pool.len())
        .map(|i| scores.static_term(i, &config.weights))
        .collect();
    aggregate(ConfigEcho::from(config), &reports, &exact, &statics)
}
