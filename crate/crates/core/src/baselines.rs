//! Comparison selectors: rank by recorded benchmark accuracy, or evaluate
//! every arm on every sample.

use crate::backend::{Dataset, EvalBackend};
use crate::domain::{normalize_static, MetricWeights, ModelPool};
use crate::engine::composite_value;
use crate::error::Result;
use crate::report::{ArmOutcome, ConfigEcho, Method, SelectionReport};

/// Ranks with benchmark accuracy in place of target accuracy. Never touches
/// an evaluation backend.
pub fn benchmark_select(pool: &ModelPool, w: &MetricWeights) -> SelectionReport {
    let scores = normalize_static(pool);
    let outcomes: Vec<ArmOutcome> = pool
        .candidates()
        .iter()
        .enumerate()
        .map(|(i, m)| ArmOutcome {
            value: composite_value(w, m.benchmark_accuracy, scores.get(i)),
            accuracy: m.benchmark_accuracy,
            pulls: 0,
        })
        .collect();
    SelectionReport::build(Method::Benchmark, ConfigEcho::weights_only(*w), pool, 0, &outcomes)
}

fn arm_accuracy<B: EvalBackend + ?Sized>(
    backend: &B,
    pool: &ModelPool,
    dataset: &Dataset,
    arm: usize,
) -> Result<(u64, u64)> {
    let bits = backend.correct_batch(arm, &pool.candidates()[arm].id, dataset.sample_ids())?;
    Ok((bits.len() as u64, bits.iter().filter(|b| **b).count() as u64))
}

/// Evaluates all K·N pairs and ranks by exact composite value.
pub fn brute_force<B: EvalBackend + ?Sized>(
    pool: &ModelPool,
    backend: &B,
    dataset: &Dataset,
    w: &MetricWeights,
) -> Result<SelectionReport> {
    let scores = normalize_static(pool);
    let counts: Vec<(u64, u64)> = crate::if_parallel!(
        {
            use rayon::prelude::*;
            (0..pool.len())
                .into_par_iter()
                .map(|arm| arm_accuracy(backend, pool, dataset, arm))
                .collect::<Result<_>>()?
        },
        (0..pool.len())
            .map(|arm| arm_accuracy(backend, pool, dataset, arm))
            .collect::<Result<_>>()?
    );
    let outcomes: Vec<ArmOutcome> = counts
        .iter()
        .enumerate()
        .map(|(i, &(pulls, hits))| {
            let accuracy = hits as f64 / pulls as f64;
            ArmOutcome {
                value: composite_value(w, accuracy, scores.get(i)),
                accuracy,
                pulls,
            }
        })
        .collect();
    Ok(SelectionReport::build(
        Method::BruteForce,
        ConfigEcho::weights_only(*w),
        pool,
        dataset.len(),
        &outcomes,
    ))
}
