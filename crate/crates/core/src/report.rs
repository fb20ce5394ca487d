//! Selection reports, savings accounting and repetition aggregation.

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::domain::{ExperimentConfig, MetricWeights, ModelPool, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bandit,
    BruteForce,
    Benchmark,
}

/// The configuration a report was produced under. Baselines only echo the
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u32>,
    pub weights: MetricWeights,
}

impl ConfigEcho {
    pub fn weights_only(weights: MetricWeights) -> Self {
        Self {
            strategy: None,
            budget: None,
            epsilon: None,
            seed: None,
            repetitions: None,
            weights,
        }
    }
}

impl From<&ExperimentConfig> for ConfigEcho {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            strategy: Some(c.strategy),
            budget: Some(c.budget),
            epsilon: Some(c.epsilon),
            seed: Some(c.seed),
            repetitions: Some(c.repetitions),
            weights: c.weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedArm {
    pub arm: usize,
    pub id: String,
    pub estimated_value: f64,
    /// Estimated, exact, or benchmark accuracy depending on the method.
    pub accuracy: f64,
    pub pulls: u64,
    pub size_mb: f64,
    pub complexity_mmac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    pub config: ConfigEcho,
    pub dataset_size: u64,
    pub ranking: Vec<RankedArm>,
    pub pulls_total: u64,
    pub total_cost_mmac: f64,
    pub eval_savings: f64,
    pub compute_savings_mmac: f64,
}

/// Per-arm outcome of one selector run, in pool order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmOutcome {
    pub value: f64,
    pub accuracy: f64,
    pub pulls: u64,
}

impl SelectionReport {
    pub fn build(
        method: Method,
        config: ConfigEcho,
        pool: &ModelPool,
        dataset_size: usize,
        outcomes: &[ArmOutcome],
    ) -> Self {
        debug_assert_eq!(outcomes.len(), pool.len());
        let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
        let pulls: Vec<u64> = outcomes.iter().map(|o| o.pulls).collect();
        let ranking = rank_descending(&values)
            .into_iter()
            .map(|arm| {
                let m = &pool.candidates()[arm];
                RankedArm {
                    arm,
                    id: m.id.clone(),
                    estimated_value: outcomes[arm].value,
                    accuracy: outcomes[arm].accuracy,
                    pulls: outcomes[arm].pulls,
                    size_mb: m.size_mb,
                    complexity_mmac: m.complexity_mmac,
                }
            })
            .collect();
        let savings = compute_savings(&pulls, pool, dataset_size);
        let total_cost_mmac = pulls
            .iter()
            .zip(pool.candidates())
            .map(|(n, m)| *n as f64 * m.complexity_mmac)
            .sum();
        Self {
            method,
            config,
            dataset_size: dataset_size as u64,
            ranking,
            pulls_total: pulls.iter().sum(),
            total_cost_mmac,
            eval_savings: savings.eval,
            compute_savings_mmac: savings.compute_mmac,
        }
    }

    pub fn top(&self) -> &RankedArm {
        &self.ranking[0]
    }

    /// Pull counts indexed by arm.
    pub fn pulls_per_arm(&self) -> Vec<u64> {
        let mut out = vec![0; self.ranking.len()];
        for r in &self.ranking {
            out[r.arm] = r.pulls;
        }
        out
    }

    /// Arm indices in rank order.
    pub fn ranked_arms(&self) -> Vec<usize> {
        self.ranking.iter().map(|r| r.arm).collect()
    }

    pub fn to_canonical_string(&self) -> String {
        canonical::to_canonical_string(self)
    }

    pub fn from_canonical_str(text: &str) -> Result<Self> {
        canonical::from_canonical_str(text)
    }
}

/// Arm indices sorted by value, largest first; equal values keep pool order.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Savings {
    pub eval: f64,
    pub compute_mmac: f64,
}

/// Fractions of pulls and of MMAC-weighted pulls avoided relative to
/// evaluating every arm on all `dataset_size` samples. A selector that never
/// sees the target set (`dataset_size == 0`) saves everything.
pub fn compute_savings(pulls_per_arm: &[u64], pool: &ModelPool, dataset_size: usize) -> Savings {
    if dataset_size == 0 {
        return Savings {
            eval: 1.0,
            compute_mmac: 1.0,
        };
    }
    let k = pool.len() as f64;
    let n = dataset_size as f64;
    let pulls: u64 = pulls_per_arm.iter().sum();
    let eval = 1.0 - pulls as f64 / (k * n);
    let (spent, full) = pulls_per_arm
        .iter()
        .zip(pool.candidates())
        .fold((0.0, 0.0), |(spent, full), (p, m)| {
            (spent + *p as f64 * m.complexity_mmac, full + n * m.complexity_mmac)
        });
    Savings {
        eval,
        compute_mmac: 1.0 - spent / full,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub arm: usize,
    pub id: String,
    /// Fraction of runs in which this arm was ranked first.
    pub frequency: f64,
    pub mean_estimated_value: f64,
    pub exact_accuracy: f64,
    pub mean_pulls: f64,
    pub size_mb: f64,
    pub complexity_mmac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: ConfigEcho,
    pub repetitions: u32,
    pub dataset_size: u64,
    /// All arms, ordered by selection frequency then mean estimated value.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub top_mean_accuracy: f64,
    pub top_mean_size_mb: f64,
    pub top_mean_complexity_mmac: f64,
    /// Mean composite value of the top arm, scored with exact accuracy.
    pub top_mean_composite: f64,
    pub mean_pulls_total: f64,
    pub mean_eval_savings: f64,
    pub mean_compute_savings_mmac: f64,
}

impl AggregateReport {
    pub fn to_canonical_string(&self) -> String {
        canonical::to_canonical_string(self)
    }

    pub fn from_canonical_str(text: &str) -> Result<Self> {
        canonical::from_canonical_str(text)
    }

    pub fn frequency_of(&self, arm: usize) -> f64 {
        self.leaderboard
            .iter()
            .find(|e| e.arm == arm)
            .map_or(0.0, |e| e.frequency)
    }
}

/// Sum that does not depend on input order.
fn order_free_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Aggregates repeated runs over one pool. `exact_accuracy[arm]` is the
/// arm's accuracy over the full dataset and `static_terms[arm]` its weighted
/// static score; together they score the realized quality of each run's
/// winner.
pub fn aggregate(
    config: ConfigEcho,
    reports: &[SelectionReport],
    exact_accuracy: &[f64],
    static_terms: &[f64],
) -> Result<AggregateReport> {
    let first = reports.first().ok_or_else(|| Error::Config {
        field: "reports",
        reason: "nothing to aggregate".into(),
    })?;
    let identity = |r: &SelectionReport| {
        let mut ids: Vec<(usize, String)> = r.ranking.iter().map(|a| (a.arm, a.id.clone())).collect();
        ids.sort();
        ids
    };
    let pool_ids = identity(first);
    let k = pool_ids.len();
    if exact_accuracy.len() != k || static_terms.len() != k {
        return Err(Error::MixedPools);
    }
    if reports
        .iter()
        .any(|r| r.dataset_size != first.dataset_size || identity(r) != pool_ids)
    {
        return Err(Error::MixedPools);
    }

    let r_count = reports.len();
    let r_f = r_count as f64;
    let mut wins = vec![0u64; k];
    let mut pulls = vec![0u64; k];
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(r_count); k];
    let mut arm_info: Vec<Option<&RankedArm>> = vec![None; k];
    for report in reports {
        wins[report.top().arm] += 1;
        for a in &report.ranking {
            pulls[a.arm] += a.pulls;
            values[a.arm].push(a.estimated_value);
            arm_info[a.arm].get_or_insert(a);
        }
    }

    let mut leaderboard: Vec<LeaderboardEntry> = (0..k)
        .map(|arm| {
            let info = arm_info[arm].expect("every arm ranked");
            LeaderboardEntry {
                arm,
                id: info.id.clone(),
                frequency: wins[arm] as f64 / r_f,
                mean_estimated_value: order_free_sum(values[arm].iter().copied()) / r_f,
                exact_accuracy: exact_accuracy[arm],
                mean_pulls: pulls[arm] as f64 / r_f,
                size_mb: info.size_mb,
                complexity_mmac: info.complexity_mmac,
            }
        })
        .collect();
    leaderboard.sort_by(|a, b| {
        b.frequency
            .total_cmp(&a.frequency)
            .then(b.mean_estimated_value.total_cmp(&a.mean_estimated_value))
            .then(a.arm.cmp(&b.arm))
    });

    // Means over winners, computed from win counts so report order is irrelevant.
    let weighted_mean =
        |f: &dyn Fn(usize) -> f64| -> f64 { (0..k).map(|arm| wins[arm] as f64 * f(arm)).sum::<f64>() / r_f };
    let info = |arm: usize| arm_info[arm].expect("every arm ranked");
    let top_mean_accuracy = weighted_mean(&|a| exact_accuracy[a]);
    let top_mean_size_mb = weighted_mean(&|a| info(a).size_mb);
    let top_mean_complexity_mmac = weighted_mean(&|a| info(a).complexity_mmac);
    let w = config.weights;
    let top_mean_composite = weighted_mean(&|a| w.accuracy * exact_accuracy[a] + static_terms[a]);

    Ok(AggregateReport {
        config,
        repetitions: r_count as u32,
        dataset_size: first.dataset_size,
        leaderboard,
        top_mean_accuracy,
        top_mean_size_mb,
        top_mean_complexity_mmac,
        top_mean_composite,
        mean_pulls_total: reports.iter().map(|r| r.pulls_total).sum::<u64>() as f64 / r_f,
        mean_eval_savings: order_free_sum(reports.iter().map(|r| r.eval_savings)) / r_f,
        mean_compute_savings_mmac: order_free_sum(reports.iter().map(|r| r.compute_savings_mmac)) / r_f,
    })
}
