//! Split-half robustness experiment: how often does a model's rank differ
//! from the full-test-set reference ranking when thresholds come from one
//! random half and scoring from the other?

use rand::rngs::SmallRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, mix_seed, BootstrapConfig, ThresholdSet, PURPOSE_SPLIT};
use crate::error::{Error, Result};
use crate::metrics::MetricTable;
use crate::mimo::{self, BoundMethod, CiPercentiles, MimoReport};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub trials_inner: usize,
    pub trials_outer: usize,
    pub seed: u64,
    pub split_fraction: f64,
    /// Disable bootstrap: empirical percentiles for thresholds and bounds.
    pub ablation: bool,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            trials_inner: 100,
            trials_outer: 20,
            seed: 0,
            split_fraction: 0.5,
            ablation: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRobustness {
    pub model: String,
    /// Mean rank-violation frequency in percent over the outer repetitions.
    pub mean_pct: f64,
    /// Population standard deviation over the outer repetitions.
    pub std_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Model names by full-test-set score, best first.
    pub reference_ranking: Vec<String>,
    pub reference_scores: Vec<f64>,
    pub per_model: Vec<ModelRobustness>,
    pub trials_inner: usize,
    pub trials_outer: usize,
    pub ablation: bool,
}

/// Parameters shared with plain scoring: threshold percentiles, CI
/// percentiles and the bootstrap engine settings.
#[derive(Debug, Clone, Copy)]
pub struct ScoringParams {
    pub dice_percentile: f64,
    pub hd_percentile: f64,
    pub ci: CiPercentiles,
    pub bootstrap: BootstrapConfig,
}

fn self_thresholds(
    table: &MetricTable,
    params: &ScoringParams,
    method: BoundMethod,
) -> Result<ThresholdSet> {
    match method {
        BoundMethod::Bootstrap => bootstrap::generate_thresholds(
            table,
            params.dice_percentile,
            params.hd_percentile,
            &params.bootstrap,
        ),
        BoundMethod::Empirical => bootstrap::generate_thresholds_empirical(
            table,
            params.dice_percentile,
            params.hd_percentile,
            &params.bootstrap,
        ),
    }
}

fn self_score(table: &MetricTable, params: &ScoringParams, method: BoundMethod) -> Result<f64> {
    let thresholds = self_thresholds(table, params, method)?;
    let counts =
        mimo::mimo_qualified_counts(table, &thresholds, params.ci, &params.bootstrap, method)?;
    let total = table.n() * table.m();
    Ok(counts.iter().sum::<usize>() as f64 / total as f64)
}

/// Rank position per model under "score descending, name ascending".
fn rank_positions(names: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| names[a].cmp(&names[b]))
    });
    let mut positions = vec![0usize; names.len()];
    for (pos, &model) in order.iter().enumerate() {
        positions[model] = pos;
    }
    positions
}

/// Runs the split-half experiment. Every inner trial uses one split shared
/// by all models; thresholds come from half A, the score from half B, and
/// a model violates when its rank position differs from the reference.
pub fn robustness_experiment(
    models: &[(String, MetricTable)],
    params: &ScoringParams,
    config: &RobustnessConfig,
) -> Result<RobustnessReport> {
    if models.len() < 2 {
        return Err(Error::BadConfig {
            reason: format!("robustness needs >= 2 models, got {}", models.len()),
        });
    }
    if config.trials_inner < 1 || config.trials_outer < 1 {
        return Err(Error::BadConfig {
            reason: "trial counts must be >= 1".into(),
        });
    }
    if !(config.split_fraction > 0.0 && config.split_fraction < 1.0) {
        return Err(Error::BadConfig {
            reason: format!("split fraction {} outside (0, 1)", config.split_fraction),
        });
    }
    let (first_name, first) = &models[0];
    let n = first.n();
    if n < 2 {
        return Err(Error::BadConfig {
            reason: format!("cannot split {n} samples"),
        });
    }
    for (name, table) in models.iter().skip(1) {
        if table.sample_ids != first.sample_ids || table.organs != first.organs {
            return Err(Error::OrganMismatch {
                reason: format!("tables '{first_name}' and '{name}' disagree on samples or organs"),
            });
        }
    }
    let method = if config.ablation {
        BoundMethod::Empirical
    } else {
        BoundMethod::Bootstrap
    };

    let names: Vec<String> = models.iter().map(|(n, _)| n.clone()).collect();
    let reference_scores: Vec<f64> = models
        .iter()
        .map(|(_, table)| self_score(table, params, method))
        .collect::<Result<_>>()?;
    let reference_positions = rank_positions(&names, &reference_scores);

    // Half A keeps ceil(n * fraction) samples, clamped so both halves are
    // nonempty.
    let size_a = ((n as f64 * config.split_fraction).ceil() as usize).clamp(1, n - 1);

    let trial_violations: Vec<Vec<bool>> = (0..config.trials_outer * config.trials_inner)
        .into_par_iter()
        .map(|trial| {
            let outer = (trial / config.trials_inner) as u64;
            let inner = (trial % config.trials_inner) as u64;
            let split_seed = mix_seed(config.seed, &[PURPOSE_SPLIT, outer, inner]);
            let mut rng = SmallRng::seed_from_u64(split_seed);
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(&mut rng);
            let mut half_a: Vec<usize> = indices[..size_a].to_vec();
            let mut half_b: Vec<usize> = indices[size_a..].to_vec();
            half_a.sort_unstable();
            half_b.sort_unstable();

            let trial_scores: Vec<f64> = models
                .iter()
                .map(|(_, table)| {
                    let thresholds =
                        self_thresholds(&table.subset(&half_a), params, method)?;
                    let scoring = table.subset(&half_b);
                    let counts = mimo::mimo_qualified_counts(
                        &scoring,
                        &thresholds,
                        params.ci,
                        &params.bootstrap,
                        method,
                    )?;
                    Ok(counts.iter().sum::<usize>() as f64
                        / (scoring.n() * scoring.m()) as f64)
                })
                .collect::<Result<_>>()?;
            let positions = rank_positions(&names, &trial_scores);
            Ok(positions
                .iter()
                .zip(&reference_positions)
                .map(|(a, b)| a != b)
                .collect())
        })
        .collect::<Result<_>>()?;

    let per_model = names
        .iter()
        .enumerate()
        .map(|(model, name)| {
            let mut freqs = Vec::with_capacity(config.trials_outer);
            for outer in 0..config.trials_outer {
                let violations = (0..config.trials_inner)
                    .filter(|&inner| trial_violations[outer * config.trials_inner + inner][model])
                    .count();
                freqs.push(violations as f64 / config.trials_inner as f64 * 100.0);
            }
            let mean = freqs.iter().sum::<f64>() / freqs.len() as f64;
            let var = freqs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / freqs.len() as f64;
            ModelRobustness {
                model: name.clone(),
                mean_pct: mean,
                std_pct: var.sqrt(),
            }
        })
        .collect();

    let mut ranking_order: Vec<usize> = (0..names.len()).collect();
    ranking_order.sort_by_key(|&i| reference_positions[i]);
    Ok(RobustnessReport {
        reference_ranking: ranking_order.iter().map(|&i| names[i].clone()).collect(),
        reference_scores,
        per_model,
        trials_inner: config.trials_inner,
        trials_outer: config.trials_outer,
        ablation: config.ablation,
    })
}

/// Screening with every bootstrap replaced by the empirical percentile of
/// the raw values, same descending rank rule.
pub fn score_without_bootstrap(
    table: &MetricTable,
    thresholds: &ThresholdSet,
    ci: CiPercentiles,
    config: &BootstrapConfig,
) -> Result<MimoReport> {
    mimo::mimo_score(table, thresholds, ci, config, BoundMethod::Empirical)
}

/// Two-column CSV (`model,mean_pct,std_pct`) mirroring the report layout.
pub fn write_robustness_csv<W: std::io::Write>(
    report: &RobustnessReport,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    };
    w.write_record(["model", "mean_pct", "std_pct"]).map_err(io_err)?;
    for row in &report.per_model {
        w.write_record([
            row.model.as_str(),
            &format!("{}", row.mean_pct),
            &format!("{}", row.std_pct),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    })
}
