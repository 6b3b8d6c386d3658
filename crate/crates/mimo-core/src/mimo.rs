//! Confidence-sorted prefix screening and the usability-and-
//! comprehensiveness score.
//!
//! Per organ, samples are sorted by descending confidence. For each prefix
//! of length `i` a confidence-interval bound is computed over the prefix's
//! metric values (bootstrap percentile 95 for Dice, 5 for Hausdorff,
//! descending convention). The qualified prefix is the LARGEST `i` whose
//! Dice bound meets the Dice threshold intersected with the largest `i`
//! whose Hausdorff bound meets the Hausdorff threshold; the score is the
//! qualified cell count divided by `n * m`.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    self, mix_seed, BootstrapConfig, ThresholdSet, INDICATOR_DICE, INDICATOR_HD,
    PURPOSE_PREFIX_BOUND,
};
use crate::error::{Error, Result};
use crate::metrics::MetricTable;

/// Confidence-interval percentiles for the prefix bounds (descending
/// convention: 95 is the low tail, 5 the high tail).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CiPercentiles {
    pub dice: f64,
    pub hd: f64,
}

impl Default for CiPercentiles {
    fn default() -> Self {
        Self { dice: 95.0, hd: 5.0 }
    }
}

impl CiPercentiles {
    pub fn validate(&self) -> Result<()> {
        for p in [self.dice, self.hd] {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::BadConfig {
                    reason: format!("CI percentile {p} not strictly inside (0, 100)"),
                });
            }
        }
        Ok(())
    }
}

/// How prefix bounds (and thresholds, where applicable) are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    #[default]
    Bootstrap,
    /// Ablation: the empirical percentile of the prefix values themselves,
    /// same descending rank rule, no resampling.
    Empirical,
}

/// Screening outcome for one organ column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganScreenResult {
    pub organ: String,
    /// Sample ids by descending confidence (ties by ascending id).
    pub sorted_order: Vec<String>,
    pub conf_sorted: Vec<f64>,
    pub dice_sorted: Vec<f64>,
    pub hd_sorted: Vec<f64>,
    pub dice_bounds: Vec<f64>,
    pub hd_bounds: Vec<f64>,
    /// Qualified prefix length q_j.
    pub qualified_len: usize,
    /// Confidence of the q_j-th sorted sample; None when q_j = 0.
    pub min_confidence: Option<f64>,
    /// True exactly for the first q_j entries of `sorted_order`.
    pub pass_fail: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MimoReport {
    pub score: f64,
    pub qualified_count: usize,
    pub total: usize,
    pub ci: CiPercentiles,
    pub method: BoundMethod,
    pub seed: u64,
    pub b: usize,
    #[serde(serialize_with = "thresholds_as_json")]
    pub thresholds: ThresholdSet,
    pub per_organ: Vec<OrganScreenResult>,
}

fn thresholds_as_json<S: serde::Serializer>(
    t: &ThresholdSet,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    t.to_json().serialize(s)
}

/// Column indices ordered by descending confidence, ties by ascending
/// sample id.
fn confidence_order(conf: &[f64], sample_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| {
        conf[b]
            .partial_cmp(&conf[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| sample_ids[a].cmp(&sample_ids[b]))
    });
    order
}

fn check_column(values: &[f64], what: &str, allow_inf: bool) -> Result<()> {
    for v in values {
        if v.is_nan() || (!allow_inf && !v.is_finite()) {
            return Err(Error::NonFinite {
                context: what.into(),
            });
        }
    }
    Ok(())
}

struct PrefixBounds<'a> {
    values: &'a [f64],
    ci_percentile: f64,
    config: &'a BootstrapConfig,
    method: BoundMethod,
    organ_index: u64,
    indicator: u64,
    /// Position of the first non-finite value in sorted order, if any;
    /// every prefix containing it has an infinite bound.
    first_infinite: Option<usize>,
}

impl PrefixBounds<'_> {
    fn bound(&self, prefix_len: usize) -> f64 {
        if let Some(k) = self.first_infinite {
            if prefix_len > k {
                return f64::INFINITY;
            }
        }
        let prefix = &self.values[..prefix_len];
        match self.method {
            BoundMethod::Empirical => bootstrap::empirical_percentile(prefix, self.ci_percentile),
            BoundMethod::Bootstrap => {
                let seed = mix_seed(
                    self.config.seed,
                    &[
                        PURPOSE_PREFIX_BOUND,
                        self.organ_index,
                        self.indicator,
                        prefix_len as u64,
                    ],
                );
                bootstrap::resample_percentile(
                    prefix,
                    self.config.b,
                    self.config.statistic,
                    self.ci_percentile,
                    seed,
                )
            }
        }
    }

    /// Largest prefix length whose bound satisfies the predicate, scanning
    /// from `n` downward. Bound values are keyed by prefix length alone, so
    /// the scan order cannot change the answer.
    fn largest_satisfying(&self, n: usize, satisfies: impl Fn(f64) -> bool) -> usize {
        for i in (1..=n).rev() {
            if satisfies(self.bound(i)) {
                return i;
            }
        }
        0
    }
}

/// Screens one organ column against its thresholds and returns the full
/// per-prefix record.
#[allow(clippy::too_many_arguments)]
pub fn screen_organ(
    organ: &str,
    organ_index: usize,
    sample_ids: &[String],
    dice_col: &[f64],
    hd_col: &[f64],
    conf_col: &[f64],
    thresholds: (f64, f64),
    ci: CiPercentiles,
    config: &BootstrapConfig,
    method: BoundMethod,
) -> Result<OrganScreenResult> {
    ci.validate()?;
    let n = dice_col.len();
    for (name, col) in [("hd", hd_col), ("conf", conf_col)] {
        if col.len() != n {
            return Err(Error::LengthMismatch {
                context: format!("screen_organ {name} column"),
                left: n,
                right: col.len(),
            });
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "screen_organ".into(),
        });
    }
    check_column(dice_col, "dice column", false)?;
    check_column(hd_col, "hd column", true)?;
    check_column(conf_col, "conf column", false)?;

    let order = confidence_order(conf_col, sample_ids);
    let dice_sorted: Vec<f64> = order.iter().map(|&i| dice_col[i]).collect();
    let hd_sorted: Vec<f64> = order.iter().map(|&i| hd_col[i]).collect();
    let conf_sorted: Vec<f64> = order.iter().map(|&i| conf_col[i]).collect();
    let sorted_order: Vec<String> = order.iter().map(|&i| sample_ids[i].clone()).collect();

    let (t_dice, t_hd) = thresholds;
    let dice_prefix = PrefixBounds {
        values: &dice_sorted,
        ci_percentile: ci.dice,
        config,
        method,
        organ_index: organ_index as u64,
        indicator: INDICATOR_DICE,
        first_infinite: None,
    };
    let hd_prefix = PrefixBounds {
        values: &hd_sorted,
        ci_percentile: ci.hd,
        config,
        method,
        organ_index: organ_index as u64,
        indicator: INDICATOR_HD,
        first_infinite: hd_sorted.iter().position(|v| !v.is_finite()),
    };

    let dice_bounds: Vec<f64> = (1..=n).map(|i| dice_prefix.bound(i)).collect();
    let hd_bounds: Vec<f64> = (1..=n)
        .map(|i| {
            if hd_prefix.first_infinite.is_some_and(|k| i > k) {
                f64::INFINITY
            } else {
                hd_prefix.bound(i)
            }
        })
        .collect();

    let i_dice = (1..=n).filter(|&i| dice_bounds[i - 1] >= t_dice).max().unwrap_or(0);
    let i_hd = (1..=n).filter(|&i| hd_bounds[i - 1] <= t_hd).max().unwrap_or(0);
    let qualified_len = i_dice.min(i_hd);

    let mut pass_fail = vec![false; n];
    for flag in pass_fail.iter_mut().take(qualified_len) {
        *flag = true;
    }
    Ok(OrganScreenResult {
        organ: organ.to_string(),
        sorted_order,
        min_confidence: qualified_len.checked_sub(1).map(|i| conf_sorted[i]),
        conf_sorted,
        dice_sorted,
        hd_sorted,
        dice_bounds,
        hd_bounds,
        qualified_len,
        pass_fail,
    })
}

fn threshold_index(thresholds: &ThresholdSet, organ: &str) -> Result<usize> {
    thresholds
        .organs
        .iter()
        .position(|o| o == organ)
        .ok_or_else(|| Error::OrganMismatch {
            reason: format!("organ '{organ}' missing from threshold set"),
        })
}

/// Applies [`screen_organ`] to every organ and assembles the report.
/// `score = sum(q_j) / (n * m)` exactly.
pub fn mimo_score(
    table: &MetricTable,
    thresholds: &ThresholdSet,
    ci: CiPercentiles,
    config: &BootstrapConfig,
    method: BoundMethod,
) -> Result<MimoReport> {
    let mut per_organ = Vec::with_capacity(table.m());
    for (j, organ) in table.organs.iter().enumerate() {
        let tj = threshold_index(thresholds, organ)?;
        per_organ.push(screen_organ(
            organ,
            j,
            &table.sample_ids,
            &table.dice.column(j).to_vec(),
            &table.hd.column(j).to_vec(),
            &table.conf.column(j).to_vec(),
            (thresholds.dice[tj], thresholds.hd[tj]),
            ci,
            config,
            method,
        )?);
    }
    let qualified_count: usize = per_organ.iter().map(|o| o.qualified_len).sum();
    let total = table.n() * table.m();
    Ok(MimoReport {
        score: qualified_count as f64 / total as f64,
        qualified_count,
        total,
        ci,
        method,
        seed: config.seed,
        b: config.b,
        thresholds: thresholds.clone(),
        per_organ,
    })
}

/// Score without assembling per-prefix records: per organ and indicator the
/// downward scan stops at the largest satisfying prefix. Produces exactly
/// the qualified lengths of [`mimo_score`].
pub fn mimo_qualified_counts(
    table: &MetricTable,
    thresholds: &ThresholdSet,
    ci: CiPercentiles,
    config: &BootstrapConfig,
    method: BoundMethod,
) -> Result<Vec<usize>> {
    ci.validate()?;
    let n = table.n();
    let mut counts = Vec::with_capacity(table.m());
    for (j, organ) in table.organs.iter().enumerate() {
        let tj = threshold_index(thresholds, organ)?;
        let conf_col = table.conf.column(j).to_vec();
        let order = confidence_order(&conf_col, &table.sample_ids);
        let dice_sorted: Vec<f64> = order.iter().map(|&i| table.dice[[i, j]]).collect();
        let hd_sorted: Vec<f64> = order.iter().map(|&i| table.hd[[i, j]]).collect();
        check_column(&dice_sorted, "dice column", false)?;
        check_column(&hd_sorted, "hd column", true)?;
        let (t_dice, t_hd) = (thresholds.dice[tj], thresholds.hd[tj]);
        let dice_prefix = PrefixBounds {
            values: &dice_sorted,
            ci_percentile: ci.dice,
            config,
            method,
            organ_index: j as u64,
            indicator: INDICATOR_DICE,
            first_infinite: None,
        };
        let hd_prefix = PrefixBounds {
            values: &hd_sorted,
            ci_percentile: ci.hd,
            config,
            method,
            organ_index: j as u64,
            indicator: INDICATOR_HD,
            first_infinite: hd_sorted.iter().position(|v| !v.is_finite()),
        };
        let i_dice = dice_prefix.largest_satisfying(n, |b| b >= t_dice);
        let i_hd = hd_prefix.largest_satisfying(n, |b| b <= t_hd);
        counts.push(i_dice.min(i_hd));
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "higher-better" => Ok(Self::HigherBetter),
            "lower-better" => Ok(Self::LowerBetter),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

/// Single-indicator Usable-Region baseline: fraction `i*/n` where `i*` is
/// the largest confidence-sorted prefix whose CI bound meets the
/// requirement. `organ_index` keys the bound sub-seeds identically to
/// [`screen_organ`] on the same column.
#[allow(clippy::too_many_arguments)]
pub fn usable_region(
    metric_col: &[f64],
    conf_col: &[f64],
    sample_ids: &[String],
    requirement: f64,
    direction: Direction,
    ci_percentile: f64,
    config: &BootstrapConfig,
    method: BoundMethod,
    organ_index: usize,
) -> Result<f64> {
    let n = metric_col.len();
    if conf_col.len() != n {
        return Err(Error::LengthMismatch {
            context: "usable_region".into(),
            left: n,
            right: conf_col.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "usable_region".into(),
        });
    }
    check_column(conf_col, "conf column", false)?;
    check_column(
        metric_col,
        "metric column",
        direction == Direction::LowerBetter,
    )?;
    let order = confidence_order(conf_col, sample_ids);
    let sorted: Vec<f64> = order.iter().map(|&i| metric_col[i]).collect();
    let indicator = match direction {
        Direction::HigherBetter => INDICATOR_DICE,
        Direction::LowerBetter => INDICATOR_HD,
    };
    let prefix = PrefixBounds {
        values: &sorted,
        ci_percentile,
        config,
        method,
        organ_index: organ_index as u64,
        indicator,
        first_infinite: sorted.iter().position(|v| !v.is_finite()),
    };
    let best = match direction {
        Direction::HigherBetter => prefix.largest_satisfying(n, |b| b >= requirement),
        Direction::LowerBetter => prefix.largest_satisfying(n, |b| b <= requirement),
    };
    Ok(best as f64 / n as f64)
}

/// Flat pass/fail rows (`organ,sample_id,conf,dice,hd,passed`) for
/// spreadsheet triage.
pub fn write_pass_fail_csv<W: std::io::Write>(report: &MimoReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    };
    w.write_record(["organ", "sample_id", "conf", "dice", "hd", "passed"])
        .map_err(io_err)?;
    for organ in &report.per_organ {
        for (k, sample) in organ.sorted_order.iter().enumerate() {
            w.write_record([
                organ.organ.as_str(),
                sample.as_str(),
                &format!("{}", organ.conf_sorted[k]),
                &format!("{}", organ.dice_sorted[k]),
                &format!("{}", organ.hd_sorted[k]),
                if organ.pass_fail[k] { "true" } else { "false" },
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    })
}
