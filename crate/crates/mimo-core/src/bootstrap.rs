//! Deterministic bootstrap resampling.
//!
//! A percentile query draws `b` resamples with replacement, computes the
//! statistic for each, sorts the `b` estimates in DESCENDING order and
//! returns the estimate at rank `ceil(p/100 * b)` (clamped to `[1, b]`).
//! Under this convention percentile 95 lands in the low tail and
//! percentile 5 in the high tail, giving a conservative lower bound for
//! Dice and upper bound for Hausdorff distance from the same rank rule.
//!
//! All randomness flows from one master seed through [`mix_seed`], so any
//! sub-computation is reproducible in isolation and results cannot depend
//! on scheduling.

use rand::rngs::SmallRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricTable;

/// Statistic evaluated on each resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Statistic {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(format!("unknown statistic '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Resample count.
    pub b: usize,
    pub statistic: Statistic,
    pub seed: u64,
    /// Percentile in (0, 100), read against the descending-sorted estimates.
    pub percentile: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            statistic: Statistic::Mean,
            seed: 0,
            percentile: 50.0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(Error::BadConfig {
                reason: "bootstrap resample count must be >= 1".into(),
            });
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::BadConfig {
                reason: format!("percentile {} not strictly inside (0, 100)", self.percentile),
            });
        }
        Ok(())
    }
}

// Purpose tags for sub-seed derivation.
pub const PURPOSE_THRESHOLD: u64 = 1;
pub const PURPOSE_PREFIX_BOUND: u64 = 2;
pub const PURPOSE_SPLIT: u64 = 3;
pub const INDICATOR_DICE: u64 = 1;
pub const INDICATOR_HD: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds the parts into the master seed, one splitmix64 round per part.
pub fn mix_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Descending-order rank for a percentile over `len` sorted estimates:
/// `ceil(p/100 * len)` clamped to `[1, len]`, returned zero-based.
fn descending_rank(percentile: f64, len: usize) -> usize {
    let rank = (percentile / 100.0 * len as f64).ceil() as usize;
    rank.clamp(1, len) - 1
}

/// Percentile of the raw values themselves under the same descending rank
/// rule, with no resampling. This is the bootstrap-ablated estimator.
pub fn empirical_percentile(values: &[f64], percentile: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    let rank = descending_rank(percentile, sorted.len());
    sorted.select_nth_unstable_by(rank, |a, b| b.total_cmp(a));
    sorted[rank]
}

/// Validated entry point matching the public contract; rejects empty and
/// non-finite input.
pub fn bootstrap_percentile(values: &[f64], config: &BootstrapConfig) -> Result<f64> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "bootstrap_percentile".into(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "bootstrap_percentile".into(),
        });
    }
    Ok(resample_percentile(
        values,
        config.b,
        config.statistic,
        config.percentile,
        config.seed,
    ))
}

/// Unvalidated hot path shared by threshold generation and prefix bounds.
/// `values` must be nonempty and finite.
pub fn resample_percentile(
    values: &[f64],
    b: usize,
    statistic: Statistic,
    percentile: f64,
    seed: u64,
) -> f64 {
    let len = values.len();
    // Every resample of a constant column is the column; answering directly
    // keeps the identity exact for constants whose repeated sum rounds.
    if values.iter().all(|&v| v == values[0]) {
        return values[0];
    }
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(b);
    let mut scratch = vec![0.0f64; len];
    for _ in 0..b {
        match statistic {
            Statistic::Mean => {
                let mut sum = 0.0f64;
                for _ in 0..len {
                    sum += values[draw_index(&mut rng, len)];
                }
                estimates.push(sum / len as f64);
            }
            Statistic::Median => {
                for slot in scratch.iter_mut() {
                    *slot = values[draw_index(&mut rng, len)];
                }
                estimates.push(median_in_place(&mut scratch));
            }
        }
    }
    let rank = descending_rank(percentile, b);
    estimates.select_nth_unstable_by(rank, |a, b| b.total_cmp(a));
    estimates[rank]
}

#[inline]
fn draw_index(rng: &mut SmallRng, len: usize) -> usize {
    // Multiply-shift range reduction; bias is negligible at these sizes.
    ((rng.next_u64() as u128 * len as u128) >> 64) as usize
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let odd = buf.len() % 2 == 1;
    let mid = buf.len() / 2;
    let (left, pivot, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    if odd {
        return *pivot;
    }
    let hi = *pivot;
    let lo = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo + hi) / 2.0
}

/// Per-organ Dice and Hausdorff thresholds produced by bootstrapping a
/// metric table's columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub seed: u64,
    pub b: usize,
    pub statistic: Statistic,
    pub dice_percentile: f64,
    pub hd_percentile: f64,
    pub organs: Vec<String>,
    pub dice: Vec<f64>,
    pub hd: Vec<f64>,
}

impl ThresholdSet {
    pub fn to_json(&self) -> serde_json::Value {
        let mut organs = serde_json::Map::new();
        for (j, name) in self.organs.iter().enumerate() {
            organs.insert(
                name.clone(),
                serde_json::json!({ "dice": self.dice[j], "hd": self.hd[j] }),
            );
        }
        serde_json::json!({
            "seed": self.seed,
            "b": self.b,
            "statistic": self.statistic,
            "dice_percentile": self.dice_percentile,
            "hd_percentile": self.hd_percentile,
            "organs": organs,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = |reason: &str| Error::BadConfig {
            reason: format!("threshold set json: {reason}"),
        };
        let obj = value.as_object().ok_or_else(|| bad("not an object"))?;
        let organs_obj = obj
            .get("organs")
            .and_then(|v| v.as_object())
            .ok_or_else(|| bad("missing organs map"))?;
        let mut organs = Vec::new();
        let mut dice = Vec::new();
        let mut hd = Vec::new();
        for (name, entry) in organs_obj {
            organs.push(name.clone());
            dice.push(
                entry
                    .get("dice")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| bad("missing dice threshold"))?,
            );
            hd.push(
                entry
                    .get("hd")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| bad("missing hd threshold"))?,
            );
        }
        Ok(ThresholdSet {
            seed: obj.get("seed").and_then(|v| v.as_u64()).unwrap_or(0),
            b: obj.get("b").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
            statistic: obj
                .get("statistic")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .unwrap_or_default(),
            dice_percentile: obj
                .get("dice_percentile")
                .and_then(|v| v.as_f64())
                .unwrap_or(50.0),
            hd_percentile: obj
                .get("hd_percentile")
                .and_then(|v| v.as_f64())
                .unwrap_or(50.0),
            organs,
            dice,
            hd,
        })
    }
}

/// Per-organ thresholds: the stated percentile of the bootstrap estimates
/// of each organ's Dice and finite-Hausdorff columns. Infinite Hausdorff
/// entries never enter resampling; a column with no finite entry is an
/// error.
pub fn generate_thresholds(
    table: &MetricTable,
    dice_percentile: f64,
    hd_percentile: f64,
    config: &BootstrapConfig,
) -> Result<ThresholdSet> {
    generate_thresholds_inner(table, dice_percentile, hd_percentile, config, true)
}

/// Bootstrap-ablated variant: thresholds are direct column percentiles
/// under the same descending rank rule.
pub fn generate_thresholds_empirical(
    table: &MetricTable,
    dice_percentile: f64,
    hd_percentile: f64,
    config: &BootstrapConfig,
) -> Result<ThresholdSet> {
    generate_thresholds_inner(table, dice_percentile, hd_percentile, config, false)
}

fn generate_thresholds_inner(
    table: &MetricTable,
    dice_percentile: f64,
    hd_percentile: f64,
    config: &BootstrapConfig,
    resample: bool,
) -> Result<ThresholdSet> {
    for p in [dice_percentile, hd_percentile] {
        if !(p > 0.0 && p < 100.0) {
            return Err(Error::BadConfig {
                reason: format!("threshold percentile {p} not strictly inside (0, 100)"),
            });
        }
    }
    let mut dice = Vec::with_capacity(table.m());
    let mut hd = Vec::with_capacity(table.m());
    for (j, organ) in table.organs.iter().enumerate() {
        let dice_col: Vec<f64> = table.dice.column(j).to_vec();
        let hd_col: Vec<f64> = table
            .hd
            .column(j)
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        if hd_col.is_empty() {
            return Err(Error::AllInfiniteColumn {
                organ: organ.clone(),
            });
        }
        if resample {
            let dice_seed = mix_seed(config.seed, &[PURPOSE_THRESHOLD, j as u64, INDICATOR_DICE]);
            let hd_seed = mix_seed(config.seed, &[PURPOSE_THRESHOLD, j as u64, INDICATOR_HD]);
            dice.push(resample_percentile(
                &dice_col,
                config.b,
                config.statistic,
                dice_percentile,
                dice_seed,
            ));
            hd.push(resample_percentile(
                &hd_col,
                config.b,
                config.statistic,
                hd_percentile,
                hd_seed,
            ));
        } else {
            dice.push(empirical_percentile(&dice_col, dice_percentile));
            hd.push(empirical_percentile(&hd_col, hd_percentile));
        }
    }
    Ok(ThresholdSet {
        seed: config.seed,
        b: if resample { config.b } else { 0 },
        statistic: config.statistic,
        dice_percentile,
        hd_percentile,
        organs: table.organs.clone(),
        dice,
        hd,
    })
}
