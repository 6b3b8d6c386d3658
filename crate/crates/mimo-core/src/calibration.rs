//! Sample-level calibration errors between correctness scores and
//! confidence values: ECE is the mean absolute gap, MCE the maximum.
//! Per-sample (unbinned) formulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricTable;

/// Aggregation level for the correctness/confidence pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationLevel {
    /// One pair per sample: row-mean Dice vs row-mean confidence.
    #[default]
    PerSample,
    /// One pair per (sample, organ) cell.
    PerSampleOrgan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub mce: f64,
    pub per_sample_gaps: Vec<f64>,
    /// Which correctness indicator served as the score.
    pub correctness_metric: String,
    pub level: CalibrationLevel,
}

fn gaps(scores: &[f64], confs: &[f64], context: &str) -> Result<Vec<f64>> {
    if scores.len() != confs.len() {
        return Err(Error::LengthMismatch {
            context: context.into(),
            left: scores.len(),
            right: confs.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput {
            context: context.into(),
        });
    }
    Ok(scores
        .iter()
        .zip(confs)
        .map(|(s, c)| (s - c).abs())
        .collect())
}

/// Expected calibration error: mean |s_i - conf_i|.
pub fn ece(scores: &[f64], confs: &[f64]) -> Result<f64> {
    let g = gaps(scores, confs, "ece")?;
    Ok(g.iter().sum::<f64>() / g.len() as f64)
}

/// Maximum calibration error: max |s_i - conf_i|.
pub fn mce(scores: &[f64], confs: &[f64]) -> Result<f64> {
    let g = gaps(scores, confs, "mce")?;
    Ok(g.into_iter().fold(0.0, f64::max))
}

/// Builds the calibration report from a metric table, pairing Dice-based
/// correctness with confidence at the chosen aggregation level.
pub fn calibration_report(table: &MetricTable, level: CalibrationLevel) -> Result<CalibrationReport> {
    let (scores, confs) = match level {
        CalibrationLevel::PerSample => {
            let m = table.m() as f64;
            let scores: Vec<f64> = (0..table.n())
                .map(|i| table.dice.row(i).sum() / m)
                .collect();
            let confs: Vec<f64> = (0..table.n())
                .map(|i| table.conf.row(i).sum() / m)
                .collect();
            (scores, confs)
        }
        CalibrationLevel::PerSampleOrgan => (
            table.dice.iter().copied().collect(),
            table.conf.iter().copied().collect(),
        ),
    };
    let per_sample_gaps = gaps(&scores, &confs, "calibration_report")?;
    let ece = per_sample_gaps.iter().sum::<f64>() / per_sample_gaps.len() as f64;
    let mce = per_sample_gaps.iter().copied().fold(0.0, f64::max);
    Ok(CalibrationReport {
        ece,
        mce,
        per_sample_gaps,
        correctness_metric: "dice".into(),
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_calibration_is_zero() {
        let v = [0.2, 0.5, 0.9];
        assert_eq!(ece(&v, &v).unwrap(), 0.0);
        assert_eq!(mce(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn hand_cases() {
        let s = [0.8, 0.6];
        assert!((ece(&s, &[0.9, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!((mce(&s, &[0.9, 0.2]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(ece(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(mce(&[0.3], &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_mismatch_and_empty() {
        assert!(matches!(
            ece(&[0.1], &[0.1, 0.2]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(ece(&[], &[]), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn permutation_invariance() {
        let s = [0.1, 0.4, 0.9, 0.55];
        let c = [0.2, 0.35, 0.8, 0.6];
        let sp = [0.9, 0.55, 0.1, 0.4];
        let cp = [0.8, 0.6, 0.2, 0.35];
        assert_eq!(ece(&s, &c).unwrap(), ece(&sp, &cp).unwrap());
        assert_eq!(mce(&s, &c).unwrap(), mce(&sp, &cp).unwrap());
    }

    #[test]
    fn concatenation_averages_ece() {
        let s1 = [0.8, 0.6];
        let c1 = [0.9, 0.5];
        let s2 = [0.2, 0.4];
        let c2 = [0.7, 0.4];
        let cat_s = [0.8, 0.6, 0.2, 0.4];
        let cat_c = [0.9, 0.5, 0.7, 0.4];
        let expected = (ece(&s1, &c1).unwrap() + ece(&s2, &c2).unwrap()) / 2.0;
        assert!((ece(&cat_s, &cat_c).unwrap() - expected).abs() < 1e-15);
    }
}
