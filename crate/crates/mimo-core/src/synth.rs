//! Synthetic multi-organ datasets and metric tables with controllable
//! quality and calibration, for desk-scale exercise of the pipeline.
//!
//! Ground-truth organs are axis-aligned boxes on a disjoint lattice;
//! predictions erode or dilate the box by a configurable radius, which
//! keeps expected Dice closed-form and every organ pair disjoint.

use ndarray::{Array3, Array4};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{mix_seed, ThresholdSet};
use crate::error::{Error, Result};
use crate::metrics::MetricTable;
use crate::volume::{
    write_label_volume, write_manifest, write_probability_volume, DatasetManifest, LabelVolume,
    ProbabilityVolume, SampleEntry,
};

/// Maps a measured Dice value to the organ-level confidence the generated
/// probabilities should express.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum ConfidenceModel {
    Calibrated,
    Overconfident { offset: f64 },
    Underconfident { offset: f64 },
}

impl ConfidenceModel {
    pub fn apply(&self, dice: f64) -> f64 {
        match self {
            Self::Calibrated => dice,
            Self::Overconfident { offset } => (dice + offset).clamp(0.0, 1.0),
            Self::Underconfident { offset } => (dice - offset).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganSpec {
    /// Erosion/dilation radius applied to the prediction box, in voxels.
    pub perturbation_radius: usize,
    pub confidence: ConfidenceModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub shape: (usize, usize, usize),
    pub spacing: [f64; 3],
    /// Side length of each ground-truth organ box.
    pub organ_size: usize,
    pub organs: Vec<OrganSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Box3 {
    lo: [usize; 3],
    hi: [usize; 3], // exclusive
}

impl Box3 {
    fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] <= self.lo[a])
    }

    fn volume(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (0..3).map(|a| self.hi[a] - self.lo[a]).product()
        }
    }

    fn intersection(&self, other: &Box3) -> usize {
        let mut v = 1usize;
        for a in 0..3 {
            let lo = self.lo[a].max(other.lo[a]);
            let hi = self.hi[a].min(other.hi[a]);
            if hi <= lo {
                return 0;
            }
            v *= hi - lo;
        }
        v
    }

    fn fill(&self, grid: &mut Array3<u16>, label: u16) {
        if self.is_empty() {
            return;
        }
        for z in self.lo[0]..self.hi[0] {
            for y in self.lo[1]..self.hi[1] {
                for x in self.lo[2]..self.hi[2] {
                    grid[[z, y, x]] = label;
                }
            }
        }
    }
}

/// Lattice placement of the m ground-truth boxes; errors when the volume
/// cannot host them with the required margins.
fn layout(spec: &SynthSpec) -> Result<Vec<Box3>> {
    let m = spec.organs.len();
    if m == 0 || spec.n == 0 {
        return Err(Error::BadConfig {
            reason: "synth spec needs n >= 1 and m >= 1".into(),
        });
    }
    let r_max = spec
        .organs
        .iter()
        .map(|o| o.perturbation_radius)
        .max()
        .unwrap_or(0);
    let margin = r_max + 1;
    let cell = spec.organ_size + 2 * margin;
    let per_axis = (m as f64).cbrt().ceil() as usize;
    let (d, h, w) = spec.shape;
    let needed = per_axis * cell;
    if spec.organ_size == 0 || needed > d || needed > h || needed > w {
        return Err(Error::BadConfig {
            reason: format!(
                "{m} organs of size {} with margin {margin} do not fit in {:?}",
                spec.organ_size, spec.shape
            ),
        });
    }
    let mut boxes = Vec::with_capacity(m);
    for j in 0..m {
        let cz = j / (per_axis * per_axis);
        let cy = (j / per_axis) % per_axis;
        let cx = j % per_axis;
        let lo = [
            cz * cell + margin,
            cy * cell + margin,
            cx * cell + margin,
        ];
        boxes.push(Box3 {
            lo,
            hi: [
                lo[0] + spec.organ_size,
                lo[1] + spec.organ_size,
                lo[2] + spec.organ_size,
            ],
        });
    }
    Ok(boxes)
}

fn perturb(gt: &Box3, radius: usize, grow: bool) -> Box3 {
    if radius == 0 {
        return *gt;
    }
    if grow {
        Box3 {
            lo: [gt.lo[0] - radius, gt.lo[1] - radius, gt.lo[2] - radius],
            hi: [gt.hi[0] + radius, gt.hi[1] + radius, gt.hi[2] + radius],
        }
    } else {
        let side = gt.hi[0] - gt.lo[0];
        if side <= 2 * radius {
            // Erosion consumes the whole box; the organ goes unpredicted.
            return Box3 { lo: gt.lo, hi: gt.lo };
        }
        Box3 {
            lo: [gt.lo[0] + radius, gt.lo[1] + radius, gt.lo[2] + radius],
            hi: [gt.hi[0] - radius, gt.hi[1] - radius, gt.hi[2] - radius],
        }
    }
}

/// Writes ground truth, prediction and probability volumes plus a manifest
/// under `out_dir` and returns the loadable manifest.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &std::path::Path) -> Result<DatasetManifest> {
    let gt_boxes = layout(spec)?;
    let m = spec.organs.len();
    let classes = m + 1;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = SmallRng::seed_from_u64(mix_seed(spec.seed, &[i as u64]));
        let mut gt = Array3::<u16>::zeros(spec.shape);
        let mut pred = Array3::<u16>::zeros(spec.shape);
        let mut pred_boxes = Vec::with_capacity(m);
        for (j, organ) in spec.organs.iter().enumerate() {
            gt_boxes[j].fill(&mut gt, (j + 1) as u16);
            let grow = rng.random_bool(0.5);
            let pb = perturb(&gt_boxes[j], organ.perturbation_radius, grow);
            pb.fill(&mut pred, (j + 1) as u16);
            pred_boxes.push(pb);
        }

        // Per-organ target confidence from the analytic Dice of the boxes.
        let mut organ_conf = Vec::with_capacity(m);
        for (j, organ) in spec.organs.iter().enumerate() {
            let inter = gt_boxes[j].intersection(&pred_boxes[j]);
            let denom = gt_boxes[j].volume() + pred_boxes[j].volume();
            let dice = if denom == 0 {
                1.0
            } else {
                2.0 * inter as f64 / denom as f64
            };
            let floor = 1.0 / classes as f64 + 1e-3;
            organ_conf.push(organ.confidence.apply(dice).clamp(floor, 1.0) as f32);
        }
        let background_conf: f32 = 0.9;

        let mut prob = Array4::<f32>::zeros((classes, spec.shape.0, spec.shape.1, spec.shape.2));
        for z in 0..spec.shape.0 {
            for y in 0..spec.shape.1 {
                for x in 0..spec.shape.2 {
                    let label = usize::from(pred[[z, y, x]]);
                    let q = if label == 0 {
                        background_conf
                    } else {
                        organ_conf[label - 1]
                    };
                    let rest = (1.0 - q) / (classes - 1) as f32;
                    for c in 0..classes {
                        prob[[c, z, y, x]] = if c == label { q } else { rest };
                    }
                }
            }
        }

        let id = format!("sample{i:03}");
        let gt_path = out_dir.join(format!("{id}_gt.npy"));
        let pred_path = out_dir.join(format!("{id}_pred.npy"));
        let prob_path = out_dir.join(format!("{id}_prob.npy"));
        write_label_volume(&gt_path, &LabelVolume::new(gt, spec.spacing)?)?;
        write_label_volume(&pred_path, &LabelVolume::new(pred, spec.spacing)?)?;
        write_probability_volume(&prob_path, &ProbabilityVolume { data: prob })?;
        samples.push(SampleEntry {
            id,
            gt: gt_path,
            pred: pred_path,
            prob: Some(prob_path),
            spacing: spec.spacing,
        });
    }
    let organs: Vec<String> = (0..m).map(|j| format!("organ{:02}", j + 1)).collect();
    // The on-disk manifest carries bare filenames, resolved against its own
    // directory on load; the returned manifest carries full paths.
    let relative = DatasetManifest {
        organs: organs.clone(),
        samples: samples
            .iter()
            .map(|s| SampleEntry {
                id: s.id.clone(),
                gt: s.gt.file_name().unwrap().into(),
                pred: s.pred.file_name().unwrap().into(),
                prob: s.prob.as_ref().map(|p| p.file_name().unwrap().into()),
                spacing: s.spacing,
            })
            .collect(),
    };
    write_manifest(&out_dir.join("manifest.json"), &relative)?;
    Ok(DatasetManifest { organs, samples })
}

/// Per-organ sampling parameters for direct metric-table generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganDistribution {
    pub dice_mean: f64,
    pub dice_spread: f64,
    pub hd_mean: f64,
    pub hd_spread: f64,
    pub confidence: ConfidenceModel,
    /// Uniform noise half-width added to the confidence after the model.
    pub conf_noise: f64,
}

/// Samples an n x m table directly, no volumes: dice and hd are uniform
/// around their means, confidence follows the model applied to the drawn
/// dice plus noise.
pub fn generate_metric_table(n: usize, organs: &[OrganDistribution], seed: u64) -> Result<MetricTable> {
    if n == 0 || organs.is_empty() {
        return Err(Error::BadConfig {
            reason: "table generation needs n >= 1 and m >= 1".into(),
        });
    }
    for o in organs {
        if !(0.0..=1.0).contains(&o.dice_mean) || o.dice_spread < 0.0 || o.hd_spread < 0.0 {
            return Err(Error::BadConfig {
                reason: "invalid organ distribution parameters".into(),
            });
        }
    }
    let m = organs.len();
    let mut dice = ndarray::Array2::zeros((n, m));
    let mut hd = ndarray::Array2::zeros((n, m));
    let mut conf = ndarray::Array2::zeros((n, m));
    for (j, organ) in organs.iter().enumerate() {
        let mut rng = SmallRng::seed_from_u64(mix_seed(seed, &[j as u64]));
        for i in 0..n {
            let d: f64 = (organ.dice_mean
                + rng.random_range(-1.0..1.0) * organ.dice_spread)
                .clamp(0.0, 1.0);
            let h: f64 =
                (organ.hd_mean + rng.random_range(-1.0..1.0) * organ.hd_spread).max(0.0);
            let c: f64 = (organ.confidence.apply(d)
                + rng.random_range(-1.0..1.0) * organ.conf_noise)
                .clamp(0.0, 1.0);
            dice[[i, j]] = d;
            hd[[i, j]] = h;
            conf[[i, j]] = c;
        }
    }
    Ok(MetricTable {
        sample_ids: (0..n).map(|i| format!("sample{i:03}")).collect(),
        organs: (0..m).map(|j| format!("organ{:02}", j + 1)).collect(),
        dice,
        hd,
        conf,
    })
}

/// A table with an exact qualified count planted per organ, plus the fixed
/// external thresholds that realize it: qualifying cells carry dice 1.0,
/// hd 0.0 and high confidence; the rest dice 0.0, hd 1000.0, low
/// confidence. Against thresholds (0.9, 1.0) the screened prefix of organ
/// `j` is exactly `counts[j]`.
pub fn generate_planted_table(
    n: usize,
    counts: &[usize],
) -> Result<(MetricTable, ThresholdSet)> {
    let m = counts.len();
    if m == 0 || n == 0 {
        return Err(Error::BadConfig {
            reason: "planted table needs n >= 1 and m >= 1".into(),
        });
    }
    if let Some(&bad) = counts.iter().find(|&&q| q > n) {
        return Err(Error::BadConfig {
            reason: format!("planted count {bad} exceeds n = {n}"),
        });
    }
    let mut dice = ndarray::Array2::zeros((n, m));
    let mut hd = ndarray::Array2::zeros((n, m));
    let mut conf = ndarray::Array2::zeros((n, m));
    for (j, &q) in counts.iter().enumerate() {
        for i in 0..n {
            let qualifies = i < q;
            dice[[i, j]] = if qualifies { 1.0 } else { 0.0 };
            hd[[i, j]] = if qualifies { 0.0 } else { 1000.0 };
            conf[[i, j]] = 0.99 - i as f64 * 0.01;
        }
    }
    let organs: Vec<String> = (0..m).map(|j| format!("organ{:02}", j + 1)).collect();
    let thresholds = ThresholdSet {
        seed: 0,
        b: 0,
        statistic: crate::bootstrap::Statistic::Mean,
        dice_percentile: 50.0,
        hd_percentile: 50.0,
        organs: organs.clone(),
        dice: vec![0.9; m],
        hd: vec![1.0; m],
    };
    Ok((
        MetricTable {
            sample_ids: (0..n).map(|i| format!("sample{i:03}")).collect(),
            organs,
            dice,
            hd,
            conf,
        },
        thresholds,
    ))
}
