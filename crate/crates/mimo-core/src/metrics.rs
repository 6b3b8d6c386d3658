//! Per-sample, per-organ correctness indicators and confidence extraction.
//!
//! Dice measures region overlap, Hausdorff distance the worst-case boundary
//! deviation in physical millimeters, and confidence the mean maximum
//! softmax probability over the voxels predicted as the organ.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{self, DatasetManifest, LabelVolume, ProbabilityVolume};

/// Binary mask for one organ class, spacing inherited from the source volume.
#[derive(Debug, Clone)]
pub struct OrganMask {
    pub data: Array3<bool>,
    pub spacing: [f64; 3],
}

/// Boundary voxel centers in physical millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<[f64; 3]>,
}

/// How the per-organ confidence value is derived from the probability volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMode {
    /// Mean of the per-voxel maximum softmax probability over voxels
    /// predicted as the organ.
    #[default]
    PredictedVoxels,
    /// Mean of the organ's own channel over the whole volume.
    ChannelMean,
}

impl std::str::FromStr for ConfidenceMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "predicted-voxels" => Ok(Self::PredictedVoxels),
            "channel-mean" => Ok(Self::ChannelMean),
            other => Err(format!("unknown confidence mode '{other}'")),
        }
    }
}

/// n-samples x m-organs matrices of Dice, Hausdorff distance and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub sample_ids: Vec<String>,
    pub organs: Vec<String>,
    pub dice: Array2<f64>,
    pub hd: Array2<f64>,
    pub conf: Array2<f64>,
}

impl MetricTable {
    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn m(&self) -> usize {
        self.organs.len()
    }

    /// A table keeping only the given sample rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> MetricTable {
        let pick = |src: &Array2<f64>| {
            Array2::from_shape_fn((rows.len(), self.m()), |(i, j)| src[[rows[i], j]])
        };
        MetricTable {
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            organs: self.organs.clone(),
            dice: pick(&self.dice),
            hd: pick(&self.hd),
            conf: pick(&self.conf),
        }
    }
}

pub fn extract_organ_mask(volume: &LabelVolume, organ_index: usize) -> Result<OrganMask> {
    if organ_index == 0 {
        return Err(Error::OrganIndexOutOfRange { index: 0, organs: usize::MAX });
    }
    let label = organ_index as u16;
    Ok(OrganMask {
        data: volume.data.mapv(|v| v == label),
        spacing: volume.spacing,
    })
}

/// Dice overlap 2|G∩V| / (|G|+|V|); both masks empty counts as a correct
/// absence and scores 1.0.
pub fn dice(gt: &OrganMask, pred: &OrganMask) -> Result<f64> {
    if gt.data.shape() != pred.data.shape() {
        return Err(Error::ShapeMismatch {
            left: gt.data.shape().to_vec(),
            right: pred.data.shape().to_vec(),
        });
    }
    let mut intersection = 0u64;
    let mut size_gt = 0u64;
    let mut size_pred = 0u64;
    for (&g, &v) in gt.data.iter().zip(pred.data.iter()) {
        size_gt += u64::from(g);
        size_pred += u64::from(v);
        intersection += u64::from(g && v);
    }
    if size_gt + size_pred == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * intersection as f64 / (size_gt + size_pred) as f64)
}

/// Centers of foreground voxels with at least one 6-connected background
/// (or out-of-grid) neighbor, in physical millimeters.
pub fn extract_surface(mask: &OrganMask) -> SurfacePointSet {
    let (d, h, w) = {
        let s = mask.data.shape();
        (s[0], s[1], s[2])
    };
    let [sz, sy, sx] = mask.spacing;
    let mut points = Vec::new();
    let at = |z: isize, y: isize, x: isize| -> bool {
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            return false;
        }
        mask.data[[z as usize, y as usize, x as usize]]
    };
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask.data[[z, y, x]] {
                    continue;
                }
                let (zi, yi, xi) = (z as isize, y as isize, x as isize);
                let exposed = !at(zi - 1, yi, xi)
                    || !at(zi + 1, yi, xi)
                    || !at(zi, yi - 1, xi)
                    || !at(zi, yi + 1, xi)
                    || !at(zi, yi, xi - 1)
                    || !at(zi, yi, xi + 1);
                if exposed {
                    points.push([
                        (z as f64 + 0.5) * sz,
                        (y as f64 + 0.5) * sy,
                        (x as f64 + 0.5) * sx,
                    ]);
                }
            }
        }
    }
    SurfacePointSet { points }
}

/// Symmetric Hausdorff distance between two surface point sets.
///
/// Exactly one empty set yields +inf (the boundary criterion can never
/// pass); both empty yields 0.
pub fn hausdorff(gt: &SurfacePointSet, pred: &SurfacePointSet) -> f64 {
    match (gt.points.is_empty(), pred.points.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        (false, false) => {}
    }
    let tree_pred = KdTree::build(&pred.points);
    let forward = directed_hausdorff_sq(&gt.points, &tree_pred);
    let tree_gt = KdTree::build(&gt.points);
    let backward = directed_hausdorff_sq(&pred.points, &tree_gt);
    forward.max(backward).sqrt()
}

fn directed_hausdorff_sq(queries: &[[f64; 3]], tree: &KdTree) -> f64 {
    let mut worst = 0.0f64;
    for q in queries {
        // Any neighbor within the current worst distance means this query
        // cannot raise the maximum; the search aborts as soon as one is seen.
        let d = tree.nearest_sq_with_abandon(q, worst);
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Static 3D k-d tree over points, built once per surface.
struct KdTree {
    points: Vec<[f64; 3]>,
    // nodes[i] splits on axis i % 3; layout is an implicit balanced tree
    // over `order` (median at the midpoint of each range).
    order: Vec<u32>,
}

impl KdTree {
    fn build(points: &[[f64; 3]]) -> KdTree {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        fn split(points: &[[f64; 3]], order: &mut [u32], axis: usize) {
            if order.len() <= 1 {
                return;
            }
            let mid = order.len() / 2;
            order.select_nth_unstable_by(mid, |&a, &b| {
                points[a as usize][axis]
                    .partial_cmp(&points[b as usize][axis])
                    .unwrap()
            });
            let (lo, rest) = order.split_at_mut(mid);
            let hi = &mut rest[1..];
            split(points, lo, (axis + 1) % 3);
            split(points, hi, (axis + 1) % 3);
        }
        split(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    /// Squared nearest-neighbor distance, allowed to return any value
    /// <= `abandon_sq` early once a point at least that close is found.
    fn nearest_sq_with_abandon(&self, query: &[f64; 3], abandon_sq: f64) -> f64 {
        let mut best = f64::INFINITY;
        self.search(query, 0, self.order.len(), 0, abandon_sq, &mut best);
        best
    }

    fn search(
        &self,
        query: &[f64; 3],
        lo: usize,
        hi: usize,
        axis: usize,
        abandon_sq: f64,
        best: &mut f64,
    ) {
        if lo >= hi || *best <= abandon_sq {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let point = &self.points[self.order[mid] as usize];
        let d = dist_sq(query, point);
        if d < *best {
            *best = d;
            if *best <= abandon_sq {
                return;
            }
        }
        let delta = query[axis] - point[axis];
        let next_axis = (axis + 1) % 3;
        let (near_lo, near_hi, far_lo, far_hi) = if delta < 0.0 {
            (lo, mid, mid + 1, hi)
        } else {
            (mid + 1, hi, lo, mid)
        };
        self.search(query, near_lo, near_hi, next_axis, abandon_sq, best);
        if delta * delta < *best {
            self.search(query, far_lo, far_hi, next_axis, abandon_sq, best);
        }
    }
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    dz * dz + dy * dy + dx * dx
}

/// Per-organ confidence: mean over the organ's predicted voxels of the
/// per-voxel maximum softmax probability (or the channel mean, depending
/// on mode). Returns 0 when no voxel is predicted as the organ.
pub fn confidence(
    prob: &ProbabilityVolume,
    pred: &LabelVolume,
    organ_index: usize,
    mode: ConfidenceMode,
) -> Result<f64> {
    let spatial = prob.spatial_shape();
    let pred_shape = pred.shape();
    if spatial != pred_shape {
        return Err(Error::ShapeMismatch {
            left: vec![spatial.0, spatial.1, spatial.2],
            right: vec![pred_shape.0, pred_shape.1, pred_shape.2],
        });
    }
    let classes = prob.classes();
    if organ_index == 0 || organ_index >= classes {
        return Err(Error::OrganIndexOutOfRange {
            index: organ_index,
            organs: classes - 1,
        });
    }
    let (d, h, w) = spatial;
    let total = d * h * w;
    let mut mismatches = 0usize;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let mut channel_sum = 0.0f64;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut max_p = f32::NEG_INFINITY;
                let mut argmax = 0usize;
                for c in 0..classes {
                    let p = prob.data[[c, z, y, x]];
                    if p > max_p {
                        max_p = p;
                        argmax = c;
                    }
                }
                let label = usize::from(pred.data[[z, y, x]]);
                if label != argmax {
                    mismatches += 1;
                }
                if label == organ_index {
                    sum += f64::from(max_p);
                    count += 1;
                }
                channel_sum += f64::from(prob.data[[organ_index, z, y, x]]);
            }
        }
    }
    let rate = mismatches as f64 / total as f64;
    const ARGMAX_MISMATCH_LIMIT: f64 = 0.01;
    if rate > ARGMAX_MISMATCH_LIMIT {
        return Err(Error::ArgmaxInconsistent {
            rate,
            limit: ARGMAX_MISMATCH_LIMIT,
        });
    }
    Ok(match mode {
        ConfidenceMode::PredictedVoxels => {
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
        ConfidenceMode::ChannelMean => channel_sum / total as f64,
    })
}

/// Fills the n x m metric table from the manifest's volumes. Cells are
/// evaluated per (sample, organ) and the result is independent of
/// evaluation order.
pub fn build_metric_table(manifest: &DatasetManifest, mode: ConfidenceMode) -> Result<MetricTable> {
    let m = manifest.organ_count();
    let rows: Vec<(String, Vec<(f64, f64, f64)>)> = manifest
        .samples
        .par_iter()
        .map(|sample| {
            let cells = sample_row(manifest, sample, mode).map_err(|e| Error::InContext {
                sample: sample.id.clone(),
                organ: String::new(),
                source: Box::new(e),
            })?;
            Ok((sample.id.clone(), cells))
        })
        .collect::<Result<_>>()?;

    let n = rows.len();
    let mut dice_m = Array2::zeros((n, m));
    let mut hd_m = Array2::zeros((n, m));
    let mut conf_m = Array2::zeros((n, m));
    let mut sample_ids = Vec::with_capacity(n);
    for (i, (id, cells)) in rows.into_iter().enumerate() {
        sample_ids.push(id);
        for (j, (d, h, c)) in cells.into_iter().enumerate() {
            dice_m[[i, j]] = d;
            hd_m[[i, j]] = h;
            conf_m[[i, j]] = c;
        }
    }
    Ok(MetricTable {
        sample_ids,
        organs: manifest.organs.clone(),
        dice: dice_m,
        hd: hd_m,
        conf: conf_m,
    })
}

fn sample_row(
    manifest: &DatasetManifest,
    sample: &crate::volume::SampleEntry,
    mode: ConfidenceMode,
) -> Result<Vec<(f64, f64, f64)>> {
    let m = manifest.organ_count();
    let gt = volume::load_label_volume(&sample.gt, m, sample.spacing)?;
    let pred = volume::load_label_volume(&sample.pred, m, sample.spacing)?;
    if gt.shape() != pred.shape() {
        let (a, b) = (gt.shape(), pred.shape());
        return Err(Error::ShapeMismatch {
            left: vec![a.0, a.1, a.2],
            right: vec![b.0, b.1, b.2],
        });
    }
    let prob = match &sample.prob {
        Some(path) => Some(volume::load_probability_volume(path, m + 1)?),
        None => None,
    };
    let mut cells = Vec::with_capacity(m);
    for organ in 1..=m {
        let gt_mask = extract_organ_mask(&gt, organ)?;
        let pred_mask = extract_organ_mask(&pred, organ)?;
        let d = dice(&gt_mask, &pred_mask)?;
        let h = hausdorff(&extract_surface(&gt_mask), &extract_surface(&pred_mask));
        let c = match &prob {
            Some(p) => confidence(p, &pred, organ, mode).map_err(|e| Error::InContext {
                sample: sample.id.clone(),
                organ: manifest.organs[organ - 1].clone(),
                source: Box::new(e),
            })?,
            None => 0.0,
        };
        cells.push((d, h, c));
    }
    Ok(cells)
}

/// Writes the metric table CSV (`sample_id,organ,dice,hd,conf`); infinite
/// Hausdorff distances serialize as the literal `inf`.
pub fn write_metric_table_csv<W: std::io::Write>(table: &MetricTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    };
    w.write_record(["sample_id", "organ", "dice", "hd", "conf"])
        .map_err(io_err)?;
    for (i, sample) in table.sample_ids.iter().enumerate() {
        for (j, organ) in table.organs.iter().enumerate() {
            w.write_record([
                sample.as_str(),
                organ.as_str(),
                &format!("{}", table.dice[[i, j]]),
                &format!("{}", table.hd[[i, j]]),
                &format!("{}", table.conf[[i, j]]),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::BadTable {
        path: "<csv>".into(),
        reason: e.to_string(),
    })
}

pub fn read_metric_table_csv<R: std::io::Read>(reader: R, path: &str) -> Result<MetricTable> {
    let bad = |reason: String| Error::BadTable {
        path: path.into(),
        reason,
    };
    let mut r = csv::Reader::from_reader(reader);
    let mut sample_ids: Vec<String> = Vec::new();
    let mut organs: Vec<String> = Vec::new();
    let mut cells: std::collections::HashMap<(String, String), (f64, f64, f64)> =
        std::collections::HashMap::new();
    for record in r.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 5 {
            return Err(bad(format!("expected 5 columns, got {}", record.len())));
        }
        let sample = record[0].to_string();
        let organ = record[1].to_string();
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("bad number '{s}': {e}")))
        };
        let d = parse(&record[2])?;
        let h = parse(&record[3])?;
        let c = parse(&record[4])?;
        if !sample_ids.contains(&sample) {
            sample_ids.push(sample.clone());
        }
        if !organs.contains(&organ) {
            organs.push(organ.clone());
        }
        if cells.insert((sample.clone(), organ.clone()), (d, h, c)).is_some() {
            return Err(bad(format!("duplicate cell ({sample}, {organ})")));
        }
    }
    if sample_ids.is_empty() {
        return Err(bad("empty table".into()));
    }
    let (n, m) = (sample_ids.len(), organs.len());
    let mut dice_m = Array2::zeros((n, m));
    let mut hd_m = Array2::zeros((n, m));
    let mut conf_m = Array2::zeros((n, m));
    for (i, s) in sample_ids.iter().enumerate() {
        for (j, o) in organs.iter().enumerate() {
            let (d, h, c) = cells
                .get(&(s.clone(), o.clone()))
                .copied()
                .ok_or_else(|| bad(format!("missing cell ({s}, {o})")))?;
            dice_m[[i, j]] = d;
            hd_m[[i, j]] = h;
            conf_m[[i, j]] = c;
        }
    }
    Ok(MetricTable {
        sample_ids,
        organs,
        dice: dice_m,
        hd: hd_m,
        conf: conf_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn mask_from(shape: (usize, usize, usize), voxels: &[(usize, usize, usize)]) -> OrganMask {
        let mut data = Array3::from_elem(shape, false);
        for &(z, y, x) in voxels {
            data[[z, y, x]] = true;
        }
        OrganMask { data, spacing: [1.0, 1.0, 1.0] }
    }

    #[test]
    fn organ_mask_extraction() {
        let mut labels = Array3::<u16>::zeros((2, 2, 2));
        labels[[0, 0, 0]] = 1;
        labels[[1, 1, 1]] = 2;
        let vol = LabelVolume::new(labels, [1.0, 1.0, 1.0]).unwrap();
        let m1 = extract_organ_mask(&vol, 1).unwrap();
        assert_eq!(m1.data.iter().filter(|&&v| v).count(), 1);
        assert!(m1.data[[0, 0, 0]]);
        let m2 = extract_organ_mask(&vol, 2).unwrap();
        assert!(m2.data[[1, 1, 1]]);
        let empty = extract_organ_mask(&vol, 3).unwrap();
        assert!(empty.data.iter().all(|&v| !v));
    }

    #[test]
    fn dice_identity_disjoint_partial() {
        let a = mask_from((2, 2, 2), &[(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)]);
        let b = mask_from((2, 2, 2), &[(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1)]);
        let empty = mask_from((2, 2, 2), &[]);
        let other = mask_from((2, 2, 2), &[(1, 1, 1)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &other).unwrap(), 0.0);
        // |G|=4, |V|=4, overlap 2 -> 2*2/8
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&a, &empty).unwrap(), 0.0);
    }

    #[test]
    fn dice_rejects_shape_mismatch() {
        let a = mask_from((2, 2, 2), &[]);
        let b = mask_from((2, 2, 3), &[]);
        assert!(matches!(dice(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn surface_of_single_voxel() {
        let m = mask_from((3, 3, 3), &[(1, 1, 1)]);
        let s = extract_surface(&m);
        assert_eq!(s.points, vec![[1.5, 1.5, 1.5]]);
    }

    #[test]
    fn surface_of_empty_mask_is_empty() {
        let m = mask_from((3, 3, 3), &[]);
        assert!(extract_surface(&m).points.is_empty());
    }

    #[test]
    fn surface_of_solid_cube_excludes_center() {
        let mut data = Array3::from_elem((3, 3, 3), true);
        data[[1, 1, 1]] = true;
        let m = OrganMask { data, spacing: [1.0, 1.0, 1.0] };
        let s = extract_surface(&m);
        assert_eq!(s.points.len(), 26);
        assert!(!s.points.contains(&[1.5, 1.5, 1.5]));
    }

    #[test]
    fn hausdorff_hand_cases() {
        let a = SurfacePointSet { points: vec![[0.0, 0.0, 0.0]] };
        let b = SurfacePointSet { points: vec![[3.0, 4.0, 0.0]] };
        assert_eq!(hausdorff(&a, &a), 0.0);
        assert_eq!(hausdorff(&a, &b), 5.0);
        let c = SurfacePointSet { points: vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]] };
        assert_eq!(hausdorff(&c, &a), 10.0);
        let empty = SurfacePointSet { points: vec![] };
        assert_eq!(hausdorff(&a, &empty), f64::INFINITY);
        assert_eq!(hausdorff(&empty, &a), f64::INFINITY);
        assert_eq!(hausdorff(&empty, &empty), 0.0);
    }

    #[test]
    fn confidence_mean_over_predicted_voxels() {
        let mut labels = Array3::<u16>::zeros((1, 1, 2));
        labels[[0, 0, 0]] = 1;
        labels[[0, 0, 1]] = 1;
        let pred = LabelVolume::new(labels, [1.0, 1.0, 1.0]).unwrap();
        let mut prob = Array4::<f32>::zeros((2, 1, 1, 2));
        prob[[1, 0, 0, 0]] = 0.6;
        prob[[0, 0, 0, 0]] = 0.4;
        prob[[1, 0, 0, 1]] = 1.0;
        let vol = ProbabilityVolume { data: prob };
        let c = confidence(&vol, &pred, 1, ConfidenceMode::PredictedVoxels).unwrap();
        assert!((c - 0.8).abs() < 1e-7);
    }

    #[test]
    fn confidence_zero_when_organ_absent() {
        let labels = Array3::<u16>::zeros((1, 2, 2));
        let pred = LabelVolume::new(labels, [1.0, 1.0, 1.0]).unwrap();
        let mut prob = Array4::<f32>::zeros((2, 1, 2, 2));
        prob.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let vol = ProbabilityVolume { data: prob };
        let c = confidence(&vol, &pred, 1, ConfidenceMode::PredictedVoxels).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn confidence_rejects_argmax_inconsistency() {
        // Prediction says organ 1 everywhere, probabilities say background.
        let labels = Array3::<u16>::ones((2, 2, 2)).mapv(|_: u16| 1u16);
        let pred = LabelVolume::new(labels, [1.0, 1.0, 1.0]).unwrap();
        let mut prob = Array4::<f32>::zeros((2, 2, 2, 2));
        prob.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        let vol = ProbabilityVolume { data: prob };
        assert!(matches!(
            confidence(&vol, &pred, 1, ConfidenceMode::PredictedVoxels),
            Err(Error::ArgmaxInconsistent { .. })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_table_including_inf() {
        let table = MetricTable {
            sample_ids: vec!["a".into(), "b".into()],
            organs: vec!["spleen".into(), "liver".into()],
            dice: ndarray::arr2(&[[1.0, 0.25], [0.5, 0.75]]),
            hd: ndarray::arr2(&[[0.0, f64::INFINITY], [2.5, 10.0]]),
            conf: ndarray::arr2(&[[1.0, 0.5], [0.25, 0.125]]),
        };
        let mut buf = Vec::new();
        write_metric_table_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("inf"));
        let back = read_metric_table_csv(&buf[..], "<mem>").unwrap();
        assert_eq!(back, table);
    }
}
