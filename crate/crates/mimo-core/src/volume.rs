//! Volume and manifest I/O.
//!
//! Volumes are NPY files (version 1.0/2.0, C order): label volumes are
//! `[D,H,W]` unsigned integers, probability volumes `[C,D,H,W]` f32 with
//! channel 0 = background. Physical spacing lives in the JSON manifest,
//! not in the tensor files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum-over-classes tolerance for post-softmax probability volumes.
pub const NORMALIZATION_TOLERANCE: f32 = 1e-4;

/// Voxel grid of class labels: 0 = background, 1..=m = organ indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub data: Array3<u16>,
    /// Millimeters per voxel along (depth, height, width).
    pub spacing: [f64; 3],
}

impl LabelVolume {
    pub fn new(data: Array3<u16>, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::BadSpacing { spacing });
        }
        Ok(Self { data, spacing })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }
}

/// Per-voxel per-class probabilities, channel 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub data: Array4<f32>,
}

impl ProbabilityVolume {
    pub fn classes(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial_shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub gt: PathBuf,
    pub pred: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<PathBuf>,
    /// Defaults to 1 mm isotropic when omitted.
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
}

fn default_spacing() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

/// Ordered organ list plus the sample roster; fixes all downstream indexing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub organs: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn organ_count(&self) -> usize {
        self.organs.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

fn read_npy<T, D>(path: &Path) -> std::result::Result<ndarray::Array<T, D>, String>
where
    ndarray::Array<T, D>: ReadNpyExt,
{
    let file = File::open(path).map_err(|e| e.to_string())?;
    ndarray::Array::<T, D>::read_npy(BufReader::new(file)).map_err(|e| e.to_string())
}

/// Loads a `[D,H,W]` label volume, accepting u8 or u16 payloads and
/// coercing to u16. `organ_count` bounds the admissible label values.
pub fn load_label_volume(path: &Path, organ_count: usize, spacing: [f64; 3]) -> Result<LabelVolume> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    let data: Array3<u16> = match read_npy::<u16, ndarray::Ix3>(path) {
        Ok(a) => a,
        Err(first) => match read_npy::<u8, ndarray::Ix3>(path) {
            Ok(a) => a.mapv(u16::from),
            Err(_) => {
                // Distinguish a rank error from a dtype error for diagnostics.
                if let Ok(any_rank) = npy_rank(path) {
                    if any_rank != 3 {
                        return Err(Error::WrongRank {
                            path: path.to_path_buf(),
                            expected: 3,
                            got: any_rank,
                        });
                    }
                }
                return Err(Error::NpyRead {
                    path: path.to_path_buf(),
                    reason: first,
                });
            }
        },
    };
    for (idx, &label) in data.indexed_iter() {
        if usize::from(label) > organ_count {
            return Err(Error::LabelOutOfRange {
                path: path.to_path_buf(),
                label,
                index: idx,
                organs: organ_count,
            });
        }
    }
    LabelVolume::new(data, spacing)
}

/// Loads a `[C,D,H,W]` probability volume and checks the softmax contract.
pub fn load_probability_volume(path: &Path, expected_classes: usize) -> Result<ProbabilityVolume> {
    let data: Array4<f32> = read_npy::<f32, ndarray::Ix4>(path).map_err(|reason| {
        if let Ok(rank) = npy_rank(path) {
            if rank != 4 {
                return Error::WrongRank {
                    path: path.to_path_buf(),
                    expected: 4,
                    got: rank,
                };
            }
        }
        Error::NpyRead {
            path: path.to_path_buf(),
            reason,
        }
    })?;
    let classes = data.shape()[0];
    if classes != expected_classes {
        return Err(Error::ClassCountMismatch {
            path: path.to_path_buf(),
            expected: expected_classes,
            got: classes,
        });
    }
    validate_probabilities(&data, path)?;
    Ok(ProbabilityVolume { data })
}

fn validate_probabilities(data: &Array4<f32>, path: &Path) -> Result<()> {
    let (c, d, h, w) = (data.shape()[0], data.shape()[1], data.shape()[2], data.shape()[3]);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0f32;
                for ch in 0..c {
                    let v = data[[ch, z, y, x]];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::ProbabilityOutOfRange {
                            path: path.to_path_buf(),
                            value: v,
                            index: (z, y, x),
                        });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                    return Err(Error::NotNormalized {
                        path: path.to_path_buf(),
                        sum,
                        index: (z, y, x),
                        tolerance: NORMALIZATION_TOLERANCE,
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn write_label_volume(path: &Path, volume: &LabelVolume) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    volume
        .data
        .write_npy(BufWriter::new(file))
        .map_err(|e| Error::NpyWrite {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn write_probability_volume(path: &Path, volume: &ProbabilityVolume) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    volume
        .data
        .write_npy(BufWriter::new(file))
        .map_err(|e| Error::NpyWrite {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Loads and validates a manifest; relative sample paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::BadManifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if manifest.organs.is_empty() {
        return Err(Error::BadManifest {
            path: path.to_path_buf(),
            reason: "empty organ list".into(),
        });
    }
    if manifest.samples.is_empty() {
        return Err(Error::BadManifest {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for sample in &manifest.samples {
        if !seen.insert(sample.id.clone()) {
            return Err(Error::BadManifest {
                path: path.to_path_buf(),
                reason: format!("duplicate sample id '{}'", sample.id),
            });
        }
        if sample.spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::BadSpacing {
                spacing: sample.spacing,
            });
        }
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for sample in &mut manifest.samples {
        for p in [&mut sample.gt, &mut sample.pred]
            .into_iter()
            .chain(sample.prob.iter_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::DanglingPath {
                    manifest: path.to_path_buf(),
                    path: p.clone(),
                });
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads just the rank from an NPY header, for error reporting.
fn npy_rank(path: &Path) -> std::result::Result<usize, ()> {
    let bytes = std::fs::read(path).map_err(|_| ())?;
    if bytes.len() < 10 || &bytes[0..6] != b"\x93NUMPY" {
        return Err(());
    }
    let major = bytes[6];
    let (header_len, offset) = if major == 1 {
        (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10)
    } else {
        if bytes.len() < 12 {
            return Err(());
        }
        (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        )
    };
    let header = std::str::from_utf8(bytes.get(offset..offset + header_len).ok_or(())?)
        .map_err(|_| ())?;
    let shape_start = header.find("'shape':").ok_or(())? + 8;
    let rest = &header[shape_start..];
    let open = rest.find('(').ok_or(())?;
    let close = rest.find(')').ok_or(())?;
    let inner = &rest[open + 1..close];
    let dims = inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .count();
    Ok(dims)
}
