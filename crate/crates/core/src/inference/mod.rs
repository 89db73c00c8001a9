//! Sliding-window inference around an external, model-agnostic predictor.

mod plan;
mod predictor;

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::volume::{Geometry, LabelMask, VolumeError, VoxelGrid, NUM_CLASSES};

pub use plan::{plan_windows, reflect_index, WindowPlan, DEFAULT_OVERLAP, DEFAULT_PATCH};
pub use predictor::{ConstantPredictor, OraclePredictor, Predictor, SubprocessPredictor, WindowInput};

/// Deviation from a unit per-voxel sum that is silently renormalized.
pub const SIMPLEX_RENORMALIZE_TOL: f64 = 1e-4;
/// Deviation at or above which predictor output is rejected.
pub const SIMPLEX_REJECT_TOL: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("patch dimensions must be positive, got {0:?}")]
    InvalidPatch([usize; 3]),
    #[error("overlap fraction must lie in [0, 1), got {0}")]
    InvalidOverlap(f64),
    #[error("window plan does not fit volume: {0}")]
    PlanMismatch(String),
    #[error("predictor output has {got} values, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("predictor output contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("predictor output contains a negative score {value} at position {index}")]
    NegativeScore { index: usize, value: f32 },
    #[error("class scores at voxel {voxel} sum to {sum}, outside the accepted band")]
    SimplexDeviation { voxel: usize, sum: f64 },
    #[error("failed to launch predictor `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictor `{command}` exited with {status}: {stderr}")]
    ExitStatus {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("predictor `{command}` timed out after {seconds} s")]
    Timeout { command: String, seconds: f64 },
    #[error("predictor I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    #[default]
    Uniform,
    /// Separable Gaussian with sigma = patch / 8, truncated at the window edge.
    Gaussian,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Uniform => "uniform",
            Fusion::Gaussian => "gaussian",
        }
    }
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Fusion::Uniform),
            "gaussian" => Ok(Fusion::Gaussian),
            other => Err(format!("unknown fusion `{other}` (expected uniform or gaussian)")),
        }
    }
}

/// Per-voxel class scores on the source volume's grid, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    geometry: Geometry,
    classes: usize,
    scores: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(geometry: Geometry, classes: usize, scores: Vec<f32>) -> Result<Self, InferenceError> {
        let expected = classes * geometry.len();
        if scores.len() != expected {
            return Err(InferenceError::WrongLength {
                expected,
                got: scores.len(),
            });
        }
        Ok(Self {
            geometry,
            classes,
            scores,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn class_scores(&self, class: usize) -> &[f32] {
        let n = self.geometry.len();
        &self.scores[class * n..(class + 1) * n]
    }

    pub fn score(&self, class: usize, voxel: usize) -> f32 {
        self.scores[class * self.geometry.len() + voxel]
    }
}

/// Fused probabilities together with the accumulated fusion weight per voxel.
#[derive(Debug, Clone)]
pub struct FusedOutput {
    pub probabilities: ProbabilityMap,
    pub weight_sum: Vec<f64>,
}

/// Checks predictor output for one window and renormalizes voxels whose sum is
/// slightly off.
pub fn validate_scores(scores: &mut [f32], classes: usize, voxels: usize) -> Result<(), InferenceError> {
    let expected = classes * voxels;
    if scores.len() != expected {
        return Err(InferenceError::WrongLength {
            expected,
            got: scores.len(),
        });
    }
    for (index, &value) in scores.iter().enumerate() {
        if !value.is_finite() {
            return Err(InferenceError::NonFinite(index));
        }
        if value < 0.0 {
            return Err(InferenceError::NegativeScore { index, value });
        }
    }
    for voxel in 0..voxels {
        let sum: f64 = (0..classes).map(|c| scores[c * voxels + voxel] as f64).sum();
        let deviation = (sum - 1.0).abs();
        if deviation >= SIMPLEX_REJECT_TOL {
            return Err(InferenceError::SimplexDeviation { voxel, sum });
        }
        if deviation > SIMPLEX_RENORMALIZE_TOL {
            for c in 0..classes {
                let s = &mut scores[c * voxels + voxel];
                *s = (*s as f64 / sum) as f32;
            }
        }
    }
    Ok(())
}

fn window_weights(patch: [usize; 3], fusion: Fusion) -> Vec<f64> {
    let axis = |a: usize| -> Vec<f64> {
        let p = patch[a];
        match fusion {
            Fusion::Uniform => vec![1.0; p],
            Fusion::Gaussian => {
                let sigma = p as f64 / 8.0;
                let center = (p as f64 - 1.0) / 2.0;
                (0..p)
                    .map(|i| {
                        let d = (i as f64 - center) / sigma;
                        (-0.5 * d * d).exp()
                    })
                    .collect()
            }
        }
    };
    let (wx, wy, wz) = (axis(0), axis(1), axis(2));
    let mut out = Vec::with_capacity(patch.iter().product());
    for z in &wz {
        for y in &wy {
            for x in &wx {
                out.push(x * y * z);
            }
        }
    }
    out
}

/// Extracts one window from the volume, reading padded positions by reflection.
fn extract_window(volume: &VoxelGrid, plan: &WindowPlan, start: [usize; 3]) -> Vec<f32> {
    let dims = volume.dims();
    let maps: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
        (0..plan.patch[a])
            .map(|l| reflect_index((start[a] + l) as isize - plan.padding[a].0 as isize, dims[a]))
            .collect()
    });
    let values = volume.values();
    let mut out = Vec::with_capacity(plan.patch.iter().product());
    for &k in &maps[2] {
        for &j in &maps[1] {
            let row = (k * dims[1] + j) * dims[0];
            out.extend(maps[0].iter().map(|&i| values[row + i] as f32));
        }
    }
    out
}

/// Runs the predictor over every planned window and fuses the overlapping
/// outputs. Windows may be predicted in parallel; accumulation always follows
/// the canonical window order so results are bit-identical across runs.
pub fn run_sliding_window(
    volume: &VoxelGrid,
    predictor: &dyn Predictor,
    plan: &WindowPlan,
    fusion: Fusion,
) -> Result<ProbabilityMap, InferenceError> {
    run_sliding_window_with_weights(volume, predictor, plan, fusion).map(|f| f.probabilities)
}

pub fn run_sliding_window_with_weights(
    volume: &VoxelGrid,
    predictor: &dyn Predictor,
    plan: &WindowPlan,
    fusion: Fusion,
) -> Result<FusedOutput, InferenceError> {
    let dims = volume.dims();
    if plan.dims != dims {
        return Err(InferenceError::PlanMismatch(format!(
            "plan built for {:?}, volume is {:?}",
            plan.dims, dims
        )));
    }
    let classes = predictor.classes();
    let n = volume.len();
    let patch = plan.patch;
    let patch_len: usize = patch.iter().product();
    let weights = window_weights(patch, fusion);
    let lo = plan.padding.map(|p| p.0);

    let mut acc = vec![0.0f64; classes * n];
    let mut weight_sum = vec![0.0f64; n];
    let starts = plan.starts();
    let batch = rayon::current_num_threads().max(1);

    for (chunk_index, chunk) in starts.chunks(batch).enumerate() {
        let outputs: Vec<Result<Vec<f32>, InferenceError>> = chunk
            .par_iter()
            .enumerate()
            .map(|(offset, &start)| {
                let values = extract_window(volume, plan, start);
                let input = WindowInput {
                    index: chunk_index * batch + offset,
                    start,
                    patch,
                    padding_lo: lo,
                    volume_dims: dims,
                    spacing: volume.spacing(),
                    values: &values,
                };
                let mut scores = predictor.predict(&input)?;
                validate_scores(&mut scores, classes, patch_len)?;
                Ok(scores)
            })
            .collect();

        for (&start, output) in chunk.iter().zip(outputs) {
            let scores = output?;
            accumulate(&mut acc, &mut weight_sum, &scores, &weights, start, plan, dims, classes);
        }
    }

    let mut fused = vec![0.0f32; classes * n];
    for v in 0..n {
        let w = weight_sum[v];
        if w <= 0.0 {
            return Err(InferenceError::PlanMismatch(format!(
                "voxel {v} not covered by any window"
            )));
        }
        for c in 0..classes {
            fused[c * n + v] = (acc[c * n + v] / w) as f32;
        }
    }
    Ok(FusedOutput {
        probabilities: ProbabilityMap::new(*volume.geometry(), classes, fused)?,
        weight_sum,
    })
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    acc: &mut [f64],
    weight_sum: &mut [f64],
    scores: &[f32],
    weights: &[f64],
    start: [usize; 3],
    plan: &WindowPlan,
    dims: [usize; 3],
    classes: usize,
) {
    let patch = plan.patch;
    let patch_len: usize = patch.iter().product();
    let n: usize = dims.iter().product();
    // local index range per axis that falls inside the unpadded volume
    let range = |a: usize| {
        let lo = plan.padding[a].0;
        let first = lo.saturating_sub(start[a]);
        let last = (lo + dims[a]).saturating_sub(start[a]).min(patch[a]);
        first..last
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    for lz in rz {
        let z = start[2] + lz - plan.padding[2].0;
        for ly in ry.clone() {
            let y = start[1] + ly - plan.padding[1].0;
            for lx in rx.clone() {
                let x = start[0] + lx - plan.padding[0].0;
                let local = (lz * patch[1] + ly) * patch[0] + lx;
                let target = (z * dims[1] + y) * dims[0] + x;
                let w = weights[local];
                weight_sum[target] += w;
                for c in 0..classes {
                    acc[c * n + target] += w * scores[c * patch_len + local] as f64;
                }
            }
        }
    }
}

/// Class with the highest score per voxel; ties go to the lowest class index.
pub fn argmax_labels(probs: &ProbabilityMap) -> Result<LabelMask, InferenceError> {
    if probs.classes > NUM_CLASSES {
        return Err(InferenceError::PlanMismatch(format!(
            "{} classes exceed the label range",
            probs.classes
        )));
    }
    let n = probs.geometry.len();
    let labels: Vec<u8> = (0..n)
        .map(|v| {
            let mut best = 0;
            let mut best_score = probs.score(0, v);
            for c in 1..probs.classes {
                let s = probs.score(c, v);
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMask::from_labels(probs.geometry, &labels)?)
}
