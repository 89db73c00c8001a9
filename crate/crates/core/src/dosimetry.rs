//! Dose-volume histograms and structure dose metrics.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{BinaryMask, MetricError, GEOMETRY_TOL};
use crate::volume::{
    resample_to_geometry, Geometry, Interpolation, LabelMask, OutsidePolicy, Structure, VolumeError, VoxelGrid,
};

/// Default DVH bin width in Gy.
pub const DEFAULT_BIN_GY: f64 = 0.1;

/// Threshold of the V-metric reported for the pulmonary artery.
pub const PA_VOLUME_THRESHOLD_GY: f64 = 40.0;

#[derive(Debug, Error)]
pub enum DoseError {
    #[error("structure {0} is empty")]
    EmptyStructure(String),
    #[error("dose grid and mask do not overlap physically")]
    NoOverlap,
    #[error("dose/mask geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("bin width must be positive, got {0}")]
    InvalidBin(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn structure_name(s: Option<Structure>) -> String {
    s.map_or_else(|| "mask".to_string(), |s| s.code().to_string())
}

/// Dose resampled onto a mask lattice.
#[derive(Debug, Clone)]
pub struct AlignedDose {
    pub dose: VoxelGrid,
    /// Mask voxels whose centres lie outside the dose grid (set to 0 Gy).
    pub outside_voxels: usize,
    pub outside_fraction: f64,
}

/// Trilinearly resamples `dose` onto `target` (normally the manual mask's
/// geometry). The mask is never resampled.
pub fn align_dose(dose: &VoxelGrid, target: &Geometry) -> Result<AlignedDose, DoseError> {
    let r = resample_to_geometry(dose, target, Interpolation::Trilinear, OutsidePolicy::Fill(0.0))?;
    if r.outside_voxels == r.grid.len() {
        return Err(DoseError::NoOverlap);
    }
    let outside_fraction = r.outside_fraction();
    Ok(AlignedDose {
        dose: r.grid,
        outside_voxels: r.outside_voxels,
        outside_fraction,
    })
}

fn masked_doses(dose: &VoxelGrid, mask: &BinaryMask) -> Result<Vec<f64>, DoseError> {
    if !dose.geometry().approx_eq(mask.geometry(), GEOMETRY_TOL) {
        return Err(DoseError::GeometryMismatch(format!(
            "dose dims {:?} vs mask dims {:?}",
            dose.dims(),
            mask.geometry().dims
        )));
    }
    let d: Vec<f64> = dose
        .values()
        .iter()
        .zip(mask.voxels())
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect();
    if d.is_empty() {
        return Err(DoseError::EmptyStructure(structure_name(mask.structure())));
    }
    Ok(d)
}

/// Cumulative DVH on a relative (%) volume axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DvhCurve {
    pub structure: Option<Structure>,
    pub dose_edges: Vec<f64>,
    pub volume_pct: Vec<f64>,
    pub voxel_volume_cc: f64,
}

impl DvhCurve {
    /// Mean dose recovered from the curve: the area under V(d)/100, trapezoidal.
    pub fn mean_dose_from_curve(&self) -> f64 {
        self.dose_edges
            .windows(2)
            .zip(self.volume_pct.windows(2))
            .map(|(d, v)| (d[1] - d[0]) * (v[0] + v[1]) / 200.0)
            .sum()
    }
}

/// Cumulative DVH at edges `0, bin, 2 bin, ...` up to one bin past the
/// first edge at or above the maximum dose.
pub fn dvh(dose: &VoxelGrid, mask: &BinaryMask, bin_gy: f64) -> Result<DvhCurve, DoseError> {
    if !(bin_gy > 0.0 && bin_gy.is_finite()) {
        return Err(DoseError::InvalidBin(bin_gy));
    }
    let mut d = masked_doses(dose, mask)?;
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let dmax = d[n - 1].max(0.0);
    let last = (dmax / bin_gy).ceil() as usize + 1;
    let dose_edges: Vec<f64> = (0..=last).map(|i| i as f64 * bin_gy).collect();
    let volume_pct = dose_edges
        .iter()
        .map(|&edge| {
            let below = d.partition_point(|&v| v < edge);
            100.0 * (n - below) as f64 / n as f64
        })
        .collect();
    Ok(DvhCurve {
        structure: mask.structure(),
        dose_edges,
        volume_pct,
        voxel_volume_cc: mask.geometry().voxel_volume_mm3() / 1000.0,
    })
}

/// A dose metric as reported per structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DoseMetricKind {
    DMax,
    DMean,
    /// Percent volume receiving at least this many Gy.
    V(f64),
}

impl DoseMetricKind {
    pub fn label(self) -> String {
        match self {
            DoseMetricKind::DMax => "DMax".into(),
            DoseMetricKind::DMean => "DMean".into(),
            DoseMetricKind::V(t) => format!("V{t}"),
        }
    }
}

/// The metric compared per structure: DMax for the aorta and venae cavae,
/// V40 for the pulmonary artery, DMean for the four chambers.
pub fn designated_metric(structure: Structure) -> DoseMetricKind {
    match structure {
        Structure::Aa | Structure::Svc | Structure::Ivc => DoseMetricKind::DMax,
        Structure::Pa => DoseMetricKind::V(PA_VOLUME_THRESHOLD_GY),
        Structure::Ra | Structure::Rv | Structure::La | Structure::Lv => DoseMetricKind::DMean,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseMetrics {
    pub structure: Option<Structure>,
    pub dmax_gy: f64,
    pub dmean_gy: f64,
    /// `(threshold Gy, percent volume)` in the order requested.
    pub vx: Vec<(f64, f64)>,
}

impl DoseMetrics {
    pub fn v(&self, threshold: f64) -> Option<f64> {
        self.vx.iter().find(|(t, _)| *t == threshold).map(|(_, v)| *v)
    }

    pub fn value(&self, kind: DoseMetricKind) -> Option<f64> {
        match kind {
            DoseMetricKind::DMax => Some(self.dmax_gy),
            DoseMetricKind::DMean => Some(self.dmean_gy),
            DoseMetricKind::V(t) => self.v(t),
        }
    }
}

/// DMax, DMean and V-thresholds computed directly from the masked voxels.
pub fn dose_metrics(dose: &VoxelGrid, mask: &BinaryMask, thresholds: &[f64]) -> Result<DoseMetrics, DoseError> {
    let d = masked_doses(dose, mask)?;
    let n = d.len() as f64;
    let dmax_gy = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dmean_gy = d.iter().sum::<f64>() / n;
    let vx = thresholds
        .iter()
        .map(|&t| (t, 100.0 * d.iter().filter(|&&v| v >= t).count() as f64 / n))
        .collect();
    Ok(DoseMetrics {
        structure: mask.structure(),
        dmax_gy,
        dmean_gy,
        vx,
    })
}

/// One case of a manual-vs-predicted dose comparison, all on one lattice.
#[derive(Debug, Clone)]
pub struct DoseCase {
    pub case_id: String,
    pub dose: VoxelGrid,
    pub manual: LabelMask,
    pub predicted: LabelMask,
}

/// Paired designated-metric values for one structure across cases.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDoseMetric {
    pub structure: Structure,
    pub metric: DoseMetricKind,
    pub case_ids: Vec<String>,
    pub manual: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Cases dropped because one of the delineations lacked the structure.
    pub excluded: Vec<String>,
}

impl PairedDoseMetric {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.manual
            .iter()
            .copied()
            .zip(self.predicted.iter().copied())
            .collect()
    }
}

/// Computes every structure's designated metric on both delineations.
pub fn paired_dose_table(cases: &[DoseCase]) -> Result<Vec<PairedDoseMetric>, DoseError> {
    let per_case: Vec<Vec<Option<(f64, f64)>>> = cases
        .par_iter()
        .map(|c| {
            Structure::ALL
                .iter()
                .map(|&s| {
                    let metric = designated_metric(s);
                    let thresholds: Vec<f64> = match metric {
                        DoseMetricKind::V(t) => vec![t],
                        _ => Vec::new(),
                    };
                    let m = BinaryMask::from_labels(&c.manual, s);
                    let p = BinaryMask::from_labels(&c.predicted, s);
                    if m.is_empty() || p.is_empty() {
                        return Ok(None);
                    }
                    let mm = dose_metrics(&c.dose, &m, &thresholds)?;
                    let pm = dose_metrics(&c.dose, &p, &thresholds)?;
                    Ok(Some((mm.value(metric).unwrap(), pm.value(metric).unwrap())))
                })
                .collect::<Result<Vec<_>, DoseError>>()
        })
        .collect::<Result<_, _>>()?;

    Ok(Structure::ALL
        .iter()
        .enumerate()
        .map(|(si, &s)| {
            let mut row = PairedDoseMetric {
                structure: s,
                metric: designated_metric(s),
                case_ids: Vec::new(),
                manual: Vec::new(),
                predicted: Vec::new(),
                excluded: Vec::new(),
            };
            for (c, values) in cases.iter().zip(&per_case) {
                match values[si] {
                    Some((m, p)) => {
                        row.case_ids.push(c.case_id.clone());
                        row.manual.push(m);
                        row.predicted.push(p);
                    }
                    None => row.excluded.push(c.case_id.clone()),
                }
            }
            row
        })
        .collect())
}

/// Writes DVH curves as `structure,dose_gy,volume_pct`, one row per edge.
pub fn write_dvh_csv<W: Write>(out: W, curves: &[DvhCurve]) -> Result<(), DoseError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["structure", "dose_gy", "volume_pct"])?;
    for c in curves {
        let name = structure_name(c.structure);
        for (d, v) in c.dose_edges.iter().zip(&c.volume_pct) {
            w.write_record([name.as_str(), &format_num(*d), &format_num(*v)])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Compact fixed-precision rendering used in CSV exports.
pub(crate) fn format_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}
