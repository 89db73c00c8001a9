use rayon::prelude::*;

use crate::volume::{LabelMask, Structure};

use super::{check_same_geometry, squared_edt, BinaryMask, MetricError};

/// Outcome class of a per-structure comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreStatus {
    Computed,
    ReferenceEmpty,
    PredictionEmpty,
    BothEmpty,
}

impl ScoreStatus {
    fn classify(prediction_empty: bool, reference_empty: bool) -> Self {
        match (prediction_empty, reference_empty) {
            (false, false) => ScoreStatus::Computed,
            (true, false) => ScoreStatus::PredictionEmpty,
            (false, true) => ScoreStatus::ReferenceEmpty,
            (true, true) => ScoreStatus::BothEmpty,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreStatus::Computed => "computed",
            ScoreStatus::ReferenceEmpty => "reference_empty",
            ScoreStatus::PredictionEmpty => "prediction_empty",
            ScoreStatus::BothEmpty => "both_empty",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "computed" => ScoreStatus::Computed,
            "reference_empty" => ScoreStatus::ReferenceEmpty,
            "prediction_empty" => ScoreStatus::PredictionEmpty,
            "both_empty" => ScoreStatus::BothEmpty,
            _ => return None,
        })
    }
}

/// A metric value together with the emptiness status it was computed under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub status: ScoreStatus,
}

/// Dice similarity coefficient `2|A∩B| / (|A|+|B|)`.
///
/// When exactly one operand is empty the value is 0 and the status says which;
/// when both are empty there is no value.
pub fn dsc(prediction: &BinaryMask, reference: &BinaryMask) -> Result<MetricValue, MetricError> {
    check_same_geometry(prediction.geometry(), reference.geometry())?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &r) in prediction.voxels().iter().zip(reference.voxels()) {
        a += usize::from(p);
        b += usize::from(r);
        both += usize::from(p && r);
    }
    let status = ScoreStatus::classify(a == 0, b == 0);
    let value = match status {
        ScoreStatus::BothEmpty => None,
        _ => Some(2.0 * both as f64 / (a + b) as f64),
    };
    Ok(MetricValue { value, status })
}

/// The `ceil(0.95 n)`-th smallest value (nearest-rank, 1-based).
///
/// Reorders `values`. Returns `None` for an empty slice.
pub fn percentile_nearest_rank(values: &mut [f64], percent: u32) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let rank = ((percent as usize * n).div_ceil(100)).clamp(1, n);
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Some(*v)
}

fn directed_p95(from: &[[usize; 3]], to_sq: &[f64], dims: [usize; 3]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|c| to_sq[c[0] + dims[0] * (c[1] + dims[1] * c[2])].sqrt())
        .collect();
    percentile_nearest_rank(&mut d, 95).expect("surface of a non-empty mask is non-empty")
}

/// 95th-percentile Hausdorff distance in mm: the larger of the two directed
/// nearest-rank 95th percentiles of surface-to-surface distances.
pub fn hd95(prediction: &BinaryMask, reference: &BinaryMask) -> Result<MetricValue, MetricError> {
    check_same_geometry(prediction.geometry(), reference.geometry())?;
    let status = ScoreStatus::classify(prediction.is_empty(), reference.is_empty());
    if status != ScoreStatus::Computed {
        return Ok(MetricValue { value: None, status });
    }
    let geom = reference.geometry();
    let (dims, spacing) = (geom.dims, geom.spacing);
    let sa = prediction.surface();
    let sb = reference.surface();
    let to_b = squared_edt(&sb, dims, spacing)?;
    let to_a = squared_edt(&sa, dims, spacing)?;
    let value = directed_p95(&sa, &to_b, dims).max(directed_p95(&sb, &to_a, dims));
    Ok(MetricValue {
        value: Some(value),
        status,
    })
}

/// DSC and HD95 of one substructure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureScore {
    pub structure: Structure,
    pub dsc: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub status: ScoreStatus,
}

/// Scores every substructure of `prediction` against `reference`.
///
/// Values are only present when both masks contain the structure.
pub fn score_structures(prediction: &LabelMask, reference: &LabelMask) -> Result<Vec<StructureScore>, MetricError> {
    check_same_geometry(prediction.geometry(), reference.geometry())?;
    Structure::ALL
        .par_iter()
        .map(|&s| {
            let p = BinaryMask::from_labels(prediction, s);
            let r = BinaryMask::from_labels(reference, s);
            let d = dsc(&p, &r)?;
            let h = hd95(&p, &r)?;
            let computed = d.status == ScoreStatus::Computed;
            Ok(StructureScore {
                structure: s,
                dsc: if computed { d.value } else { None },
                hd95_mm: if computed { h.value } else { None },
                status: d.status,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn mask(dims: [usize; 3], spacing: [f64; 3], f: impl Fn([usize; 3]) -> bool) -> BinaryMask {
        let g = Geometry::new(dims, spacing);
        let v = (0..g.len()).map(|i| f(g.coords(i))).collect();
        BinaryMask::new(g, v).unwrap()
    }

    fn in_box(c: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> bool {
        (0..3).all(|a| c[a] >= lo[a] && c[a] < hi[a])
    }

    #[test]
    fn dsc_hand_cases() {
        let a = mask([6, 6, 6], [1.0; 3], |c| in_box(c, [0; 3], [2; 3]));
        assert_eq!(dsc(&a, &a).unwrap().value, Some(1.0));
        let b = mask([6, 6, 6], [1.0; 3], |c| in_box(c, [4; 3], [6; 3]));
        assert_eq!(dsc(&a, &b).unwrap().value, Some(0.0));
        // two 2x2x2 cubes overlapping in half: |A|=|B|=8, |A∩B|=4
        let c = mask([6, 6, 6], [1.0; 3], |c| in_box(c, [1, 0, 0], [3, 2, 2]));
        assert_eq!((a.count(), c.count()), (8, 8));
        assert_eq!(dsc(&a, &c).unwrap().value, Some(0.5));
    }

    #[test]
    fn dsc_empty_statuses() {
        let e = mask([3, 3, 3], [1.0; 3], |_| false);
        let f = mask([3, 3, 3], [1.0; 3], |c| c == [1, 1, 1]);
        assert_eq!(
            dsc(&e, &e).unwrap(),
            MetricValue {
                value: None,
                status: ScoreStatus::BothEmpty
            }
        );
        assert_eq!(
            dsc(&e, &f).unwrap(),
            MetricValue {
                value: Some(0.0),
                status: ScoreStatus::PredictionEmpty
            }
        );
        assert_eq!(dsc(&f, &e).unwrap().status, ScoreStatus::ReferenceEmpty);
        assert_eq!(hd95(&e, &f).unwrap().value, None);
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let a = mask([3, 3, 3], [1.0; 3], |_| true);
        let b = mask([3, 3, 4], [1.0; 3], |_| true);
        assert!(matches!(dsc(&a, &b), Err(MetricError::GeometryMismatch(_))));
        let c = mask([3, 3, 3], [1.0, 1.0, 2.0], |_| true);
        assert!(matches!(hd95(&a, &c), Err(MetricError::GeometryMismatch(_))));
    }

    #[test]
    fn hd95_hand_cases() {
        let a = mask([5, 5, 5], [1.0; 3], |c| in_box(c, [1; 3], [4; 3]));
        assert_eq!(hd95(&a, &a).unwrap().value, Some(0.0));
        let p = mask([4, 1, 1], [1.0; 3], |c| c == [0, 0, 0]);
        let q = mask([4, 1, 1], [1.0; 3], |c| c == [3, 0, 0]);
        assert_eq!(hd95(&p, &q).unwrap().value, Some(3.0));
        let p = mask([1, 1, 2], [1.0, 1.0, 3.0], |c| c == [0, 0, 0]);
        let q = mask([1, 1, 2], [1.0, 1.0, 3.0], |c| c == [0, 0, 1]);
        assert_eq!(hd95(&p, &q).unwrap().value, Some(3.0));
    }

    #[test]
    fn nearest_rank_percentile() {
        assert_eq!(percentile_nearest_rank(&mut [7.0], 95), Some(7.0));
        assert_eq!(percentile_nearest_rank(&mut [], 95), None);
        // n = 20: ceil(19) = 19th smallest
        let mut v: Vec<f64> = (1..=20).rev().map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&mut v, 95), Some(19.0));
        // n = 21: ceil(19.95) = 20th
        let mut v: Vec<f64> = (1..=21).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&mut v, 95), Some(20.0));
        // n = 10: ceil(9.5) = 10th
        let mut v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&mut v, 95), Some(10.0));
    }

    #[test]
    fn scoring_identity_and_missing_structure() {
        let g = Geometry::new([12, 6, 6], [1.0, 1.0, 3.0]);
        let labels: Vec<u8> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                if (1..5).contains(&c[1]) && (1..5).contains(&c[2]) {
                    c[0].min(8) as u8
                } else {
                    0
                }
            })
            .collect();
        let reference = LabelMask::from_labels(g, &labels).unwrap();
        let scores = score_structures(&reference, &reference).unwrap();
        assert_eq!(scores.len(), 8);
        for s in &scores {
            assert_eq!(s.status, ScoreStatus::Computed, "{:?}", s.structure);
            assert_eq!(s.dsc, Some(1.0));
            assert_eq!(s.hd95_mm, Some(0.0));
        }

        let without_ivc: Vec<u8> = labels
            .iter()
            .map(|&l| if l == Structure::Ivc.label() { 0 } else { l })
            .collect();
        let pred = LabelMask::from_labels(g, &without_ivc).unwrap();
        let scores = score_structures(&pred, &reference).unwrap();
        for s in &scores {
            if s.structure == Structure::Ivc {
                assert_eq!(s.status, ScoreStatus::PredictionEmpty);
                assert_eq!((s.dsc, s.hd95_mm), (None, None));
            } else {
                assert_eq!(s.status, ScoreStatus::Computed);
            }
        }

        let empty = LabelMask::from_labels(g, &vec![0; g.len()]).unwrap();
        let scores = score_structures(&empty, &empty).unwrap();
        assert!(scores.iter().all(|s| s.status == ScoreStatus::BothEmpty));
    }
}
