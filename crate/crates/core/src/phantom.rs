//! Deterministic synthetic CT phantoms: eight ellipsoidal substructures with
//! labels, HU values and an analytic Gaussian dose field.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::{write_manifest, CaseRecord, CohortError, CohortManifest, Contrast, Position, Sex};
use crate::rng::{derive_seed, seeded};
use crate::volume::{
    reorient, save_nifti, Geometry, LabelMask, Orientation, Structure, ValueKind, VolumeError, VoxelGrid,
};

pub const BACKGROUND_HU: f64 = -30.0;
pub const CONTRAST_OFFSET_HU: f64 = 150.0;
pub const MIN_STRUCTURE_VOXELS: usize = 32;
pub const DEFAULT_DIMS: [usize; 3] = [96, 96, 64];
pub const DEFAULT_SPACING: [f64; 3] = [1.0, 1.0, 3.0];
pub const DEFAULT_NOISE_HU: f64 = 10.0;
/// Per-axis range of the cohort dimension jitter, in voxels.
pub const DIM_JITTER: i64 = 8;
/// Per-axis range of the cohort center jitter, in mm.
pub const CENTER_JITTER_MM: f64 = 5.0;
/// Per-axis range of the cohort beam position jitter, in mm.
pub const BEAM_JITTER_MM: f64 = 8.0;
/// Relative range of the cohort beam peak jitter.
pub const BEAM_PEAK_JITTER: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("ellipsoids {first} and {second} overlap")]
    Overlap { first: Structure, second: Structure },
    #[error("{structure} covers {voxels} voxels, below the minimum of {MIN_STRUCTURE_VOXELS}")]
    TooSmall { structure: Structure, voxels: usize },
    #[error("invalid phantom: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub structure: Structure,
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
    pub base_hu: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.radii_mm[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub center_mm: [f64; 3],
    pub sigma_mm: [f64; 3],
    pub peak_gy: f64,
}

impl Beam {
    pub fn dose_at(&self, p: [f64; 3]) -> f64 {
        let q: f64 = (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.sigma_mm[a]).powi(2))
            .sum();
        self.peak_gy * (-0.5 * q).exp()
    }
}

/// Default anatomy in world mm around the origin: vessels in an upper tier,
/// chambers in a lower tier, four columns apart in x/y.
pub fn default_ellipsoids() -> Vec<Ellipsoid> {
    let e = |structure, center_mm, radii_mm, base_hu| Ellipsoid {
        structure,
        center_mm,
        radii_mm,
        base_hu,
    };
    vec![
        e(Structure::Aa, [-18.0, -18.0, 40.0], [7.0, 7.0, 22.0], 40.0),
        e(Structure::Pa, [18.0, -18.0, 40.0], [7.0, 7.0, 20.0], 38.0),
        e(Structure::Svc, [-18.0, 18.0, 40.0], [6.0, 6.0, 20.0], 35.0),
        e(Structure::Ivc, [18.0, 18.0, 40.0], [6.0, 6.0, 18.0], 36.0),
        e(Structure::Ra, [-18.0, 18.0, -25.0], [13.0, 13.0, 18.0], 45.0),
        e(Structure::Rv, [-18.0, -18.0, -25.0], [14.0, 14.0, 20.0], 50.0),
        e(Structure::La, [18.0, 18.0, -25.0], [13.0, 13.0, 18.0], 47.0),
        e(Structure::Lv, [18.0, -18.0, -25.0], [14.0, 14.0, 22.0], 55.0),
    ]
}

pub fn default_beams() -> Vec<Beam> {
    vec![
        Beam {
            center_mm: [0.0, 0.0, -20.0],
            sigma_mm: [25.0, 25.0, 40.0],
            peak_gy: 60.0,
        },
        Beam {
            center_mm: [10.0, -18.0, 40.0],
            sigma_mm: [12.0, 12.0, 20.0],
            peak_gy: 50.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub case_id: String,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// World position of voxel (0, 0, 0) in the supine (canonical) frame.
    pub origin: [f64; 3],
    pub contrast: Contrast,
    pub position: Position,
    pub ellipsoids: Vec<Ellipsoid>,
    pub noise_sigma_hu: f64,
    pub beams: Vec<Beam>,
}

/// Origin that puts the volume center at world (0, 0, 0).
pub fn centered_origin(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| -((dims[a] as f64 - 1.0) / 2.0) * spacing[a])
}

impl PhantomSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            case_id: format!("phantom_{seed}"),
            seed,
            dims: DEFAULT_DIMS,
            spacing: DEFAULT_SPACING,
            origin: centered_origin(DEFAULT_DIMS, DEFAULT_SPACING),
            contrast: Contrast::Ncct,
            position: Position::Supine,
            ellipsoids: default_ellipsoids(),
            noise_sigma_hu: DEFAULT_NOISE_HU,
            beams: default_beams(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.dims, self.spacing).with_origin(self.origin)
    }

    fn validate(&self) -> Result<(), PhantomError> {
        self.geometry().validate()?;
        if !(self.noise_sigma_hu.is_finite() && self.noise_sigma_hu >= 0.0) {
            return Err(PhantomError::Invalid(format!("noise sigma {}", self.noise_sigma_hu)));
        }
        for e in &self.ellipsoids {
            if e.radii_mm.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
                return Err(PhantomError::Invalid(format!("{} radii {:?}", e.structure, e.radii_mm)));
            }
        }
        for b in &self.beams {
            if b.sigma_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
                return Err(PhantomError::Invalid(format!("beam sigma {:?}", b.sigma_mm)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub image: VoxelGrid,
    pub labels: LabelMask,
    pub dose: VoxelGrid,
    pub record: CaseRecord,
}

/// Synthetic demographics for a case, drawn from their own stream of the
/// case seed so they do not depend on volume size.
pub fn draw_record(spec: &PhantomSpec) -> CaseRecord {
    let mut rng = seeded(spec.seed, 1);
    let age = rng.gen_range(35..=85) as f64;
    let sex = if rng.gen_bool(0.5) { Sex::M } else { Sex::F };
    let bmi_draw: f64 = Normal::new(27.0, 4.0).expect("valid normal").sample(&mut rng);
    let bmi = (bmi_draw.clamp(17.0, 45.0) * 10.0).round() / 10.0;
    CaseRecord {
        case_id: spec.case_id.clone(),
        image_path: PathBuf::new(),
        mask_manual_path: PathBuf::new(),
        mask_pred_path: None,
        dose_path: None,
        contrast: spec.contrast,
        position: spec.position,
        age: Some(age),
        sex: Some(sex),
        bmi: Some(bmi),
        extra: Vec::new(),
    }
}

/// Builds image, labels and dose. Noise is rounded to whole HU so CECT and
/// NCCT variants of one seed differ by exactly the contrast offset.
pub fn generate_case(spec: &PhantomSpec) -> Result<PhantomCase, PhantomError> {
    spec.validate()?;
    let geometry = spec.geometry();
    let n = geometry.len();

    let mut labels = vec![0u8; n];
    let mut hu = vec![BACKGROUND_HU; n];
    let mut dose = vec![0.0; n];
    for (idx, ((label, value), d)) in labels.iter_mut().zip(&mut hu).zip(&mut dose).enumerate() {
        let p = geometry.physical(geometry.coords(idx).map(|c| c as f64));
        let mut owner: Option<&Ellipsoid> = None;
        for e in &spec.ellipsoids {
            if e.contains(p) {
                if let Some(prev) = owner {
                    return Err(PhantomError::Overlap {
                        first: prev.structure,
                        second: e.structure,
                    });
                }
                owner = Some(e);
            }
        }
        if let Some(e) = owner {
            *label = e.structure.label();
            *value = e.base_hu;
            if spec.contrast == Contrast::Cect && e.structure.is_vessel() {
                *value += CONTRAST_OFFSET_HU;
            }
        }
        *d = spec.beams.iter().map(|b| b.dose_at(p)).sum();
    }

    if spec.noise_sigma_hu > 0.0 {
        let mut rng = seeded(spec.seed, 0);
        for v in &mut hu {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += (z * spec.noise_sigma_hu).round();
        }
    }

    let mask = LabelMask::from_labels(geometry, &labels)?;
    for e in &spec.ellipsoids {
        let voxels = mask.count(e.structure);
        if voxels < MIN_STRUCTURE_VOXELS {
            return Err(PhantomError::TooSmall {
                structure: e.structure,
                voxels,
            });
        }
    }
    let image = VoxelGrid::new(geometry, ValueKind::Hu, hu)?;
    let dose = VoxelGrid::new(geometry, ValueKind::Gy, dose)?;

    let (image, mask, dose) = match spec.position {
        Position::Supine => (image, mask, dose),
        Position::Prone => {
            // storage order flipped along y, orientation records the flip
            let flip = Orientation::new([0, 1, 2], [1, -1, 1])?;
            (
                reorient(&image, flip),
                LabelMask::new(reorient(mask.grid(), flip))?,
                reorient(&dose, flip),
            )
        }
    };
    Ok(PhantomCase {
        image,
        labels: mask,
        dose,
        record: draw_record(spec),
    })
}

/// Specs for a cohort: CECT cases first, then NCCT, ids `case_000`, ...; each
/// case gets its own derived seed, jittered dims, a jittered center and
/// jittered beams.
/// `n_prone` cases, chosen by a seeded shuffle, are prone.
pub fn cohort_specs(n_cect: usize, n_ncct: usize, n_prone: usize, seed: u64) -> Result<Vec<PhantomSpec>, PhantomError> {
    let total = n_cect + n_ncct;
    if n_prone > total {
        return Err(PhantomError::Invalid(format!(
            "{n_prone} prone cases requested out of {total}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seeded(seed, 2));
    let mut prone = vec![false; total];
    for &i in &order[..n_prone] {
        prone[i] = true;
    }
    let width = total.saturating_sub(1).to_string().len().max(3);
    Ok((0..total)
        .map(|i| {
            let case_seed = derive_seed(seed, i as u64);
            let mut rng = seeded(case_seed, 3);
            let dims = DEFAULT_DIMS.map(|d| (d as i64 + rng.gen_range(-DIM_JITTER..=DIM_JITTER)) as usize);
            let shift: [f64; 3] = [0; 3].map(|_| rng.gen_range(-CENTER_JITTER_MM..=CENTER_JITTER_MM));
            let base = centered_origin(dims, DEFAULT_SPACING);
            let mut spec = PhantomSpec::new(case_seed);
            spec.case_id = format!("case_{i:0width$}");
            spec.dims = dims;
            spec.origin = [0, 1, 2].map(|a| base[a] + shift[a]);
            spec.contrast = if i < n_cect { Contrast::Cect } else { Contrast::Ncct };
            spec.position = if prone[i] { Position::Prone } else { Position::Supine };
            for beam in &mut spec.beams {
                for c in &mut beam.center_mm {
                    *c += rng.gen_range(-BEAM_JITTER_MM..=BEAM_JITTER_MM);
                }
                beam.peak_gy *= 1.0 + rng.gen_range(-BEAM_PEAK_JITTER..=BEAM_PEAK_JITTER);
            }
            spec
        })
        .collect())
}

/// Manifest records for a cohort without generating any volumes; paths are
/// the ones [`generate_cohort`] would write.
pub fn cohort_records(n_cect: usize, n_ncct: usize, n_prone: usize, seed: u64) -> Result<CohortManifest, PhantomError> {
    let records = cohort_specs(n_cect, n_ncct, n_prone, seed)?
        .iter()
        .map(|spec| with_paths(draw_record(spec)))
        .collect();
    Ok(CohortManifest::new(PathBuf::new(), records))
}

fn with_paths(mut record: CaseRecord) -> CaseRecord {
    let id = &record.case_id;
    record.image_path = PathBuf::from(format!("{id}_image.nii.gz"));
    record.mask_manual_path = PathBuf::from(format!("{id}_mask.nii.gz"));
    record.dose_path = Some(PathBuf::from(format!("{id}_dose.nii.gz")));
    record
}

/// Writes every case as gzipped NIfTI (image, manual mask, dose) plus
/// `manifest.csv` into `out_dir`.
pub fn generate_cohort(
    n_cect: usize,
    n_ncct: usize,
    n_prone: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CohortManifest, PhantomError> {
    std::fs::create_dir_all(out_dir).map_err(|source| PhantomError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let specs = cohort_specs(n_cect, n_ncct, n_prone, seed)?;
    let records = specs
        .par_iter()
        .map(|spec| {
            let case = generate_case(spec)?;
            let record = with_paths(case.record);
            save_nifti(&case.image, out_dir.join(&record.image_path))?;
            save_nifti(case.labels.grid(), out_dir.join(&record.mask_manual_path))?;
            if let Some(dose_path) = &record.dose_path {
                save_nifti(&case.dose, out_dir.join(dose_path))?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>, PhantomError>>()?;
    let manifest = CohortManifest::new(out_dir, records);
    write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
