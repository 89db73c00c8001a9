//! Geometric segmentation metrics: surfaces, distance transform, DSC and HD95.

use thiserror::Error;

use crate::volume::{Geometry, LabelMask, Structure, VolumeError};

mod edt;
mod overlap;

pub use edt::{edt, squared_edt};
pub use overlap::{dsc, hd95, percentile_nearest_rank, score_structures, MetricValue, ScoreStatus, StructureScore};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("distance transform needs at least one seed")]
    EmptySeeds,
    #[error("seed {seed:?} outside volume {dims:?}")]
    SeedOutOfBounds { seed: [usize; 3], dims: [usize; 3] },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Tolerance for treating two lattices as the same physical grid.
pub const GEOMETRY_TOL: f64 = 1e-4;

/// Foreground/background mask on a voxel lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    voxels: Vec<bool>,
    structure: Option<Structure>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, voxels: Vec<bool>) -> Result<Self, MetricError> {
        geometry.validate()?;
        if voxels.len() != geometry.len() {
            return Err(MetricError::GeometryMismatch(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                geometry.dims
            )));
        }
        Ok(Self {
            geometry,
            voxels,
            structure: None,
        })
    }

    /// Selects one structure out of a label mask.
    pub fn from_labels(labels: &LabelMask, structure: Structure) -> Self {
        let l = f64::from(structure.label());
        Self {
            geometry: *labels.geometry(),
            voxels: labels.grid().values().iter().map(|&v| v == l).collect(),
            structure: Some(structure),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn structure(&self) -> Option<Structure> {
        self.structure
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|&v| v)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.voxels[self.geometry.index(i, j, k)]
    }

    /// Foreground voxels with at least one 6-neighbour that is background or
    /// outside the volume, in x-fastest order.
    pub fn surface(&self) -> Vec<[usize; 3]> {
        let g = &self.geometry;
        let [nx, ny, nz] = g.dims;
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if !self.get(i, j, k) {
                        continue;
                    }
                    let on_border = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                    if on_border
                        || !self.get(i - 1, j, k)
                        || !self.get(i + 1, j, k)
                        || !self.get(i, j - 1, k)
                        || !self.get(i, j + 1, k)
                        || !self.get(i, j, k - 1)
                        || !self.get(i, j, k + 1)
                    {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }
}

/// Surface voxels of a mask (6-connectivity, image border counts as background).
pub fn extract_surface(mask: &BinaryMask) -> Vec<[usize; 3]> {
    mask.surface()
}

pub(crate) fn check_same_geometry(a: &Geometry, b: &Geometry) -> Result<(), MetricError> {
    if a.approx_eq(b, GEOMETRY_TOL) {
        Ok(())
    } else {
        Err(MetricError::GeometryMismatch(format!(
            "dims {:?}/{:?}, spacing {:?}/{:?}, origin {:?}/{:?}",
            a.dims, b.dims, a.spacing, b.spacing, a.origin, b.origin
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], f: impl Fn([usize; 3]) -> bool) -> BinaryMask {
        let g = Geometry::new(dims, [1.0; 3]);
        let v = (0..g.len()).map(|i| f(g.coords(i))).collect();
        BinaryMask::new(g, v).unwrap()
    }

    #[test]
    fn single_voxel_surface() {
        let m = mask([5, 5, 5], |c| c == [2, 2, 2]);
        assert_eq!(extract_surface(&m), vec![[2, 2, 2]]);
    }

    #[test]
    fn interior_cube_surface_is_26() {
        let m = mask([7, 7, 7], |c| c.iter().all(|&x| (2..5).contains(&x)));
        let s = extract_surface(&m);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&[3, 3, 3]));
    }

    #[test]
    fn full_volume_surface_is_border() {
        for dims in [[4, 5, 6], [1, 3, 3], [2, 2, 2], [3, 3, 1]] {
            let m = mask(dims, |_| true);
            let s = extract_surface(&m);
            // brute-force border count
            let brute = (0..m.geometry().len())
                .map(|i| m.geometry().coords(i))
                .filter(|c| (0..3).any(|a| c[a] == 0 || c[a] + 1 == dims[a]))
                .count();
            assert_eq!(s.len(), brute, "{dims:?}");
            let [nx, ny, nz] = dims.map(|d| d as i64);
            if dims.iter().all(|&d| d >= 2) {
                let formula = 2 * (nx * ny + ny * nz + nx * nz) - 4 * (nx + ny + nz) + 8;
                assert_eq!(s.len() as i64, formula);
            }
        }
    }

    #[test]
    fn empty_mask_has_no_surface() {
        assert!(extract_surface(&mask([3, 3, 3], |_| false)).is_empty());
    }
}
