use rayon::prelude::*;

use super::{Geometry, Orientation, ValueKind, VolumeError, VoxelGrid};

/// Lower end of the CT intensity window mapped to 0.
pub const HU_WINDOW_LOW: f64 = -200.0;
/// Upper end of the CT intensity window mapped to 1.
pub const HU_WINDOW_HIGH: f64 = 300.0;

/// Clamp-and-scale of the `[-200, 300]` HU window onto `[0, 1]`.
pub fn normalize_hu_value(v: f64) -> f64 {
    ((v - HU_WINDOW_LOW) / (HU_WINDOW_HIGH - HU_WINDOW_LOW)).clamp(0.0, 1.0)
}

/// Maps a CT volume onto the unit interval the predictors expect.
pub fn normalize_hu(grid: &VoxelGrid) -> VoxelGrid {
    grid.map(ValueKind::Probability, normalize_hu_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Resamples to a new voxel spacing, keeping the physical centre of the
/// volume fixed. Samples outside the source lattice are edge-clamped.
pub fn resample(grid: &VoxelGrid, target_spacing: [f64; 3], mode: Interpolation) -> Result<VoxelGrid, VolumeError> {
    if target_spacing.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(VolumeError::InvalidSpacing(target_spacing));
    }
    if grid.kind() == ValueKind::Label && mode != Interpolation::Nearest {
        return Err(VolumeError::KindMismatch(
            "label grids must be resampled with nearest-neighbour interpolation".into(),
        ));
    }
    let src = grid.geometry();
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((src.dims[a] as f64 * src.spacing[a] / target_spacing[a]).round() as usize).max(1);
    }

    let center = src.center();
    let mut origin = center;
    for j in 0..3 {
        let world = src.orientation.axes()[j];
        origin[world] -= f64::from(src.orientation.signs()[j]) * target_spacing[j] * (dims[j] as f64 - 1.0) / 2.0;
    }
    let geometry = Geometry {
        dims,
        spacing: target_spacing,
        origin,
        orientation: src.orientation,
    };

    let mut values = grid.values().to_vec();
    let mut cur = src.dims;
    for axis in 0..3 {
        let ratio = target_spacing[axis] / src.spacing[axis];
        if dims[axis] == cur[axis] && ratio == 1.0 {
            continue;
        }
        values = resample_axis(&values, cur, axis, dims[axis], ratio, mode);
        cur[axis] = dims[axis];
    }
    VoxelGrid::new(geometry, grid.kind(), values)
}

/// One separable pass along `axis`: output sample `i` reads the source at
/// continuous index `(n-1)/2 + (i - (m-1)/2) * ratio`, clamped to the edges.
fn resample_axis(
    values: &[f64],
    dims: [usize; 3],
    axis: usize,
    out_len: usize,
    ratio: f64,
    mode: Interpolation,
) -> Vec<f64> {
    let n = dims[axis];
    let half_in = (n as f64 - 1.0) / 2.0;
    let half_out = (out_len as f64 - 1.0) / 2.0;
    let taps: Vec<(usize, usize, f64)> = (0..out_len)
        .map(|i| {
            let x = (half_in + (i as f64 - half_out) * ratio).clamp(0.0, (n - 1) as f64);
            match mode {
                Interpolation::Nearest => {
                    let r = (x.round() as usize).min(n - 1);
                    (r, r, 0.0)
                }
                Interpolation::Trilinear => {
                    let lo = x.floor() as usize;
                    let hi = (lo + 1).min(n - 1);
                    (lo, hi, x - lo as f64)
                }
            }
        })
        .collect();

    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let (sx, sy) = (dims[0], dims[0] * dims[1]);
    let in_stride = [1, sx, sy][axis];
    let plane = out_dims[0] * out_dims[1];
    let mut out = vec![0.0; plane * out_dims[2]];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        for j in 0..out_dims[1] {
            for i in 0..out_dims[0] {
                let mut src = [i, j, k];
                src[axis] = 0;
                let base = src[0] + sx * src[1] + sy * src[2];
                let pos = [i, j, k][axis];
                let (lo, hi, w) = taps[pos];
                let a = values[base + lo * in_stride];
                slab[i + out_dims[0] * j] = if w == 0.0 {
                    a
                } else {
                    let b = values[base + hi * in_stride];
                    a + (b - a) * w
                };
            }
        }
    });
    out
}

/// How samples outside the source extent are handled by
/// [`resample_to_geometry`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutsidePolicy {
    /// Clamp to the nearest edge voxel.
    Clamp,
    /// Write a constant.
    Fill(f64),
}

/// Result of resampling onto a foreign lattice.
#[derive(Debug, Clone)]
pub struct Resampled {
    pub grid: VoxelGrid,
    /// Number of target voxels whose centres fell outside the source extent.
    pub outside_voxels: usize,
}

impl Resampled {
    pub fn outside_fraction(&self) -> f64 {
        self.outside_voxels as f64 / self.grid.len() as f64
    }
}

const SNAP_TOL: f64 = 1e-9;

/// Samples `grid` at the voxel centres of `target`, via physical coordinates.
///
/// A centre is outside when it lies more than half a voxel beyond the first or
/// last source voxel centre along any axis.
pub fn resample_to_geometry(
    grid: &VoxelGrid,
    target: &Geometry,
    mode: Interpolation,
    outside: OutsidePolicy,
) -> Result<Resampled, VolumeError> {
    target.validate()?;
    if grid.kind() == ValueKind::Label && mode != Interpolation::Nearest {
        return Err(VolumeError::KindMismatch(
            "label grids must be resampled with nearest-neighbour interpolation".into(),
        ));
    }
    let src = grid.geometry();
    if src == target {
        return Ok(Resampled {
            grid: grid.clone(),
            outside_voxels: 0,
        });
    }
    let n = src.dims;
    let vals = grid.values();
    let plane = target.dims[0] * target.dims[1];
    let mut out = vec![0.0; target.len()];
    let outside_voxels: usize = out
        .par_chunks_mut(plane)
        .enumerate()
        .map(|(k, slab)| {
            let mut outside_count = 0;
            for j in 0..target.dims[1] {
                for i in 0..target.dims[0] {
                    let world = target.physical([i as f64, j as f64, k as f64]);
                    let mut x = src.continuous_index(world);
                    let mut is_outside = false;
                    for a in 0..3 {
                        let r = x[a].round();
                        if (x[a] - r).abs() < SNAP_TOL {
                            x[a] = r;
                        }
                        if x[a] < -0.5 || x[a] > n[a] as f64 - 0.5 {
                            is_outside = true;
                        }
                        x[a] = x[a].clamp(0.0, (n[a] - 1) as f64);
                    }
                    let slot = &mut slab[i + target.dims[0] * j];
                    if is_outside {
                        outside_count += 1;
                        if let OutsidePolicy::Fill(v) = outside {
                            *slot = v;
                            continue;
                        }
                    }
                    *slot = match mode {
                        Interpolation::Nearest => {
                            let c = [0, 1, 2].map(|a| (x[a].round() as usize).min(n[a] - 1));
                            vals[src.index(c[0], c[1], c[2])]
                        }
                        Interpolation::Trilinear => trilinear(vals, n, x),
                    };
                }
            }
            outside_count
        })
        .sum();
    Ok(Resampled {
        grid: VoxelGrid::new(*target, grid.kind(), out)?,
        outside_voxels,
    })
}

fn trilinear(vals: &[f64], n: [usize; 3], x: [f64; 3]) -> f64 {
    let lo = [0, 1, 2].map(|a| x[a].floor() as usize);
    let hi = [0, 1, 2].map(|a| (lo[a] + 1).min(n[a] - 1));
    let w = [0, 1, 2].map(|a| x[a] - lo[a] as f64);
    let at = |i: usize, j: usize, k: usize| vals[i + n[0] * (j + n[1] * k)];
    // nested lerps, so equal corners reproduce their value exactly
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 || a == b { a } else { a + (b - a) * t };
    let along_x = |j: usize, k: usize| lerp(at(lo[0], j, k), at(hi[0], j, k), w[0]);
    let along_y = |k: usize| lerp(along_x(lo[1], k), along_x(hi[1], k), w[1]);
    lerp(along_y(lo[2]), along_y(hi[2]), w[2])
}

/// Permutes and flips the voxel lattice so that its direction matrix becomes
/// `target`. Every voxel keeps its physical position.
pub fn reorient(grid: &VoxelGrid, target: Orientation) -> VoxelGrid {
    let src = grid.geometry();
    if src.orientation == target {
        return grid.clone();
    }
    // target voxel axis j <- source voxel axis src_axis[j], reversed when signs differ
    let mut src_axis = [0usize; 3];
    let mut flip = [false; 3];
    for j in 0..3 {
        let world = target.axes()[j];
        let k = src.orientation.voxel_axis_for(world);
        src_axis[j] = k;
        flip[j] = src.orientation.signs()[k] != target.signs()[j];
    }
    let dims = [0, 1, 2].map(|j| src.dims[src_axis[j]]);
    let spacing = [0, 1, 2].map(|j| src.spacing[src_axis[j]]);

    let source_index = |t: [usize; 3]| {
        let mut s = [0usize; 3];
        for j in 0..3 {
            let k = src_axis[j];
            s[k] = if flip[j] { dims[j] - 1 - t[j] } else { t[j] };
        }
        s
    };
    let first = source_index([0, 0, 0]);
    let origin = src.physical([first[0] as f64, first[1] as f64, first[2] as f64]);
    let geometry = Geometry {
        dims,
        spacing,
        origin,
        orientation: target,
    };
    let vals = grid.values();
    let values: Vec<f64> = (0..geometry.len())
        .map(|idx| {
            let s = source_index(geometry.coords(idx));
            vals[src.index(s[0], s[1], s[2])]
        })
        .collect();
    VoxelGrid::new(geometry, grid.kind(), values).expect("reorientation preserves validity")
}

/// Reorients to the identity direction matrix (RAS voxel axes).
pub fn canonicalize_orientation(grid: &VoxelGrid) -> VoxelGrid {
    reorient(grid, Orientation::IDENTITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3], spacing: [f64; 3]) -> VoxelGrid {
        VoxelGrid::from_fn(Geometry::new(dims, spacing), ValueKind::Hu, |[i, j, k]| {
            (i * 7 + j * 13 + k * 31) as f64
        })
        .unwrap()
    }

    #[test]
    fn normalize_window_endpoints() {
        assert_eq!(normalize_hu_value(-200.0), 0.0);
        assert_eq!(normalize_hu_value(300.0), 1.0);
        assert_eq!(normalize_hu_value(50.0), (50.0 + 200.0) / 500.0);
        assert_eq!(normalize_hu_value(50.0), 0.5);
        assert_eq!(normalize_hu_value(-1000.0), 0.0);
        assert_eq!(normalize_hu_value(3000.0), 1.0);
    }

    #[test]
    fn normalize_keeps_geometry() {
        let g = ramp([3, 4, 5], [1.0, 1.0, 3.0]);
        let n = normalize_hu(&g);
        assert_eq!(n.geometry(), g.geometry());
        assert_eq!(n.kind(), ValueKind::Probability);
    }

    #[test]
    fn resample_identity_spacing() {
        let g = ramp([5, 6, 7], [0.8, 1.0, 3.0]);
        let r = resample(&g, [0.8, 1.0, 3.0], Interpolation::Trilinear).unwrap();
        assert_eq!(r, g);
    }

    #[test]
    fn resample_constant_field() {
        let g = VoxelGrid::filled(Geometry::new([7, 5, 4], [0.7, 1.3, 2.5]), ValueKind::Hu, 42.5).unwrap();
        for mode in [Interpolation::Trilinear, Interpolation::Nearest] {
            let r = resample(&g, [1.0, 1.0, 3.0], mode).unwrap();
            assert!(r.values().iter().all(|&v| v == 42.5));
        }
    }

    #[test]
    fn resample_dims_and_center() {
        let geom = Geometry::new([10, 10, 10], [1.0, 1.0, 1.0])
            .with_origin([5.0, -3.0, 2.0])
            .with_orientation(Orientation::new([0, 1, 2], [1, -1, 1]).unwrap());
        let g = VoxelGrid::filled(geom, ValueKind::Hu, 0.0).unwrap();
        let r = resample(&g, [2.0, 0.5, 3.0], Interpolation::Trilinear).unwrap();
        assert_eq!(r.dims(), [5, 20, 3]);
        let (a, b) = (g.geometry().center(), r.geometry().center());
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
        // tiny target: at least one voxel per axis
        let tiny = resample(&g, [100.0, 100.0, 100.0], Interpolation::Nearest).unwrap();
        assert_eq!(tiny.dims(), [1, 1, 1]);
    }

    #[test]
    fn resample_rejects_bad_spacing() {
        let g = ramp([2, 2, 2], [1.0; 3]);
        assert!(matches!(
            resample(&g, [1.0, 0.0, 1.0], Interpolation::Nearest),
            Err(VolumeError::InvalidSpacing(_))
        ));
        assert!(resample(&g, [1.0, -2.0, 1.0], Interpolation::Nearest).is_err());
    }

    #[test]
    fn labels_need_nearest() {
        let g = VoxelGrid::filled(Geometry::new([2, 2, 2], [1.0; 3]), ValueKind::Label, 1.0).unwrap();
        assert!(matches!(
            resample(&g, [0.5; 3], Interpolation::Trilinear),
            Err(VolumeError::KindMismatch(_))
        ));
    }

    #[test]
    fn canonicalize_flipped_x() {
        let geom = Geometry::new([4, 2, 2], [1.0, 1.0, 2.0])
            .with_origin([10.0, 0.0, 0.0])
            .with_orientation(Orientation::new([0, 1, 2], [-1, 1, 1]).unwrap());
        let g = VoxelGrid::from_fn(geom, ValueKind::Hu, |[i, _, _]| i as f64).unwrap();
        let c = canonicalize_orientation(&g);
        assert!(c.orientation().is_identity());
        assert_eq!(c.get(0, 0, 0), 3.0);
        assert_eq!(c.get(3, 1, 1), 0.0);
        // the marked voxel (source i=3) sits at x = 10 - 3 = 7 mm in both
        let p_src = g.geometry().physical([3.0, 0.0, 0.0]);
        let p_dst = c.geometry().physical([0.0, 0.0, 0.0]);
        assert_eq!(p_src, p_dst);
        assert_eq!(c.origin(), [7.0, 0.0, 0.0]);
    }

    #[test]
    fn canonicalize_idempotent_and_identity() {
        let g = ramp([3, 4, 5], [1.0, 2.0, 3.0]);
        assert_eq!(canonicalize_orientation(&g), g);
        let geom = *g.geometry();
        let o = Orientation::new([2, 0, 1], [-1, 1, -1]).unwrap();
        let g2 = VoxelGrid::new(geom.with_orientation(o), ValueKind::Hu, g.values().to_vec()).unwrap();
        let once = canonicalize_orientation(&g2);
        assert_eq!(canonicalize_orientation(&once), once);
        // back again
        assert_eq!(reorient(&once, o), g2);
    }

    #[test]
    fn resample_to_same_geometry_is_identity() {
        let g = ramp([4, 3, 2], [1.0; 3]);
        let r = resample_to_geometry(&g, g.geometry(), Interpolation::Trilinear, OutsidePolicy::Fill(0.0)).unwrap();
        assert_eq!(r.grid, g);
        assert_eq!(r.outside_voxels, 0);
    }

    #[test]
    fn resample_to_offset_geometry_reports_outside() {
        let g = VoxelGrid::filled(Geometry::new([4, 4, 4], [1.0; 3]), ValueKind::Gy, 50.0).unwrap();
        // shifted by 2 mm along x: the last two target columns are outside
        let target = Geometry::new([4, 4, 4], [1.0; 3]).with_origin([2.0, 0.0, 0.0]);
        let r = resample_to_geometry(&g, &target, Interpolation::Trilinear, OutsidePolicy::Fill(0.0)).unwrap();
        assert_eq!(r.outside_voxels, 2 * 16);
        assert_eq!(r.outside_fraction(), 0.5);
        assert_eq!(r.grid.get(0, 0, 0), 50.0);
        assert_eq!(r.grid.get(3, 0, 0), 0.0);
    }

    #[test]
    fn resample_to_geometry_handles_flips() {
        let geom = Geometry::new([5, 3, 2], [1.0, 1.0, 3.0]).with_origin([1.0, 2.0, 3.0]);
        let g = VoxelGrid::from_fn(geom, ValueKind::Hu, |[i, j, k]| (i + 10 * j + 100 * k) as f64).unwrap();
        let flipped = reorient(&g, Orientation::new([1, 0, 2], [-1, 1, -1]).unwrap());
        let back = resample_to_geometry(&flipped, &geom, Interpolation::Trilinear, OutsidePolicy::Clamp).unwrap();
        assert_eq!(back.grid.values(), g.values());
        assert_eq!(back.outside_voxels, 0);
    }
}
