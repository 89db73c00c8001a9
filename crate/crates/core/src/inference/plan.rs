use super::InferenceError;

/// Default patch edge length in voxels.
pub const DEFAULT_PATCH: [usize; 3] = [128, 128, 128];
/// Default fraction of overlap between neighbouring windows.
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Tiling of a (reflect-padded) volume into fixed-size windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub dims: [usize; 3],
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    /// Per-axis window starts in padded coordinates, ascending.
    pub axis_starts: [Vec<usize>; 3],
    /// `(lo, hi)` reflect padding per axis.
    pub padding: [(usize, usize); 3],
}

impl WindowPlan {
    pub fn padded_dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.dims[a] + self.padding[a].0 + self.padding[a].1)
    }

    /// All window starts in canonical order (x fastest, then y, then z).
    pub fn starts(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(self.len());
        for &z in &self.axis_starts[2] {
            for &y in &self.axis_starts[1] {
                for &x in &self.axis_starts[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.axis_starts.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of windows covering each padded index along `axis`.
    pub fn axis_coverage(&self, axis: usize) -> Vec<usize> {
        let mut c = vec![0; self.padded_dims()[axis]];
        for &s in &self.axis_starts[axis] {
            for v in &mut c[s..s + self.patch[axis]] {
                *v += 1;
            }
        }
        c
    }
}

/// Plans windows with `stride = floor(patch * (1 - overlap))`; the last start
/// per axis is clamped so the final window ends at the volume edge. Axes
/// shorter than the patch are reflect-padded (split evenly, extra voxel on the
/// high side).
pub fn plan_windows(dims: [usize; 3], patch: [usize; 3], overlap: f64) -> Result<WindowPlan, InferenceError> {
    if patch.contains(&0) {
        return Err(InferenceError::InvalidPatch(patch));
    }
    if dims.contains(&0) {
        return Err(InferenceError::PlanMismatch(format!("dims {dims:?} must be positive")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(InferenceError::InvalidOverlap(overlap));
    }
    let mut stride = [0; 3];
    let mut padding = [(0, 0); 3];
    let mut axis_starts: [Vec<usize>; 3] = Default::default();
    for a in 0..3 {
        stride[a] = ((patch[a] as f64 * (1.0 - overlap)).floor() as usize).max(1);
        let total_pad = patch[a].saturating_sub(dims[a]);
        padding[a] = (total_pad / 2, total_pad - total_pad / 2);
        let padded = dims[a] + total_pad;
        let last = padded - patch[a];
        let mut starts: Vec<usize> = (0..).map(|i| i * stride[a]).take_while(|&s| s < last).collect();
        starts.push(last);
        axis_starts[a] = starts;
    }
    Ok(WindowPlan {
        dims,
        patch,
        stride,
        axis_starts,
        padding,
    })
}

/// Index into `0..n` for a possibly out-of-range position, mirroring about the
/// edge voxels without repeating them.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}
