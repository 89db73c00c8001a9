//! Exact anisotropic Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas transform over squared distances,
//! applied along x, then y, then z with each axis weighted by its spacing.

use crate::volume::{Geometry, ValueKind, VoxelGrid};

use super::MetricError;

/// Distance in mm from every voxel centre to the nearest seed voxel centre.
pub fn edt(seeds: &[[usize; 3]], dims: [usize; 3], spacing: [f64; 3]) -> Result<VoxelGrid, MetricError> {
    let sq = squared_edt(seeds, dims, spacing)?;
    let geometry = Geometry::new(dims, spacing);
    Ok(VoxelGrid::new(
        geometry,
        ValueKind::Distance,
        sq.into_iter().map(f64::sqrt).collect(),
    )?)
}

/// Squared distances (mm²), x-fastest.
pub fn squared_edt(seeds: &[[usize; 3]], dims: [usize; 3], spacing: [f64; 3]) -> Result<Vec<f64>, MetricError> {
    if seeds.is_empty() {
        return Err(MetricError::EmptySeeds);
    }
    if dims.contains(&0) {
        return Err(MetricError::SeedOutOfBounds { seed: seeds[0], dims });
    }
    let n: usize = dims.iter().product();
    let mut field = vec![f64::INFINITY; n];
    for &s in seeds {
        if (0..3).any(|a| s[a] >= dims[a]) {
            return Err(MetricError::SeedOutOfBounds { seed: s, dims });
        }
        field[s[0] + dims[0] * (s[1] + dims[1] * s[2])] = 0.0;
    }

    let strides = [1, dims[0], dims[0] * dims[1]];
    let longest = *dims.iter().max().unwrap();
    let mut scratch = Envelope::with_capacity(longest);
    for axis in 0..3 {
        let len = dims[axis];
        if len == 1 {
            continue;
        }
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[o2] {
            for a in 0..dims[o1] {
                let base = a * strides[o1] + b * strides[o2];
                scratch.transform(&mut field, base, strides[axis], len, spacing[axis]);
            }
        }
    }
    Ok(field)
}

struct Envelope {
    f: Vec<f64>,
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            f: vec![0.0; n],
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// 1D transform of one line: `out(q) = min_p ((q-p)*w)^2 + f(p)`.
    fn transform(&mut self, data: &mut [f64], base: usize, stride: usize, len: usize, w: f64) {
        let w2 = w * w;
        for q in 0..len {
            self.f[q] = data[base + q * stride];
        }
        let f = &self.f;
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k: isize = -1;
        for q in 0..len {
            if f[q].is_infinite() {
                continue;
            }
            loop {
                if k < 0 {
                    k = 0;
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                let p = v[k as usize];
                let s = intersection(f, w2, p, q);
                if s <= z[k as usize] {
                    k -= 1;
                    continue;
                }
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
        if k < 0 {
            // no finite sites on this line
            return;
        }
        let mut j = 0usize;
        for q in 0..len {
            while z[j + 1] < q as f64 {
                j += 1;
            }
            // (q-p)*w squared, then summed axis by axis, rounds the same way as
            // a direct distance; the next site guards near-ties at breakpoints
            let at = |p: usize| {
                let t = (q as f64 - p as f64) * w;
                t * t + f[p]
            };
            let mut best = at(v[j]);
            if (j as isize) < k {
                best = best.min(at(v[j + 1]));
            }
            data[base + q * stride] = best;
        }
    }
}

/// Abscissa where the parabolas rooted at `p < q` intersect.
#[inline]
fn intersection(f: &[f64], w2: f64, p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf))
}
