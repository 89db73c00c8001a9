//! Brute-force oracles and fixture generators shared by the integration tests.
#![allow(dead_code)]

use cardioseg::metrics::BinaryMask;
use cardioseg::volume::Geometry;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn idx(dims: [usize; 3], c: [usize; 3]) -> usize {
    c[0] + dims[0] * (c[1] + dims[1] * c[2])
}

pub fn coords(dims: [usize; 3], i: usize) -> [usize; 3] {
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

pub fn dist2(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let d = (a[k] as f64 - b[k] as f64) * spacing[k];
            d * d
        })
        .sum()
}

/// Distance from every voxel to its nearest seed by exhaustive search.
pub fn brute_edt(seeds: &[[usize; 3]], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let n = dims.iter().product();
    (0..n)
        .map(|i| {
            let c = coords(dims, i);
            seeds
                .iter()
                .map(|&s| dist2(c, s, spacing))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Foreground voxels with at least one 6-neighbour that is background or
/// outside the grid.
pub fn brute_surface(voxels: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..voxels.len() {
        if !voxels[i] {
            continue;
        }
        let c = coords(dims, i);
        let mut edge = false;
        for axis in 0..3 {
            for step in [-1i64, 1] {
                let v = c[axis] as i64 + step;
                if v < 0 || v >= dims[axis] as i64 {
                    edge = true;
                } else {
                    let mut nb = c;
                    nb[axis] = v as usize;
                    edge |= !voxels[idx(dims, nb)];
                }
            }
        }
        if edge {
            out.push(c);
        }
    }
    out
}

/// Nearest-rank 95th percentile: the ceil(0.95 n)-th smallest value.
pub fn p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = (95 * v.len()).div_ceil(100).max(1);
    v[rank - 1]
}

/// HD95 from all pairwise surface distances.
pub fn brute_hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Option<f64> {
    let sa = brute_surface(a, dims);
    let sb = brute_surface(b, dims);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        p95(from
            .iter()
            .map(|&p| {
                to.iter()
                    .map(|&q| dist2(p, q, spacing))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect())
    };
    Some(directed(&sa, &sb).max(directed(&sb, &sa)))
}

/// Mid-ranks by direct counting.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p by enumerating all 2^n sign patterns of the
/// non-zero differences.
pub fn enumerate_signed_rank_p(d: &[f64]) -> f64 {
    let nz: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    if nz.is_empty() {
        return 1.0;
    }
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let r = mid_ranks(&abs);
    // doubled ranks are integral, so comparisons are exact
    let r2: Vec<i64> = r.iter().map(|x| (2.0 * x).round() as i64).collect();
    let observed: i64 = nz.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: i64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
        le += u64::from(w <= observed);
        ge += u64::from(w >= observed);
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
}

fn subsets(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::new(), f);
}

/// Two-sided rank-sum p by enumerating all C(n, |a|) group assignments.
pub fn enumerate_rank_sum_p(a: &[f64], b: &[f64]) -> f64 {
    let joint: Vec<f64> = a.iter().chain(b).copied().collect();
    let r2: Vec<i64> = mid_ranks(&joint).iter().map(|x| (2.0 * x).round() as i64).collect();
    let observed: i64 = r2[..a.len()].iter().sum();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    subsets(joint.len(), a.len(), &mut |s| {
        let w: i64 = s.iter().map(|&i| r2[i]).sum();
        le += u64::from(w <= observed);
        ge += u64::from(w >= observed);
        total += 1;
    });
    let total = total as f64;
    (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
}

pub fn random_spacing(rng: &mut ChaCha8Rng) -> [f64; 3] {
    match rng.gen_range(0..4) {
        0 => [1.0, 1.0, 3.0],
        1 => [1.0, 1.0, 1.0],
        2 => [0.8, 0.8, 2.5],
        _ => [0.0; 3].map(|_| rng.gen_range(0.5..3.5)),
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [0; 3].map(|_| rng.gen_range(1..=max))
}

/// Union of a few random boxes and balls, so masks have realistic surfaces.
pub fn random_blob(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Vec<bool> {
    let n: usize = dims.iter().product();
    let mut v = vec![false; n];
    for _ in 0..rng.gen_range(1..=3) {
        let c: [f64; 3] = [0, 1, 2].map(|a| rng.gen_range(0.0..dims[a] as f64));
        let r: [f64; 3] = [0, 1, 2].map(|a| rng.gen_range(0.5..(dims[a] as f64 / 2.0).max(1.0)));
        let ball = rng.gen_bool(0.5);
        for (i, slot) in v.iter_mut().enumerate() {
            let p = coords(dims, i);
            let q: Vec<f64> = (0..3).map(|a| (p[a] as f64 - c[a]) / r[a]).collect();
            let inside = if ball {
                q.iter().map(|x| x * x).sum::<f64>() <= 1.0
            } else {
                q.iter().all(|x| x.abs() <= 1.0)
            };
            *slot |= inside;
        }
    }
    v
}

pub fn mask(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<bool>) -> BinaryMask {
    BinaryMask::new(Geometry::new(dims, spacing), voxels).expect("valid mask")
}
