use super::{
    average_ranks, check_finite, standard_normal_cdf, two_sided, Method, MethodChoice, StatsError, TestResult,
};

/// Largest number of non-zero differences handled by the exact distribution.
pub const EXACT_SIGNED_RANK_MAX_N: usize = 25;

/// Two-sided paired Wilcoxon signed-rank test on `x - y`.
///
/// Zero differences are dropped before ranking. Tied absolute differences get
/// average ranks and the exact null distribution is built over that rank
/// multiset.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<TestResult, StatsError> {
    let d: Vec<f64> = pairs.iter().map(|(x, y)| x - y).collect();
    signed_rank_differences(&d, MethodChoice::Auto)
}

/// Signed-rank test on precomputed differences with an explicit method.
pub fn signed_rank_differences(differences: &[f64], choice: MethodChoice) -> Result<TestResult, StatsError> {
    if differences.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    check_finite(differences)?;
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            p_corrected: None,
            n_effective: 0,
            group_sizes: None,
            method: Method::Exact,
            family_size: None,
            degenerate: true,
        });
    }

    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();

    let method = match choice {
        MethodChoice::Auto if n <= EXACT_SIGNED_RANK_MAX_N => Method::Exact,
        MethodChoice::Auto => Method::NormalApprox,
        MethodChoice::Exact => Method::Exact,
        MethodChoice::NormalApprox => Method::NormalApprox,
    };
    let p_value = match method {
        Method::Exact => exact_p(&ranks, w_plus),
        Method::NormalApprox => normal_p(n, &ties, w_plus),
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value,
        p_corrected: None,
        n_effective: n,
        group_sizes: None,
        method,
        family_size: None,
        degenerate: false,
    })
}

/// Null distribution of W+ by DP over doubled (integral) ranks: each rank is
/// independently counted or not with probability 1/2.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2.0 * w_plus).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum::<f64>() / all;
    let upper: f64 = counts[observed..].iter().sum::<f64>() / all;
    two_sided(lower, upper)
}

/// Normal approximation with tie-corrected variance and 0.5 continuity
/// correction applied to each tail.
fn normal_p(n: usize, ties: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let lower = standard_normal_cdf((w_plus + 0.5 - mean) / sd);
    let upper = standard_normal_cdf((mean - w_plus + 0.5) / sd);
    two_sided(lower, upper)
}
