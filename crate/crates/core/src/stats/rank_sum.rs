use super::{
    average_ranks, check_finite, standard_normal_cdf, two_sided, Method, MethodChoice, StatsError, TestResult,
};

/// Largest combined sample size handled by the exact distribution.
pub const EXACT_RANK_SUM_MAX_N: usize = 20;

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test for two independent groups.
///
/// The reported statistic is `U` for `group_a`.
pub fn rank_sum_unpaired(group_a: &[f64], group_b: &[f64]) -> Result<TestResult, StatsError> {
    rank_sum_with(group_a, group_b, MethodChoice::Auto)
}

pub fn rank_sum_with(group_a: &[f64], group_b: &[f64], choice: MethodChoice) -> Result<TestResult, StatsError> {
    for g in [group_a, group_b] {
        if g.is_empty() {
            return Err(StatsError::TooFew { needed: 1, got: 0 });
        }
        check_finite(g)?;
    }
    let (na, nb) = (group_a.len(), group_b.len());
    let n = na + nb;
    let joint: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let (ranks, ties) = average_ranks(&joint);
    let r_a: f64 = ranks[..na].iter().sum();
    let u_a = r_a - (na * (na + 1)) as f64 / 2.0;

    let method = match choice {
        MethodChoice::Auto if n <= EXACT_RANK_SUM_MAX_N => Method::Exact,
        MethodChoice::Auto => Method::NormalApprox,
        MethodChoice::Exact => Method::Exact,
        MethodChoice::NormalApprox => Method::NormalApprox,
    };
    let p_value = match method {
        Method::Exact => exact_p(&ranks, na, r_a),
        Method::NormalApprox => normal_p(na, nb, &ties, r_a),
    };
    Ok(TestResult {
        statistic: u_a,
        p_value,
        p_corrected: None,
        n_effective: n,
        group_sizes: Some((na, nb)),
        method,
        family_size: None,
        degenerate: false,
    })
}

/// Null distribution of the group-a rank sum: all `C(n, na)` equally likely
/// assignments of the joint (doubled, integral) ranks, counted by DP over
/// subset size and sum.
fn exact_p(ranks: &[f64], na: usize, r_a: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled sum s
    let mut counts = vec![vec![0.0f64; total + 1]; na + 1];
    counts[0][0] = 1.0;
    let mut reach = 0;
    for (taken, &r) in doubled.iter().enumerate() {
        for k in (1..=na.min(taken + 1)).rev() {
            let (prev, cur) = counts.split_at_mut(k);
            let (prev, cur) = (&prev[k - 1], &mut cur[0]);
            for s in 0..=reach {
                if prev[s] != 0.0 {
                    cur[s + r] += prev[s];
                }
            }
        }
        reach += r;
    }
    let dist = &counts[na];
    let observed = (2.0 * r_a).round() as usize;
    let all: f64 = dist.iter().sum();
    let lower = dist[..=observed].iter().sum::<f64>() / all;
    let upper = dist[observed..].iter().sum::<f64>() / all;
    two_sided(lower, upper)
}

fn normal_p(na: usize, nb: usize, ties: &[usize], r_a: f64) -> f64 {
    let (naf, nbf) = (na as f64, nb as f64);
    let n = naf + nbf;
    let mean = naf * (n + 1.0) / 2.0;
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        naf * nbf / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let lower = standard_normal_cdf((r_a + 0.5 - mean) / sd);
    let upper = standard_normal_cdf((mean - r_a + 0.5) / sd);
    two_sided(lower, upper)
}
