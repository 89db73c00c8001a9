//! Nonparametric tests, rank correlation and multiple-comparison correction.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

mod correlation;
mod rank_sum;
mod signed_rank;

pub use correlation::{spearman, CorrelationResult};
pub use rank_sum::{rank_sum_unpaired, rank_sum_with, EXACT_RANK_SUM_MAX_N};
pub use signed_rank::{signed_rank_differences, wilcoxon_signed_rank, EXACT_SIGNED_RANK_MAX_N};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite observation")]
    NonFinite,
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
}

/// How a p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NormalApprox,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NormalApprox => "normal_approx",
        }
    }
}

/// Which p-value computation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Exact below the size threshold, normal approximation above.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub p_corrected: Option<f64>,
    pub n_effective: usize,
    /// Group sizes for unpaired tests.
    pub group_sizes: Option<(usize, usize)>,
    pub method: Method,
    pub family_size: Option<usize>,
    /// All paired differences were zero.
    pub degenerate: bool,
}

impl TestResult {
    pub fn with_bonferroni(mut self, family_size: usize) -> Self {
        self.p_corrected = Some(bonferroni(self.p_value, family_size));
        self.family_size = Some(family_size);
        self
    }
}

/// Bonferroni adjustment: `min(1, m * p)`.
pub fn bonferroni(p: f64, family_size: usize) -> f64 {
    (family_size as f64 * p).min(1.0)
}

/// Significance marker: `*` < 0.05, `**` < 0.01, `***` < 0.001, `****` < 0.0001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.0001 {
        "****"
    } else if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Mean and sample standard deviation (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Absent for a single value.
    pub std: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Result<Summary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Summary { n, mean, std })
}

/// Patient covariates used for rank correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Covariate {
    Age,
    Bmi,
}

impl Covariate {
    pub fn as_str(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Bmi => "bmi",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Covariate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "age" => Ok(Covariate::Age),
            "bmi" => Ok(Covariate::Bmi),
            _ => Err(format!("unknown covariate {s:?} (expected age or bmi)")),
        }
    }
}

/// Average (mid) ranks, 1-based, plus the sizes of tie groups with more than
/// one member.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub(crate) fn standard_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Two-sided p by doubling the smaller tail, capped at 1.
pub(crate) fn two_sided(lower: f64, upper: f64) -> f64 {
    (2.0 * lower.min(upper)).min(1.0)
}
