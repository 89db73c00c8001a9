use super::{average_ranks, check_finite, Covariate, StatsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n: usize,
    pub covariate: Option<Covariate>,
}

/// Spearman's rho as the Pearson correlation of average-rank vectors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: xs.len(),
        });
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let (rx, _) = average_ranks(xs);
    let (ry, _) = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Constant("first variable"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("second variable"));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        rho,
        n: xs.len(),
        covariate: None,
    })
}
