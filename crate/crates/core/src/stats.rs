//! Goodness-of-fit statistics used by the sampler checks.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom (χ²) or effective sample size (KS).
    pub dof: f64,
}

/// Kolmogorov survival `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS test needs two non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let sq = ne.sqrt();
    Ok(TestOutcome {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
        dof: ne,
    })
}

/// Pearson χ² of observed transition counts against the rows of a
/// stochastic matrix. Cells with zero probability must have zero counts;
/// otherwise the p-value is 0.
pub fn chi_square_transitions(counts: &DMatrix<u64>, probs: &DMatrix<f64>) -> Result<TestOutcome> {
    if counts.shape() != probs.shape() {
        return Err(Error::Domain(
            "count and probability matrices differ in shape".into(),
        ));
    }
    let mut stat = 0.0;
    let mut dof = 0usize;
    let mut impossible = false;
    for r in 0..counts.nrows() {
        let total: u64 = counts.row(r).iter().sum();
        if total == 0 {
            continue;
        }
        let support = probs.row(r).iter().filter(|&&p| p > 0.0).count();
        dof += support.saturating_sub(1);
        for c in 0..counts.ncols() {
            let o = counts[(r, c)] as f64;
            let p = probs[(r, c)];
            if p > 0.0 {
                let e = total as f64 * p;
                stat += (o - e) * (o - e) / e;
            } else if o > 0.0 {
                impossible = true;
            }
        }
    }
    let p_value = if impossible {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
        1.0 - dist.cdf(stat)
    };
    Ok(TestOutcome {
        statistic: stat,
        p_value,
        dof: dof as f64,
    })
}
