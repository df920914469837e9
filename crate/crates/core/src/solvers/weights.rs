//! Discrete fractional operators on a uniform grid, in units where the step
//! is 1. Callers rescale by `dt^{−α}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::gamma;

use super::BackwardScheme;

/// Grünwald–Letnikov weights `w_k = (−1)^k binom(β, k)`, k = 0..=n.
pub(crate) fn gl_weights(beta: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0);
    for k in 1..=n {
        let prev = w[k - 1];
        w.push(prev * (1.0 - (beta + 1.0) / k as f64));
    }
    w
}

/// Caputo derivative of order α at `τ_n = n − 1 + θ`:
/// `D_n u = Σ_{l<n} c^{(n)}_l (u_{n−l} − u_{n−l−1}) + Σ_m W_{n,m} (u_m − u_0)`.
///
/// The `W` terms are starting corrections that make the operator exact on
/// `t^s` for each `s` in `exponents`, absorbing the non-smooth start of the
/// solution.
#[derive(Debug, Clone)]
pub(crate) struct CaputoOperator {
    pub alpha: f64,
    pub theta: f64,
    first: f64,
    c0: f64,
    mid: Vec<f64>,
    tail: Vec<f64>,
    pub exponents: Vec<f64>,
    /// `corr[n][m]` multiplies `u_{m+1} − u_0`
    corr: Vec<Vec<f64>>,
}

impl CaputoOperator {
    pub fn new(
        scheme: BackwardScheme,
        alpha: f64,
        n_steps: usize,
        exponents: &[f64],
    ) -> Result<Self> {
        let scale = 1.0 / gamma(2.0 - alpha);
        let p = 1.0 - alpha;
        let mut op = match scheme {
            BackwardScheme::L1Caputo => {
                let b: Vec<f64> = (0..n_steps.max(1))
                    .map(|l| (((l + 1) as f64).powf(p) - (l as f64).powf(p)) * scale)
                    .collect();
                Self {
                    alpha,
                    theta: 1.0,
                    first: b[0],
                    c0: b[0],
                    mid: b.clone(),
                    tail: b,
                    exponents: Vec::new(),
                    corr: Vec::new(),
                }
            }
            BackwardScheme::L21Sigma => {
                let th = 1.0 - alpha / 2.0;
                let n = n_steps.max(2);
                let a: Vec<f64> = (0..=n)
                    .map(|l| {
                        if l == 0 {
                            th.powf(p)
                        } else {
                            (l as f64 + th).powf(p) - (l as f64 - 1.0 + th).powf(p)
                        }
                    })
                    .collect();
                let b: Vec<f64> = (0..=n)
                    .map(|l| {
                        if l == 0 {
                            return 0.0;
                        }
                        let (hi, lo) = (l as f64 + th, l as f64 - 1.0 + th);
                        (hi.powf(2.0 - alpha) - lo.powf(2.0 - alpha)) / (2.0 - alpha)
                            - (hi.powf(p) + lo.powf(p)) / 2.0
                    })
                    .collect();
                let mid = (0..n)
                    .map(|l| {
                        if l == 0 {
                            0.0
                        } else {
                            (a[l] + b[l + 1] - b[l]) * scale
                        }
                    })
                    .collect();
                let tail = (0..n).map(|l| (a[l] - b[l]) * scale).collect();
                Self {
                    alpha,
                    theta: th,
                    first: a[0] * scale,
                    c0: (a[0] + b[1]) * scale,
                    mid,
                    tail,
                    exponents: Vec::new(),
                    corr: Vec::new(),
                }
            }
        };
        op.set_corrections(exponents, n_steps)?;
        Ok(op)
    }

    /// `c^{(n)}_l` for `0 ≤ l < n`.
    #[inline]
    pub fn coeff(&self, n: usize, l: usize) -> f64 {
        if n == 1 {
            self.first
        } else if l == 0 {
            self.c0
        } else if l == n - 1 {
            self.tail[l]
        } else {
            self.mid[l]
        }
    }

    #[inline]
    pub fn corrections(&self, n: usize) -> &[f64] {
        if self.exponents.is_empty() {
            &[]
        } else {
            &self.corr[n]
        }
    }

    /// Applies the full operator to `u_0..=u_n`.
    #[cfg(test)]
    pub fn apply(&self, n: usize, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for l in 0..n {
            acc += self.coeff(n, l) * (u[n - l] - u[n - l - 1]);
        }
        for (m, w) in self.corrections(n).iter().enumerate() {
            acc += w * (u[m + 1] - u[0]);
        }
        acc
    }

    /// Plain convolution weights: `c^{(n)}_l = c[l]` at `t_n`, no shift.
    pub fn from_weights(alpha: f64, c: Vec<f64>) -> Self {
        Self {
            alpha,
            theta: 1.0,
            first: c[0],
            c0: c[0],
            mid: c.clone(),
            tail: c,
            exponents: Vec::new(),
            corr: Vec::new(),
        }
    }

    fn set_corrections(&mut self, exponents: &[f64], n_steps: usize) -> Result<()> {
        if exponents.is_empty() {
            return Ok(());
        }
        let basis: Vec<Vec<f64>> = exponents
            .iter()
            .map(|&s| (0..=n_steps).map(|k| (k as f64).powf(s)).collect())
            .collect();
        let target: Vec<Vec<f64>> = exponents
            .iter()
            .map(|&s| {
                let c = gamma(1.0 + s) / gamma(1.0 + s - self.alpha);
                (0..=n_steps)
                    .map(|n| {
                        if n == 0 {
                            0.0
                        } else {
                            c * (n as f64 - 1.0 + self.theta).powf(s - self.alpha)
                        }
                    })
                    .collect()
            })
            .collect();
        self.set_corrections_on(&basis, &target, exponents)
    }

    /// Corrections making the operator reproduce `target[j][n]` on the node
    /// values `basis[j]`, for every step n. `labels` identify the basis.
    pub fn set_corrections_on(
        &mut self,
        basis: &[Vec<f64>],
        target: &[Vec<f64>],
        labels: &[f64],
    ) -> Result<()> {
        let m = basis.len();
        if m == 0 {
            return Ok(());
        }
        let n_steps = basis[0].len() - 1;
        let v = DMatrix::from_fn(m, m, |j, k| basis[j][k + 1] - basis[j][0]);
        let lu = v.lu();
        let mut corr = vec![Vec::new(); n_steps + 1];
        for n in 1..=n_steps {
            let r = DVector::from_fn(m, |j, _| {
                let mut l_n = 0.0;
                for l in 0..n {
                    l_n += self.coeff(n, l) * (basis[j][n - l] - basis[j][n - l - 1]);
                }
                target[j][n] - l_n
            });
            let w = lu.solve(&r).ok_or_else(|| {
                Error::Numeric(format!("starting weights singular for basis {labels:?}"))
            })?;
            corr[n] = w.iter().copied().collect();
        }
        self.exponents = labels.to_vec();
        self.corr = corr;
        Ok(())
    }
}

/// Non-integer exponents of the leading terms `t^{α_i}`, `t^{α_i+α_k}`, …
/// in row `i` of a fractional system, smallest first.
pub(crate) fn starting_exponents(alpha_i: f64, alphas: &[f64], max: usize) -> Vec<f64> {
    if alpha_i >= 1.0 || max == 0 {
        return Vec::new();
    }
    let mut cands = vec![alpha_i];
    for &a in alphas {
        cands.push(alpha_i + a);
        for &b in alphas {
            cands.push(alpha_i + a + b);
        }
    }
    cands.retain(|&s| s < 2.0 && (s - s.round()).abs() > 1e-6);
    cands.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for s in cands {
        if out.last().map_or(true, |&l| s - l > 0.05) {
            out.push(s);
        }
        if out.len() == max {
            break;
        }
    }
    out
}
