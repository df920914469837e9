//! Mittag-Leffler functions on the negative real axis and the holding-time
//! distribution built on them.
//!
//! `E_{α,β}(z) = Σ_k z^k / Γ(αk + β)` is evaluated by one of three methods,
//! chosen from `α` and `|z|`:
//!
//! * Taylor series with compensated summation while the alternating terms
//!   stay within a bounded cancellation budget (`|z| ≤ min(5, 10^α)`),
//! * the algebraic asymptotic expansion `Σ_{k≥1} (−1)^{k+1} |z|^{−k} / Γ(β − αk)`
//!   once its optimally truncated remainder falls below double precision,
//! * otherwise the Bromwich integral of `s^{α−β} / (s^α + |z|)` on a parabolic
//!   Hankel contour, discretized by the trapezoid rule.
//!
//! `α = β = 1` short-circuits to `exp`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{gamma, ln_gamma, rgamma};

/// Parameters of `E_{α,β}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlParams {
    pub alpha: f64,
    pub beta: f64,
}

impl MlParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.check()?;
        Ok(p)
    }

    /// One-parameter function `E_α = E_{α,1}`.
    pub fn one(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Domain(format!(
                "alpha = {} outside (0, 1]",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!(
                "beta = {} must be positive",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Evaluation route, exposed so the regime boundaries can be tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlMethod {
    Exponential,
    Series,
    Asymptotic,
    Contour,
}

/// Largest |z| handled by the Taylor series.
pub fn series_limit(alpha: f64) -> f64 {
    10f64.powf(alpha).min(5.0)
}

/// `E_{α,β}(z)` for `z ≤ 0`.
pub fn mittag_leffler(params: MlParams, z: f64) -> Result<f64> {
    params.check()?;
    if !(z <= 0.0) {
        return Err(Error::Domain(format!("z = {z} must be <= 0")));
    }
    let (value, _) = evaluate(params.alpha, params.beta, -z);
    Ok(value)
}

/// Evaluate with an explicitly chosen method. `None` when the method does
/// not apply (asymptotic expansion not yet accurate, exp for α ≠ 1).
pub fn mittag_leffler_with(params: MlParams, z: f64, method: MlMethod) -> Result<Option<f64>> {
    params.check()?;
    if !(z <= 0.0) {
        return Err(Error::Domain(format!("z = {z} must be <= 0")));
    }
    let (a, b, x) = (params.alpha, params.beta, -z);
    Ok(match method {
        MlMethod::Exponential => (a == 1.0 && b == 1.0).then(|| z.exp()),
        MlMethod::Series => Some(series(a, b, x)),
        MlMethod::Asymptotic => asymptotic(a, b, x),
        MlMethod::Contour => Some(contour(a, b, x)),
    })
}

/// Method the dispatcher would pick for `(α, β, z)`.
pub fn method_for(params: MlParams, z: f64) -> MlMethod {
    evaluate(params.alpha, params.beta, -z).1
}

fn evaluate(alpha: f64, beta: f64, x: f64) -> (f64, MlMethod) {
    if alpha == 1.0 && beta == 1.0 {
        return ((-x).exp(), MlMethod::Exponential);
    }
    if x == 0.0 {
        return (rgamma(beta), MlMethod::Series);
    }
    if x <= series_limit(alpha) {
        return (series(alpha, beta, x), MlMethod::Series);
    }
    if alpha < 1.0 {
        if let Some(v) = asymptotic(alpha, beta, x) {
            return (v, MlMethod::Asymptotic);
        }
    }
    (contour(alpha, beta, x), MlMethod::Contour)
}

/// Kahan-summed Taylor series of `E_{α,β}(−x)`.
fn series(alpha: f64, beta: f64, x: f64) -> f64 {
    let ln_x = x.ln();
    let mut sum = rgamma(beta);
    let mut comp = 0.0;
    let mut prev_abs = f64::INFINITY;
    for k in 1..10_000usize {
        let arg = alpha * k as f64 + beta;
        let mag = (k as f64 * ln_x - ln_gamma(arg)).exp();
        let term = if k % 2 == 0 { mag } else { -mag };
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        // terms grow until k ~ x^{1/α}; stop only on the decreasing tail
        if mag < prev_abs && mag < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        prev_abs = mag;
    }
    sum
}

/// Optimally truncated asymptotic expansion; `None` if its smallest term is
/// not below double precision relative to the partial sum.
fn asymptotic(alpha: f64, beta: f64, x: f64) -> Option<f64> {
    // Truncation is decided on the envelope Γ(1−β+αk) x^{−k} / π, which bounds
    // |x^{−k} / Γ(β−αk)| by reflection. The raw terms can be spuriously tiny
    // when β−αk lands near a pole of Γ.
    let lnx = x.ln();
    let mut best = f64::INFINITY;
    let mut best_k = 0;
    let mut terms = Vec::with_capacity(64);
    for k in 1..=200usize {
        let kf = k as f64;
        let c = rgamma(beta - alpha * kf);
        let mag = (-kf * lnx).exp();
        let term = if k % 2 == 1 { c * mag } else { -c * mag };
        let a = 1.0 - beta + alpha * kf;
        let env = if a > 0.0 {
            (ln_gamma(a) - kf * lnx).exp() / PI
        } else {
            term.abs()
        };
        terms.push(term);
        if env < best {
            best = env;
            best_k = k;
        } else if env > 1e6 * best {
            break;
        }
    }
    let sum: f64 = terms[..best_k.saturating_sub(1)].iter().sum();
    (sum != 0.0 && best < 1e-16 * sum.abs()).then_some(sum)
}

const CONTOUR_NODES: usize = 40;

/// Bromwich inversion at t = 1 of `s^{α−β}/(s^α + x)` on the parabola
/// `s(θ) = N(0.1309 − 0.1194 θ² + 0.25 iθ)` with N trapezoid nodes.
fn contour(alpha: f64, beta: f64, x: f64) -> f64 {
    let n = CONTOUR_NODES as f64;
    let h = 2.0 * PI / n;
    let mut acc = 0.0;
    // nodes θ_k = (k + 1/2)h on (0, π); the mirrored half contributes the conjugate
    for k in 0..CONTOUR_NODES / 2 {
        let theta = (k as f64 + 0.5) * h;
        let s = Complex64::new(n * (0.1309 - 0.1194 * theta * theta), n * 0.25 * theta);
        let ds = Complex64::new(-n * 0.2388 * theta, n * 0.25);
        let f = s.powf(alpha - beta) / (s.powf(alpha) + x);
        acc += (s.exp() * f * ds).im;
    }
    // (1/2πi) ∫ ... dθ over (−π, π) = (2h/2π) Σ Im(...) over the upper half
    acc * h / PI
}

fn check_rate(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "rate lambda = {lambda} must be positive"
        )))
    }
}

/// Survival function `E_α(−λ t^α)` of the Mittag-Leffler holding time.
pub fn ml_survival(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    let p = MlParams::one(alpha)?;
    check_rate(lambda)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    Ok(mittag_leffler(p, -lambda * t.powf(alpha))?.clamp(0.0, 1.0))
}

/// Density `λ t^{α−1} E_{α,α}(−λ t^α)`.
pub fn ml_density(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    MlParams::one(alpha)?;
    check_rate(lambda)?;
    if alpha == 1.0 {
        if t < 0.0 {
            return Err(Error::Domain(format!("t = {t} must be >= 0")));
        }
        return Ok(lambda * (-lambda * t).exp());
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "density is singular at t = 0 for alpha = {alpha} < 1 (got t = {t})"
        )));
    }
    let e = mittag_leffler(MlParams { alpha, beta: alpha }, -lambda * t.powf(alpha))?;
    Ok((lambda * t.powf(alpha - 1.0) * e).max(0.0))
}

/// `∫_0^t E_α(−λ s^α) ds = t E_{α,2}(−λ t^α)`.
pub fn ml_survival_integral(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    MlParams::one(alpha)?;
    check_rate(lambda)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if alpha == 1.0 {
        return Ok(-(-lambda * t).exp_m1() / lambda);
    }
    Ok(t * mittag_leffler(MlParams { alpha, beta: 2.0 }, -lambda * t.powf(alpha))?)
}

/// Leading power-law term `t^{−α} / (λ Γ(1−α))` of the survival function.
pub fn ml_tail_asymptote(alpha: f64, lambda: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "tail asymptote needs alpha in (0, 1), got {alpha}"
        )));
    }
    check_rate(lambda)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t = {t} must be > 0")));
    }
    Ok(t.powf(-alpha) / (lambda * gamma(1.0 - alpha)))
}
