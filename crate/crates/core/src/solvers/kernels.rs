//! Per-interval kernel moments for product integration, and the kernels
//! each holding law contributes: the potential density `u` (forward), the
//! Lévy tail `ν̄` (backward) and the renewal function `U = ∫u`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::laplace::{invert_laplace_scalar, InversionConfig};
use crate::process::{BuiltinExponent, HoldingLaw};
use crate::special::gamma;

/// `m0[k] = ∫_{t_k}^{t_{k+1}} κ`, `m1[k] = ∫_{t_k}^{t_{k+1}} (s − t_k)/dt κ(s) ds`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
}

impl Moments {
    /// From `K0 = ∫_0^t κ` and `K1 = ∫_0^t K0`.
    fn from_antiderivatives(
        k0: impl Fn(f64) -> f64,
        k1: impl Fn(f64) -> f64,
        dt: f64,
        n: usize,
    ) -> Self {
        let a0: Vec<f64> = (0..=n).map(|k| k0(k as f64 * dt)).collect();
        let a1: Vec<f64> = (0..=n).map(|k| k1(k as f64 * dt)).collect();
        Self::from_tables(&a0, &a1, dt)
    }

    fn from_tables(a0: &[f64], a1: &[f64], dt: f64) -> Self {
        let n = a0.len() - 1;
        let m0 = (0..n).map(|k| a0[k + 1] - a0[k]).collect();
        let m1 = (0..n)
            .map(|k| a0[k + 1] - (a1[k + 1] - a1[k]) / dt)
            .collect();
        Self { m0, m1 }
    }

    fn by_quadrature(f: &dyn Fn(f64) -> f64, dt: f64, n: usize, want_m1: bool) -> Result<Self> {
        let mut m0 = Vec::with_capacity(n);
        let mut m1 = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
            let (r0, r1) = if k == 0 {
                // s = dt v⁴ tames the singularity at the origin
                let g = |v: f64| 4.0 * dt * v.powi(3) * f(dt * v.powi(4));
                (
                    quadrature::double_exponential::integrate(g, 0.0, 1.0, 1e-14).integral,
                    quadrature::double_exponential::integrate(
                        |v| v.powi(4) * g(v),
                        0.0,
                        1.0,
                        1e-14,
                    )
                    .integral,
                )
            } else {
                (
                    quadrature::double_exponential::integrate(f, a, b, 1e-14).integral,
                    quadrature::double_exponential::integrate(|s| (s - a) / dt * f(s), a, b, 1e-14)
                        .integral,
                )
            };
            if !(r0.is_finite() && r1.is_finite()) {
                return Err(Error::Numeric(format!(
                    "kernel quadrature failed on [{a}, {b}]"
                )));
            }
            m0.push(r0);
            if want_m1 {
                m1.push(r1);
            }
        }
        Ok(Self { m0, m1 })
    }
}

fn stable_index(law: &HoldingLaw) -> Option<f64> {
    match law {
        HoldingLaw::Exponential { .. } => Some(1.0),
        HoldingLaw::MittagLeffler { alpha, .. } => Some(*alpha),
        HoldingLaw::GeneralSubordinated(s) => match s.builtin {
            Some(BuiltinExponent::Stable { alpha }) => Some(alpha),
            _ => None,
        },
    }
}

/// Moments of the potential density `u`.
pub(crate) fn potential_moments(
    law: &HoldingLaw,
    state: usize,
    dt: f64,
    n: usize,
) -> Result<Moments> {
    if let Some(a) = stable_index(law) {
        let (g1, g2) = (gamma(1.0 + a), gamma(2.0 + a));
        return Ok(Moments::from_antiderivatives(
            move |t| t.powf(a) / g1,
            move |t| t.powf(1.0 + a) / g2,
            dt,
            n,
        ));
    }
    let HoldingLaw::GeneralSubordinated(s) = law else {
        unreachable!()
    };
    if s.builtin.is_some() {
        // ∫u and ∫∫u have transforms 1/(s f) and 1/(s² f)
        let a0 = invert_on_grid(&|z| 1.0 / (z * law.laplace_exponent(z)), dt, n)?;
        let a1 = invert_on_grid(&|z| 1.0 / (z * z * law.laplace_exponent(z)), dt, n)?;
        return Ok(Moments::from_tables(&a0, &a1, dt));
    }
    let u = s.potential_density.as_ref().ok_or_else(|| {
        Error::Hypothesis(format!("state {state}: potential density u is required"))
    })?;
    Moments::by_quadrature(u.as_ref(), dt, n, true)
}

/// `ω_k = ∫_{t_k}^{t_{k+1}} ν̄`.
pub(crate) fn tail_moments(law: &HoldingLaw, state: usize, dt: f64, n: usize) -> Result<Vec<f64>> {
    if let Some(a) = stable_index(law) {
        if a >= 1.0 {
            return Err(Error::Hypothesis(format!(
                "state {state}: the Volterra backward solver needs an infinite-activity law (alpha < 1)"
            )));
        }
        let g = gamma(2.0 - a);
        return Ok((0..n)
            .map(|k| (((k + 1) as f64 * dt).powf(1.0 - a) - (k as f64 * dt).powf(1.0 - a)) / g)
            .collect());
    }
    let HoldingLaw::GeneralSubordinated(s) = law else {
        unreachable!()
    };
    if let Some(int) = &s.tail_integral {
        return Ok((0..n)
            .map(|k| int((k + 1) as f64 * dt) - int(k as f64 * dt))
            .collect());
    }
    Ok(Moments::by_quadrature(s.levy_tail.as_ref(), dt, n, false)?.m0)
}

/// `U_j(t_k)`, k = 0..=n: the function with Laplace transform `1/(s f(s)^j)`.
/// `U_1 = ∫u` is the renewal function, and the generalized Caputo operator
/// with kernel `ν̄` maps `U_j` to `U_{j−1}` (`U_0 = 1`).
pub(crate) fn renewal_power(law: &HoldingLaw, j: usize, dt: f64, n: usize) -> Result<Vec<f64>> {
    if let Some(a) = stable_index(law) {
        let e = j as f64 * a;
        let g = gamma(1.0 + e);
        return Ok((0..=n).map(|k| (k as f64 * dt).powf(e) / g).collect());
    }
    invert_on_grid(
        &|s| 1.0 / (s * law.laplace_exponent(s).powu(j as u32)),
        dt,
        n,
    )
}

/// Talbot inversion at `t_k`, k = 0..=n, with the value 0 at the origin.
fn invert_on_grid(f: &dyn Fn(Complex64) -> Complex64, dt: f64, n: usize) -> Result<Vec<f64>> {
    let cfg = InversionConfig::talbot();
    let mut out = vec![0.0];
    for k in 1..=n {
        out.push(invert_laplace_scalar(f, k as f64 * dt, &cfg)?);
    }
    Ok(out)
}
