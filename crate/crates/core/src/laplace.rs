//! Transform-space transition matrices and numerical Laplace inversion.
//!
//! In the Laplace domain the transition matrix of any model in this crate is
//! `P̃(s) = s^{-1} (Λ(s) − G)^{-1} Λ(s)` with `Λ(s) = diag f_i(s)`, where
//! `f_i` is the Laplace exponent of state `i` (`s` for exponential laws,
//! `s^{α_i}` for Mittag-Leffler laws). Inversion is by Gaver–Stehfest (real
//! nodes only) or the fixed Talbot contour.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::{Generator, Provenance, SemiMarkovModel, TransitionGrid};

/// Below this time Gaver–Stehfest requests are served by Talbot.
pub const GS_MIN_TIME: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InversionMethod {
    GaverStehfest,
    Talbot,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub method: InversionMethod,
    pub gs_terms: usize,
    pub talbot_nodes: usize,
    pub t_min_guard: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            method: InversionMethod::GaverStehfest,
            gs_terms: 14,
            talbot_nodes: 32,
            t_min_guard: 1e-6,
        }
    }
}

impl InversionConfig {
    pub fn talbot() -> Self {
        Self {
            method: InversionMethod::Talbot,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gs_terms % 2 != 0 || !(8..=18).contains(&self.gs_terms) {
            return Err(Error::Domain(format!(
                "gs_terms = {} must be even and in [8, 18]",
                self.gs_terms
            )));
        }
        if self.talbot_nodes < 16 {
            return Err(Error::Domain(format!(
                "talbot_nodes = {} must be at least 16",
                self.talbot_nodes
            )));
        }
        if !(self.t_min_guard > 0.0) {
            return Err(Error::Domain("t_min_guard must be positive".into()));
        }
        Ok(())
    }

    /// Method actually used at time `t`.
    pub fn method_at(&self, t: f64) -> InversionMethod {
        match self.method {
            InversionMethod::GaverStehfest if t < GS_MIN_TIME => InversionMethod::Talbot,
            m => m,
        }
    }
}

/// Scalar inversion result with stability diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionReport {
    pub value: f64,
    pub method: InversionMethod,
    /// Largest |partial sum| seen while accumulating Gaver–Stehfest terms.
    pub max_partial: f64,
    /// Partial sums oscillated beyond 1e3 × |result|.
    pub unstable: bool,
}

/// Stehfest weights `V_k`, k = 1..=n.
pub fn stehfest_weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    let fact = |m: usize| (1..=m).fold(1.0f64, |a, b| a * b as f64);
    (1..=n)
        .map(|k| {
            let lo = (k + 1) / 2;
            let hi = k.min(half);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += (j as f64).powi(half as i32) * fact(2 * j)
                    / (fact(half - j) * fact(j) * fact(j - 1) * fact(k - j) * fact(2 * j - k));
            }
            if (k + half) % 2 == 0 {
                acc
            } else {
                -acc
            }
        })
        .collect()
}

fn check_time(t: f64, cfg: &InversionConfig) -> Result<()> {
    if !(t >= cfg.t_min_guard) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "inversion time {t} below guard {}",
            cfg.t_min_guard
        )));
    }
    Ok(())
}

/// Contour nodes and weights: `f(t) ≈ Σ_k Re(w_k F(s_k))`.
fn talbot_nodes(t: f64, m: usize) -> Vec<(Complex64, Complex64)> {
    let mf = m as f64;
    let r = 2.0 * mf / (5.0 * t);
    let mut out = Vec::with_capacity(m);
    out.push((
        Complex64::new(r, 0.0),
        Complex64::new(0.5 * (r * t).exp() * r / mf, 0.0),
    ));
    for k in 1..m {
        let theta = k as f64 * std::f64::consts::PI / mf;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let w = (s * t).exp() * Complex64::new(1.0, sigma) * (r / mf);
        out.push((s, w));
    }
    out
}

fn gs_nodes(t: f64, n: usize) -> Vec<(f64, f64)> {
    let ln2t = std::f64::consts::LN_2 / t;
    stehfest_weights(n)
        .into_iter()
        .enumerate()
        .map(|(k, v)| ((k + 1) as f64 * ln2t, v * ln2t))
        .collect()
}

pub fn invert_laplace_scalar_report(
    f: &dyn Fn(Complex64) -> Complex64,
    t: f64,
    cfg: &InversionConfig,
) -> Result<InversionReport> {
    cfg.validate()?;
    check_time(t, cfg)?;
    let method = cfg.method_at(t);
    let (value, max_partial) = match method {
        InversionMethod::Talbot => {
            let mut acc = 0.0;
            for (s, w) in talbot_nodes(t, cfg.talbot_nodes) {
                acc += (w * f(s)).re;
            }
            (acc, acc.abs())
        }
        InversionMethod::GaverStehfest => {
            let mut acc = 0.0;
            let mut max_partial: f64 = 0.0;
            for (s, w) in gs_nodes(t, cfg.gs_terms) {
                acc += w * f(Complex64::new(s, 0.0)).re;
                max_partial = max_partial.max(acc.abs());
            }
            (acc, max_partial)
        }
    };
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "{method:?} inversion at t = {t} produced {value}"
        )));
    }
    let unstable =
        method == InversionMethod::GaverStehfest && max_partial > 1e3 * value.abs().max(1e-300);
    Ok(InversionReport {
        value,
        method,
        max_partial,
        unstable,
    })
}

/// Real-valued inverse Laplace transform of `f` at `t`.
pub fn invert_laplace_scalar(
    f: &dyn Fn(Complex64) -> Complex64,
    t: f64,
    cfg: &InversionConfig,
) -> Result<f64> {
    invert_laplace_scalar_report(f, t, cfg).map(|r| r.value)
}

fn check_s(s: Complex64) -> Result<()> {
    if s.im == 0.0 && s.re <= 0.0 {
        return Err(Error::Domain(format!(
            "s = {s} lies on the branch cut of the transform"
        )));
    }
    Ok(())
}

fn solve(a: DMatrix<Complex64>, b: DMatrix<Complex64>, s: Complex64) -> Result<DMatrix<Complex64>> {
    a.lu().solve(&b).ok_or_else(|| Error::Singular {
        step: 0,
        context: format!("resolvent singular at s = {s}"),
    })
}

fn complex(g: &DMatrix<f64>) -> DMatrix<Complex64> {
    g.map(|x| Complex64::new(x, 0.0))
}

/// `s^{α−1} (s^α I − G)^{-1}`.
pub fn laplace_matrix_homogeneous(
    g: &Generator,
    alpha: f64,
    s: Complex64,
) -> Result<DMatrix<Complex64>> {
    check_s(s)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1]")));
    }
    let n = g.n();
    let sa = s.powf(alpha);
    let a = DMatrix::<Complex64>::identity(n, n) * sa - complex(&g.g);
    let inv = solve(a, DMatrix::identity(n, n), s)?;
    Ok(inv * s.powf(alpha - 1.0))
}

/// `s^{-1} (Λ − G)^{-1} Λ` with `Λ = diag(s^{α_i})`.
pub fn laplace_matrix_heterogeneous(
    g: &Generator,
    alphas: &[f64],
    s: Complex64,
) -> Result<DMatrix<Complex64>> {
    check_s(s)?;
    if alphas.len() != g.n() {
        return Err(Error::Domain("need one alpha per state".into()));
    }
    if let Some(a) = alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::Domain(format!("alpha = {a} outside (0, 1]")));
    }
    let lambda: Vec<Complex64> = alphas.iter().map(|&a| s.powf(a)).collect();
    with_exponents(g, &lambda, s)
}

fn with_exponents(g: &Generator, f: &[Complex64], s: Complex64) -> Result<DMatrix<Complex64>> {
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(f));
    let a = &diag - complex(&g.g);
    let p = solve(a, diag, s)?;
    Ok(p / s)
}

/// Transform of the transition matrix for any model, from the per-state
/// Laplace exponents.
pub fn laplace_matrix_model(
    model: &SemiMarkovModel,
    g: &Generator,
    s: Complex64,
) -> Result<DMatrix<Complex64>> {
    check_s(s)?;
    let f: Vec<Complex64> = model
        .holding_laws
        .iter()
        .map(|l| l.laplace_exponent(s))
        .collect();
    with_exponents(g, &f, s)
}

/// Closed form for the state-dependent fractional Poisson process:
/// `s^{α_j − 1} λ^{j−i} / Π_{k=i}^{j} (λ + s^{α_k})`, zero for `j < i`.
pub fn fpp_state_dependent_laplace(
    i: usize,
    j: usize,
    lambda: f64,
    alphas: &[f64],
    s: Complex64,
) -> Result<Complex64> {
    if j < i {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if j >= alphas.len() {
        return Err(Error::Domain(format!(
            "state {j} beyond the {} given orders",
            alphas.len()
        )));
    }
    check_s(s)?;
    let mut denom = Complex64::new(1.0, 0.0);
    for &a in &alphas[i..=j] {
        denom *= s.powf(a) + lambda;
    }
    Ok(s.powf(alphas[j] - 1.0) * lambda.powi((j - i) as i32) / denom)
}

/// `∫_0^∞ e^{−st} φ(t) dt` for real `s > 0` by double-exponential
/// quadrature: `t = w⁴` on `[0, 1]` absorbs integrable singularities at the
/// origin and `t = 1/w` maps `[1, ∞)` to `(0, 1]`.
pub fn forward_laplace_transform(phi: &dyn Fn(f64) -> f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("s = {s} must be positive")));
    }
    let head = quadrature::double_exponential::integrate(
        |w: f64| {
            let t = w.powi(4);
            if t == 0.0 {
                return 0.0;
            }
            4.0 * w.powi(3) * (-s * t).exp() * phi(t)
        },
        0.0,
        1.0,
        1e-14,
    );
    let tail = quadrature::double_exponential::integrate(
        |w: f64| {
            if w == 0.0 {
                return 0.0;
            }
            let e = (-s / w).exp();
            if e == 0.0 {
                0.0
            } else {
                e * phi(1.0 / w) / (w * w)
            }
        },
        0.0,
        1.0,
        1e-14,
    );
    let v = head.integral + tail.integral;
    if !v.is_finite() {
        return Err(Error::Numeric(format!(
            "Laplace transform quadrature diverged at s = {s}"
        )));
    }
    Ok(v)
}

/// Inverts a matrix-valued transform entrywise on `t_grid`. `t = 0` maps to
/// the identity.
pub fn invert_laplace_matrix<F>(
    f: F,
    n_states: usize,
    t_grid: &[f64],
    cfg: &InversionConfig,
) -> Result<TransitionGrid>
where
    F: Fn(Complex64) -> Result<DMatrix<Complex64>> + Sync,
{
    cfg.validate()?;
    let values = t_grid
        .par_iter()
        .map(|&t| -> Result<DMatrix<f64>> {
            if t == 0.0 {
                return Ok(DMatrix::identity(n_states, n_states));
            }
            check_time(t, cfg)?;
            let method = cfg.method_at(t);
            let nodes: Vec<(Complex64, Complex64)> = match method {
                InversionMethod::Talbot => talbot_nodes(t, cfg.talbot_nodes),
                InversionMethod::GaverStehfest => gs_nodes(t, cfg.gs_terms)
                    .into_iter()
                    .map(|(s, w)| (Complex64::new(s, 0.0), Complex64::new(w, 0.0)))
                    .collect(),
            };
            let mut acc = DMatrix::<f64>::zeros(n_states, n_states);
            for (s, w) in nodes {
                let m = f(s)?;
                if m.shape() != (n_states, n_states) {
                    return Err(Error::Domain("transform has the wrong shape".into()));
                }
                acc += m.map(|z| (w * z).re);
            }
            if let Some(((i, j), v)) = acc
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite())
                .map(|(k, v)| ((k % n_states, k / n_states), v))
            {
                return Err(Error::Numeric(format!(
                    "{method:?} inversion of entry ({i},{j}) at t = {t} produced {v}"
                )));
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let dt = uniform_step(t_grid);
    Ok(TransitionGrid {
        times: t_grid.to_vec(),
        values,
        provenance: Provenance::LaplaceInversion,
        dt,
    })
}

pub(crate) fn uniform_step(t: &[f64]) -> Option<f64> {
    if t.len() < 2 || t[0] != 0.0 {
        return None;
    }
    let dt = t[1] - t[0];
    t.windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1.0))
        .then_some(dt)
}

/// Laplace-route transition grid for a model.
pub fn solve_laplace(
    model: &SemiMarkovModel,
    t_grid: &[f64],
    cfg: &InversionConfig,
) -> Result<TransitionGrid> {
    let g = crate::process::build_generator(model)?;
    invert_laplace_matrix(
        |s| laplace_matrix_model(model, &g, s),
        model.n_states,
        t_grid,
        cfg,
    )
}
