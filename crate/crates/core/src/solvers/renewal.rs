//! Markov renewal equation
//! `p_{i,j}(t) = F̄_i(t) δ_{i,j} + ∫_0^t f_i(s) Σ_l h_{i,l} p_{l,j}(t − s) ds`.
//!
//! Product integration: `Q = H P` is interpolated linearly between nodes
//! and integrated exactly against the holding density, using only `F̄` and
//! its integral `C(t) = ∫_0^t F̄`. The `t^{α−1}` singularity of `f` never
//! has to be evaluated.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{grid, lu_of, DiscretizationConfig};
use crate::error::{Error, Result};
use crate::laplace::{invert_laplace_scalar, InversionConfig};
use crate::mlf::{ml_survival, ml_survival_integral};
use crate::process::{build_generator, HoldingLaw, Provenance, SemiMarkovModel, TransitionGrid};

/// `F̄(t_k)` and `C(t_k)` for k = 0..=n.
fn survival_tables(
    model: &SemiMarkovModel,
    i: usize,
    dt: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lambda = model.rates[i];
    let t = |k: usize| k as f64 * dt;
    match &model.holding_laws[i] {
        HoldingLaw::Exponential { .. } => Ok((
            (0..=n).map(|k| (-lambda * t(k)).exp()).collect(),
            (0..=n)
                .map(|k| -(-lambda * t(k)).exp_m1() / lambda)
                .collect(),
        )),
        HoldingLaw::MittagLeffler { alpha, .. } => {
            let f = (0..=n)
                .map(|k| ml_survival(*alpha, lambda, t(k)))
                .collect::<Result<_>>()?;
            let c = (0..=n)
                .map(|k| ml_survival_integral(*alpha, lambda, t(k)))
                .collect::<Result<_>>()?;
            Ok((f, c))
        }
        HoldingLaw::GeneralSubordinated(law) => {
            let cfg = InversionConfig::talbot();
            let fbar = |s: Complex64| {
                let fs = (law.laplace_exponent)(s);
                fs / (s * (lambda + fs))
            };
            let mut f = vec![1.0];
            let mut c = vec![0.0];
            for k in 1..=n {
                let tk = t(k);
                let wrap = |e: Error| {
                    Error::Numeric(format!("state {i}: survival inversion at t = {tk}: {e}"))
                };
                f.push(invert_laplace_scalar(&fbar, tk, &cfg).map_err(wrap)?);
                c.push(invert_laplace_scalar(&|s: Complex64| fbar(s) / s, tk, &cfg).map_err(wrap)?);
            }
            Ok((f, c))
        }
    }
}

/// Full transition matrix from the renewal equation.
pub fn solve_renewal(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    cfg.validate()?;
    build_generator(model)?;
    let ns = model.n_states;
    let nsteps = cfg.n_steps;
    let dt = cfg.dt;

    // per state: a[k] = ∫_{t_k}^{t_{k+1}} f (1 − ξ), b[k] = ∫ f ξ, ξ = (s − t_k)/dt
    let mut fbar = Vec::with_capacity(ns);
    let mut a = Vec::with_capacity(ns);
    let mut b = Vec::with_capacity(ns);
    for i in 0..ns {
        let (f, c) = survival_tables(model, i, dt, nsteps)?;
        let bi: Vec<f64> = (0..nsteps)
            .map(|k| (c[k + 1] - c[k]) / dt - f[k + 1])
            .collect();
        let ai: Vec<f64> = (0..nsteps).map(|k| f[k] - f[k + 1] - bi[k]).collect();
        fbar.push(f);
        a.push(ai);
        b.push(bi);
    }
    let h = &model.h;
    let sys = DMatrix::from_fn(ns, ns, |i, l| {
        let d = if i == l { 1.0 } else { 0.0 };
        d - a[i][0] * h[(i, l)]
    });
    let lu = lu_of(sys, 1, "renewal step matrix")?;

    let mut p = Vec::with_capacity(nsteps + 1);
    p.push(DMatrix::<f64>::identity(ns, ns));
    let mut q: Vec<DMatrix<f64>> = vec![h.clone()];
    for n in 1..=nsteps {
        let mut rhs = DMatrix::<f64>::zeros(ns, ns);
        for i in 0..ns {
            rhs[(i, i)] = fbar[i][n];
            // Q_0 weight b_{n−1}; Q_m weight a_{n−m} + b_{n−m−1}
            let mut add = |m: usize, w: f64| {
                let qm = &q[m];
                for j in 0..ns {
                    rhs[(i, j)] += w * qm[(i, j)];
                }
            };
            add(0, b[i][n - 1]);
            for m in 1..n {
                add(m, a[i][n - m] + b[i][n - m - 1]);
            }
        }
        let pn = lu.solve(&rhs).ok_or_else(|| Error::Singular {
            step: n,
            context: "renewal step solve".into(),
        })?;
        q.push(h * &pn);
        p.push(pn);
    }
    Ok(grid(cfg, p, Provenance::Renewal))
}
