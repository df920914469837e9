//! Kolmogorov equations for arbitrary subordinated holding laws.
//!
//! Backward: `d/dt ∫_0^t p_{i,j}(t′) ν̄_i(t − t′) dt′ − δ_{i,j} ν̄_i(t) = Σ_k g_{i,k} p_{k,j}(t)`,
//! which is `∫_0^t p′(t′) ν̄_i(t − t′) dt′` on the left. With `p` piecewise
//! linear this is a generalized L1 formula whose weights are the interval
//! integrals of `ν̄`.
//!
//! Forward: `d/dt p_{l,i} = Σ_k g_{k,i} d/dt (p_{l,k} * u_k)`, integrated once
//! in time and discretized by product trapezoid against `u_k`.

use nalgebra::DMatrix;

use super::backward::memory_march;
use super::forward::check_no_self_jumps;
use super::kernels::{potential_moments, renewal_power, tail_moments};
use super::weights::CaputoOperator;
use super::{grid, lu_of, BackwardScheme, DiscretizationConfig};
use crate::error::{Error, Result};
use crate::process::{build_generator, Provenance, SemiMarkovModel, TransitionGrid};

pub fn solve_backward_volterra(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    cfg.validate()?;
    let g = build_generator(model)?.g;
    let ns = model.n_states;
    let nsteps = cfg.n_steps;
    let dt = cfg.dt;
    let n_corr = cfg.starting_corrections.min(nsteps);

    let mut ops = Vec::with_capacity(ns);
    let mut scale = vec![1.0; ns];
    for i in 0..ns {
        if model.is_absorbing(i) {
            // zero generator row: any nonsingular memory keeps p constant
            ops.push(CaputoOperator::from_weights(1.0, vec![1.0; nsteps]));
            continue;
        }
        let law = &model.holding_laws[i];
        if law.alpha() == Some(1.0) {
            // pure drift, ν̄ degenerates to a point mass: plain d/dt by Crank–Nicolson
            ops.push(CaputoOperator::new(
                BackwardScheme::L21Sigma,
                1.0,
                nsteps,
                &[],
            )?);
            scale[i] = 1.0 / dt;
            continue;
        }
        let omega = tail_moments(law, i, dt, nsteps)?;
        if omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(omega[0] > 0.0) {
            return Err(Error::Hypothesis(format!(
                "state {i}: Levy tail is not integrable at 0+ (first weight {})",
                omega[0]
            )));
        }
        let mut op = CaputoOperator::from_weights(
            law.alpha().unwrap_or(0.0),
            omega.iter().map(|w| w / dt).collect(),
        );
        if n_corr > 0 {
            let mut basis = Vec::with_capacity(n_corr + 1);
            basis.push(vec![1.0; nsteps + 1]);
            for j in 1..=n_corr {
                basis.push(renewal_power(law, j, dt, nsteps)?);
            }
            let labels: Vec<f64> = (1..=n_corr).map(|j| j as f64).collect();
            op.set_corrections_on(&basis[1..], &basis[..n_corr], &labels)?;
        }
        ops.push(op);
    }
    let op_of: Vec<usize> = (0..ns).collect();
    let values = memory_march(&g, &DMatrix::identity(ns, ns), nsteps, &ops, &op_of, &scale)?;
    Ok(grid(cfg, values, Provenance::BackwardVolterra))
}

pub fn solve_forward_volterra(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    cfg.validate()?;
    check_no_self_jumps(model, "the Volterra forward solver")?;
    let g = build_generator(model)?.g;
    let ns = model.n_states;
    let nsteps = cfg.n_steps;
    let dt = cfg.dt;

    // (p * u)(t_n) = Σ_j w0[j] p_{n−j} + w1[j] p_{n−j−1}
    let mut w0 = Vec::with_capacity(ns);
    let mut w1 = Vec::with_capacity(ns);
    for k in 0..ns {
        let m = potential_moments(&model.holding_laws[k], k, dt, nsteps)?;
        w0.push(
            m.m0.iter()
                .zip(&m.m1)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        w1.push(m.m1);
    }
    let gt = g.transpose();
    let sys = DMatrix::from_fn(ns, ns, |i, k| {
        let d = if i == k { 1.0 } else { 0.0 };
        d - gt[(i, k)] * w0[k][0]
    });
    let lu = lu_of(sys, 1, "Volterra forward step matrix")?;

    // column c of x[n] is p_{c,·}(t_n)
    let init = DMatrix::<f64>::identity(ns, ns);
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(nsteps + 1);
    x.push(init.clone());
    let mut conv = DMatrix::<f64>::zeros(ns, ns);
    for n in 1..=nsteps {
        conv.fill(0.0);
        for k in 0..ns {
            let mut add = |m: usize, w: f64| {
                let xm = &x[m];
                for c in 0..ns {
                    conv[(k, c)] += w * xm[(k, c)];
                }
            };
            add(0, w1[k][n - 1]);
            for m in 1..n {
                add(m, w0[k][n - m] + w1[k][n - m - 1]);
            }
        }
        let rhs = &init + &gt * &conv;
        let xn = lu.solve(&rhs).ok_or_else(|| Error::Singular {
            step: n,
            context: "Volterra forward step solve".into(),
        })?;
        x.push(xn);
    }
    Ok(grid(
        cfg,
        x.into_iter().map(|m| m.transpose()).collect(),
        Provenance::ForwardVolterra,
    ))
}
