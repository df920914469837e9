//! Variable-order Riemann–Liouville forward system
//! `d/dt p_{l,i} = Σ_k g_{k,i} RL-D^{1−α_k} p_{l,k}`.
//!
//! Integrated over a step, with `p = p(0) + q`: the constant part has the
//! exact integral `p_k(0) (t_n^{α_k} − t_{n−1}^{α_k}) / Γ(1+α_k)`, and the
//! remainder `q` (zero at the origin) is differentiated by Grünwald–Letnikov.
//! Columns of `g` sum to zero over `i`, so every step conserves mass exactly.

use nalgebra::{DMatrix, DVector};

use super::weights::gl_weights;
use super::{grid, lu_of, ml_parameters, DiscretizationConfig, ForwardScheme};
use crate::error::{Error, Result};
use crate::process::{build_generator, Provenance, SemiMarkovModel, TransitionGrid};
use crate::special::gamma;

pub(crate) fn check_no_self_jumps(model: &SemiMarkovModel, solver: &str) -> Result<()> {
    for i in 0..model.n_states {
        let hii = model.h[(i, i)];
        // absorbing rows (h_ii = 1) have a zero generator row and are fine
        if hii != 0.0 && hii != 1.0 {
            return Err(Error::Hypothesis(format!(
                "{solver} requires h_ii = 0; h[{i},{i}] = {hii}"
            )));
        }
    }
    Ok(())
}

/// Full transition matrix; row `l` is the forward solution started at `l`.
pub fn solve_forward_rl(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    let n = model.n_states;
    let sources: Vec<usize> = (0..n).collect();
    let cols = solve_forward_rl_sources(model, cfg, &sources)?;
    Ok(grid(
        cfg,
        cols.into_iter().map(|c| c.transpose()).collect(),
        Provenance::ForwardRL,
    ))
}

/// Forward solutions for the given source states: at each time an
/// `n_states × sources.len()` matrix whose column `c` is `p_{sources[c], ·}`.
pub fn solve_forward_rl_sources(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
    sources: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    for &l in sources {
        model.check_state(l)?;
    }
    let init = DMatrix::from_fn(model.n_states, sources.len(), |i, c| {
        if i == sources[c] {
            1.0
        } else {
            0.0
        }
    });
    forward_march(model, cfg, &init)
}

const STARTUP_STEPS: usize = 1;

pub(crate) fn forward_march(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
    init: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    check_no_self_jumps(model, "the Riemann-Liouville forward solver")?;
    let alphas = ml_parameters(model, "the Riemann-Liouville forward solver")?;
    let g = build_generator(model)?.g;
    let ns = model.n_states;
    let nc = init.ncols();
    let nsteps = cfg.n_steps;
    let dt = cfg.dt;

    let theta: Vec<f64> = alphas
        .iter()
        .map(|&a| match cfg.scheme_forward {
            ForwardScheme::GrunwaldLetnikov => 1.0,
            ForwardScheme::ShiftedGrunwaldLetnikov => 1.0 - a / 2.0,
        })
        .collect();
    let mut betas: Vec<f64> = Vec::new();
    let mut w_of = vec![0usize; ns];
    for (k, &a) in alphas.iter().enumerate() {
        let b = 1.0 - a;
        w_of[k] = betas.iter().position(|&x| x == b).unwrap_or_else(|| {
            betas.push(b);
            betas.len() - 1
        });
    }
    let weights: Vec<Vec<f64>> = betas.iter().map(|&b| gl_weights(b, nsteps)).collect();
    let dt_beta: Vec<f64> = alphas.iter().map(|&a| dt.powf(a - 1.0)).collect();
    let gam: Vec<f64> = alphas.iter().map(|&a| gamma(1.0 + a)).collect();

    // (I − gᵀ diag(θ_k dt^{α_k})) q_n = rhs
    let a = DMatrix::from_fn(ns, ns, |i, k| {
        let d = if i == k { 1.0 } else { 0.0 };
        d - g[(k, i)] * theta[k] * dt * dt_beta[k]
    });
    let lu = lu_of(a, 1, "forward step matrix")?;
    // delta data drives stiff modes past zero under the shifted weights, so a
    // stiff system takes its first steps with θ = 1
    let stiff = (0..ns).any(|k| -g[(k, k)] * dt * dt_beta[k] > 1.0);
    let startup_steps = if stiff { STARTUP_STEPS } else { 0 };
    let start = DMatrix::from_fn(ns, ns, |i, k| {
        let d = if i == k { 1.0 } else { 0.0 };
        d - g[(k, i)] * dt * dt_beta[k]
    });
    let lu_start = lu_of(start, 1, "forward startup matrix")?;
    let gt = g.transpose();

    // q histories, one contiguous series per (state, column)
    let mut q: Vec<Vec<f64>> = vec![Vec::with_capacity(nsteps + 1); ns * nc];
    for s in q.iter_mut() {
        s.push(0.0);
    }
    let mut gl_prev = vec![0.0; ns * nc];
    let mut out = Vec::with_capacity(nsteps + 1);
    out.push(init.clone());
    let mut v = DMatrix::<f64>::zeros(ns, nc);
    let mut hist = vec![0.0; ns * nc];
    for n in 1..=nsteps {
        let startup = n <= startup_steps;
        let (tn, tp) = (n as f64 * dt, (n - 1) as f64 * dt);
        for k in 0..ns {
            let w = &weights[w_of[k]];
            let cst = (tn.powf(alphas[k]) - tp.powf(alphas[k])) / gam[k];
            for c in 0..nc {
                let series = &q[k * nc + c];
                // Σ_{m=1}^{n−1} w_m q_{n−m}
                let mut h = 0.0;
                // β = 0 (α = 1) has no memory
                if w.len() > 1 && w[1] != 0.0 {
                    for m in 1..n {
                        h += w[m] * series[n - m];
                    }
                }
                hist[k * nc + c] = h;
                let th = if startup { 1.0 } else { theta[k] };
                v[(k, c)] = init[(k, c)] * cst
                    + th * dt * dt_beta[k] * h
                    + (1.0 - th) * dt * gl_prev[k * nc + c];
            }
        }
        let mut rhs = &gt * &v;
        for k in 0..ns {
            for c in 0..nc {
                rhs[(k, c)] += q[k * nc + c][n - 1];
            }
        }
        let qn = if startup { &lu_start } else { &lu }
            .solve(&rhs)
            .ok_or_else(|| Error::Singular {
                step: n,
                context: "forward step solve".into(),
            })?;
        for k in 0..ns {
            for c in 0..nc {
                let x = qn[(k, c)];
                q[k * nc + c].push(x);
                gl_prev[k * nc + c] = dt_beta[k] * (x + hist[k * nc + c]);
            }
        }
        out.push(init + qn);
    }
    Ok(out)
}

/// Total mass `Σ_i p_{l,i}` drift of a forward solution column, per step.
pub(crate) fn max_mass_drift(cols: &[DMatrix<f64>]) -> f64 {
    let mass = |m: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
    };
    cols.windows(2)
        .map(|w| (mass(&w[1]) - mass(&w[0])).amax())
        .fold(0.0, f64::max)
}
