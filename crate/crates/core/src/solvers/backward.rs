//! Variable-order Caputo backward system `D^{α_i} p_{i,·} = Σ_k g_{i,k} p_{k,·}`.

use nalgebra::DMatrix;

use super::weights::{starting_exponents, CaputoOperator};
use super::{grid, lu_of, ml_parameters, DiscretizationConfig};
use crate::error::{Error, Result};
use crate::process::{build_generator, Provenance, SemiMarkovModel, TransitionGrid};

/// Full transition matrix by implicit time stepping of the backward system,
/// row `i` carrying its own order `α_i`.
pub fn solve_backward_caputo(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    let n = model.n_states;
    let values = backward_march(model, cfg, &DMatrix::identity(n, n))?;
    Ok(grid(cfg, values, Provenance::BackwardCaputo))
}

/// Selected columns `p_{·,j}(t_n)`, one `n_states × cols.len()` matrix per
/// time. Columns are independent, so this costs a fraction of a full solve.
pub fn solve_backward_caputo_columns(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
    cols: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    for &j in cols {
        model.check_state(j)?;
    }
    let init = DMatrix::from_fn(model.n_states, cols.len(), |i, c| {
        if i == cols[c] {
            1.0
        } else {
            0.0
        }
    });
    backward_march(model, cfg, &init)
}

fn backward_march(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
    init: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    let alphas = ml_parameters(model, "the Caputo backward solver")?;
    let g = build_generator(model)?.g;
    let ns = model.n_states;
    let nsteps = cfg.n_steps;
    let dt = cfg.dt;

    let mut distinct: Vec<f64> = Vec::new();
    for (i, &a) in alphas.iter().enumerate() {
        if !model.is_absorbing(i) && !distinct.contains(&a) {
            distinct.push(a);
        }
    }
    let mut ops: Vec<CaputoOperator> = Vec::new();
    let mut op_of = vec![0usize; ns];
    for i in 0..ns {
        let ex = if model.is_absorbing(i) {
            Vec::new()
        } else {
            starting_exponents(alphas[i], &distinct, cfg.starting_corrections.min(nsteps))
        };
        op_of[i] = match ops
            .iter()
            .position(|o| o.alpha == alphas[i] && o.exponents == ex)
        {
            Some(k) => k,
            None => {
                ops.push(CaputoOperator::new(
                    cfg.scheme_backward,
                    alphas[i],
                    nsteps,
                    &ex,
                )?);
                ops.len() - 1
            }
        };
    }
    let scale: Vec<f64> = alphas.iter().map(|&a| dt.powf(-a)).collect();
    memory_march(&g, init, nsteps, &ops, &op_of, &scale)
}

/// Implicit march of `D_i p_{i,·} = Σ_k g_{i,k} p_{k,·}`, where row `i`
/// uses the memory operator `ops[op_of[i]]` times `scale[i]`, evaluated at
/// that operator's shifted point.
pub(crate) fn memory_march(
    g: &DMatrix<f64>,
    init: &DMatrix<f64>,
    nsteps: usize,
    ops: &[CaputoOperator],
    op_of: &[usize],
    scale: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let ns = g.nrows();
    let nc = init.ncols();
    let op = |i: usize| &ops[op_of[i]];
    let theta: Vec<f64> = (0..ns).map(|i| op(i).theta).collect();
    let n_start = ops
        .iter()
        .map(|o| o.exponents.len())
        .max()
        .unwrap_or(0)
        .min(nsteps);

    let mut p: Vec<DMatrix<f64>> = Vec::with_capacity(nsteps + 1);
    p.push(init.clone());
    let mut inc: Vec<DMatrix<f64>> = Vec::with_capacity(nsteps + 1);
    inc.push(DMatrix::zeros(ns, nc));

    if n_start > 0 {
        let block = starting_block(g, init, n_start, scale, &theta, &op)?;
        for n in 1..=n_start {
            let pn = block.rows((n - 1) * ns, ns).into_owned();
            inc.push(&pn - &p[n - 1]);
            p.push(pn);
        }
    }

    let system = |n: usize| {
        let mut a = -DMatrix::from_fn(ns, ns, |i, k| theta[i] * g[(i, k)]);
        for i in 0..ns {
            a[(i, i)] += scale[i] * op(i).coeff(n, 0);
        }
        lu_of(a, n, "Caputo step matrix")
    };
    let lu_first = if n_start == 0 { Some(system(1)?) } else { None };
    let lu = if nsteps >= 2 { Some(system(2)?) } else { None };

    let mut hist = DMatrix::<f64>::zeros(ns, nc);
    let mut coef = vec![0.0; ns];
    for n in (n_start + 1)..=nsteps {
        hist.fill(0.0);
        for l in 1..n {
            for i in 0..ns {
                coef[i] = op(i).coeff(n, l);
            }
            let d = inc[n - l].as_slice();
            let h = hist.as_mut_slice();
            for j in 0..nc {
                let off = j * ns;
                for i in 0..ns {
                    h[off + i] += coef[i] * d[off + i];
                }
            }
        }
        let prev = &p[n - 1];
        let gp = g * prev;
        let mut rhs = DMatrix::<f64>::zeros(ns, nc);
        for i in 0..ns {
            let o = op(i);
            let c0 = o.coeff(n, 0);
            let corr = o.corrections(n);
            for j in 0..nc {
                let mut acc = c0 * prev[(i, j)] - hist[(i, j)];
                for (m, w) in corr.iter().enumerate() {
                    acc -= w * (p[m + 1][(i, j)] - p[0][(i, j)]);
                }
                rhs[(i, j)] = scale[i] * acc + (1.0 - theta[i]) * gp[(i, j)];
            }
        }
        let solver = if n == 1 {
            lu_first.as_ref()
        } else {
            lu.as_ref()
        };
        let pn = solver
            .expect("factorized above")
            .solve(&rhs)
            .ok_or_else(|| Error::Singular {
                step: n,
                context: "Caputo step solve".into(),
            })?;
        inc.push(&pn - prev);
        p.push(pn);
    }
    Ok(p)
}

/// Steps `1..=m` solved together, since the starting corrections couple
/// each of them to all of `u_1..u_m`.
fn starting_block<'a>(
    g: &DMatrix<f64>,
    init: &DMatrix<f64>,
    m: usize,
    scale: &[f64],
    theta: &[f64],
    op: &dyn Fn(usize) -> &'a CaputoOperator,
) -> Result<DMatrix<f64>> {
    let ns = g.nrows();
    let nc = init.ncols();
    let size = m * ns;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DMatrix::<f64>::zeros(size, nc);
    // coefficient `c` on state `k` of P_idx in equation row `r`
    let mut add = |r: usize, idx: usize, k: usize, c: f64| {
        if idx == 0 {
            for j in 0..nc {
                rhs[(r, j)] -= c * init[(k, j)];
            }
        } else {
            a[(r, (idx - 1) * ns + k)] += c;
        }
    };
    for n in 1..=m {
        for i in 0..ns {
            let r = (n - 1) * ns + i;
            let o = op(i);
            for l in 0..n {
                let c = scale[i] * o.coeff(n, l);
                add(r, n - l, i, c);
                add(r, n - l - 1, i, -c);
            }
            for (q, w) in o.corrections(n).iter().enumerate() {
                add(r, q + 1, i, scale[i] * w);
                add(r, 0, i, -scale[i] * w);
            }
            for k in 0..ns {
                let gik = g[(i, k)];
                if gik != 0.0 {
                    add(r, n, k, -theta[i] * gik);
                    add(r, n - 1, k, -(1.0 - theta[i]) * gik);
                }
            }
        }
    }
    let lu = lu_of(a, 1, "Caputo starting block")?;
    lu.solve(&rhs).ok_or_else(|| Error::Singular {
        step: 1,
        context: "Caputo starting block solve".into(),
    })
}
