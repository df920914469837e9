//! Gain and loss fluxes of the forward equation,
//! `d/dt p_{l,i} = J⁺_i − J⁻_i` with `J⁻_i = λ_i d/dt (p_{l,i} * u_i)`.

use nalgebra::DMatrix;

use super::kernels::potential_moments;
use crate::error::{Error, Result};
use crate::process::{HoldingLaw, Provenance, SemiMarkovModel, TransitionGrid};

/// Fluxes out of and into each state for one source state. Row `n` holds
/// the average over `[t_{n−1}, t_n]`; row 0 is zero.
#[derive(Debug, Clone)]
pub struct FluxGrid {
    pub times: Vec<f64>,
    pub source: usize,
    /// `J⁻_i(t_n)`, times × states
    pub outgoing: DMatrix<f64>,
    /// `J⁺_i(t_n)`, times × states
    pub incoming: DMatrix<f64>,
    /// `p_{source,i}(t_n)` the fluxes were computed from
    pub density: DMatrix<f64>,
}

impl FluxGrid {
    /// `max |(p_n − p_{n−1})/dt − (J⁺ − J⁻)_n|` over steps and states.
    pub fn balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 1..self.times.len() {
            let dt = self.times[n] - self.times[n - 1];
            for i in 0..self.density.ncols() {
                let dp = (self.density[(n, i)] - self.density[(n - 1, i)]) / dt;
                worst = worst.max((dp - self.incoming[(n, i)] + self.outgoing[(n, i)]).abs());
            }
        }
        worst
    }

    /// Most negative flux value (zero if none).
    pub fn min_flux(&self) -> f64 {
        self.outgoing.min().min(self.incoming.min()).min(0.0)
    }
}

/// Fluxes of row `source` of a time-domain solution on a uniform grid.
pub fn outgoing_flux(
    grid: &TransitionGrid,
    model: &SemiMarkovModel,
    source: usize,
) -> Result<FluxGrid> {
    model.check_state(source)?;
    let dt = match (grid.provenance, grid.dt) {
        (Provenance::MonteCarlo, _) | (_, None) => {
            return Err(Error::Provenance(format!(
                "fluxes need a time-domain solve on a uniform grid, got {} (dt {:?})",
                grid.provenance, grid.dt
            )))
        }
        (_, Some(dt)) => dt,
    };
    let ns = model.n_states;
    if grid.n_states() != ns {
        return Err(Error::Domain(format!(
            "grid has {} states, model {ns}",
            grid.n_states()
        )));
    }
    let nt = grid.times.len();
    let nsteps = nt - 1;
    let density = DMatrix::from_fn(nt, ns, |n, i| grid.values[n][(source, i)]);

    // C_k(t_n) = (p_k * u_k)(t_n) by product trapezoid
    let mut conv = DMatrix::<f64>::zeros(nt, ns);
    for k in 0..ns {
        if model.is_absorbing(k) {
            continue;
        }
        let m = potential_moments(&model.holding_laws[k], k, dt, nsteps)?;
        for n in 1..nt {
            let mut acc = 0.0;
            for j in 0..n {
                acc +=
                    (m.m0[j] - m.m1[j]) * density[(n - j, k)] + m.m1[j] * density[(n - j - 1, k)];
            }
            conv[(n, k)] = acc;
        }
    }
    let mut outgoing = DMatrix::<f64>::zeros(nt, ns);
    let mut incoming = DMatrix::<f64>::zeros(nt, ns);
    for n in 1..nt {
        for k in 0..ns {
            let rate = (conv[(n, k)] - conv[(n - 1, k)]) / dt;
            let lk = model.rates[k];
            for i in 0..ns {
                if i == k {
                    outgoing[(n, i)] += lk * (1.0 - model.h[(k, k)]) * rate;
                } else {
                    incoming[(n, i)] += lk * model.h[(k, i)] * rate;
                }
            }
        }
    }
    Ok(FluxGrid {
        times: grid.times.clone(),
        source,
        outgoing,
        incoming,
        density,
    })
}

/// `m_i(t) = λ_i u_i(t)`, the expected renewal rate near `t` in state `i`.
pub fn renewal_density(model: &SemiMarkovModel, i: usize, t: f64) -> Result<f64> {
    model.check_state(i)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    let law = &model.holding_laws[i];
    let u = law
        .potential_density(t)
        .ok_or_else(|| Error::Hypothesis(format!("state {i}: potential density u is required")))?;
    if let HoldingLaw::Exponential { .. } = law {
        return Ok(model.rates[i]);
    }
    Ok(model.rates[i] * u)
}
