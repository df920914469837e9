//! Time-domain solvers on a uniform grid: the Markov renewal equation, the
//! variable-order Caputo backward system, the variable-order
//! Riemann–Liouville forward system, and their Volterra generalizations to
//! arbitrary subordinated holding laws.

mod backward;
mod flux;
mod forward;
mod kernels;
mod renewal;
mod volterra;
pub(crate) mod weights;

pub use backward::{solve_backward_caputo, solve_backward_caputo_columns};
pub use flux::{outgoing_flux, renewal_density, FluxGrid};
pub(crate) use forward::{forward_march, max_mass_drift};
pub use forward::{solve_forward_rl, solve_forward_rl_sources};
pub use renewal::solve_renewal;
pub use volterra::{solve_backward_volterra, solve_forward_volterra};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{BuiltinExponent, HoldingLaw, Provenance, SemiMarkovModel, TransitionGrid};

/// Time discretization of the Caputo backward system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackwardScheme {
    /// First-order-in-the-limit L1 formula at `t_n`.
    L1Caputo,
    /// Alikhanov's L2-1σ formula at `t_{n−1+σ}`, `σ = 1 − α/2`; Crank–Nicolson
    /// at α = 1.
    L21Sigma,
}

/// Time discretization of the Riemann–Liouville forward system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForwardScheme {
    /// Implicit Grünwald–Letnikov at `t_n`.
    GrunwaldLetnikov,
    /// Grünwald–Letnikov blended between `t_{n−1}` and `t_n` with weight
    /// `1 − α/2`, which centres it at the step midpoint.
    ShiftedGrunwaldLetnikov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolterraQuadrature {
    /// Exact kernel moments against piecewise-linear interpolants.
    ProductTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub scheme_backward: BackwardScheme,
    pub scheme_forward: ForwardScheme,
    pub volterra_quadrature: VolterraQuadrature,
    /// Number of starting corrections for the non-smooth initial layer of
    /// the memory operators (0 disables them).
    pub starting_corrections: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_steps: 1000,
            scheme_backward: BackwardScheme::L21Sigma,
            scheme_forward: ForwardScheme::ShiftedGrunwaldLetnikov,
            volterra_quadrature: VolterraQuadrature::ProductTrapezoid,
            starting_corrections: 2,
        }
    }
}

impl DiscretizationConfig {
    /// Steps of size `dt` up to `horizon` (rounded to the nearest step).
    pub fn with_horizon(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            n_steps: (horizon / dt).round() as usize,
            ..Self::default()
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        TransitionGrid::uniform(self.dt, self.n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt = {} must be positive", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::Domain("n_steps must be positive".into()));
        }
        if self.starting_corrections > 3 {
            return Err(Error::Domain(
                "at most 3 starting corrections are supported".into(),
            ));
        }
        Ok(())
    }
}

/// Per-state stability index for models whose laws are Mittag-Leffler type
/// (exponential counts as α = 1, the stable subordinator as ML).
pub(crate) fn ml_parameters(model: &SemiMarkovModel, solver: &str) -> Result<Vec<f64>> {
    model
        .holding_laws
        .iter()
        .enumerate()
        .map(|(i, law)| match law {
            HoldingLaw::Exponential { .. } => Ok(1.0),
            HoldingLaw::MittagLeffler { alpha, .. } => Ok(*alpha),
            HoldingLaw::GeneralSubordinated(s) => match s.builtin {
                Some(BuiltinExponent::Stable { alpha }) => Ok(alpha),
                _ => Err(Error::Hypothesis(format!(
                    "{solver} needs Mittag-Leffler laws; state {i} has a general subordinated law"
                ))),
            },
        })
        .collect()
}

pub(crate) fn grid(
    cfg: &DiscretizationConfig,
    values: Vec<DMatrix<f64>>,
    provenance: Provenance,
) -> TransitionGrid {
    TransitionGrid {
        times: cfg.times(),
        values,
        provenance,
        dt: Some(cfg.dt),
    }
}

/// `exp(t_n G)` on the configured grid: the transition matrix of the Markov
/// chain with the model's rates, exact when every law is exponential.
pub fn matrix_exponential_grid(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Result<TransitionGrid> {
    cfg.validate()?;
    let g = crate::process::build_generator(model)?.g;
    let step = (&g * cfg.dt).exp();
    let mut values = Vec::with_capacity(cfg.n_steps + 1);
    values.push(DMatrix::identity(model.n_states, model.n_states));
    for n in 1..=cfg.n_steps {
        // recompute periodically so round-off does not accumulate
        let v = if n % 64 == 0 {
            (&g * (n as f64 * cfg.dt)).exp()
        } else {
            &values[n - 1] * &step
        };
        values.push(v);
    }
    Ok(grid(cfg, values, Provenance::MatrixExponential))
}

/// LU factorization reporting a singular matrix with its step index.
pub(crate) fn lu_of(
    a: DMatrix<f64>,
    step: usize,
    context: &str,
) -> Result<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(Error::Singular {
            step,
            context: context.to_string(),
        });
    }
    Ok(lu)
}
