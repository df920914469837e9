//! Lattice CTRWs with `λ = k/ε²` and the variable-order fractional heat
//! equation they approach as `ε → 0`:
//! `∂_t p = ½ ∂²_y (k(y) RL-D^{1−α(y)} p)` forward and
//! `D_t^{α(x)} p = ½ k(x) ∂²_x p` backward.
//!
//! The finite-difference scheme is the chain's own forward equation at
//! spacing ε, so the PDE solution at fixed ε and the lattice walk are the
//! same object. Refining ε approaches the continuum.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::montecarlo::{occupation_at, RngSpec};
use crate::process::{HoldingLaw, SemiMarkovModel};
use crate::solvers::{
    forward_march, max_mass_drift, solve_backward_caputo_columns, DiscretizationConfig,
};

/// Tolerated undershoot below zero before a grid is flagged.
pub const NEGATIVITY_SLACK: f64 = 1e-8;

/// Lowest admissible order; smaller α makes the memory sums too stiff.
pub const ALPHA_FLOOR: f64 = 0.1;

pub type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Serializable coefficient profile in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `left` for `x < at`, `right` for `x ≥ at`.
    Step {
        left: f64,
        right: f64,
        at: f64,
    },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Step { left, right, at } => {
                if x < at {
                    left
                } else {
                    right
                }
            }
        }
    }

    pub fn to_fn(self) -> ProfileFn {
        Arc::new(move |x| self.eval(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// The edge node jumps to its single neighbour with probability 1.
    Reflecting,
    /// The edge node is absorbing; mass reaching it leaves the domain.
    Absorbing,
}

#[derive(Clone)]
pub struct LatticeSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub epsilon: f64,
    pub alpha_fn: ProfileFn,
    pub k_fn: ProfileFn,
    pub boundary: Boundary,
}

impl fmt::Debug for LatticeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeSpec")
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("epsilon", &self.epsilon)
            .field("boundary", &self.boundary)
            .finish_non_exhaustive()
    }
}

impl LatticeSpec {
    /// Reflecting lattice with `k ≡ 1`.
    pub fn new(x_min: f64, x_max: f64, epsilon: f64, alpha_fn: ProfileFn) -> Result<Self> {
        Self {
            x_min,
            x_max,
            epsilon,
            alpha_fn,
            k_fn: Arc::new(|_| 1.0),
            boundary: Boundary::Reflecting,
        }
        .validated()
    }

    pub fn with_k(mut self, k_fn: ProfileFn) -> Result<Self> {
        self.k_fn = k_fn;
        self.validated()
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Result<Self> {
        self.boundary = boundary;
        self.validated()
    }

    /// Same profiles on a different spacing.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self {
            epsilon,
            ..self.clone()
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        let e = self.epsilon;
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Domain(format!("epsilon = {e} must be positive")));
        }
        if !(self.x_max > self.x_min) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return Err(Error::Domain(format!(
                "empty domain [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        let cells = (self.x_max - self.x_min) / e;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 4.0 {
            return Err(Error::Domain(format!(
                "(x_max − x_min)/epsilon = {cells} must be an integer of at least 4"
            )));
        }
        for x in self.nodes() {
            let a = (self.alpha_fn)(x);
            if !(ALPHA_FLOOR..=1.0).contains(&a) {
                return Err(Error::Domain(format!(
                    "alpha({x}) = {a} outside [{ALPHA_FLOOR}, 1]"
                )));
            }
            let k = (self.k_fn)(x);
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Domain(format!("k({x}) = {k} must be positive")));
            }
        }
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        ((self.x_max - self.x_min) / self.epsilon).round() as usize + 1
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.epsilon
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    /// Index of the node at `x`.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let r = (x - self.x_min) / self.epsilon;
        let i = r.round();
        if (r - i).abs() > 1e-6 || i < 0.0 || i as usize >= self.n_nodes() {
            return Err(Error::Domain(format!("x = {x} is not a lattice node")));
        }
        Ok(i as usize)
    }

    fn is_absorbing_node(&self, i: usize) -> bool {
        self.boundary == Boundary::Absorbing && (i == 0 || i + 1 == self.n_nodes())
    }
}

/// Nearest-neighbour symmetric walk with `λ_i = k(x_i)/ε²` and ML holding
/// times of order `α(x_i)`.
pub fn lattice_model(spec: &LatticeSpec) -> Result<SemiMarkovModel> {
    let spec = spec.clone().validated()?;
    let n = spec.n_nodes();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 1..n - 1 {
        h[(i, i - 1)] = 0.5;
        h[(i, i + 1)] = 0.5;
    }
    let absorbing = spec.boundary == Boundary::Absorbing;
    if absorbing {
        h[(0, 0)] = 1.0;
        h[(n - 1, n - 1)] = 1.0;
    } else {
        h[(0, 1)] = 1.0;
        h[(n - 1, n - 2)] = 1.0;
    }
    let e2 = spec.epsilon * spec.epsilon;
    let rates: Vec<f64> = spec.nodes().iter().map(|&x| (spec.k_fn)(x) / e2).collect();
    let laws = spec
        .nodes()
        .iter()
        .zip(&rates)
        .map(|(&x, &rate)| HoldingLaw::MittagLeffler {
            alpha: (spec.alpha_fn)(x),
            rate,
        })
        .collect();
    let m = SemiMarkovModel::from_parts(h, rates, laws, absorbing)?;
    if absorbing {
        m.with_boundary(vec![0, n - 1])
    } else {
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityKind {
    /// `p(x₀, y, t)` as a function of the end point `y`.
    Forward,
    /// `p(x, y₀, t)` as a function of the start point `x`.
    Backward,
}

/// A density on the lattice nodes at every time step.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub kind: DensityKind,
    /// The fixed point: source for forward grids, target for backward ones.
    pub anchor: f64,
    pub epsilon: f64,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[n][i]` at `t[n]`, `x[i]`
    pub values: Vec<Vec<f64>>,
    /// `Σ p ε` over nodes that are not absorbing
    pub mass: Vec<f64>,
    /// Diagnostics raised while solving, e.g. negative values.
    pub warnings: Vec<String>,
}

impl DensityGrid {
    fn new(
        kind: DensityKind,
        anchor: f64,
        spec: &LatticeSpec,
        cfg: &DiscretizationConfig,
        cols: Vec<DVector<f64>>,
    ) -> Self {
        let e = spec.epsilon;
        let values: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| c.iter().map(|p| p / e).collect())
            .collect();
        let mass = values
            .iter()
            .map(|v| {
                v.iter()
                    .enumerate()
                    .filter(|(i, _)| !spec.is_absorbing_node(*i))
                    .map(|(_, p)| p * e)
                    .sum()
            })
            .collect();
        Self {
            kind,
            anchor,
            epsilon: e,
            x: spec.nodes(),
            t: cfg.times(),
            values,
            mass,
            warnings: Vec::new(),
        }
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.t
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
            .ok_or_else(|| Error::Domain(format!("time {t} not on the grid")))
    }

    pub fn slice(&self, t: f64) -> Result<&[f64]> {
        Ok(&self.values[self.time_index(t)?])
    }

    /// Largest change of mass over one step.
    pub fn max_mass_drift(&self) -> f64 {
        self.mass
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `max |p(x_i) − p(x_{M−i})|`, the departure from mirror symmetry about
    /// the domain centre.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.values {
            let m = v.len();
            for i in 0..m / 2 {
                worst = worst.max((v[i] - v[m - 1 - i]).abs());
            }
        }
        worst
    }

    /// `t,y,p` rows; for backward grids the middle column is the start point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,y,p")?;
        for (t, v) in self.t.iter().zip(&self.values) {
            for (x, p) in self.x.iter().zip(v) {
                writeln!(w, "{t},{x},{p:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Negative values are reported, never clipped.
fn flag_negative(grid: &mut DensityGrid) {
    let m = grid.min_value();
    if m < -NEGATIVITY_SLACK {
        grid.warnings
            .push(format!("density dips to {m:e} below zero"));
    }
}

/// Forward density from a delta of mass 1 (height `1/ε`) at `source`.
pub fn solve_vo_heat_forward(
    spec: &LatticeSpec,
    source: f64,
    cfg: &DiscretizationConfig,
) -> Result<DensityGrid> {
    let model = lattice_model(spec)?;
    let i0 = spec.index_of(source)?;
    let mut init = DMatrix::<f64>::zeros(model.n_states, 1);
    init[(i0, 0)] = 1.0;
    let cols = forward_march(&model, cfg, &init)?;
    if spec.boundary == Boundary::Reflecting {
        let drift = max_mass_drift(&cols);
        if drift > 1e-8 {
            return Err(Error::Numeric(format!(
                "mass drifts by {drift:e} in one step"
            )));
        }
    }
    let cols = cols.into_iter().map(|c| c.column(0).into_owned()).collect();
    let mut grid = DensityGrid::new(DensityKind::Forward, source, spec, cfg, cols);
    flag_negative(&mut grid);
    Ok(grid)
}

/// Backward density `p(·, target, t)`: the Caputo system in the start point.
///
/// At most one starting correction is used. The delta datum puts powers
/// `t^{dα}` of every order d into the solution, and further corrections
/// overshoot below zero away from the target.
pub fn solve_vo_heat_backward(
    spec: &LatticeSpec,
    target: f64,
    cfg: &DiscretizationConfig,
) -> Result<DensityGrid> {
    let model = lattice_model(spec)?;
    let j0 = spec.index_of(target)?;
    let mut cfg = *cfg;
    cfg.starting_corrections = cfg.starting_corrections.min(1);
    let cols = solve_backward_caputo_columns(&model, &cfg, &[j0])?;
    let cols = cols.into_iter().map(|c| c.column(0).into_owned()).collect();
    let mut grid = DensityGrid::new(DensityKind::Backward, target, spec, &cfg, cols);
    flag_negative(&mut grid);
    Ok(grid)
}

/// Gaussian kernel of `∂_t p = ½ k ∂²p`.
pub fn heat_kernel(k: f64, t: f64, x: f64, y: f64) -> f64 {
    let v = k * t;
    (-(y - x) * (y - x) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Mass over `[a, b]`. Nodes on an interior endpoint count half, so that
/// adjacent regions add up.
pub fn region_mass(grid: &DensityGrid, values: &[f64], a: f64, b: f64) -> f64 {
    let tol = 1e-9 * grid.epsilon;
    let (lo, hi) = (grid.x[0], *grid.x.last().expect("non-empty lattice"));
    grid.x
        .iter()
        .zip(values)
        .map(|(&x, &p)| {
            let on = |e: f64, edge: f64| (x - e).abs() <= tol && (e - edge).abs() > tol;
            let w = if x < a - tol || x > b + tol {
                0.0
            } else if on(a, lo) || on(b, hi) {
                0.5
            } else {
                1.0
            };
            w * p * grid.epsilon
        })
        .sum()
}

/// `M(t) = ∫_region p` at every grid time.
pub fn aggregation_diagnostic(grid: &DensityGrid, region: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let (a, b) = region;
    let (lo, hi) = (grid.x[0], *grid.x.last().expect("non-empty lattice"));
    if !(a < b) || a < lo - 1e-12 || b > hi + 1e-12 {
        return Err(Error::Domain(format!(
            "region [{a}, {b}] outside the domain [{lo}, {hi}]"
        )));
    }
    Ok(grid
        .t
        .iter()
        .zip(&grid.values)
        .map(|(&t, v)| (t, region_mass(grid, v, a, b)))
        .collect())
}

/// What the Monte Carlo histograms are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScalingReference {
    /// Forward VO-heat solution on a lattice finer than every tested ε.
    VoHeat { epsilon: f64 },
    /// The Gaussian kernel with `k = k(source)`; requires `α ≡ 1`.
    Gaussian,
}

#[derive(Debug, Clone)]
pub struct ScalingSetup {
    /// Domain, profiles and boundary; its ε is ignored.
    pub lattice: LatticeSpec,
    pub source: f64,
    /// Decreasing spacings to test.
    pub eps_list: Vec<f64>,
    pub t_eval: f64,
    pub n_paths: usize,
    /// Time step of the reference solve.
    pub dt: f64,
    pub reference: ScalingReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    /// `Σ_cells |m̂ − m|` between the histogram and the reference
    pub l1_distance: f64,
    /// Expected L1 distance from sampling noise alone, `Σ √(2/π) √(m(1−m)/N)`
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub t_eval: f64,
    pub n_paths: usize,
    pub reference: ScalingReference,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// Distances non-increasing as ε shrinks, each step allowed to rise by
    /// `2·mc_se` of the finer row.
    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].l1_distance <= w[0].l1_distance + 2.0 * w[1].mc_se)
    }

    pub fn final_l1(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.l1_distance)
    }
}

/// Reference mass in the width-ε cell around each node of `coarse`.
fn reference_cells(
    setup: &ScalingSetup,
    coarse: &LatticeSpec,
    fine: Option<&DensityGrid>,
) -> Result<Vec<f64>> {
    let e = coarse.epsilon;
    let nodes = coarse.nodes();
    let n = nodes.len();
    match (setup.reference, fine) {
        (ScalingReference::Gaussian, _) => {
            let k = (coarse.k_fn)(setup.source);
            let normal = Normal::new(setup.source, (k * setup.t_eval).sqrt())
                .map_err(|err| Error::Domain(format!("Gaussian reference: {err}")))?;
            Ok((0..n)
                .map(|i| {
                    let a = if i == 0 {
                        f64::NEG_INFINITY
                    } else {
                        nodes[i] - e / 2.0
                    };
                    let b = if i + 1 == n {
                        f64::INFINITY
                    } else {
                        nodes[i] + e / 2.0
                    };
                    normal.cdf(b) - normal.cdf(a)
                })
                .collect())
        }
        (ScalingReference::VoHeat { .. }, Some(g)) => {
            let v = g.slice(setup.t_eval)?;
            let tol = 1e-9 * e;
            let mut cells = vec![0.0; n];
            for (&x, &p) in g.x.iter().zip(v) {
                let r = (x - coarse.x_min) / e;
                let c = r.round();
                let mass = p * g.epsilon;
                if ((r - c).abs() - 0.5).abs() * e <= tol {
                    // fine node on a cell face
                    let left = r.floor() as usize;
                    cells[left] += mass / 2.0;
                    cells[(left + 1).min(n - 1)] += mass / 2.0;
                } else {
                    cells[(c as usize).min(n - 1)] += mass;
                }
            }
            Ok(cells)
        }
        (ScalingReference::VoHeat { .. }, None) => unreachable!("reference grid is solved first"),
    }
}

/// Histogram of the rescaled lattice walk at `t_eval` for each ε against a
/// fixed continuum reference.
pub fn scaling_limit_experiment(setup: &ScalingSetup, rng: RngSpec) -> Result<ScalingReport> {
    if setup.eps_list.is_empty() || setup.eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain(
            "eps_list must be non-empty and strictly decreasing".into(),
        ));
    }
    if !(setup.t_eval > 0.0) {
        return Err(Error::Domain(format!(
            "t_eval = {} must be positive",
            setup.t_eval
        )));
    }
    let fine = match setup.reference {
        ScalingReference::VoHeat { epsilon } => {
            if !(epsilon < *setup.eps_list.last().expect("checked non-empty")) {
                return Err(Error::Domain(format!(
                    "reference spacing {epsilon} must be finer than every tested epsilon"
                )));
            }
            let spec = setup.lattice.with_epsilon(epsilon)?;
            let cfg = DiscretizationConfig::with_horizon(setup.dt, setup.t_eval);
            Some(solve_vo_heat_forward(&spec, setup.source, &cfg)?)
        }
        ScalingReference::Gaussian => None,
    };
    let nf = setup.n_paths as f64;
    let mut rows = Vec::with_capacity(setup.eps_list.len());
    for (k, &eps) in setup.eps_list.iter().enumerate() {
        let spec = setup.lattice.with_epsilon(eps)?;
        if setup.reference == ScalingReference::Gaussian
            && spec.nodes().iter().any(|&x| (spec.alpha_fn)(x) != 1.0)
        {
            return Err(Error::Domain(
                "the Gaussian reference needs alpha = 1 everywhere".into(),
            ));
        }
        let model = lattice_model(&spec)?;
        let start = spec.index_of(setup.source)?;
        let stream = RngSpec::new(rng.seed, rng.stream_id.wrapping_add(k as u64));
        let occ = occupation_at(&model, start, &[setup.t_eval], setup.n_paths, stream)?;
        let cells = reference_cells(setup, &spec, fine.as_ref())?;
        let l1_distance = occ.estimate[0]
            .iter()
            .zip(&cells)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let mc_se = cells
            .iter()
            .map(|&m| {
                (2.0 / std::f64::consts::PI).sqrt()
                    * (m.clamp(0.0, 1.0) * (1.0 - m.clamp(0.0, 1.0)) / nf).sqrt()
            })
            .sum();
        rows.push(ScalingRow {
            epsilon: eps,
            l1_distance,
            mc_se,
        });
    }
    Ok(ScalingReport {
        t_eval: setup.t_eval,
        n_paths: setup.n_paths,
        reference: setup.reference,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(a: f64) -> ProfileFn {
        Profile::Constant { value: a }.to_fn()
    }

    #[test]
    fn spec_validation() {
        assert!(LatticeSpec::new(-1.0, 1.0, 0.1, constant(0.8)).is_ok());
        assert!(LatticeSpec::new(-1.0, 1.0, 0.3, constant(0.8)).is_err());
        assert!(LatticeSpec::new(-0.1, 0.1, 0.1, constant(0.8)).is_err());
        assert!(LatticeSpec::new(-1.0, 1.0, 0.1, constant(0.05)).is_err());
        let s = LatticeSpec::new(-1.0, 1.0, 0.1, constant(0.8)).unwrap();
        assert!(s.clone().with_k(constant(-1.0)).is_err());
        assert_eq!(s.n_nodes(), 21);
        assert_eq!(s.index_of(0.0).unwrap(), 10);
        assert!(s.index_of(0.05).is_err());
    }

    #[test]
    fn lattice_rates_and_orders() {
        let s = LatticeSpec::new(
            -1.0,
            1.0,
            0.1,
            Profile::Step {
                left: 0.5,
                right: 0.9,
                at: 0.0,
            }
            .to_fn(),
        )
        .unwrap();
        let m = lattice_model(&s).unwrap();
        assert!(m.rates.iter().all(|&r| (r - 100.0).abs() < 1e-9));
        let a = m.alphas().unwrap();
        assert_eq!(a[9], 0.5);
        assert_eq!(a[10], 0.9);
        assert_eq!(m.h[(0, 1)], 1.0);
        assert_eq!(m.h[(5, 4)], 0.5);
        let m2 = lattice_model(&s.with_k(constant(2.0)).unwrap()).unwrap();
        assert!(m2.rates.iter().all(|&r| (r - 200.0).abs() < 1e-9));
    }

    #[test]
    fn region_mass_halves_shared_nodes() {
        let s = LatticeSpec::new(-1.0, 1.0, 0.5, constant(1.0)).unwrap();
        let cfg = DiscretizationConfig::with_horizon(0.01, 0.02);
        let g = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
        let v = &g.values[2];
        let left = region_mass(&g, v, -1.0, 0.0);
        let right = region_mass(&g, v, 0.0, 1.0);
        assert!((left + right - 1.0).abs() < 1e-12);
        assert!((left - 0.5).abs() < 1e-12);
    }
}
