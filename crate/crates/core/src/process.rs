//! Semi-Markov model: embedded chain, rates, per-state holding laws, the
//! Markov generator, and the grid/path records every solver and sampler
//! produces.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{self, InversionConfig, InversionMethod};
use crate::mlf;
use crate::special::{gamma, lower_incomplete_gamma, upper_incomplete_gamma};

const ROW_SUM_TOL: f64 = 1e-12;

pub type ComplexFn = Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>;
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Parametric subordinators with closed-form tails, used for serialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinExponent {
    /// `f(s) = s^α`
    Stable { alpha: f64 },
    /// `f(s) = (s + θ)^α − θ^α`
    TemperedStable { alpha: f64, theta: f64 },
}

impl fmt::Display for BuiltinExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinExponent::Stable { alpha } => write!(f, "stable({alpha})"),
            BuiltinExponent::TemperedStable { alpha, theta } => {
                write!(f, "tempered({alpha},{theta})")
            }
        }
    }
}

impl std::str::FromStr for BuiltinExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Document(format!("unrecognized builtin exponent '{s}'"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = &s[..open];
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name, args.as_slice()) {
            ("stable", [alpha]) => Ok(BuiltinExponent::Stable { alpha: *alpha }),
            ("tempered", [alpha, theta]) => Ok(BuiltinExponent::TemperedStable {
                alpha: *alpha,
                theta: *theta,
            }),
            _ => Err(bad()),
        }
    }
}

/// Subordinator given through its Laplace exponent, Lévy tail and (optionally)
/// potential density.
#[derive(Clone)]
pub struct SubordinatorLaw {
    pub laplace_exponent: ComplexFn,
    /// `ν̄(t) = ν((t, ∞))`.
    pub levy_tail: RealFn,
    /// `∫_0^t ν̄(s) ds`, when known in closed form.
    pub tail_integral: Option<RealFn>,
    /// Density `u(t)` of the potential measure, Laplace transform `1/f(s)`.
    pub potential_density: Option<RealFn>,
    pub builtin: Option<BuiltinExponent>,
}

impl fmt::Debug for SubordinatorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.builtin {
            Some(b) => write!(f, "SubordinatorLaw({b})"),
            None => write!(f, "SubordinatorLaw(custom)"),
        }
    }
}

impl SubordinatorLaw {
    pub fn custom(
        laplace_exponent: ComplexFn,
        levy_tail: RealFn,
        potential_density: Option<RealFn>,
    ) -> Self {
        Self {
            laplace_exponent,
            levy_tail,
            tail_integral: None,
            potential_density,
            builtin: None,
        }
    }

    /// α-stable subordinator, `f(s) = s^α`, `ν̄(t) = t^{−α}/Γ(1−α)`,
    /// `u(t) = t^{α−1}/Γ(α)`.
    pub fn stable(alpha: f64) -> Self {
        let g1 = gamma(1.0 - alpha);
        let g2 = gamma(2.0 - alpha);
        let ga = gamma(alpha);
        Self {
            laplace_exponent: Arc::new(move |s: Complex64| s.powf(alpha)),
            levy_tail: Arc::new(move |t: f64| t.powf(-alpha) / g1),
            tail_integral: Some(Arc::new(move |t: f64| t.powf(1.0 - alpha) / g2)),
            potential_density: Some(Arc::new(move |t: f64| t.powf(alpha - 1.0) / ga)),
            builtin: Some(BuiltinExponent::Stable { alpha }),
        }
    }

    /// Exponentially tempered α-stable subordinator with Lévy density
    /// `α w^{−α−1} e^{−θw} / Γ(1−α)`. Its potential density has no closed
    /// form and is obtained by numerical inversion of `1/f(s)`.
    pub fn tempered_stable(alpha: f64, theta: f64) -> Self {
        let g1 = gamma(1.0 - alpha);
        let tail = move |t: f64| {
            let x = theta * t;
            (t.powf(-alpha) * (-x).exp()
                - theta.powf(alpha) * upper_incomplete_gamma(1.0 - alpha, x))
                / g1
        };
        // ∫_0^t ν̄ = t ν̄(t) + ∫_0^t w ν(dw)
        let integral = move |t: f64| {
            if t == 0.0 {
                return 0.0;
            }
            let x = theta * t;
            let first_moment =
                alpha / g1 * theta.powf(alpha - 1.0) * lower_incomplete_gamma(1.0 - alpha, x);
            t * tail(t) + first_moment
        };
        let exponent = move |s: Complex64| (s + theta).powf(alpha) - theta.powf(alpha);
        let cfg = InversionConfig {
            method: InversionMethod::Talbot,
            ..InversionConfig::default()
        };
        let potential = move |t: f64| {
            if t <= 0.0 {
                return f64::INFINITY;
            }
            laplace::invert_laplace_scalar(&|s: Complex64| 1.0 / exponent(s), t, &cfg)
                .unwrap_or(f64::NAN)
        };
        Self {
            laplace_exponent: Arc::new(exponent),
            levy_tail: Arc::new(tail),
            tail_integral: Some(Arc::new(integral)),
            potential_density: Some(Arc::new(potential)),
            builtin: Some(BuiltinExponent::TemperedStable { alpha, theta }),
        }
    }

    pub fn from_builtin(b: BuiltinExponent) -> Self {
        match b {
            BuiltinExponent::Stable { alpha } => Self::stable(alpha),
            BuiltinExponent::TemperedStable { alpha, theta } => Self::tempered_stable(alpha, theta),
        }
    }
}

/// Holding-time law of one state.
#[derive(Debug, Clone)]
pub enum HoldingLaw {
    Exponential {
        rate: f64,
    },
    /// Survival `E_α(−λ t^α)`; α = 1 is the exponential law.
    MittagLeffler {
        alpha: f64,
        rate: f64,
    },
    /// Survival `E exp(−λ L(t))` with `L` the inverse of the subordinator;
    /// λ is the state's rate in the model.
    GeneralSubordinated(SubordinatorLaw),
}

impl HoldingLaw {
    /// Rate carried by the law itself (none for subordinated laws).
    pub fn rate(&self) -> Option<f64> {
        match self {
            HoldingLaw::Exponential { rate } | HoldingLaw::MittagLeffler { rate, .. } => {
                Some(*rate)
            }
            HoldingLaw::GeneralSubordinated(_) => None,
        }
    }

    /// Stability index for ML and exponential laws (exponential = 1).
    pub fn alpha(&self) -> Option<f64> {
        match self {
            HoldingLaw::Exponential { .. } => Some(1.0),
            HoldingLaw::MittagLeffler { alpha, .. } => Some(*alpha),
            HoldingLaw::GeneralSubordinated(s) => match s.builtin {
                Some(BuiltinExponent::Stable { alpha }) => Some(alpha),
                _ => None,
            },
        }
    }

    /// Laplace exponent `f(s)` of the operational-time subordinator
    /// (`s` for exponential, `s^α` for Mittag-Leffler).
    pub fn laplace_exponent(&self, s: Complex64) -> Complex64 {
        match self {
            HoldingLaw::Exponential { .. } => s,
            HoldingLaw::MittagLeffler { alpha, .. } => {
                if *alpha == 1.0 {
                    s
                } else {
                    s.powf(*alpha)
                }
            }
            HoldingLaw::GeneralSubordinated(law) => (law.laplace_exponent)(s),
        }
    }

    /// Potential density `u(t)`; `None` when unavailable.
    pub fn potential_density(&self, t: f64) -> Option<f64> {
        match self {
            HoldingLaw::Exponential { .. } => Some(1.0),
            HoldingLaw::MittagLeffler { alpha, .. } => Some(t.powf(alpha - 1.0) / gamma(*alpha)),
            HoldingLaw::GeneralSubordinated(law) => law.potential_density.as_ref().map(|u| u(t)),
        }
    }

    fn violations(&self, state: usize, model_rate: f64, out: &mut Vec<Violation>) {
        let field = format!("laws[{state}]");
        let rate_ok = |r: f64, out: &mut Vec<Violation>| {
            if !(r > 0.0 && r.is_finite()) {
                out.push(Violation::new(
                    &field,
                    "rate must be positive",
                    format!("{r}"),
                ));
            } else if (r - model_rate).abs() > 1e-12 * r.max(model_rate) {
                out.push(Violation::new(
                    &field,
                    "law rate must equal the model rate",
                    format!("{r} vs {model_rate}"),
                ));
            }
        };
        match self {
            HoldingLaw::Exponential { rate } => rate_ok(*rate, out),
            HoldingLaw::MittagLeffler { alpha, rate } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    out.push(Violation::new(
                        &field,
                        "alpha must lie in (0, 1]",
                        format!("{alpha}"),
                    ));
                }
                rate_ok(*rate, out);
            }
            HoldingLaw::GeneralSubordinated(law) => {
                if let Some(
                    BuiltinExponent::Stable { alpha }
                    | BuiltinExponent::TemperedStable { alpha, .. },
                ) = law.builtin
                {
                    if !(alpha > 0.0 && alpha < 1.0) {
                        out.push(Violation::new(
                            &field,
                            "alpha must lie in (0, 1)",
                            format!("{alpha}"),
                        ));
                        return;
                    }
                }
                if let Some(BuiltinExponent::TemperedStable { theta, .. }) = law.builtin {
                    if !(theta > 0.0) {
                        out.push(Violation::new(
                            &field,
                            "theta must be positive",
                            format!("{theta}"),
                        ));
                        return;
                    }
                }
                let f = |x: f64| (law.laplace_exponent)(Complex64::new(x, 0.0)).re;
                if f(1e-12).abs() > 1e-3 {
                    out.push(Violation::new(
                        &field,
                        "Laplace exponent must vanish at 0+",
                        format!("f(1e-12) = {}", f(1e-12)),
                    ));
                }
                let pts = [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4];
                if pts.windows(2).any(|w| f(w[1]) < f(w[0])) {
                    out.push(Violation::new(
                        &field,
                        "Laplace exponent must be nondecreasing",
                        String::new(),
                    ));
                }
                let tail = |t: f64| (law.levy_tail)(t);
                let tpts = [1e-12, 1e-9, 1e-6, 1e-3, 1.0, 10.0];
                if tpts.windows(2).any(|w| tail(w[1]) > tail(w[0])) {
                    out.push(Violation::new(
                        &field,
                        "Levy tail must be non-increasing",
                        String::new(),
                    ));
                }
                if !(tail(1e-12) > tail(1e-6) && tail(1e-6) > tail(1.0)) {
                    out.push(Violation::new(
                        &field,
                        "Levy tail must diverge at 0+ (infinite activity)",
                        String::new(),
                    ));
                }
            }
        }
    }
}

/// A broken model invariant: which field, which rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub detail: String,
}

impl Violation {
    fn new(field: &str, rule: &str, detail: String) -> Self {
        Self {
            field: field.to_string(),
            rule: rule.to_string(),
            detail,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            write!(f, "{}: {}", self.field, self.rule)
        } else {
            write!(f, "{}: {} ({})", self.field, self.rule, self.detail)
        }
    }
}

/// Semi-Markov chain on a finite state window.
#[derive(Debug, Clone)]
pub struct SemiMarkovModel {
    pub n_states: usize,
    /// Row-stochastic embedded chain.
    pub h: DMatrix<f64>,
    pub rates: Vec<f64>,
    pub holding_laws: Vec<HoldingLaw>,
    pub diagonal_jumps_allowed: bool,
    /// States on the truncation edge; samplers flag paths that reach them.
    pub boundary: Vec<usize>,
}

impl SemiMarkovModel {
    /// Builds and validates a model.
    pub fn new(h: DMatrix<f64>, rates: Vec<f64>, holding_laws: Vec<HoldingLaw>) -> Result<Self> {
        Self::from_parts(h, rates, holding_laws, false)
    }

    pub fn from_parts(
        h: DMatrix<f64>,
        rates: Vec<f64>,
        holding_laws: Vec<HoldingLaw>,
        diagonal_jumps_allowed: bool,
    ) -> Result<Self> {
        let m = Self {
            n_states: h.nrows(),
            h,
            rates,
            holding_laws,
            diagonal_jumps_allowed,
            boundary: Vec::new(),
        };
        m.validated()
    }

    /// All holding laws Mittag-Leffler with the given indices.
    pub fn mittag_leffler(h: DMatrix<f64>, rates: Vec<f64>, alphas: &[f64]) -> Result<Self> {
        let laws = alphas
            .iter()
            .zip(&rates)
            .map(|(&alpha, &rate)| HoldingLaw::MittagLeffler { alpha, rate })
            .collect();
        Self::new(h, rates, laws)
    }

    pub fn exponential(h: DMatrix<f64>, rates: Vec<f64>) -> Result<Self> {
        let laws = rates
            .iter()
            .map(|&rate| HoldingLaw::Exponential { rate })
            .collect();
        Self::new(h, rates, laws)
    }

    pub fn with_diagonal_jumps(mut self) -> Result<Self> {
        self.diagonal_jumps_allowed = true;
        self.validated()
    }

    pub fn with_boundary(mut self, boundary: Vec<usize>) -> Result<Self> {
        self.boundary = boundary;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let v = validate_model(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Pure-birth chain 0 → 1 → … → n−1 with state-dependent ML orders,
    /// absorbing in the last state (the fractional Poisson window).
    pub fn birth_chain(lambda: f64, alphas: &[f64]) -> Result<Self> {
        let n = alphas.len();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            h[(i, i + 1)] = 1.0;
        }
        h[(n - 1, n - 1)] = 1.0;
        let laws = alphas
            .iter()
            .map(|&alpha| HoldingLaw::MittagLeffler {
                alpha,
                rate: lambda,
            })
            .collect();
        Self::from_parts(h, vec![lambda; n], laws, true)?.with_boundary(vec![n - 1])
    }

    /// Whether state `i` never leaves (`h_{i,i} = 1`).
    pub fn is_absorbing(&self, i: usize) -> bool {
        self.h[(i, i)] == 1.0
    }

    /// Stability indices when every law is ML/exponential/stable.
    pub fn alphas(&self) -> Option<Vec<f64>> {
        self.holding_laws.iter().map(HoldingLaw::alpha).collect()
    }

    pub fn check_state(&self, i: usize) -> Result<()> {
        if i < self.n_states {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "state {i} outside [0, {})",
                self.n_states
            )))
        }
    }

    /// Serializable description; fails for custom subordinator callables.
    pub fn to_document(&self) -> Result<ModelDocument> {
        let laws = self
            .holding_laws
            .iter()
            .map(|law| match law {
                HoldingLaw::Exponential { rate } => Ok(LawDocument {
                    kind: LawKind::Exponential,
                    alpha: None,
                    lambda: Some(*rate),
                    builtin_exponent: None,
                }),
                HoldingLaw::MittagLeffler { alpha, rate } => Ok(LawDocument {
                    kind: LawKind::MittagLeffler,
                    alpha: Some(*alpha),
                    lambda: Some(*rate),
                    builtin_exponent: None,
                }),
                HoldingLaw::GeneralSubordinated(s) => match s.builtin {
                    Some(b) => Ok(LawDocument {
                        kind: LawKind::GeneralSubordinated,
                        alpha: None,
                        lambda: None,
                        builtin_exponent: Some(b.to_string()),
                    }),
                    None => Err(Error::Document(
                        "custom subordinator callables cannot be serialized".into(),
                    )),
                },
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelDocument {
            n_states: self.n_states,
            h: (0..self.n_states)
                .flat_map(|i| (0..self.n_states).map(move |j| (i, j)))
                .map(|(i, j)| self.h[(i, j)])
                .collect(),
            lambda: self.rates.clone(),
            laws,
            diagonal_jumps_allowed: self.diagonal_jumps_allowed,
            boundary: self.boundary.clone(),
        })
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let n = doc.n_states;
        if doc.h.len() != n * n {
            return Err(Error::Document(format!(
                "h has {} entries, expected {}",
                doc.h.len(),
                n * n
            )));
        }
        if doc.lambda.len() != n || doc.laws.len() != n {
            return Err(Error::Document(
                "lambda and laws need one entry per state".into(),
            ));
        }
        let h = DMatrix::from_row_slice(n, n, &doc.h);
        let laws = doc
            .laws
            .iter()
            .zip(&doc.lambda)
            .map(|(l, &rate)| {
                let law_rate = l.lambda.unwrap_or(rate);
                match l.kind {
                    LawKind::Exponential => Ok(HoldingLaw::Exponential { rate: law_rate }),
                    LawKind::MittagLeffler => Ok(HoldingLaw::MittagLeffler {
                        alpha: l.alpha.ok_or_else(|| {
                            Error::Document("mittag_leffler law needs alpha".into())
                        })?,
                        rate: law_rate,
                    }),
                    LawKind::GeneralSubordinated => {
                        let b: BuiltinExponent = match (&l.builtin_exponent, l.alpha) {
                            (Some(s), _) => s.parse()?,
                            (None, Some(alpha)) => BuiltinExponent::Stable { alpha },
                            (None, None) => {
                                return Err(Error::Document(
                                    "general_subordinated law needs builtin_exponent".into(),
                                ))
                            }
                        };
                        Ok(HoldingLaw::GeneralSubordinated(
                            SubordinatorLaw::from_builtin(b),
                        ))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Self {
            n_states: n,
            h,
            rates: doc.lambda.clone(),
            holding_laws: laws,
            diagonal_jumps_allowed: doc.diagonal_jumps_allowed,
            boundary: doc.boundary.clone(),
        };
        m.validated()
    }
}

/// JSON form of a model: `h` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n_states: usize,
    pub h: Vec<f64>,
    pub lambda: Vec<f64>,
    pub laws: Vec<LawDocument>,
    #[serde(default)]
    pub diagonal_jumps_allowed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Exponential,
    MittagLeffler,
    GeneralSubordinated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawDocument {
    pub kind: LawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin_exponent: Option<String>,
}

/// Lists every broken invariant; empty iff the model is valid.
pub fn validate_model(model: &SemiMarkovModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.n_states;
    if n == 0 {
        out.push(Violation::new("n_states", "must be positive", "0".into()));
        return out;
    }
    if model.h.nrows() != n || model.h.ncols() != n {
        out.push(Violation::new(
            "h",
            "must be n_states x n_states",
            format!("{}x{}", model.h.nrows(), model.h.ncols()),
        ));
        return out;
    }
    for i in 0..n {
        let row = model.h.row(i);
        if row.iter().any(|&x| !(x >= 0.0)) {
            out.push(Violation::new(
                &format!("h[{i}]"),
                "entries must be nonnegative",
                String::new(),
            ));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            out.push(Violation::new(
                &format!("h[{i}]"),
                "row must sum to 1 (row-stochasticity)",
                format!("sum = {s}"),
            ));
        }
        if !model.diagonal_jumps_allowed && model.h[(i, i)] != 0.0 {
            out.push(Violation::new(
                &format!("h[{i}][{i}]"),
                "diagonal jumps are not allowed",
                format!("{}", model.h[(i, i)]),
            ));
        }
    }
    if model.rates.len() != n {
        out.push(Violation::new(
            "rates",
            "need one rate per state",
            format!("{}", model.rates.len()),
        ));
    } else {
        for (i, &r) in model.rates.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                out.push(Violation::new(
                    &format!("rates[{i}]"),
                    "must be positive",
                    format!("{r}"),
                ));
            }
        }
    }
    if model.holding_laws.len() != n {
        out.push(Violation::new(
            "holding_laws",
            "need one law per state",
            format!("{}", model.holding_laws.len()),
        ));
    } else if model.rates.len() == n {
        for (i, law) in model.holding_laws.iter().enumerate() {
            law.violations(i, model.rates[i], &mut out);
        }
    }
    for &b in &model.boundary {
        if b >= n {
            out.push(Violation::new(
                "boundary",
                "state index out of range",
                format!("{b}"),
            ));
        }
    }
    out
}

/// Markov generator `g_{i,j} = λ_i (h_{i,j} − δ_{i,j})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub g: DMatrix<f64>,
}

impl Generator {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

pub fn build_generator(model: &SemiMarkovModel) -> Result<Generator> {
    let v = validate_model(model);
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let n = model.n_states;
    let g = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        model.rates[i] * (model.h[(i, j)] - delta)
    });
    Ok(Generator { g })
}

fn default_inversion() -> InversionConfig {
    InversionConfig {
        method: InversionMethod::Talbot,
        ..InversionConfig::default()
    }
}

/// `P(J > t | X = i)` for the law of state `i`.
pub fn holding_survival(model: &SemiMarkovModel, i: usize, t: f64) -> Result<f64> {
    model.check_state(i)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    match &model.holding_laws[i] {
        HoldingLaw::Exponential { rate } => Ok((-rate * t).exp()),
        HoldingLaw::MittagLeffler { alpha, rate } => mlf::ml_survival(*alpha, *rate, t),
        HoldingLaw::GeneralSubordinated(law) => {
            if t == 0.0 {
                return Ok(1.0);
            }
            let lambda = model.rates[i];
            let f = law.laplace_exponent.clone();
            let transform = move |s: Complex64| {
                let fs = f(s);
                fs / (s * (lambda + fs))
            };
            let cfg = default_inversion();
            let v = laplace::invert_laplace_scalar(&transform, t, &cfg).map_err(|e| {
                Error::Numeric(format!(
                    "survival inversion for state {i} at t = {t} on a {}-node Talbot contour: {e}",
                    cfg.talbot_nodes
                ))
            })?;
            Ok(v.clamp(0.0, 1.0))
        }
    }
}

/// Which route produced a transition grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Renewal,
    BackwardCaputo,
    ForwardRL,
    LaplaceInversion,
    BackwardVolterra,
    ForwardVolterra,
    MonteCarlo,
    /// `exp(tG)`, exact for Markov (exponential or α = 1) models.
    MatrixExponential,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// `p_{i,j}(t_n)` on a time grid, started from renewal instants.
#[derive(Debug, Clone)]
pub struct TransitionGrid {
    pub times: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
    pub provenance: Provenance,
    /// Step of the uniform grid, when the grid is uniform.
    pub dt: Option<f64>,
}

/// Entries may undershoot 0 or overshoot 1 by this much.
pub const ENTRY_SLACK: f64 = 1e-6;

impl TransitionGrid {
    pub fn uniform(dt: f64, n_steps: usize) -> Vec<f64> {
        (0..=n_steps).map(|k| k as f64 * dt).collect()
    }

    pub fn n_states(&self) -> usize {
        self.values.first().map_or(0, |m| m.nrows())
    }

    /// Largest |row sum − 1| over the grid.
    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|m| {
                m.row_iter()
                    .map(|r| (r.sum() - 1.0).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Invariant report: identity at t = 0, entries within slack, row sums
    /// within `row_tol`.
    pub fn check(&self, row_tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if let (Some(&t0), Some(p0)) = (self.times.first(), self.values.first()) {
            if t0 == 0.0 {
                let n = p0.nrows();
                let dev = (p0 - DMatrix::<f64>::identity(n, n)).amax();
                if dev > 1e-12 {
                    out.push(format!("P(0) deviates from identity by {dev:e}"));
                }
            }
        }
        for (t, m) in self.times.iter().zip(&self.values) {
            if m.iter().any(|&p| p < -ENTRY_SLACK || p > 1.0 + ENTRY_SLACK) {
                out.push(format!("entry outside [0, 1] at t = {t}"));
                break;
            }
        }
        let rs = self.max_row_sum_error();
        if rs > row_tol {
            out.push(format!("row sums off by {rs:e} > {row_tol:e}"));
        }
        out
    }

    /// Sup-norm distance on common times (matched to 1e-9).
    pub fn sup_distance(&self, other: &TransitionGrid) -> Result<f64> {
        let mut best: f64 = 0.0;
        let mut matched = 0;
        let mut j = 0;
        for (t, m) in self.times.iter().zip(&self.values) {
            while j < other.times.len() && other.times[j] < t - 1e-9 {
                j += 1;
            }
            if j < other.times.len() && (other.times[j] - t).abs() <= 1e-9 {
                if m.shape() != other.values[j].shape() {
                    return Err(Error::Domain("grids have different state counts".into()));
                }
                best = best.max((m - &other.values[j]).amax());
                matched += 1;
            }
        }
        if matched == 0 {
            return Err(Error::Domain("grids share no time points".into()));
        }
        Ok(best)
    }

    /// Restriction to the listed times (matched to 1e-9).
    pub fn subsample(&self, times: &[f64]) -> Result<TransitionGrid> {
        let mut values = Vec::with_capacity(times.len());
        for &t in times {
            let k = self
                .times
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9)
                .ok_or_else(|| Error::Domain(format!("time {t} not on grid")))?;
            values.push(self.values[k].clone());
        }
        Ok(TransitionGrid {
            times: times.to_vec(),
            values,
            provenance: self.provenance,
            dt: None,
        })
    }

    /// `t,i,j,p` rows, row-major over (t, i, j), 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,i,j,p")?;
        for (t, m) in self.times.iter().zip(&self.values) {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    writeln!(w, "{:.16e},{},{},{:.16e}", t, i, j, m[(i, j)])?;
                }
            }
        }
        Ok(())
    }
}

/// One CTRW trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    /// `T_0 = 0 < T_1 < …`, every entry at or before the horizon.
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    /// `J_k = T_{k+1} − T_k`; the last one ends past the horizon
    /// (infinite in an absorbing state).
    pub holding_times: Vec<f64>,
    pub hit_boundary: bool,
}

impl PathSample {
    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }

    /// Age `γ(t) = t − max{T_k ≤ t}`.
    pub fn age_at(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        t - self.jump_times[k.saturating_sub(1)]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
