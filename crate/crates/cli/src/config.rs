//! JSON experiment documents.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use semimarkov::diffusion::{Boundary, DensityKind, LatticeSpec, Profile, ScalingReference};
use semimarkov::laplace::InversionConfig;
use semimarkov::montecarlo::{Construction, RngSpec};
use semimarkov::process::{ModelDocument, SemiMarkovModel};
use semimarkov::solvers::DiscretizationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Simulate,
    Compare,
    Diffusion,
    Aggregate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Diffusion => "diffusion",
            Command::Aggregate => "aggregate",
        }
    }
}

/// Solution routes for a transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Renewal,
    BackwardCaputo,
    ForwardRl,
    Laplace,
    BackwardVolterra,
    ForwardVolterra,
    MonteCarlo,
    MatrixExponential,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Renewal => "renewal",
            Method::BackwardCaputo => "backward_caputo",
            Method::ForwardRl => "forward_rl",
            Method::Laplace => "laplace",
            Method::BackwardVolterra => "backward_volterra",
            Method::ForwardVolterra => "forward_volterra",
            Method::MonteCarlo => "monte_carlo",
            Method::MatrixExponential => "matrix_exponential",
        }
    }
}

/// Inline model document or a path to one, relative to the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Inline(ModelDocument),
    File(PathBuf),
}

/// A method, optionally run on its own model instead of the shared one.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(Method),
    Full {
        method: Method,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        model: Option<ModelSource>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    /// Start state for `simulate`; `compare` runs every state.
    pub start: usize,
    /// Evaluation times, snapped to the discretization grid.
    pub times: Vec<f64>,
    pub construction: Construction,
    pub dump_paths: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            start: 0,
            times: Vec::new(),
            construction: Construction::Direct,
            dump_paths: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Sup-norm bound between two deterministic routes.
    pub sup_norm: f64,
    /// Monte Carlo entries pass within `max(mc_sigmas·se, mc_floor)`.
    pub mc_sigmas: f64,
    pub mc_floor: f64,
    /// Allowed `|row sum − 1|` of every solved grid.
    pub row_sum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sup_norm: 1e-3,
            mc_sigmas: 4.0,
            mc_floor: 5e-3,
            row_sum: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub epsilon: f64,
    pub alpha: Profile,
    #[serde(default = "unit_profile")]
    pub k: Profile,
    #[serde(default = "reflecting")]
    pub boundary: Boundary,
}

fn unit_profile() -> Profile {
    Profile::Constant { value: 1.0 }
}

fn reflecting() -> Boundary {
    Boundary::Reflecting
}

impl LatticeConfig {
    pub fn spec(&self) -> Result<LatticeSpec> {
        Ok(
            LatticeSpec::new(self.x_min, self.x_max, self.epsilon, self.alpha.to_fn())?
                .with_k(self.k.to_fn())?
                .with_boundary(self.boundary)?,
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub eps_list: Vec<f64>,
    pub t_eval: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub reference: ScalingReference,
    /// Bound on the L1 distance at the smallest ε.
    #[serde(default)]
    pub max_final_l1: Option<f64>,
    #[serde(default = "yes")]
    pub require_monotone: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(default = "forward")]
    pub kind: DensityKind,
    /// Source point of forward runs, target point of backward runs.
    pub anchor: f64,
    /// Times written to the density file; every step when empty.
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub max_mass_drift: Option<f64>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
}

fn forward() -> DensityKind {
    DensityKind::Forward
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    pub source: f64,
    pub region: (f64, f64),
    /// Report times; every step when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub require_monotone: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub rng: Option<RngSpec>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default)]
    pub aggregate: Option<AggregateConfig>,
    #[serde(default)]
    pub output: Option<String>,
}

/// Parsed config together with the bytes it came from.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub digest: String,
    pub dir: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded> {
    use sha2::{Digest, Sha256};
    let bytes =
        std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let digest = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        config,
        digest,
        dir,
    })
}

impl ExperimentConfig {
    pub fn check(&self, cmd: Command) -> Result<()> {
        if let Some(c) = self.command {
            if c != cmd {
                bail!("config is for `{}` but `{}` was run", c.name(), cmd.name());
            }
        }
        self.discretization.validate()?;
        self.inversion.validate()?;
        let t = &self.tolerances;
        for (name, v) in [
            ("sup_norm", t.sup_norm),
            ("mc_floor", t.mc_floor),
            ("row_sum", t.row_sum),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("tolerances.{name} = {v} must be finite and non-negative");
            }
        }
        if !(t.mc_sigmas > 0.0 && t.mc_sigmas.is_finite()) {
            bail!("tolerances.mc_sigmas = {} must be positive", t.mc_sigmas);
        }
        Ok(())
    }

    pub fn rng(&self) -> Result<RngSpec> {
        self.rng
            .context("`rng` {seed, stream_id} is required for sampling")
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        self.lattice
            .as_ref()
            .context("`lattice` is required")?
            .spec()
    }

    /// Evaluation times on the grid: the listed ones snapped to the nearest
    /// step, or four evenly spaced steps.
    pub fn eval_times(&self) -> Result<Vec<f64>> {
        let d = &self.discretization;
        let steps: Vec<usize> = if self.simulation.times.is_empty() {
            (1..=4).map(|k| (k * d.n_steps / 4).max(1)).collect()
        } else {
            self.simulation
                .times
                .iter()
                .map(|&t| {
                    if !(t > 0.0 && t <= d.horizon() * (1.0 + 1e-12)) {
                        bail!("evaluation time {t} outside (0, {}]", d.horizon());
                    }
                    Ok((t / d.dt).round() as usize)
                })
                .collect::<Result<_>>()?
        };
        let mut steps = steps;
        steps.sort_unstable();
        steps.dedup();
        Ok(steps.into_iter().map(|k| k as f64 * d.dt).collect())
    }
}

pub fn resolve_model(src: &ModelSource, dir: &Path) -> Result<SemiMarkovModel> {
    let doc = match src {
        ModelSource::Inline(doc) => doc.clone(),
        ModelSource::File(p) => {
            let path = dir.join(p);
            let bytes = std::fs::read(&path)
                .with_context(|| format!("reading model {}", path.display()))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing model {}", path.display()))?
        }
    };
    Ok(SemiMarkovModel::from_document(&doc)?)
}
