//! Path simulation: positive-stable and Mittag-Leffler samplers, the direct
//! CTRW construction, the time change of a Markov chain by a piecewise-stable
//! subordinator, and empirical transition probabilities.
//!
//! Every path owns a ChaCha8 stream selected by its index, so results do not
//! depend on how rayon schedules the work.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{BuiltinExponent, HoldingLaw, PathSample, SemiMarkovModel};

/// Reproducibility key: `(seed, stream_id)` determines every draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream_id: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Generator for path `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(self.stream_id)));
        rng.set_stream(index);
        rng
    }
}

fn check_alpha_open(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")))
    }
}

/// `H_α(1)`: Kanter's representation, `E e^{−sH} = e^{−s^α}`.
fn stable_unit<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    // open interval keeps sin(U) away from 0
    let u = loop {
        let u: f64 = rng.gen::<f64>() * PI;
        if u > 0.0 {
            break u;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// One draw of the stable subordinator `H_α(t) = t^{1/α} H_α(1)`.
pub fn sample_stable_subordinator<R: Rng + ?Sized>(alpha: f64, t: f64, rng: &mut R) -> Result<f64> {
    check_alpha_open(alpha)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    Ok(t.powf(1.0 / alpha) * stable_unit(alpha, rng))
}

/// Mittag-Leffler waiting time `E^{1/α} H_α(1)` with `E ~ Exp(λ)`.
pub fn sample_ml_waiting<R: Rng + ?Sized>(alpha: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1]")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "rate lambda = {lambda} must be positive"
        )));
    }
    Ok(ml_draw(alpha, lambda, rng))
}

fn ml_draw<R: Rng + ?Sized>(alpha: f64, lambda: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    let e = e / lambda;
    if alpha == 1.0 {
        e
    } else {
        e.powf(1.0 / alpha) * stable_unit(alpha, rng)
    }
}

/// Precomputed sampling tables for a model.
#[derive(Debug, Clone)]
struct Sampler {
    /// (state, cumulative probability) over the support of each row
    rows: Vec<Vec<(usize, f64)>>,
    rates: Vec<f64>,
    alphas: Vec<f64>,
    absorbing: Vec<bool>,
    boundary: Vec<bool>,
}

impl Sampler {
    fn new(model: &SemiMarkovModel) -> Result<Self> {
        let errs = crate::process::validate_model(model);
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let n = model.n_states;
        let mut alphas = Vec::with_capacity(n);
        for (i, law) in model.holding_laws.iter().enumerate() {
            let a = match law {
                HoldingLaw::Exponential { .. } => 1.0,
                HoldingLaw::MittagLeffler { alpha, .. } => *alpha,
                HoldingLaw::GeneralSubordinated(s) => match s.builtin {
                    Some(BuiltinExponent::Stable { alpha }) => alpha,
                    _ => {
                        return Err(Error::Hypothesis(format!(
                            "state {i}: no exact sampler for a general subordinated law"
                        )))
                    }
                },
            };
            alphas.push(a);
        }
        let rows = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                let mut row = Vec::new();
                for j in 0..n {
                    let p = model.h[(i, j)];
                    if p > 0.0 {
                        acc += p;
                        row.push((j, acc));
                    }
                }
                if let Some(last) = row.last_mut() {
                    last.1 = f64::INFINITY;
                }
                row
            })
            .collect();
        let mut boundary = vec![false; n];
        for &b in &model.boundary {
            boundary[b] = true;
        }
        Ok(Self {
            rows,
            rates: model.rates.clone(),
            alphas,
            absorbing: (0..n).map(|i| model.is_absorbing(i)).collect(),
            boundary,
        })
    }

    fn check_start(&self, start: usize) -> Result<()> {
        if start < self.rates.len() {
            Ok(())
        } else {
            Err(Error::Domain(format!("start state {start} out of range")))
        }
    }

    fn next_state<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let row = &self.rows[i];
        row[row.partition_point(|&(_, c)| c <= u)].0
    }

    fn holding<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> f64 {
        if self.absorbing[i] {
            return f64::INFINITY;
        }
        ml_draw(self.alphas[i], self.rates[i], rng)
    }

    /// State at each of the sorted `times`, without storing the path.
    fn states_at<R: Rng + ?Sized>(
        &self,
        start: usize,
        times: &[f64],
        rng: &mut R,
        out: &mut Vec<usize>,
    ) {
        out.clear();
        let mut state = start;
        let mut t = 0.0;
        let mut k = 0;
        loop {
            let next = t + self.holding(state, rng);
            while k < times.len() && times[k] < next {
                out.push(state);
                k += 1;
            }
            if k == times.len() {
                return;
            }
            t = next;
            state = self.next_state(state, rng);
        }
    }
}

fn check_horizon(t_max: f64) -> Result<()> {
    if t_max > 0.0 && t_max.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("horizon {t_max} must be positive")))
    }
}

/// Direct construction: alternate embedded-chain jumps and holding draws
/// until the first jump time past `t_max`.
pub fn simulate_ctrw<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    start: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<PathSample> {
    check_horizon(t_max)?;
    let s = Sampler::new(model)?;
    s.check_start(start)?;
    Ok(ctrw_path(&s, start, Stop::Horizon(t_max), rng))
}

/// Direct construction stopped after `n_jumps` holding times (or at an
/// absorbing state). Holding-time samples from this variant carry no
/// horizon length bias.
pub fn simulate_ctrw_jumps<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    start: usize,
    n_jumps: usize,
    rng: &mut R,
) -> Result<PathSample> {
    let s = Sampler::new(model)?;
    s.check_start(start)?;
    Ok(ctrw_path(&s, start, Stop::Jumps(n_jumps), rng))
}

#[derive(Clone, Copy)]
enum Stop {
    Horizon(f64),
    Jumps(usize),
}

fn ctrw_path<R: Rng + ?Sized>(s: &Sampler, start: usize, stop: Stop, rng: &mut R) -> PathSample {
    let mut path = PathSample {
        jump_times: vec![0.0],
        states: vec![start],
        holding_times: Vec::new(),
        hit_boundary: s.boundary[start],
    };
    let mut state = start;
    let mut t = 0.0;
    loop {
        let j = s.holding(state, rng);
        path.holding_times.push(j);
        t += j;
        let done = match stop {
            Stop::Horizon(t_max) => t > t_max,
            Stop::Jumps(n) => path.holding_times.len() >= n,
        };
        if done || j.is_infinite() {
            return path;
        }
        state = s.next_state(state, rng);
        path.jump_times.push(t);
        path.states.push(state);
        path.hit_boundary |= s.boundary[state];
    }
}

/// Values of the piecewise-stable subordinator `σ^M` along one Markov path.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    /// Jump times `V_j` of the driving Markov chain (operational time).
    pub breakpoints: Vec<f64>,
    /// Stability index in force on `[V_j, V_{j+1})`.
    pub alphas: Vec<f64>,
    /// `(u, σ^M(u))` on the refinement grid, breakpoints included.
    pub grid: Vec<(f64, f64)>,
}

impl SubordinatorPath {
    /// `σ^M` at the breakpoints.
    pub fn at_breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.breakpoints.len());
        let mut k = 0;
        for &v in &self.breakpoints {
            while self.grid[k].0 < v {
                k += 1;
            }
            out.push(self.grid[k].1);
        }
        out
    }
}

/// Markov chain `M` with exponential clocks, time-changed by the inverse of
/// `σ^M`, whose increment over `[V_n, V_{n+1})` is an independent
/// `H_{α_{X_n}}`-increment. Each segment increment is drawn as the sum of
/// `refine` independent sub-increments; `refine = 1` uses breakpoints only.
pub fn simulate_time_changed_with<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    start: usize,
    stop_after: TimeChangeStop,
    refine: usize,
    rng: &mut R,
) -> Result<(PathSample, SubordinatorPath)> {
    let s = Sampler::new(model)?;
    s.check_start(start)?;
    if let Some((i, law)) = model
        .holding_laws
        .iter()
        .enumerate()
        .find(|(_, l)| !matches!(l, HoldingLaw::MittagLeffler { .. }))
    {
        return Err(Error::Hypothesis(format!(
            "state {i} has law {law:?}; the time change needs Mittag-Leffler laws"
        )));
    }
    if refine == 0 {
        return Err(Error::Domain("refine must be at least 1".into()));
    }
    if let TimeChangeStop::Horizon(t) = stop_after {
        check_horizon(t)?;
    }

    let mut sub = SubordinatorPath {
        breakpoints: vec![0.0],
        alphas: Vec::new(),
        grid: vec![(0.0, 0.0)],
    };
    let mut states = vec![start];
    let mut state = start;
    let (mut v, mut sigma) = (0.0, 0.0);
    loop {
        let alpha = s.alphas[state];
        sub.alphas.push(alpha);
        if s.absorbing[state] {
            sub.breakpoints.push(f64::INFINITY);
            sub.grid.push((f64::INFINITY, f64::INFINITY));
            break;
        }
        // Markov clock E_n in operational time
        let e: f64 = Exp1.sample(rng);
        let e = e / s.rates[state];
        let du = e / refine as f64;
        for m in 1..=refine {
            let inc = if alpha == 1.0 {
                du
            } else {
                du.powf(1.0 / alpha) * stable_unit(alpha, rng)
            };
            sigma += inc;
            let u = if m == refine {
                v + e
            } else {
                v + du * m as f64
            };
            sub.grid.push((u, sigma));
        }
        v += e;
        sub.breakpoints.push(v);
        let done = match stop_after {
            TimeChangeStop::Horizon(t_max) => sigma > t_max,
            TimeChangeStop::Jumps(n) => sub.alphas.len() >= n,
        };
        if done {
            break;
        }
        state = s.next_state(state, rng);
        states.push(state);
    }

    // X(t) = M(L^M(t)): the n-th real-time jump is at σ^M(V_n)
    let sig = sub.at_breakpoints();
    let mut path = PathSample {
        jump_times: sig[..states.len()].to_vec(),
        states,
        holding_times: sig.windows(2).map(|w| w[1] - w[0]).collect(),
        hit_boundary: false,
    };
    path.hit_boundary = path.states.iter().any(|&x| s.boundary[x]);
    Ok((path, sub))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeChangeStop {
    Horizon(f64),
    Jumps(usize),
}

/// Time-changed construction up to the first jump past `t_max`.
pub fn simulate_time_changed<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    start: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<PathSample> {
    simulate_time_changed_with(model, start, TimeChangeStop::Horizon(t_max), 1, rng).map(|r| r.0)
}

/// Time-changed construction stopped after `n_jumps` holding times.
pub fn simulate_time_changed_jumps<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    start: usize,
    n_jumps: usize,
    rng: &mut R,
) -> Result<PathSample> {
    simulate_time_changed_with(model, start, TimeChangeStop::Jumps(n_jumps), 1, rng).map(|r| r.0)
}

/// Which path construction to use in batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Direct,
    TimeChanged,
}

/// `n_paths` paths from `start`, path `k` on stream `k`.
pub fn simulate_many(
    model: &SemiMarkovModel,
    start: usize,
    t_max: f64,
    n_paths: usize,
    construction: Construction,
    spec: RngSpec,
) -> Result<Vec<PathSample>> {
    check_horizon(t_max)?;
    Sampler::new(model)?.check_start(start)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = spec.rng(k);
            match construction {
                Construction::Direct => simulate_ctrw(model, start, t_max, &mut rng),
                Construction::TimeChanged => simulate_time_changed(model, start, t_max, &mut rng),
            }
        })
        .collect()
}

/// Empirical `p_{i,j}(t)` with binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTransition {
    pub times: Vec<f64>,
    /// `estimate[k][j]` at `times[k]`
    pub estimate: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
    pub n_paths: usize,
    /// Paths that visited a boundary state before the last time.
    pub boundary_hits: usize,
}

impl EmpiricalTransition {
    fn from_counts(times: &[f64], counts: Vec<Vec<u64>>, n: usize, boundary_hits: usize) -> Self {
        let nf = n as f64;
        let estimate: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / nf).collect())
            .collect();
        let std_error = estimate
            .iter()
            .map(|row| row.iter().map(|&p| (p * (1.0 - p) / nf).sqrt()).collect())
            .collect();
        Self {
            times: times.to_vec(),
            estimate,
            std_error,
            n_paths: n,
            boundary_hits,
        }
    }
}

/// Fraction of `paths` in each state at time `t`. Every path must start in
/// state `i` at a renewal instant.
pub fn empirical_transition(
    paths: &[PathSample],
    n_states: usize,
    t: f64,
    i: usize,
) -> Result<Vec<(f64, f64)>> {
    if paths.is_empty() {
        return Err(Error::Empty("no paths".into()));
    }
    let mut counts = vec![0u64; n_states];
    for p in paths {
        if p.states.first() != Some(&i) {
            return Err(Error::Domain(format!("path does not start in state {i}")));
        }
        let j = p.state_at(t);
        if j >= n_states {
            return Err(Error::Domain(format!(
                "path visits state {j} beyond {n_states} states"
            )));
        }
        counts[j] += 1;
    }
    let e = EmpiricalTransition::from_counts(&[t], vec![counts], paths.len(), 0);
    Ok(e.estimate[0]
        .iter()
        .copied()
        .zip(e.std_error[0].iter().copied())
        .collect())
}

/// Empirical transition probabilities from `start` at several times, by
/// direct simulation without storing paths. Deterministic for a given `spec`
/// whatever the thread count.
pub fn occupation_at(
    model: &SemiMarkovModel,
    start: usize,
    times: &[f64],
    n_paths: usize,
    spec: RngSpec,
) -> Result<EmpiricalTransition> {
    if n_paths == 0 {
        return Err(Error::Empty("n_paths must be positive".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] < w[0]) || times[0] < 0.0 {
        return Err(Error::Domain(
            "times must be non-empty, non-negative and sorted".into(),
        ));
    }
    let s = Sampler::new(model)?;
    s.check_start(start)?;
    let n = model.n_states;
    let zero = || (vec![vec![0u64; n]; times.len()], 0usize);
    let (counts, hits) = (0..n_paths as u64)
        .into_par_iter()
        .fold(
            || (zero(), Vec::with_capacity(times.len())),
            |((mut c, mut h), mut buf), k| {
                let mut rng = spec.rng(k);
                s.states_at(start, times, &mut rng, &mut buf);
                for (slot, &x) in c.iter_mut().zip(buf.iter()) {
                    slot[x] += 1;
                }
                if buf.iter().any(|&x| s.boundary[x]) {
                    h += 1;
                }
                ((c, h), buf)
            },
        )
        .map(|(acc, _)| acc)
        .reduce(zero, |(mut a, ha), (b, hb)| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            (a, ha + hb)
        });
    Ok(EmpiricalTransition::from_counts(
        times, counts, n_paths, hits,
    ))
}

/// Holding times grouped by the state they were spent in. Infinite holding
/// times (absorbing states) are dropped.
pub fn holding_times_by_state(paths: &[PathSample], n_states: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n_states];
    for p in paths {
        for (x, &j) in p.states.iter().zip(&p.holding_times) {
            if j.is_finite() {
                out[*x].push(j);
            }
        }
    }
    out
}

/// Embedded-chain transition counts `#{n : X_n = i, X_{n+1} = j}`.
pub fn transition_counts(paths: &[PathSample], n_states: usize) -> DMatrix<u64> {
    let mut c = DMatrix::zeros(n_states, n_states);
    for p in paths {
        for w in p.states.windows(2) {
            c[(w[0], w[1])] += 1;
        }
    }
    c
}

/// Path dump, one record per visited state: `path_id,n,state,T_n,J_n`.
pub fn write_paths_csv<W: Write>(paths: &[PathSample], mut w: W) -> std::io::Result<()> {
    writeln!(w, "path_id,n,state,T_n,J_n")?;
    for (id, p) in paths.iter().enumerate() {
        for n in 0..p.states.len() {
            let j = p.holding_times.get(n).copied().unwrap_or(f64::NAN);
            writeln!(
                w,
                "{id},{n},{},{:.16e},{:.16e}",
                p.states[n], p.jump_times[n], j
            )?;
        }
    }
    Ok(())
}
