use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use semimarkov::diffusion::{
    aggregation_diagnostic, scaling_limit_experiment, solve_vo_heat_backward,
    solve_vo_heat_forward, DensityGrid, DensityKind, ScalingSetup,
};
use semimarkov::laplace::solve_laplace;
use semimarkov::montecarlo::{
    empirical_transition, occupation_at, simulate_many, write_paths_csv, RngSpec,
};
use semimarkov::process::{Provenance, SemiMarkovModel, TransitionGrid};
use semimarkov::solvers::{
    matrix_exponential_grid, solve_backward_caputo, solve_backward_volterra, solve_forward_rl,
    solve_forward_volterra, solve_renewal,
};

use crate::artifact::Artifacts;
use crate::config::{resolve_model, ExperimentConfig, Loaded, Method, MethodEntry};

/// Tolerance checks that did not pass; empty means exit code 0.
pub type Failures = Vec<String>;

struct Solved {
    label: String,
    grid: TransitionGrid,
    /// Standard errors of sampled grids.
    se: Option<Vec<DMatrix<f64>>>,
}

fn shared_model(l: &Loaded) -> Result<SemiMarkovModel> {
    resolve_model(
        l.config.model.as_ref().context("`model` is required")?,
        &l.dir,
    )
}

fn solve_one(
    method: Method,
    model: &SemiMarkovModel,
    cfg: &ExperimentConfig,
    eval: &[f64],
) -> Result<Solved> {
    let d = &cfg.discretization;
    let grid = match method {
        Method::Renewal => solve_renewal(model, d)?,
        Method::BackwardCaputo => solve_backward_caputo(model, d)?,
        Method::ForwardRl => solve_forward_rl(model, d)?,
        Method::BackwardVolterra => solve_backward_volterra(model, d)?,
        Method::ForwardVolterra => solve_forward_volterra(model, d)?,
        Method::MatrixExponential => matrix_exponential_grid(model, d)?,
        Method::Laplace => {
            let mut t = vec![0.0];
            t.extend_from_slice(eval);
            solve_laplace(model, &t, &cfg.inversion)?
        }
        Method::MonteCarlo => return sample_grid(model, cfg, eval),
    };
    Ok(Solved {
        label: method.name().to_string(),
        grid,
        se: None,
    })
}

/// Empirical transition matrix at `eval`, row `i` from its own stream.
fn sample_grid(model: &SemiMarkovModel, cfg: &ExperimentConfig, eval: &[f64]) -> Result<Solved> {
    let rng = cfg.rng()?;
    let n = model.n_states;
    let mut values = vec![DMatrix::zeros(n, n); eval.len()];
    let mut se = values.clone();
    for i in 0..n {
        let spec = RngSpec::new(rng.seed, rng.stream_id.wrapping_add(i as u64));
        let e = occupation_at(model, i, eval, cfg.simulation.n_paths, spec)?;
        for k in 0..eval.len() {
            for j in 0..n {
                values[k][(i, j)] = e.estimate[k][j];
                se[k][(i, j)] = e.std_error[k][j];
            }
        }
    }
    Ok(Solved {
        label: Method::MonteCarlo.name().to_string(),
        grid: TransitionGrid {
            times: eval.to_vec(),
            values,
            provenance: Provenance::MonteCarlo,
            dt: None,
        },
        se: Some(se),
    })
}

fn solve_all(l: &Loaded, eval: &[f64]) -> Result<Vec<Solved>> {
    let cfg = &l.config;
    if cfg.methods.is_empty() {
        bail!("`methods` is empty");
    }
    let shared = cfg
        .model
        .as_ref()
        .map(|m| resolve_model(m, &l.dir))
        .transpose()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.methods.len());
    for entry in &cfg.methods {
        let (method, label, own) = match entry {
            MethodEntry::Name(m) => (*m, None, None),
            MethodEntry::Full {
                method,
                label,
                model,
            } => (*method, label.clone(), model.as_ref()),
        };
        let own = own.map(|m| resolve_model(m, &l.dir)).transpose()?;
        let model = own
            .as_ref()
            .or(shared.as_ref())
            .with_context(|| format!("method {} has no model", method.name()))?;
        let mut s = solve_one(method, model, cfg, eval)
            .with_context(|| format!("method {}", method.name()))?;
        if let Some(label) = label {
            s.label = label;
        }
        if !seen.insert(s.label.clone()) {
            bail!(
                "duplicate method label `{}`; set `label` to tell runs apart",
                s.label
            );
        }
        out.push(s);
    }
    Ok(out)
}

fn write_grid(art: &mut Artifacts, s: &Solved) -> Result<()> {
    match &s.se {
        None => art.write(&s.label, |w| s.grid.write_csv(w)),
        Some(se) => art.write(&s.label, |w| {
            writeln!(w, "t,i,j,p,se")?;
            for ((t, m), e) in s.grid.times.iter().zip(&s.grid.values).zip(se) {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        writeln!(w, "{t:.16e},{i},{j},{:.16e},{:.16e}", m[(i, j)], e[(i, j)])?;
                    }
                }
            }
            Ok(())
        }),
    }
}

pub fn solve(l: &Loaded, art: &mut Artifacts) -> Result<Failures> {
    let eval = l.config.eval_times()?;
    let mut failures = Vec::new();
    for s in solve_all(l, &eval)? {
        write_grid(art, &s)?;
        if s.se.is_none() {
            for issue in s.grid.check(l.config.tolerances.row_sum) {
                failures.push(format!("{}: {issue}", s.label));
            }
        }
        println!(
            "{}: {} times, max row-sum error {:.3e}",
            s.label,
            s.grid.times.len(),
            s.grid.max_row_sum_error()
        );
    }
    Ok(failures)
}

struct PairResult {
    distance: f64,
    tolerance: f64,
    pass: bool,
}

fn compare_pair(a: &Solved, b: &Solved, cfg: &ExperimentConfig) -> Result<PairResult> {
    let tol = &cfg.tolerances;
    if a.se.is_none() && b.se.is_none() {
        let d = a.grid.sup_distance(&b.grid)?;
        return Ok(PairResult {
            distance: d,
            tolerance: tol.sup_norm,
            pass: d <= tol.sup_norm,
        });
    }
    // entrywise against max(k·se, floor), se combined over both sides
    let se_of = |s: &Solved, k: usize| s.se.as_ref().map(|e| e[k].clone());
    let mut distance: f64 = 0.0;
    let mut bound_at_worst = tol.mc_floor;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut matched = 0;
    for (ka, t) in a.grid.times.iter().enumerate() {
        let Some(kb) = b.grid.times.iter().position(|s| (s - t).abs() <= 1e-9) else {
            continue;
        };
        let (pa, pb) = (&a.grid.values[ka], &b.grid.values[kb]);
        if pa.shape() != pb.shape() {
            bail!("grids have different state counts");
        }
        let (ea, eb) = (se_of(a, ka), se_of(b, kb));
        for idx in 0..pa.len() {
            let var = ea.as_ref().map_or(0.0, |e| e[idx].powi(2))
                + eb.as_ref().map_or(0.0, |e| e[idx].powi(2));
            let bound = (tol.mc_sigmas * var.sqrt()).max(tol.mc_floor);
            let diff = (pa[idx] - pb[idx]).abs();
            distance = distance.max(diff);
            if diff - bound > worst_excess {
                worst_excess = diff - bound;
                bound_at_worst = bound;
            }
        }
        matched += 1;
    }
    if matched == 0 {
        bail!("grids share no time points");
    }
    Ok(PairResult {
        distance,
        tolerance: bound_at_worst,
        pass: worst_excess <= 0.0,
    })
}

pub fn compare(l: &Loaded, art: &mut Artifacts) -> Result<Failures> {
    if l.config.methods.len() < 2 {
        bail!(
            "compare needs at least two methods, got {}",
            l.config.methods.len()
        );
    }
    let eval = l.config.eval_times()?;
    let solved = solve_all(l, &eval)?;
    for s in &solved {
        write_grid(art, s)?;
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for a in 0..solved.len() {
        for b in a + 1..solved.len() {
            let (sa, sb) = (&solved[a], &solved[b]);
            let r = match compare_pair(sa, sb, &l.config) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{} vs {}: {e}", sa.label, sb.label));
                    rows.push((
                        sa.label.clone(),
                        sb.label.clone(),
                        f64::NAN,
                        f64::NAN,
                        false,
                    ));
                    continue;
                }
            };
            let verdict = if r.pass { "PASS" } else { "FAIL" };
            println!(
                "{verdict} {} vs {}: {:.3e} (tolerance {:.3e})",
                sa.label, sb.label, r.distance, r.tolerance
            );
            if !r.pass {
                failures.push(format!(
                    "{} vs {}: distance {:.3e} exceeds {:.3e}",
                    sa.label, sb.label, r.distance, r.tolerance
                ));
            }
            rows.push((
                sa.label.clone(),
                sb.label.clone(),
                r.distance,
                r.tolerance,
                r.pass,
            ));
        }
    }
    art.write("compare", |w| {
        writeln!(w, "method_a,method_b,distance,tolerance,pass")?;
        for (a, b, d, t, p) in &rows {
            writeln!(w, "{a},{b},{d:.6e},{t:.6e},{p}")?;
        }
        Ok(())
    })?;
    Ok(failures)
}

pub fn simulate(l: &Loaded, art: &mut Artifacts) -> Result<Failures> {
    let cfg = &l.config;
    let sim = &cfg.simulation;
    let model = shared_model(l)?;
    let rng = cfg.rng()?;
    if sim.times.is_empty() || sim.times.windows(2).any(|w| w[1] <= w[0]) || sim.times[0] <= 0.0 {
        bail!("simulation.times must be positive and strictly increasing");
    }
    if sim.n_paths == 0 {
        bail!("simulation.n_paths must be positive");
    }
    let horizon = *sim.times.last().expect("non-empty");
    let paths = simulate_many(
        &model,
        sim.start,
        horizon,
        sim.n_paths,
        sim.construction,
        rng,
    )?;
    if sim.dump_paths {
        art.write("paths", |w| write_paths_csv(&paths, w))?;
    }
    let mut table = Vec::with_capacity(sim.times.len());
    for &t in &sim.times {
        table.push((
            t,
            empirical_transition(&paths, model.n_states, t, sim.start)?,
        ));
    }
    art.write("transition", |w| {
        writeln!(w, "t,j,p,se")?;
        for (t, row) in &table {
            for (j, (p, se)) in row.iter().enumerate() {
                writeln!(w, "{t:.16e},{j},{p:.16e},{se:.16e}")?;
            }
        }
        Ok(())
    })?;
    let jumps: usize = paths.iter().map(|p| p.len() - 1).sum();
    println!(
        "{} paths from state {}, {jumps} jumps up to t = {horizon}",
        paths.len(),
        sim.start
    );
    Ok(Vec::new())
}

/// Rows of `grid` at `times` (all rows when empty).
fn restrict(grid: &DensityGrid, times: &[f64]) -> Result<Vec<usize>> {
    if times.is_empty() {
        return Ok((0..grid.t.len()).collect());
    }
    Ok(times
        .iter()
        .map(|&t| grid.time_index(t))
        .collect::<semimarkov::Result<_>>()?)
}

pub fn diffusion(l: &Loaded, art: &mut Artifacts) -> Result<Failures> {
    let cfg = &l.config;
    let dc = cfg.diffusion.as_ref().context("`diffusion` is required")?;
    let spec = cfg.lattice()?;
    let grid = match dc.kind {
        DensityKind::Forward => solve_vo_heat_forward(&spec, dc.anchor, &cfg.discretization)?,
        DensityKind::Backward => solve_vo_heat_backward(&spec, dc.anchor, &cfg.discretization)?,
    };
    for w in &grid.warnings {
        eprintln!("warning: {w}");
    }
    let rows = restrict(&grid, &dc.output_times)?;
    art.write("density", |w| {
        writeln!(w, "t,y,p")?;
        for &n in &rows {
            for (x, p) in grid.x.iter().zip(&grid.values[n]) {
                writeln!(w, "{},{x},{p:.17e}", grid.t[n])?;
            }
        }
        Ok(())
    })?;
    art.write("mass", |w| {
        writeln!(w, "t,mass")?;
        for &n in &rows {
            writeln!(w, "{},{:.17e}", grid.t[n], grid.mass[n])?;
        }
        Ok(())
    })?;
    let mut failures = Vec::new();
    let drift = grid.max_mass_drift();
    println!(
        "{:?} density on {} nodes, max mass drift per step {drift:.3e}",
        grid.kind,
        grid.x.len()
    );
    if let Some(max) = dc.max_mass_drift {
        if drift > max {
            failures.push(format!("mass drift {drift:.3e} exceeds {max:.3e}"));
        }
    }

    if let Some(sc) = &dc.scaling {
        let setup = ScalingSetup {
            lattice: spec,
            source: dc.anchor,
            eps_list: sc.eps_list.clone(),
            t_eval: sc.t_eval,
            n_paths: sc.n_paths,
            dt: sc.dt,
            reference: sc.reference,
        };
        let report = scaling_limit_experiment(&setup, cfg.rng()?)?;
        art.write("scaling", |w| {
            writeln!(w, "epsilon,l1_distance,mc_se")?;
            for r in &report.rows {
                writeln!(w, "{},{:.6e},{:.6e}", r.epsilon, r.l1_distance, r.mc_se)?;
            }
            Ok(())
        })?;
        for r in &report.rows {
            println!(
                "epsilon {}: L1 {:.4e} (mc_se {:.4e})",
                r.epsilon, r.l1_distance, r.mc_se
            );
        }
        if sc.require_monotone && !report.is_monotone() {
            failures.push("scaling distances do not decrease with epsilon".into());
        }
        if let Some(max) = sc.max_final_l1 {
            if !(report.final_l1() <= max) {
                failures.push(format!(
                    "final L1 {:.4e} exceeds {max:.4e}",
                    report.final_l1()
                ));
            }
        }
    }
    Ok(failures)
}

pub fn aggregate(l: &Loaded, art: &mut Artifacts) -> Result<Failures> {
    let cfg = &l.config;
    let ac = cfg.aggregate.as_ref().context("`aggregate` is required")?;
    let spec = cfg.lattice()?;
    let grid = solve_vo_heat_forward(&spec, ac.source, &cfg.discretization)?;
    for w in &grid.warnings {
        eprintln!("warning: {w}");
    }
    let series = aggregation_diagnostic(&grid, ac.region)?;
    let rows = restrict(&grid, &ac.times)?;
    let picked: Vec<(f64, f64)> = rows.iter().map(|&n| series[n]).collect();
    art.write("aggregate", |w| {
        writeln!(w, "t,mass")?;
        for (t, m) in &picked {
            writeln!(w, "{t},{m:.17e}")?;
        }
        Ok(())
    })?;
    for (t, m) in &picked {
        println!(
            "t = {t}: mass in [{}, {}] = {m:.6}",
            ac.region.0, ac.region.1
        );
    }
    let mut failures = Vec::new();
    if ac.require_monotone {
        let up = picked.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
        let down = picked.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
        if !(up || down) {
            failures.push("region mass is not monotone in time".into());
        }
    }
    Ok(failures)
}
