//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the verdicts are
//! always printed.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use semimarkov::diffusion::*;
use semimarkov::laplace::{
    forward_laplace_transform, fpp_state_dependent_laplace, invert_laplace_scalar, solve_laplace,
    InversionConfig,
};
use semimarkov::mlf::{mittag_leffler, ml_survival, MlParams};
use semimarkov::montecarlo::{
    holding_times_by_state, occupation_at, simulate_ctrw_jumps, simulate_time_changed_jumps,
    transition_counts, RngSpec,
};
use semimarkov::process::{
    HoldingLaw, PathSample, SemiMarkovModel, SubordinatorLaw, TransitionGrid,
};
use semimarkov::solvers::*;
use semimarkov::special::gamma;
use semimarkov::stats::{chi_square_transitions, ks_two_sample};

const ML_TABLE: &str = include_str!("data/ml_reference.csv");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn chain3() -> (DMatrix<f64>, Vec<f64>) {
    (
        DMatrix::from_row_slice(3, 3, &[0.0, 0.3, 0.7, 0.6, 0.0, 0.4, 0.5, 0.5, 0.0]),
        vec![1.0, 1.5, 0.8],
    )
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

/// Step grid points every 0.1 up to the horizon.
fn tenths(horizon: f64) -> Vec<f64> {
    (0..=(horizon * 10.0).round() as usize)
        .map(|k| k as f64 * 0.1)
        .collect()
}

fn fpp_alphas() -> [f64; 6] {
    [0.6, 0.9, 0.6, 0.9, 0.6, 0.9]
}

fn criterion_1() -> Verdict {
    let alphas = fpp_alphas();
    let model = SemiMarkovModel::birth_chain(1.0, &alphas).unwrap();
    let times = [0.5, 1.0, 2.0];
    let t0 = Instant::now();
    let occ = single_threaded(|| {
        occupation_at(&model, 0, &times, 100_000, RngSpec::new(20_240_501, 0)).unwrap()
    });
    let elapsed = t0.elapsed();
    let cfg = InversionConfig::default();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_diff: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let mut exact: Vec<f64> = (0..5)
            .map(|j| {
                invert_laplace_scalar(
                    &|s| fpp_state_dependent_laplace(0, j, 1.0, &alphas, s).unwrap(),
                    t,
                    &cfg,
                )
                .unwrap()
            })
            .collect();
        exact.push(1.0 - exact.iter().sum::<f64>());
        for (j, p) in exact.iter().enumerate() {
            let diff = (occ.estimate[k][j] - p).abs();
            let bound = (4.0 * occ.std_error[k][j]).max(5e-3);
            worst_diff = worst_diff.max(diff);
            worst_excess = worst_excess.max(diff - bound);
        }
    }
    verdict(
        worst_excess <= 0.0 && elapsed <= Duration::from_secs(60),
        format!("max |p̂ − p| = {worst_diff:.2e} within max(4·se, 5e-3); sampling {elapsed:.1?} on one thread"),
    )
}

fn random_ml_model(seed: u64) -> SemiMarkovModel {
    let mut rng = RngSpec::new(seed, 0).rng(0);
    let mut h = DMatrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        let w: Vec<f64> = (0..3)
            .map(|j| if i == j { 0.0 } else { rng.gen_range(0.1..1.0) })
            .collect();
        let total: f64 = w.iter().sum();
        for j in 0..3 {
            h[(i, j)] = w[j] / total;
        }
    }
    let rates: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
    let choices = [0.5, 0.7, 0.9];
    let alphas: Vec<f64> = (0..3).map(|_| choices[rng.gen_range(0..3)]).collect();
    SemiMarkovModel::mittag_leffler(h, rates, &alphas).unwrap()
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let model = random_ml_model(2);
    let cfg = DiscretizationConfig::with_horizon(1e-3, 2.0);
    let grids = [
        ("renewal", solve_renewal(&model, &cfg).unwrap()),
        (
            "backward_caputo",
            solve_backward_caputo(&model, &cfg).unwrap(),
        ),
        ("forward_rl", solve_forward_rl(&model, &cfg).unwrap()),
        (
            "laplace",
            solve_laplace(&model, &tenths(2.0), &InversionConfig::default()).unwrap(),
        ),
    ];
    let mut worst = (0.0, String::new());
    let mut pass = true;
    let mut bc_lap = f64::NAN;
    for a in 0..grids.len() {
        for b in a + 1..grids.len() {
            let d = grids[a].1.sup_distance(&grids[b].1).unwrap();
            let bound = if (grids[a].0, grids[b].0) == ("backward_caputo", "laplace") {
                bc_lap = d;
                5e-3
            } else {
                1e-2
            };
            pass &= d <= bound;
            if d > worst.0 {
                worst = (d, format!("{} vs {}", grids[a].0, grids[b].0));
            }
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        pass && elapsed <= Duration::from_secs(30),
        format!(
            "alphas {:?}: worst pair {} at {:.2e}; caputo vs laplace {bc_lap:.2e}; {elapsed:.1?}",
            model.alphas().unwrap(),
            worst.1,
            worst.0
        ),
    )
}

fn markov_distances(
    model: &SemiMarkovModel,
    cfg: &DiscretizationConfig,
) -> Vec<(&'static str, f64)> {
    let oracle = matrix_exponential_grid(model, cfg).unwrap();
    let lap = solve_laplace(model, &tenths(cfg.horizon()), &InversionConfig::default()).unwrap();
    let grids: Vec<(&str, TransitionGrid)> = vec![
        ("renewal", solve_renewal(model, cfg).unwrap()),
        (
            "backward_caputo",
            solve_backward_caputo(model, cfg).unwrap(),
        ),
        ("forward_rl", solve_forward_rl(model, cfg).unwrap()),
        (
            "backward_volterra",
            solve_backward_volterra(model, cfg).unwrap(),
        ),
        (
            "forward_volterra",
            solve_forward_volterra(model, cfg).unwrap(),
        ),
        ("laplace", lap),
    ];
    grids
        .into_iter()
        .map(|(name, g)| (name, g.sup_distance(&oracle).unwrap()))
        .collect()
}

fn criterion_3() -> Verdict {
    let (h, r) = chain3();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 2.0);
    let exp = SemiMarkovModel::exponential(h.clone(), r.clone()).unwrap();
    let one = SemiMarkovModel::mittag_leffler(h, r, &[1.0; 3]).unwrap();
    let mut pass = true;
    let mut worst = (0.0, "");
    let mut caputo: f64 = 0.0;
    for model in [&exp, &one] {
        for (name, d) in markov_distances(model, &cfg) {
            let bound = if name == "backward_caputo" {
                1e-5
            } else {
                1e-4
            };
            pass &= d <= bound;
            if name == "backward_caputo" {
                caputo = caputo.max(d);
            }
            if d > worst.0 {
                worst = (d, name);
            }
        }
    }
    verdict(
        pass,
        format!(
            "exponential and α = 1: worst {} at {:.2e}; caputo {caputo:.2e}",
            worst.1, worst.0
        ),
    )
}

/// Paths from alternating start states until every state has `need`
/// finite holding times.
fn holding_samples(
    model: &SemiMarkovModel,
    need: usize,
    stream: u64,
    sim: fn(
        &SemiMarkovModel,
        usize,
        usize,
        &mut rand_chacha::ChaCha8Rng,
    ) -> semimarkov::Result<PathSample>,
) -> (Vec<Vec<f64>>, Vec<PathSample>) {
    let n = model.n_states;
    let spec = RngSpec::new(404, stream);
    let mut paths = Vec::new();
    let mut k = 0u64;
    loop {
        let held = holding_times_by_state(&paths, n);
        if held.iter().all(|v| v.len() >= need) {
            return (
                held.into_iter()
                    .map(|mut v| {
                        v.truncate(need);
                        v
                    })
                    .collect(),
                paths,
            );
        }
        for _ in 0..200 {
            paths.push(sim(model, (k % n as u64) as usize, 50, &mut spec.rng(k)).unwrap());
            k += 1;
        }
    }
}

fn criterion_4() -> Verdict {
    let (h, r) = chain3();
    let model = SemiMarkovModel::mittag_leffler(h.clone(), r, &[0.5, 0.7, 0.9]).unwrap();
    let (direct, dp) = holding_samples(&model, 10_000, 0, simulate_ctrw_jumps);
    let (changed, cp) = holding_samples(&model, 10_000, 1, simulate_time_changed_jumps);
    let mut pass = true;
    let mut ks_p = Vec::new();
    for i in 0..3 {
        let ks = ks_two_sample(&direct[i], &changed[i]).unwrap();
        pass &= ks.p_value > 0.01;
        ks_p.push(format!("{:.3}", ks.p_value));
    }
    let mut chi_p = Vec::new();
    for paths in [&dp, &cp] {
        let chi = chi_square_transitions(&transition_counts(paths, 3), &h).unwrap();
        pass &= chi.p_value > 0.01;
        chi_p.push(format!("{:.3}", chi.p_value));
    }
    verdict(
        pass,
        format!(
            "KS p-values [{}]; embedded-chain χ² p-values [{}]",
            ks_p.join(", "),
            chi_p.join(", ")
        ),
    )
}

fn subordinated(alphas: &[f64], tempered: Option<f64>) -> SemiMarkovModel {
    let (h, r) = chain3();
    let laws = alphas
        .iter()
        .map(|&a| {
            HoldingLaw::GeneralSubordinated(match tempered {
                Some(th) => SubordinatorLaw::tempered_stable(a, th),
                None => SubordinatorLaw::stable(a),
            })
        })
        .collect();
    SemiMarkovModel::new(h, r, laws).unwrap()
}

fn criterion_5() -> Verdict {
    let cfg = DiscretizationConfig::with_horizon(1e-3, 2.0);
    let (h, r) = chain3();
    let ml = SemiMarkovModel::mittag_leffler(h, r, &[0.5, 0.7, 0.9]).unwrap();
    let st = subordinated(&[0.5, 0.7, 0.9], None);
    let back = solve_backward_volterra(&st, &cfg)
        .unwrap()
        .sup_distance(&solve_backward_caputo(&ml, &cfg).unwrap())
        .unwrap();
    let fwd = solve_forward_volterra(&st, &cfg)
        .unwrap()
        .sup_distance(&solve_forward_rl(&ml, &cfg).unwrap())
        .unwrap();
    let tm = subordinated(&[0.5, 0.7, 0.9], Some(0.5));
    let lap = solve_laplace(&tm, &tenths(2.0), &InversionConfig::talbot()).unwrap();
    let tb = solve_backward_volterra(&tm, &cfg)
        .unwrap()
        .sup_distance(&lap)
        .unwrap();
    let tf = solve_forward_volterra(&tm, &cfg)
        .unwrap()
        .sup_distance(&lap)
        .unwrap();
    verdict(
        back <= 5e-3 && fwd <= 1e-2 && tb <= 1e-2 && tf <= 1e-2,
        format!("stable backward {back:.2e}, forward {fwd:.2e}; tempered backward {tb:.2e}, forward {tf:.2e}"),
    )
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    for alpha in [0.3, 0.5, 0.8] {
        let law = SubordinatorLaw::stable(alpha);
        let u = law.potential_density.clone().unwrap();
        for s in [0.5, 1.0, 2.0, 5.0] {
            let got = forward_laplace_transform(&|t| u(t), s).unwrap();
            let want = 1.0 / (law.laplace_exponent)(Complex64::new(s, 0.0)).re;
            worst = worst.max((got - want).abs());
        }
    }
    let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let m = SemiMarkovModel::mittag_leffler(h, vec![1.0, 1.0], &[0.5, 0.5]).unwrap();
    let ml = renewal_density(&m, 0, 1.0).unwrap();
    let ml_err = (ml - 1.0 / std::f64::consts::PI.sqrt()).abs();
    verdict(
        worst <= 1e-4 && ml_err <= 1e-10,
        format!("max |L[u](s) − 1/f(s)| = {worst:.2e}; |m(1) − 1/√π| = {ml_err:.1e}"),
    )
}

fn scaling_setup(alpha: f64, reference: ScalingReference) -> ScalingSetup {
    ScalingSetup {
        lattice: LatticeSpec::new(-4.0, 4.0, 0.1, Profile::Constant { value: alpha }.to_fn())
            .unwrap(),
        source: 0.0,
        eps_list: vec![0.2, 0.1, 0.05],
        t_eval: 1.0,
        n_paths: 100_000,
        dt: 1e-3,
        reference,
    }
}

fn criterion_7() -> Verdict {
    let t0 = Instant::now();
    let vo = scaling_limit_experiment(
        &scaling_setup(0.8, ScalingReference::VoHeat { epsilon: 0.025 }),
        RngSpec::new(7, 0),
    )
    .unwrap();
    let gauss = scaling_limit_experiment(
        &scaling_setup(1.0, ScalingReference::Gaussian),
        RngSpec::new(7, 0),
    )
    .unwrap();
    let elapsed = t0.elapsed();
    let l1 = |r: &ScalingReport| {
        r.rows
            .iter()
            .map(|x| format!("{:.4}", x.l1_distance))
            .collect::<Vec<_>>()
            .join(", ")
    };
    verdict(
        vo.is_monotone()
            && vo.final_l1() <= 0.05
            && gauss.final_l1() <= 0.03
            && elapsed <= Duration::from_secs(300),
        format!(
            "α = 0.8 L1 [{}] (monotone {}); α ≡ 1 vs Gaussian [{}]; {elapsed:.1?}",
            l1(&vo),
            vo.is_monotone(),
            l1(&gauss)
        ),
    )
}

fn criterion_8() -> Verdict {
    let two = LatticeSpec::new(
        -4.0,
        4.0,
        0.1,
        Profile::Step {
            left: 0.5,
            right: 0.9,
            at: 0.0,
        }
        .to_fn(),
    )
    .unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 2.0);
    let f = solve_vo_heat_forward(&two, 0.0, &cfg).unwrap();
    let drift = f.max_mass_drift();

    let heat = LatticeSpec::new(-7.0, 7.0, 0.02, Profile::Constant { value: 1.0 }.to_fn()).unwrap();
    let cfg1 = DiscretizationConfig::with_horizon(1e-3, 1.0);
    let kernel_err = |g: &DensityGrid| {
        g.x.iter()
            .zip(g.slice(1.0).unwrap())
            .map(|(&y, &p)| (p - heat_kernel(1.0, 1.0, 0.0, y)).abs())
            .fold(0.0, f64::max)
    };
    let ef = kernel_err(&solve_vo_heat_forward(&heat, 0.0, &cfg1).unwrap());
    let eb = kernel_err(&solve_vo_heat_backward(&heat, 0.0, &cfg1).unwrap());

    let chain = solve_forward_rl_sources(
        &lattice_model(&two).unwrap(),
        &cfg,
        &[two.index_of(0.0).unwrap()],
    )
    .unwrap();
    let mut identity: f64 = 0.0;
    for (n, col) in chain.iter().enumerate() {
        for i in 0..two.n_nodes() {
            identity = identity.max((col[(i, 0)] / two.epsilon - f.values[n][i]).abs());
        }
    }
    verdict(
        drift <= 1e-8 && ef <= 1e-3 && eb <= 1e-3 && identity <= 1e-10,
        format!("drift {drift:.1e}/step; heat kernel forward {ef:.1e}, backward {eb:.1e}; lattice identity {identity:.1e}"),
    )
}

fn criterion_9() -> Verdict {
    let cfg = DiscretizationConfig::with_horizon(0.01, 8.0);
    let series = |profile: Profile| {
        let s = LatticeSpec::new(-4.0, 4.0, 0.1, profile.to_fn()).unwrap();
        let g = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
        let m = aggregation_diagnostic(&g, (-4.0, 0.0)).unwrap();
        [1.0, 2.0, 4.0, 8.0].map(|t| m[g.time_index(t).unwrap()].1)
    };
    let two = series(Profile::Step {
        left: 0.5,
        right: 0.9,
        at: 0.0,
    });
    let flat = series(Profile::Constant { value: 0.7 });
    let increasing = two.windows(2).all(|w| w[1] > w[0]);
    let spread = flat.iter().map(|m| (m - 0.5).abs()).fold(0.0, f64::max);
    verdict(
        increasing && spread <= 1e-3,
        format!(
            "low-α mass at t = 1, 2, 4, 8: {two:.4?}; constant control within {spread:.1e} of 1/2"
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for line in ML_TABLE.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (alpha, beta, z, want) = (f[0], f[1], f[2], f[3]);
        if beta != 1.0 || ![0.3, 0.5, 0.8].contains(&alpha) || !(-50.0..=0.0).contains(&z) {
            continue;
        }
        let got = mittag_leffler(MlParams::new(alpha, beta).unwrap(), z).unwrap();
        worst = worst.max(((got - want) / want).abs());
        rows += 1;
    }
    let t: f64 = 1e6;
    let ratios: Vec<f64> = [0.3, 0.5, 0.8]
        .iter()
        .map(|&a| ml_survival(a, 1.0, t).unwrap() / (t.powf(-a) / gamma(1.0 - a)))
        .collect();
    let tail_ok = ratios.iter().all(|r| (0.99..=1.01).contains(r));
    verdict(
        rows == 300 && worst <= 1e-8 && tail_ok,
        format!("{rows} oracle points, max relative error {worst:.1e}; tail ratios at t = 1e6 {ratios:.5?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        (
            "fractional Poisson: sampling vs transform inversion",
            criterion_1,
        ),
        ("four-way solver agreement", criterion_2),
        ("Markov reduction", criterion_3),
        ("time-change equivalence", criterion_4),
        ("Volterra generalization", criterion_5),
        ("renewal density", criterion_6),
        ("scaling limit", criterion_7),
        ("heat solver conservation and reduction", criterion_8),
        ("anomalous aggregation", criterion_9),
        ("Mittag-Leffler accuracy and tail", criterion_10),
    ];
    // `cargo test -- --list` and name filters come through as arguments
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {:>2} {name}: {} [{:.1?}]",
            k + 1,
            v.detail,
            t0.elapsed()
        );
        if !v.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
