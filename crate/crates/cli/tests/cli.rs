use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_semimarkov")
}

fn three_state(alpha: f64, rate0: f64) -> Value {
    json!({
        "n_states": 3,
        "h": [0.0, 0.3, 0.7, 0.6, 0.0, 0.4, 0.5, 0.5, 0.0],
        "lambda": [rate0, 1.5, 0.8],
        "laws": [
            {"kind": "mittag_leffler", "alpha": alpha},
            {"kind": "mittag_leffler", "alpha": alpha},
            {"kind": "mittag_leffler", "alpha": alpha}
        ]
    })
}

fn fpp() -> Value {
    json!({
        "n_states": 4,
        "h": [0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1],
        "lambda": [1, 1, 1, 1],
        "laws": [
            {"kind": "mittag_leffler", "alpha": 0.5},
            {"kind": "mittag_leffler", "alpha": 0.7},
            {"kind": "mittag_leffler", "alpha": 0.9},
            {"kind": "mittag_leffler", "alpha": 0.9}
        ],
        "diagonal_jumps_allowed": true,
        "boundary": [3]
    })
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn exec(&self, cmd: &str, config: &Value, out: &str, threads: Option<usize>) -> Output {
        let cfg = self.path(&format!("{out}.json"));
        std::fs::write(&cfg, serde_json::to_vec_pretty(config).unwrap()).unwrap();
        let mut c = Command::new(bin());
        c.arg(cmd)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(self.path(out));
        if let Some(n) = threads {
            c.arg("--threads").arg(n.to_string());
        }
        c.output().unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn assert_header(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap();
    assert!(
        first.starts_with("# semimarkov "),
        "{}: {first}",
        path.display()
    );
    assert!(
        first.contains("config_sha256="),
        "{}: {first}",
        path.display()
    );
}

#[test]
fn markov_reduction_compare_passes() {
    let r = Run::new();
    let cfg = json!({
        "model": three_state(1.0, 1.0),
        "methods": ["backward_caputo", "matrix_exponential"],
        "discretization": {"dt": 0.001, "n_steps": 1000},
        "tolerances": {"sup_norm": 1e-4}
    });
    let o = r.exec("compare", &cfg, "m", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "m_backward_caputo.csv",
        "m_matrix_exponential.csv",
        "m_compare.csv",
    ] {
        assert_header(&r.path(f));
    }
    let rows = data_rows(&r.read("m_compare.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][4], "true");
}

#[test]
fn fpp_sampling_agrees_with_inversion() {
    let r = Run::new();
    let cfg = json!({
        "model": fpp(),
        "methods": ["monte_carlo", "laplace"],
        "discretization": {"dt": 0.01, "n_steps": 200},
        "rng": {"seed": 5},
        "simulation": {"n_paths": 20000, "times": [0.5, 1.0, 2.0]}
    });
    let o = r.exec("compare", &cfg, "f", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mc = data_rows(&r.read("f_monte_carlo.csv"));
    // three times, 4 × 4 entries, with an se column
    assert_eq!(mc.len(), 48);
    assert_eq!(mc[0].len(), 5);
}

#[test]
fn mismatched_models_fail_and_name_the_pair() {
    let r = Run::new();
    let cfg = json!({
        "model": three_state(0.8, 1.0),
        "methods": [
            "renewal",
            {"method": "renewal", "label": "renewal_fast", "model": three_state(0.8, 3.0)}
        ],
        "discretization": {"dt": 0.01, "n_steps": 100}
    });
    let o = r.exec("compare", &cfg, "x", None);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("renewal vs renewal_fast"), "{err}");
    let rows = data_rows(&r.read("x_compare.csv"));
    assert_eq!(rows[0][4], "false");
}

#[test]
fn compare_needs_two_methods() {
    let r = Run::new();
    let cfg = json!({"model": three_state(0.8, 1.0), "methods": ["renewal"]});
    let o = r.exec("compare", &cfg, "one", None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let r = Run::new();
    let unknown = json!({"model": three_state(0.8, 1.0), "methods": ["renewal"], "bogus": 1});
    assert_eq!(r.exec("solve", &unknown, "a", None).status.code(), Some(2));

    let bad_method = json!({"model": three_state(0.8, 1.0), "methods": ["simpson"]});
    assert_eq!(
        r.exec("solve", &bad_method, "b", None).status.code(),
        Some(2)
    );

    let wrong_cmd =
        json!({"command": "simulate", "model": three_state(0.8, 1.0), "methods": ["renewal"]});
    let o = r.exec("solve", &wrong_cmd, "c", None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("simulate"));

    let bad_dt = json!({
        "model": three_state(0.8, 1.0),
        "methods": ["renewal"],
        "discretization": {"dt": -1.0}
    });
    assert_eq!(r.exec("solve", &bad_dt, "d", None).status.code(), Some(2));

    let missing_file = json!({"model": "no_such_model.json", "methods": ["renewal"]});
    let o = r.exec("solve", &missing_file, "e", None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_model.json"));
}

#[test]
fn model_may_live_in_its_own_file() {
    let r = Run::new();
    std::fs::write(r.path("model.json"), three_state(0.7, 1.0).to_string()).unwrap();
    let cfg = json!({
        "model": "model.json",
        "methods": ["renewal", "forward_volterra"],
        "discretization": {"dt": 0.01, "n_steps": 100},
        "tolerances": {"sup_norm": 5e-3}
    });
    let o = r.exec("solve", &cfg, "s", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = data_rows(&r.read("s_renewal.csv"));
    assert_eq!(rows.len(), 101 * 9);
}

fn simulate_config(n_paths: usize) -> Value {
    json!({
        "model": three_state(0.6, 1.0),
        "rng": {"seed": 42, "stream_id": 3},
        "simulation": {"n_paths": n_paths, "start": 1, "times": [0.5, 1.0, 3.0]}
    })
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let r = Run::new();
    let cfg = simulate_config(2000);
    for (out, threads) in [("a", None), ("b", None), ("c", Some(1)), ("d", Some(4))] {
        let o = r.exec("simulate", &cfg, out, threads);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["paths", "transition"] {
        let a = std::fs::read(r.path(&format!("a_{f}.csv"))).unwrap();
        for other in ["b", "c", "d"] {
            assert_eq!(
                a,
                std::fs::read(r.path(&format!("{other}_{f}.csv"))).unwrap(),
                "{f} differs for {other}"
            );
        }
    }
}

#[test]
fn simulate_histogram_columns_sum_to_one() {
    let r = Run::new();
    let t0 = std::time::Instant::now();
    let o = r.exec("simulate", &simulate_config(10), "h", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        t0.elapsed().as_secs_f64() < 1.0,
        "smoke run took {:?}",
        t0.elapsed()
    );
    assert_header(&r.path("h_paths.csv"));
    let rows = data_rows(&r.read("h_transition.csv"));
    assert_eq!(rows.len(), 9);
    for chunk in rows.chunks(3) {
        let total: f64 = chunk.iter().map(|row| row[2].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn compare_with_sampling_is_thread_independent() {
    let r = Run::new();
    let cfg = json!({
        "model": three_state(0.7, 1.0),
        "methods": ["monte_carlo", "renewal"],
        "discretization": {"dt": 0.01, "n_steps": 100},
        "rng": {"seed": 9},
        "simulation": {"n_paths": 5000, "times": [0.5, 1.0]}
    });
    let a = r.exec("compare", &cfg, "p", Some(1));
    let b = r.exec("compare", &cfg, "q", Some(3));
    assert_eq!(a.status.code(), b.status.code());
    for f in ["monte_carlo", "renewal", "compare"] {
        assert_eq!(
            r.read(&format!("p_{f}.csv")),
            r.read(&format!("q_{f}.csv")),
            "{f}"
        );
    }
}

#[test]
fn aggregation_series_is_monotone() {
    let r = Run::new();
    let cfg = json!({
        "lattice": {
            "x_min": -2, "x_max": 2, "epsilon": 0.1,
            "alpha": {"kind": "step", "left": 0.5, "right": 0.9, "at": 0.0}
        },
        "discretization": {"dt": 0.01, "n_steps": 400},
        "aggregate": {"source": 0.0, "region": [-2.0, 0.0], "times": [1.0, 2.0, 4.0], "require_monotone": true}
    });
    let o = r.exec("aggregate", &cfg, "g", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Vec<f64> = data_rows(&r.read("g_aggregate.csv"))
        .iter()
        .map(|row| row[1].parse().unwrap())
        .collect();
    assert_eq!(m.len(), 3);
    assert!(m.windows(2).all(|w| w[1] > w[0]), "{m:?}");
    // past the initial layer the slow side holds more than half
    assert!(m[0] > 0.5, "{m:?}");
}

#[test]
fn gaussian_scaling_check_passes() {
    let r = Run::new();
    let cfg = json!({
        "lattice": {"x_min": -4, "x_max": 4, "epsilon": 0.2, "alpha": {"kind": "constant", "value": 1.0}},
        "discretization": {"dt": 0.01, "n_steps": 100},
        "rng": {"seed": 1},
        "diffusion": {
            "anchor": 0.0,
            "output_times": [1.0],
            "max_mass_drift": 1e-10,
            "scaling": {
                "eps_list": [0.4, 0.2],
                "t_eval": 1.0,
                "n_paths": 20000,
                "dt": 0.01,
                "reference": "Gaussian",
                "max_final_l1": 0.05
            }
        }
    });
    let o = r.exec("diffusion", &cfg, "d", None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let density = data_rows(&r.read("d_density.csv"));
    assert_eq!(density.len(), 41);
    let mass: f64 = density
        .iter()
        .map(|row| row[2].parse::<f64>().unwrap() * 0.2)
        .sum();
    assert!((mass - 1.0).abs() < 1e-10, "{mass}");
    let scaling = data_rows(&r.read("d_scaling.csv"));
    assert_eq!(scaling.len(), 2);
    assert_header(&r.path("d_mass.csv"));
}

#[test]
fn unreachable_scaling_bound_exits_one() {
    let r = Run::new();
    let cfg = json!({
        "lattice": {"x_min": -3, "x_max": 3, "epsilon": 0.2, "alpha": {"kind": "constant", "value": 1.0}},
        "discretization": {"dt": 0.01, "n_steps": 50},
        "rng": {"seed": 1},
        "diffusion": {
            "anchor": 0.0,
            "output_times": [0.5],
            "scaling": {
                "eps_list": [0.3],
                "t_eval": 0.5,
                "n_paths": 100,
                "dt": 0.01,
                "reference": "Gaussian",
                "max_final_l1": 1e-6
            }
        }
    });
    let o = r.exec("diffusion", &cfg, "u", None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("final L1"));
}
