use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use quadsde_lab::ExperimentConfig;

fn lab(dir: &Path, args: &[&str], workers: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lab"));
    c.current_dir(dir).args(args);
    match workers {
        Some(w) => c.env("LAB_WORKERS", w),
        None => c.env_remove("LAB_WORKERS"),
    };
    c.output().expect("lab runs")
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into_owned(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn check_passes_on_every_zoo_model() {
    let dir = tempfile::tempdir().unwrap();
    for m in ["triad", "triad_rotated", "lorenz96", "sabra", "galerkin_ns2d"] {
        let o = lab(dir.path(), &["check", "--model", m, "--seed", "1", "--out", m], None);
        assert_eq!(code(&o), 0, "{m}: {:?}", text(&o));
        let report = std::fs::read_to_string(dir.path().join(m).join("check.json")).unwrap();
        assert!(report.contains("\"energy_residual\""));
    }
}

#[test]
fn certify_writes_the_matched_theorem() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e3.cfg"), "kind = certify\nmodel = triad\nkernel = e3\nseed = 5\nout_dir = e3\n").unwrap();
    let o = lab(dir.path(), &["run", "--config", "e3.cfg"], None);
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    let cert = std::fs::read_to_string(dir.path().join("e3/certify.json")).unwrap();
    assert!(cert.contains("\"theorem_matched\": \"Thm1.2/4.3(1-D kernel)\""), "{cert}");

    let o = lab(dir.path(), &["certify", "--model", "triad", "--set", "kernel=plane", "--seed", "5", "--out", "plane"], None);
    assert_eq!(code(&o), 0);
    let cert = std::fs::read_to_string(dir.path().join("plane/certify.json")).unwrap();
    assert!(cert.contains("Thm1.7(triad-plane)"));
    assert!(cert.contains("equilibrium/transversality checks fail on the kernel"));
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // no noise: the kernel equilibria are never kicked off, nothing applies
    let o = lab(dir.path(), &["certify", "--model", "triad", "--set", "model.sigma=0", "--seed", "1", "--out", "o"], None);
    assert_eq!(code(&o), 1, "{:?}", text(&o));
    assert!(text(&o).0.contains("FAIL theorem_matched: none"));
}

#[test]
fn config_errors_exit_two_and_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "kind = check\nmodel = triad\nseed = 1\nsampels = 10\n").unwrap();
    let o = lab(dir.path(), &["run", "--config", "bad.cfg"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).1.contains("config line 4, key `sampels`: unknown key"), "{:?}", text(&o));

    std::fs::write(dir.path().join("noseed.cfg"), "kind = check\nmodel = triad\n").unwrap();
    let o = lab(dir.path(), &["run", "--config", "noseed.cfg"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).1.contains("`seed`"));

    std::fs::write(dir.path().join("num.cfg"), "kind = simulate\nmodel = triad\nseed = 1\nx0 = 1,2\n").unwrap();
    let o = lab(dir.path(), &["run", "--config", "num.cfg"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).1.contains("line 4, key `x0`"), "{:?}", text(&o));

    let o = lab(dir.path(), &["spectrum", "--config", "num.cfg"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).1.contains("not `spectrum`"));

    let o = lab(dir.path(), &["run", "--config", "missing.cfg"], None);
    assert_eq!(code(&o), 2);

    let o = lab(dir.path(), &["frobnicate"], None);
    assert_eq!(code(&o), 2);

    let o = lab(dir.path(), &["check", "--model", "triad", "--seed", "1", "--set", "model.kernel=cube"], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn reproduce_is_seed_sensitive_and_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "kind = simulate\nmodel = triad\nkernel = e3\nseed = 11\nx0 = 1,1,1\nt_max = 0.5\ndt = 0.01\npaths = 600\nobservables = energy,dissipation,abs_coordinate(2)\n";
    std::fs::write(dir.path().join("sim.cfg"), cfg).unwrap();
    let o = lab(dir.path(), &["run", "--config", "sim.cfg", "--out", "a"], Some("1"));
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    let o = lab(dir.path(), &["run", "--config", "sim.cfg", "--out", "b"], Some("4"));
    assert_eq!(code(&o), 0);
    for f in ["simulate.json", "simulate.csv", "config.txt"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }

    let o = lab(dir.path(), &["reproduce", "--manifest", "a/manifest.json"], Some("3"));
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    assert!(text(&o).0.contains("PASS reproduce"));

    let o = lab(dir.path(), &["reproduce", "--manifest", "a/manifest.json", "--seed", "12"], None);
    assert_eq!(code(&o), 1);
    assert!(text(&o).0.contains("FAIL simulate.json: digest mismatch"));

    std::fs::write(dir.path().join("a/simulate.csv"), "edited\n").unwrap();
    let o = lab(dir.path(), &["reproduce", "--manifest", "a/manifest.json"], None);
    assert_eq!(code(&o), 1);
    assert!(text(&o).0.contains("FAIL simulate.csv: file on disk"));
}

#[test]
fn outputs_stay_in_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["check", "--model", "sabra", "--seed", "2", "--out", "nested/out"], None);
    assert_eq!(code(&o), 0);
    let mut top: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["nested"]);
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("nested/out")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["check.csv", "check.json", "config.txt", "manifest.json"]);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("nested/out/manifest.json")).unwrap()).unwrap();
    for f in manifest["files"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join("nested/out").join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
    }
}

#[test]
fn model_files_feed_back_into_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["model", "lorenz96", "--set", "n=8", "--out", "l96.txt"], None);
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    let o = lab(dir.path(), &["certify", "--set", "system=l96.txt", "--seed", "3", "--out", "c"], None);
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    assert!(std::fs::read_to_string(dir.path().join("c/certify.json")).unwrap().contains("Thm1.6(L96)"));
    let o = lab(dir.path(), &["certify", "--set", "system=l96.txt", "--model", "triad", "--seed", "3"], None);
    assert_eq!(code(&o), 2);
    let o = lab(dir.path(), &["model", "pendulum"], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_flags_map_onto_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["model", "triad", "--param", "kernel=e3", "--out", "t.txt"], None);
    assert_eq!(code(&o), 0);
    let args = ["simulate", "--system", "t.txt", "--x0", "1,1,1", "--dt", "0.01", "--t-max", "0.2", "--paths", "30", "--seed", "2", "--observables", "energy", "--out", "s"];
    let o = lab(dir.path(), &args, None);
    assert_eq!(code(&o), 0, "{:?}", text(&o));
    let cfg = std::fs::read_to_string(dir.path().join("s/config.txt")).unwrap();
    for line in ["paths = 30", "t_max = 0.2", "system = t.txt", "x0 = 1,1,1"] {
        assert!(cfg.contains(line), "{cfg}");
    }
}

#[test]
fn every_kind_runs_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let runs: &[(&str, &[&str])] = &[
        ("spectrum", &["--model", "sabra"]),
        ("coercivity", &["--model", "triad", "--set", "r=0.5", "--set", "K_grid=10,30,100", "--set", "points=4", "--set", "paths=4", "--set", "steps_per_eta=50"]),
        ("exit-times", &["--model", "triad_rotated", "--set", "K_grid=50,100", "--set", "paths=40"]),
        ("lyapunov", &["--model", "triad_rotated", "--set", "points=3", "--set", "paths=500"]),
        (
            "lyapunov",
            &[
                "--model",
                "triad",
                "--set",
                "kernel=none",
                "--set",
                "lyapunov=subgeometric",
                "--set",
                "r=1",
                "--set",
                "K_max=10",
                "--set",
                "states=3",
                "--set",
                "paths=50",
                "--set",
                "steps=50",
            ],
        ),
        ("stationary", &["--model", "triad", "--set", "kernel=none", "--set", "t_max=20", "--set", "burn_in=5", "--set", "p=1,2", "--set", "paths=20"]),
    ];
    for (i, (kind, extra)) in runs.iter().enumerate() {
        let out = format!("o{i}");
        let mut args = vec![*kind, "--seed", "4", "--out", &out];
        args.extend_from_slice(extra);
        let o = lab(dir.path(), &args, None);
        assert!(code(&o) == 0 || code(&o) == 1, "{kind}: {:?}", text(&o));
        let csv = format!("{kind}.csv");
        assert!(dir.path().join(&out).join(csv).exists(), "{kind}");
    }
}

#[test]
fn stationary_refuses_uncertified_moments() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["stationary", "--model", "triad", "--set", "kernel=e3", "--set", "p=0.5", "--seed", "1", "--set", "t_max=2", "--set", "burn_in=1"], None);
    assert_eq!(code(&o), 2);
    assert!(text(&o).1.contains("key `p`"), "{:?}", text(&o));
}

fn entry() -> impl Strategy<Value = (String, String)> {
    let keys = prop::sample::select(vec!["kind", "model", "seed", "x0", "K_grid", "r", "delta", "paths", "eta_rule", "model.sigma", "model.delta", "model.J"]);
    (keys, "[A-Za-z0-9_.,:()-][A-Za-z0-9_.,:() -]{0,20}[A-Za-z0-9_.,:()-]").prop_map(|(k, v)| (k.to_string(), v))
}

proptest! {
    #[test]
    fn config_text_round_trips(entries in prop::collection::vec(entry(), 0..10)) {
        let mut c = ExperimentConfig::default();
        for (k, v) in &entries {
            c.set(k, v).unwrap();
        }
        let back = ExperimentConfig::parse(&c.serialize()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.serialize(), c.serialize());
    }
}
