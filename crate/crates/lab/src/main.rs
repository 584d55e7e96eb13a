use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quadsde_core::engine::Executor;
use quadsde_core::io::system_to_text;
use quadsde_core::tensor::energy_residual_certificate;
use quadsde_core::zoo::{ModelSpec, Variant};
use quadsde_lab::manifest::{self, OutputDir};
use quadsde_lab::{ExperimentConfig, Kind, LabError};

/// Experiments on energy-conserving quadratic SDEs with degenerate damping.
///
/// Exit status: 0 when every verdict passes, 1 when some verdict fails, 2 on
/// usage or configuration errors. LAB_WORKERS sets the worker count.
#[derive(Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a zoo model as a system file.
    Model {
        /// triad, triad_rotated, lorenz96, sabra or galerkin_ns2d
        variant: String,
        /// Model parameter, e.g. `kernel=e3` or `delta=0.3`.
        #[arg(long = "set", visible_alias = "param", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment named by the config's `kind`.
    Run(ExpArgs),
    /// Structural certificates.
    Check(ExpArgs),
    /// Spectral classification of L_x^⊥ at `x0` (default: a kernel vector).
    Spectrum(ExpArgs),
    /// Match the system against the theorem hypotheses.
    Certify(ExpArgs),
    /// Ensemble statistics of observables.
    Simulate(ExpArgs),
    /// Time-averaged dissipation over a K grid.
    Coercivity(ExpArgs),
    /// Exit times from the north pole of the rotated triad.
    ExitTimes(ExpArgs),
    /// Local (V_K) or sub-geometric drift checks.
    Lyapunov(ExpArgs),
    /// Stationary moments with the split-half diagnostic.
    Stationary(ExpArgs),
    /// Re-run a recorded experiment and compare report digests.
    Reproduce {
        #[arg(long)]
        manifest: PathBuf,
        /// Use another seed (the reports are then expected to differ).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override or add a config entry.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Zoo model (overrides `model`).
    #[arg(long)]
    model: Option<String>,
    /// System file written by `lab model` (overrides `system`).
    #[arg(long)]
    system: Option<String>,
    /// Shorthands for the config keys of the same name.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "t-max")]
    t_max: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    #[arg(long)]
    observables: Option<String>,
}

fn split_kv(s: &str) -> Result<(&str, &str), LabError> {
    s.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| LabError::Usage(format!("expected KEY=VALUE, got `{s}`")))
}

fn experiment(kind: Option<Kind>, args: ExpArgs) -> Result<bool, LabError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&std::fs::read_to_string(p).map_err(|e| LabError::io(p, e))?)?,
        None => ExperimentConfig::default(),
    };
    for s in &args.set {
        let (k, v) = split_kv(s)?;
        cfg.set(k, v)?;
    }
    let flags =
        [("model", &args.model), ("system", &args.system), ("x0", &args.x0), ("dt", &args.dt), ("t_max", &args.t_max), ("paths", &args.paths), ("observables", &args.observables)];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(s) = args.seed {
        cfg.set("seed", &s.to_string())?;
    }
    let kind = match (kind, cfg.kind()?) {
        (Some(k), Some(c)) if k != c => return Err(cfg.bad("kind", format!("config is for `{c}`, not `{k}`"))),
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(LabError::config(0, Some("kind"), "missing")),
    };
    cfg.set("kind", kind.as_str())?;
    let root = args.out.or_else(|| cfg.out_dir()).unwrap_or_else(|| PathBuf::from("lab-runs").join(kind.as_str()));
    let exec = Executor::from_env()?;
    let out = OutputDir::create(root)?;
    let m = manifest::run(&cfg, &out, &exec)?;
    for v in &m.verdicts {
        println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    println!("wrote {} files to {}", m.files.len() + 1, out.root().display());
    Ok(m.passed)
}

fn main_inner(cli: Cli) -> Result<bool, LabError> {
    match cli.command {
        Command::Model { variant, set, out } => {
            let v: Variant = variant.parse()?;
            let mut spec = ModelSpec::new(v);
            for s in &set {
                let (k, val) = split_kv(s)?;
                spec = spec.with(k, val);
            }
            let system = spec.build()?;
            let text = system_to_text(&system);
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| LabError::io(&p, e))?,
                None => print!("{text}"),
            }
            let energy = energy_residual_certificate(&system.tensor);
            eprintln!("{}: dim {}, dim ker A {}, energy residual {:e}", system.name, system.dim(), system.decomposition.kernel_dim(), energy.max_residual);
            Ok(energy.passed)
        }
        Command::Run(a) => experiment(None, a),
        Command::Check(a) => experiment(Some(Kind::Check), a),
        Command::Spectrum(a) => experiment(Some(Kind::Spectrum), a),
        Command::Certify(a) => experiment(Some(Kind::Certify), a),
        Command::Simulate(a) => experiment(Some(Kind::Simulate), a),
        Command::Coercivity(a) => experiment(Some(Kind::Coercivity), a),
        Command::ExitTimes(a) => experiment(Some(Kind::ExitTimes), a),
        Command::Lyapunov(a) => experiment(Some(Kind::Lyapunov), a),
        Command::Stationary(a) => experiment(Some(Kind::Stationary), a),
        Command::Reproduce { manifest: path, seed } => {
            let exec = Executor::from_env()?;
            let r = manifest::reproduce(&path, seed, &exec)?;
            for f in &r.tampered {
                println!("FAIL {f}: file on disk does not match the manifest");
            }
            for f in &r.mismatches {
                println!("FAIL {f}: digest mismatch on re-run");
            }
            if r.passed() {
                println!("PASS reproduce: all digests identical");
            }
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
