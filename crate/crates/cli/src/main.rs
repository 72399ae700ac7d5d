//! `thinlayer`: run scenarios, verification suites and refinement studies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use thinlayer::config::RunConfig;
use thinlayer::conservation::CSV_HEADER;
use thinlayer::flux::{check_standard_flux_assumptions, FluxModel, SourceModel, VelocityField};
use thinlayer::inequalities::{fuzz, sharpness_ratio, Lemma};
use thinlayer::scenarios::{catalog, find_scenario, refinement_study, run_scenario_with, Scenario, StepView};
use thinlayer::solver::{check_monotonicity, Backend, Discretization};
use thinlayer::timestepping::StageProblem;
use thinlayer::{Error, Mesh};

#[derive(Parser)]
#[command(name = "thinlayer", version, about = "Thin-layer time stepping with free-boundary mass accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment or a catalog scenario.
    Run {
        /// JSON run configuration.
        config: Option<PathBuf>,
        /// Run a catalog scenario instead of a config file.
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        /// Overrides the configured output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run a verification suite.
    Verify {
        #[command(subcommand)]
        suite: Suite,
    },
    /// Refinement study in space and time; writes study.csv.
    Study {
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Same as `verify inequalities`.
    VerifyInequalities {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// List the built-in scenarios.
    ListScenarios,
}

#[derive(Subcommand)]
enum Suite {
    /// Fuzz the vector inequalities.
    Inequalities {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Sample the monotonicity of one backward-Euler step operator.
    Monotonicity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 50)]
        cells: usize,
        #[arg(long, value_enum, default_value_t = BackendArg::Fv)]
        backend: BackendArg,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the standard flux assumptions on random fields.
    FluxAssumptions {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 50)]
        cells: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FluxArg {
    Plap,
    Doubly,
    Pme,
    ShallowIce,
    Advective,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Fv,
    Fve,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    flux: FluxArg,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Gradient exponent (plap, doubly, advective diffusion).
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Thickness exponent (doubly).
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Porous-medium exponent.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Glen exponent (shallow-ice).
    #[arg(long, default_value_t = 3.0)]
    glen: f64,
    /// Diffusion coefficient of the advective family.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Velocity `X(x) = c x` of the advective family.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    velocity: f64,
}

impl ModelArgs {
    fn build(&self) -> thinlayer::Result<FluxModel> {
        match self.flux {
            FluxArg::Plap => FluxModel::plaplacian(self.k, self.p),
            FluxArg::Doubly => FluxModel::doubly_nonlinear(self.k, self.r, self.p),
            FluxArg::Pme => FluxModel::porous_medium(self.k, self.gamma),
            FluxArg::ShallowIce => FluxModel::shallow_ice(self.k, self.glen),
            FluxArg::Advective => FluxModel::advective(self.epsilon, self.p, VelocityField::linear(self.velocity)),
        }
    }
}

/// Failure classes and their exit codes.
enum Failure {
    /// Bad configuration or arguments.
    Config(String),
    /// A run or suite completed with violations, or a solve failed.
    Flagged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Configuration(_) | Error::Parameter(_) | Error::InvalidGeometry(_) => Failure::Config(e.to_string()),
            other => Failure::Flagged(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Flagged(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, scenario, output_dir } => cmd_run(config, scenario, output_dir),
        Command::Verify { suite } => cmd_verify(suite),
        Command::VerifyInequalities { samples, seed } => cmd_verify(Suite::Inequalities { samples, seed }),
        Command::Study { config, scenario, levels, output_dir } => cmd_study(config, scenario, levels, output_dir),
        Command::ListScenarios => {
            for s in catalog() {
                let tags: Vec<String> = s.expected.iter().map(|t| t.tag()).collect();
                println!("{:28} {} [{}]", s.name, s.description, tags.join(", "));
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Flagged(m)) => {
            eprintln!("failed: {m}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("THINLAYER_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("THINLAYER_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("THINLAYER_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

/// Scenario, snapshot interval and output directory from the arguments.
fn resolve(config: Option<PathBuf>, scenario: Option<String>, output_dir: Option<PathBuf>) -> Result<(Scenario, usize, PathBuf), Failure> {
    let (cfg, base) = match (config, scenario) {
        (Some(path), _) => {
            let cfg = RunConfig::from_file(&path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        (None, Some(name)) => {
            find_scenario(&name)?;
            (RunConfig::from_json(&json!({ "scenario": name }).to_string())?, PathBuf::from("."))
        }
        (None, None) => return Err(Failure::Config("give a config file or --scenario".into())),
    };
    let dir = output_dir
        .or_else(|| cfg.output_dir.as_ref().map(|d| if d.is_absolute() { d.clone() } else { base.join(d) }))
        .unwrap_or_else(|| PathBuf::from("thinlayer-out"));
    let s = Scenario::from_config(&cfg, base)?;
    Ok((s, cfg.snapshot_every, dir))
}

fn write_field(path: &Path, view: &StepView) -> std::io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let two_d = view.positions.iter().any(|x| x[1] != 0.0);
    for (x, u) in view.positions.iter().zip(&view.field.values) {
        if two_d {
            writeln!(f, "{:.16e},{:.16e},{:.16e}", x[0], x[1], u)?;
        } else {
            writeln!(f, "{:.16e},{:.16e}", x[0], u)?;
        }
    }
    f.flush()
}

fn cmd_run(config: Option<PathBuf>, scenario: Option<String>, output_dir: Option<PathBuf>) -> Result<(), Failure> {
    let (s, every, dir) = resolve(config, scenario, output_dir)?;
    std::fs::create_dir_all(&dir)?;
    let mut ledger = BufWriter::new(File::create(dir.join("ledger.csv"))?);
    writeln!(ledger, "{CSV_HEADER}")?;
    let mut log = BufWriter::new(File::create(dir.join("run.log"))?);
    writeln!(log, "scenario={} backend={} scheme={} steps={}", s.name, s.backend.name(), s.scheme.name(), s.steps)?;

    let result = run_scenario_with(&s, |v| {
        if v.n > 0 {
            writeln!(ledger, "{}", v.entry.csv_row())?;
            for (i, r) in v.reports.iter().enumerate() {
                writeln!(log, "step={} stage={} {}", v.n, i + 1, r.log_line())?;
            }
            ledger.flush()?;
            log.flush()?;
        }
        if every > 0 && (v.n % every == 0 || v.n == s.steps) {
            write_field(&dir.join(format!("field_{:04}.csv", v.n)), &v)?;
        }
        Ok(())
    });
    ledger.flush()?;

    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            writeln!(log, "error: {e}")?;
            if let Error::NotConverged { last, .. } = &e {
                let mut f = BufWriter::new(File::create(dir.join("last_iterate.csv"))?);
                for u in &last.values {
                    writeln!(f, "{u:.16e}")?;
                }
            }
            let summary = json!({ "scenario": s.name, "status": "failed", "error": e.to_string() });
            std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
            log.flush()?;
            return Err(e.into());
        }
    };
    let t = outcome.totals();
    let flags = outcome.flags();
    let summary = json!({
        "scenario": s.name,
        "status": if flags.is_empty() { "ok" } else { "flagged" },
        "backend": s.backend.name(),
        "scheme": s.scheme.name(),
        "steps": s.steps,
        "initial_mass": t.initial_mass,
        "final_mass": t.final_mass,
        "sum_C": t.climate,
        "sum_R": t.retreat,
        "sum_B": t.leak,
        "sum_abs_B": t.abs_leak,
        "sum_S": t.slop,
        "max_balance_residual": t.max_balance_residual,
        "quadrature": outcome.ledger.quadrature,
        "thickness_dependent_source": outcome.ledger.thickness_dependent_source,
        "expectations": outcome.expectations,
        "flags": flags,
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    for e in &outcome.expectations {
        writeln!(log, "expect {} {} ({})", e.tag, if e.passed { "pass" } else { "FAIL" }, e.detail)?;
    }
    log.flush()?;
    println!(
        "{}: M {:.6e} -> {:.6e}, sum C {:.6e}, sum R {:.6e}, sum B {:.6e}, sum S {:.6e}, max balance residual {:.3e}",
        s.name, t.initial_mass, t.final_mass, t.climate, t.retreat, t.leak, t.slop, t.max_balance_residual
    );
    if flags.is_empty() {
        Ok(())
    } else {
        Err(Failure::Flagged(flags.join("; ")))
    }
}

fn cmd_study(config: Option<PathBuf>, scenario: Option<String>, levels: usize, output_dir: Option<PathBuf>) -> Result<(), Failure> {
    let (s, _, dir) = resolve(config, scenario, output_dir)?;
    let table = refinement_study(&s, levels)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("study.csv"), table.to_csv())?;
    print!("{}", table.to_csv());
    println!(
        "leak non-increasing in h: {}; retreat decreasing in dt: {}; retreat linear in dt: {}; retreat nonzero in h: {}; \
         no retreat: {}; no leak: {}; balanced: {}",
        table.leak_nonincreasing,
        table.retreat_decreasing,
        table.retreat_linear_in_dt,
        table.retreat_nonzero_in_space,
        table.retreat_absent,
        table.leak_absent,
        table.balanced
    );
    if table.passed() {
        Ok(())
    } else {
        Err(Failure::Flagged("refinement trends not met".into()))
    }
}

fn cmd_verify(suite: Suite) -> Result<(), Failure> {
    match suite {
        Suite::Inequalities { samples, seed } => {
            let mut ok = true;
            for lemma in Lemma::ALL {
                let s = fuzz(lemma, samples, seed);
                ok &= s.passed();
                println!("{}", serde_json::to_string(&s).expect("json"));
            }
            for p in [2.0, 2.5, 3.0, 4.0, 6.0] {
                let r = sharpness_ratio(&[0.3, -1.1, 0.7], p);
                let pass = (r - 1.0).abs() <= 1e-14;
                ok &= pass;
                println!("{}", json!({ "sharpness_p": p, "ratio": r, "passed": pass }));
            }
            verdict(ok, "inequality violations")
        }
        Suite::Monotonicity { model, dt, cells, backend, samples, seed } => {
            let flux = model.build()?;
            let mesh = Mesh::interval(0.0, 1.0, cells)?;
            let backend = match backend {
                BackendArg::Fv => Backend::Fv,
                BackendArg::Fve => Backend::Fve,
            };
            let disc = Discretization::new(&mesh, backend, flux)?;
            let stage = StageProblem::implicit(dt, dt, vec![0.5; disc.len()], SourceModel::constant(0.0));
            let rep = check_monotonicity(&stage, &disc, samples, seed)?;
            println!("{}", serde_json::to_string(&rep).expect("json"));
            verdict(rep.passed, "negative monotonicity products")
        }
        Suite::FluxAssumptions { model, cells, samples, seed } => {
            use rand::{RngExt, SeedableRng};
            let flux = model.build()?;
            let mesh = Mesh::interval(0.0, 1.0, cells)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fields: Vec<Vec<f64>> = (0..samples)
                .map(|_| {
                    (0..cells)
                        .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..2.0) })
                        .collect()
                })
                .collect();
            let rep = check_standard_flux_assumptions(&flux, &mesh, &fields)?;
            println!("{}", serde_json::to_string(&rep).expect("json"));
            verdict(rep.passed(), "flux assumption failures")
        }
    }
}

fn verdict(ok: bool, what: &str) -> Result<(), Failure> {
    if ok {
        println!("pass");
        Ok(())
    } else {
        println!("fail");
        Err(Failure::Flagged(what.into()))
    }
}
