use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sinai_core::branching::{kurtz_statistics, scaled_bpre_profile, simulate_bpre, Construction};
use sinai_core::diffusion::{brox_marginal, sample_l_star, sample_limit_h, simulate_v, VScheme};
use sinai_core::environment::{sample_environment, Environment, EnvironmentSpec, Family};
use sinai_core::seed::{derive_seed, derived_stream};
use sinai_core::walk::{default_x_grid, lattice_index, scaled_local_time_profile, simulate_walk, Stop, WalkOptions};
use sinai_lab::config::EXPERIMENTS;
use sinai_lab::{exit_code, experiments, output, ExperimentConfig, LabError};

const USAGE_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "sinai-lab", version, about = "Monte Carlo experiments for a recurrent random walk in a random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pathwise local-time / upcrossing identity at scale.
    Identity(RunArgs),
    /// Chi-square fit of extracted offspring counts to the geometric law.
    Offspring(RunArgs),
    /// Monte Carlo moments of the offspring law.
    Moments(RunArgs),
    /// Drift, variance and third-moment conditions over sampled environments.
    /// With `--m`, prints the statistics of a single environment instead.
    Kurtz(KurtzArgs),
    /// Unit oracles for Brownian local time and V.
    DiffusionOracles(RunArgs),
    /// Decide the scaling c in l(x, T̃) ~ V(c² x).
    CalibrateRayknight(RunArgs),
    /// Three constructions of H compared in law.
    HConsistency(RunArgs),
    /// Walk local-time profile against the diffusion limit, over m.
    MainLimit(RunArgs),
    /// Walk marginal against the Brox marginal.
    TheoremA(RunArgs),
    /// Run whichever experiment a saved config names.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dump one sampled environment.
    Environment(EnvArgs),
    /// Simulate walks and print their scaled local-time profiles.
    Walk(WalkArgs),
    /// Simulate the branching process in a random environment.
    Bpre(BpreArgs),
    /// Sample continuum objects.
    Diffusion(DiffusionArgs),
    /// List the named experiments.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; missing fields take the experiment's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tenth of the replicas and widened thresholds.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (overrides SINAI_LAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    m_list: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    x_grid: Option<Vec<f64>>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    n_cap: Option<u64>,
    #[arg(long)]
    g_max: Option<u64>,
    #[arg(long)]
    calibration: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct KurtzArgs {
    /// Single level: print M, A and the G bound for one environment.
    #[arg(long)]
    m: Option<u32>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    TwoPoint,
    UniformSymmetric,
}

#[derive(Args)]
struct EnvSelect {
    #[arg(long, value_enum, default_value_t = FamilyArg::TwoPoint)]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.8)]
    a: f64,
    #[arg(long, default_value_t = 0.1)]
    nu: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl EnvSelect {
    fn spec(&self, tag: &str, index: u64) -> EnvironmentSpec {
        let family = match self.family {
            FamilyArg::TwoPoint => Family::TwoPoint { a: self.a },
            FamilyArg::UniformSymmetric => Family::UniformSymmetric,
        };
        EnvironmentSpec { family, nu: self.nu, seed: derive_seed(self.seed, tag, index) }
    }
}

#[derive(Args)]
struct EnvArgs {
    #[command(flatten)]
    env: EnvSelect,
    #[arg(long, default_value_t = 1)]
    m: u32,
    /// Sites -radius..=radius.
    #[arg(long, default_value_t = 20)]
    radius: i64,
}

#[derive(Args)]
struct WalkArgs {
    #[command(flatten)]
    env: EnvSelect,
    #[arg(long, default_value_t = 100)]
    m: u32,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    /// Returns to 0 before stopping (default m).
    #[arg(long)]
    stop_excursions: Option<u64>,
    /// Step cap (default 5000 m²).
    #[arg(long)]
    n_cap: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    x_grid: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstructionArg {
    HalfLine,
    SignSplit,
}

#[derive(Args)]
struct BpreArgs {
    #[command(flatten)]
    env: EnvSelect,
    #[arg(long, default_value_t = 100)]
    m: u32,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    /// Initial population (default m).
    #[arg(long)]
    initial: Option<u64>,
    #[arg(long)]
    g_max: Option<u64>,
    #[arg(long, value_enum, default_value_t = ConstructionArg::SignSplit)]
    construction: ConstructionArg,
    /// Print X_m(x) on this grid instead of the generation counts.
    #[arg(long, value_delimiter = ',')]
    x_grid: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Brox,
    #[value(name = "V", alias = "v")]
    V,
    #[value(name = "H", alias = "h")]
    H,
    Lstar,
}

#[derive(Args)]
struct DiffusionArgs {
    #[arg(long, value_enum)]
    what: What,
    /// Potential scale (default ln 4).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[arg(long, default_value_t = 1e-3)]
    dx: f64,
    /// Window bandwidth, recorded in the header (default 10 √dt).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Time of the Brox marginal.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, value_delimiter = ',')]
    x_grid: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sinai-lab: {e}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, LabError> {
    let named = |name: &str, args: RunArgs| run_experiment(build_config(name, args)?);
    match command {
        Command::Identity(a) => named("identity", a),
        Command::Offspring(a) => named("offspring", a),
        Command::Moments(a) => named("moments", a),
        Command::Kurtz(KurtzArgs { m: Some(m), run }) => kurtz_single(m, run),
        Command::Kurtz(KurtzArgs { m: None, run }) => named("kurtz", run),
        Command::DiffusionOracles(a) => named("diffusion-oracles", a),
        Command::CalibrateRayknight(a) => named("calibrate-rayknight", a),
        Command::HConsistency(a) => named("h-consistency", a),
        Command::MainLimit(a) => named("main-limit", a),
        Command::TheoremA(a) => named("theorem-a", a),
        Command::Run { config } => run_experiment(ExperimentConfig::load(&config)?),
        Command::Environment(a) => environment(a),
        Command::Walk(a) => walk(a),
        Command::Bpre(a) => bpre(a),
        Command::Diffusion(a) => diffusion(a),
        Command::List => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn build_config(name: &str, a: RunArgs) -> Result<ExperimentConfig, LabError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(path.clone(), e.to_string()))?;
            let mut base = serde_json::to_value(ExperimentConfig::for_experiment(name)?).expect("config serializes");
            let over: serde_json::Value = serde_json::from_str(&text).map_err(|e| LabError::Config(e.to_string()))?;
            merge(&mut base, over);
            let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| LabError::Config(e.to_string()))?;
            if cfg.experiment != name {
                return Err(LabError::Config(format!("config is for '{}', not '{name}'", cfg.experiment)));
            }
            cfg
        }
        None => ExperimentConfig::for_experiment(name)?,
    };
    if a.quick {
        cfg = cfg.quick();
    }
    cfg.replicas = a.replicas.unwrap_or(cfg.replicas);
    cfg.master_seed = a.seed.unwrap_or(cfg.master_seed);
    cfg.output_dir = a.out.or(cfg.output_dir);
    cfg.m_list = a.m_list.unwrap_or(cfg.m_list);
    cfg.x_grid = a.x_grid.unwrap_or(cfg.x_grid);
    cfg.dt = a.dt.unwrap_or(cfg.dt);
    cfg.dx = a.dx.unwrap_or(cfg.dx);
    cfg.eps = a.eps.or(cfg.eps);
    cfg.n_cap = a.n_cap.or(cfg.n_cap);
    cfg.g_max = a.g_max.or(cfg.g_max);
    cfg.calibration = a.calibration.unwrap_or(cfg.calibration);
    cfg.threshold = a.threshold.or(cfg.threshold);
    Ok(cfg)
}

/// Overlays `over` on `base`, recursing into objects.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn run_experiment(cfg: ExperimentConfig) -> Result<u8, LabError> {
    let outcome = experiments::run(&cfg)?;
    let dir = output::write_outcome(&cfg, &outcome)?;
    for c in &outcome.checks {
        let tag = if c.gating { "" } else { " (info)" };
        println!("{:<12} {}{tag}: {}", verdict_word(c.verdict), c.name, c.detail);
    }
    let verdict = outcome.verdict();
    println!("{}: {} -> {}", outcome.experiment, verdict_word(verdict), dir.display());
    Ok(exit_code(verdict) as u8)
}

fn verdict_word(v: sinai_core::compare::Verdict) -> String {
    serde_json::to_value(v).ok().and_then(|s| s.as_str().map(String::from)).unwrap_or_default()
}

fn environment(a: EnvArgs) -> Result<u8, LabError> {
    let base = sample_environment(a.env.spec("cli-environment", 0), -a.radius..=a.radius)?;
    base.rescale(a.m)?.write_csv(io::stdout().lock())?;
    Ok(0)
}

fn walk(a: WalkArgs) -> Result<u8, LabError> {
    let grid = a.x_grid.unwrap_or_else(default_x_grid);
    let radius = grid.iter().map(|&x| lattice_index(a.m, x)).max().unwrap_or(1).max(1) as u32;
    let count = a.stop_excursions.unwrap_or(u64::from(a.m));
    let cap = a.n_cap.unwrap_or(5000 * u64::from(a.m) * u64::from(a.m));
    let mut out = io::stdout().lock();
    let mut censored = 0u64;
    for i in 0..a.replicas {
        let mut env = rescaled(&a.env, "cli-walk-environment", i, i64::from(radius) + 2, a.m)?;
        let opts = WalkOptions::new(Stop::Excursions { count, cap }).with_radius(radius);
        let path = simulate_walk(&mut env, opts, derive_seed(a.env.seed, "cli-walk", i));
        writeln!(out, "# {}", json!({ "m": a.m, "seed": path.seed(), "replica": i, "censored": path.censored(),
            "excursions": path.excursions(), "steps": path.steps() }))?;
        writeln!(out, "x,L_m")?;
        if path.censored() || count < u64::from(a.m) {
            censored += u64::from(path.censored());
            continue;
        }
        let profile = scaled_local_time_profile(&path, a.m, &grid)?;
        for (x, v) in grid.iter().zip(profile) {
            writeln!(out, "{x},{v}")?;
        }
    }
    Ok(if censored > 0 { 2 } else { 0 })
}

fn rescaled(env: &EnvSelect, tag: &str, i: u64, window: i64, m: u32) -> Result<Environment, LabError> {
    Ok(sample_environment(env.spec(tag, i), -window..=window)?.rescale(m)?)
}

fn bpre(a: BpreArgs) -> Result<u8, LabError> {
    let g_max = a.g_max.unwrap_or(50 * u64::from(a.m));
    let construction = match a.construction {
        ConstructionArg::HalfLine => Construction::HalfLine,
        ConstructionArg::SignSplit => Construction::SignSplit,
    };
    let mut out = io::stdout().lock();
    for i in 0..a.replicas {
        let env = rescaled(&a.env, "cli-bpre-environment", i, g_max as i64 + 1, a.m)?;
        let mut rng = derived_stream(a.env.seed, "cli-bpre", i);
        let profile = simulate_bpre(&env, a.initial.unwrap_or(u64::from(a.m)), g_max, construction, &mut rng);
        match &a.x_grid {
            Some(grid) => {
                writeln!(out, "# {}", json!({ "m": a.m, "replica": i, "g_max": g_max, "extinct": profile.extinct }))?;
                writeln!(out, "x,X_m")?;
                for (x, v) in grid.iter().zip(scaled_bpre_profile(&profile, a.m, grid)?) {
                    writeln!(out, "{x},{v}")?;
                }
            }
            None => profile.write_csv(&mut out)?,
        }
    }
    Ok(0)
}

fn kurtz_single(m: u32, a: RunArgs) -> Result<u8, LabError> {
    let grid = a.x_grid.unwrap_or_else(|| vec![0.25, 0.5, 1.0]);
    let seed = a.seed.unwrap_or(1);
    let top = grid.iter().map(|&x| lattice_index(m, x)).max().unwrap_or(1).max(1) as i64;
    let env = sample_environment(EnvironmentSpec::default_with_seed(derive_seed(seed, "cli-kurtz-environment", 0)), 1..=top)?;
    let t = kurtz_statistics(&env, m, &grid);
    let mut out = io::stdout().lock();
    for k in 0..grid.len() {
        let record = json!({ "m": m, "seed": seed, "x": t.x[k], "M": t.drift[k], "A": t.variance[k], "G_bound": t.third_bound[k] });
        writeln!(out, "{record}")?;
    }
    Ok(0)
}

fn diffusion(a: DiffusionArgs) -> Result<u8, LabError> {
    let sigma = a.sigma.unwrap_or_else(|| 4f64.ln());
    let grid = a.x_grid.unwrap_or_else(|| vec![0.1, 0.25, 0.5, 1.0]);
    let eps = a.eps.unwrap_or(10.0 * a.dt.sqrt());
    let mut out = io::stdout().lock();
    let scheme = matches!(a.what, What::V | What::H).then_some("exact-besq");
    writeln!(out, "# {}", json!({ "sigma": sigma, "dt": a.dt, "dx": a.dx, "eps": eps, "seed": a.seed,
        "horizon": a.horizon, "x_grid": grid, "scheme": scheme }))?;
    if let What::Brox = a.what {
        writeln!(out, "replica,value")?;
        for i in 0..a.replicas {
            let v = brox_marginal(sigma, a.horizon, a.dt, a.dx, derive_seed(a.seed, "cli-brox", i))?;
            writeln!(out, "{i},{v}")?;
        }
        return Ok(0);
    }
    writeln!(out, "replica,x,value")?;
    let x_max = grid.iter().fold(0.0f64, |m, &x| m.max(x));
    for i in 0..a.replicas {
        let values = match a.what {
            What::V => {
                let v = simulate_v(x_max, a.dx, derive_seed(a.seed, "cli-v", i), VScheme::ExactBesq)?;
                grid.iter().map(|&x| v.at(x)).collect::<Result<Vec<_>, _>>()?
            }
            What::H => sample_limit_h(sigma, &grid, a.dx, derive_seed(a.seed, "cli-h", i))?,
            _ => sample_l_star(sigma, &grid, a.dx, derive_seed(a.seed, "cli-lstar", i))?,
        };
        for (x, v) in grid.iter().zip(values) {
            writeln!(out, "{i},{x},{v}")?;
        }
    }
    Ok(0)
}
