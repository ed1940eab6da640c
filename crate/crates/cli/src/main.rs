//! `constraint-forge`: data generation, constraint evaluation, verification
//! suites, Newton projection and KID scans on discretised flat tori.
//!
//! Exit codes: 0 on success, 1 when a check fails or a numerical method
//! breaks down, 2 on usage or input errors.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use constraint_forge::constraint::{hamiltonian_via_k, momentum, phi};
use constraint_forge::fields::{background, ConstraintValue, PhasePoint};
use constraint_forge::io::{read_phase_point, write_field, write_phase_point, Encoding};
use constraint_forge::solve::{kid_kernel, newton_project, SolveOptions, Strategy};
use constraint_forge::verify::{
    check_adjoint, check_elliptic_estimate, check_linearization, check_second_derivative_identity, check_trace_identity,
    korn_ratio, lipschitz_probe, t_estimate_ratio, OperatorReport,
};
use constraint_forge::{ForgeError, Grid, GridSpec, SymField};

#[derive(Parser, Debug)]
#[command(name = "constraint-forge", version, about = "Vacuum constraint operator toolkit on flat tori")]
struct Cli {
    /// JSON configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports, fields and CSV tables.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct GridArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    period: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrialArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Adjoint,
    Linearization,
    Identities,
    Korn,
    TRing,
    Elliptic,
    Lipschitz,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a background or perturbed phase point as CFF1 fields plus a manifest.
    Gen {
        #[command(flatten)]
        grid: GridArgs,
        /// Exact background; otherwise a band-limited perturbation of it.
        #[arg(long)]
        background: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        band: usize,
        #[arg(long, default_value_t = 0.05)]
        amplitude: f64,
        #[arg(long, default_value = "point")]
        stem: String,
        /// Text data blocks instead of binary.
        #[arg(long)]
        text: bool,
    },
    /// Evaluate Φ on a manifest and write `phi0` and `phii` fields.
    Phi { manifest: PathBuf },
    /// Adjoint pairing check at a manifest point or the background.
    CheckAdjoint {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        trials: TrialArgs,
    },
    /// Second-derivative and trace identities.
    Identities {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        trials: TrialArgs,
    },
    /// Run a verification suite.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        trials: TrialArgs,
    },
    /// Newton projection of a manifest point onto `Φ = (ε, 0)`.
    Project {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        newton_tol: Option<f64>,
    },
    /// Smallest singular values and numerical kernel of the KID operator.
    Kids {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        dense_threshold: Option<usize>,
    },
    /// Sobolev norms of the deviation from the background and of Φ.
    Norms {
        manifest: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StrategyArg {
    SpecialVariations,
    AdjointComposition,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    grid: Option<GridSpec>,
    seed: Option<u64>,
    trials: Option<usize>,
    threshold: Option<f64>,
    solve: Option<SolveOptions>,
}

enum CliError {
    Usage(String),
    Failure(String),
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        use ForgeError::*;
        match e {
            InvalidGrid(_) | AxisOutOfRange { .. } | BandTooLarge { .. } | GridMismatch { .. } | ShapeMismatch(_)
            | InvalidOptions(_) | Format(_) | Io(_) | Json(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

struct Ctx {
    config: Config,
    out: PathBuf,
}

impl Ctx {
    fn grid(&self, a: &GridArgs) -> CliResult<Grid> {
        let mut spec = self.config.grid.clone().unwrap_or_else(|| GridSpec::new(3, 16));
        if let Some(n) = a.n {
            spec.n = n;
        }
        if let Some(p) = a.points {
            spec.points_per_axis = p;
        }
        if let Some(t) = a.tau {
            spec.tau = t;
        }
        if let Some(k) = a.kappa {
            spec.kappa = k;
        }
        if let Some(l) = a.lambda {
            spec.lambda = Some(l);
        }
        if let Some(p) = a.period {
            spec.period = p;
        }
        Ok(Grid::new(spec)?)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(0)
    }

    fn trials(&self, flag: Option<usize>, default: usize) -> usize {
        flag.or(self.config.trials).unwrap_or(default)
    }

    fn solve_options(&self) -> SolveOptions {
        self.config.solve.clone().unwrap_or_default()
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
        fs::write(self.out.join(name), &text)?;
        println!("{text}");
        Ok(())
    }

    fn csv_file(&self, name: &str) -> CliResult<fs::File> {
        Ok(fs::File::create(self.out.join(name))?)
    }
}

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("CONSTRAINT_FORGE_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("CONSTRAINT_FORGE_THREADS must be a positive integer, got `{v}`")))?;
        if threads == 0 {
            return Err(CliError::Usage("CONSTRAINT_FORGE_THREADS must be positive".into()));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn point_or_background(ctx: &Ctx, manifest: Option<&Path>, grid: &GridArgs) -> CliResult<(Grid, PhasePoint)> {
    match manifest {
        Some(m) => {
            let (_, g, p) = read_phase_point(m)?;
            Ok((g, p))
        }
        None => {
            let g = ctx.grid(grid)?;
            let p = background(&g);
            Ok((g, p))
        }
    }
}

fn all_pass(reports: &[OperatorReport]) -> CliResult<()> {
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check_name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("failed checks: {}", failed.join(", "))))
    }
}

fn gen(ctx: &Ctx, grid: &GridArgs, bg: bool, seed: Option<u64>, band: usize, amp: f64, stem: &str, text: bool) -> CliResult<()> {
    let g = ctx.grid(grid)?;
    let p = if bg {
        background(&g)
    } else {
        PhasePoint::perturbed_background(&g, ctx.seed(seed), band, amp, amp)?
    };
    let enc = if text { Encoding::Text } else { Encoding::Binary };
    let manifest = write_phase_point(&ctx.out, stem, &g, &p, enc)?;
    let value = phi(&g, &p, g.lambda())?;
    ctx.write_json(
        &format!("{stem}.gen.json"),
        &json!({
            "manifest": manifest,
            "phi_max_abs": value.max_abs(),
            "phi_l2": value.l2_norm(&g),
        }),
    )
}

fn phi_cmd(ctx: &Ctx, manifest: &Path) -> CliResult<()> {
    let (_, g, p) = read_phase_point(manifest)?;
    let value = phi(&g, &p, g.lambda())?;
    write_field(&ctx.out.join("phi0.cff"), &g, &value.phi0, Encoding::Binary)?;
    write_field(&ctx.out.join("phii.cff"), &g, &value.phii, Encoding::Binary)?;
    ctx.write_json(
        "phi.json",
        &json!({
            "hamiltonian_max_abs": value.phi0.max_abs(),
            "momentum_max_abs": value.phii.max_abs(),
            "max_abs": value.max_abs(),
            "l2": value.l2_norm(&g),
        }),
    )
}

fn run_suite(ctx: &Ctx, suite: Suite, grid: &GridArgs, t: &TrialArgs) -> CliResult<Vec<OperatorReport>> {
    let g = ctx.grid(grid)?;
    let seed = ctx.seed(t.seed);
    let band = g.points_per_axis() / 4;
    let base = PhasePoint::perturbed_background(&g, seed ^ 0xb45e, 1, 0.05, 0.05)?;
    let lambda = g.lambda();
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut reports = Vec::new();
    if want(Suite::Adjoint) {
        reports.push(check_adjoint(&g, &base, lambda, ctx.trials(t.trials, 20), seed)?);
    }
    if want(Suite::Linearization) {
        reports.push(check_linearization(&g, &base, lambda, ctx.trials(t.trials, 20), seed)?);
    }
    if want(Suite::Identities) {
        let trials = ctx.trials(t.trials, 20);
        reports.push(check_second_derivative_identity(&g, trials, seed)?);
        reports.push(check_trace_identity(&g, &base.g.0, lambda, trials, seed)?);
    }
    if want(Suite::Korn) {
        reports.push(korn_ratio(&g, ctx.trials(t.trials, 100), seed, 0, band)?);
    }
    if want(Suite::TRing) {
        reports.push(t_estimate_ratio(&g, ctx.trials(t.trials, 100), seed, g.spec().kappa, 0, band)?);
    }
    if want(Suite::Elliptic) {
        reports.push(check_elliptic_estimate(&g, &base, lambda, ctx.trials(t.trials, 100), seed, band)?);
    }
    if want(Suite::Lipschitz) {
        let other = PhasePoint::perturbed_background(&g, seed ^ 0x11b5, band.min(2), 0.05, 0.05)?;
        reports.push(lipschitz_probe(&g, &base, &other, lambda, ctx.trials(t.trials, 100), seed, band.min(2))?);
    }
    for r in &reports {
        if r.check_name == "linearization" {
            plot::curve_table(ctx.csv_file("linearization_error.csv")?, r)?;
        }
    }
    Ok(reports)
}

fn project(
    ctx: &Ctx,
    manifest: &Path,
    epsilon: f64,
    strategy: Option<StrategyArg>,
    max_iters: Option<usize>,
    newton_tol: Option<f64>,
) -> CliResult<()> {
    let (m, g, p) = read_phase_point(manifest)?;
    let mut opts = ctx.solve_options();
    if let Some(s) = strategy {
        opts.strategy = match s {
            StrategyArg::SpecialVariations => Strategy::SpecialVariations,
            StrategyArg::AdjointComposition => Strategy::AdjointComposition,
        };
    }
    if let Some(k) = max_iters {
        opts.max_newton_iters = k;
    }
    if let Some(t) = newton_tol {
        opts.newton_tol = t;
    }
    let n = g.dim();
    let len = g.total_points();
    let eps = ConstraintValue::new(g.constant(epsilon), constraint_forge::VectorField::zeros(n, len));
    let out = newton_project(&g, &p, &eps, m.lambda, g.spec().tau, &opts)?;
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("point");
    let projected = write_phase_point(&ctx.out, &format!("{stem}.projected"), &g, &out.point, Encoding::Binary)?;
    let k_form = ConstraintValue::new(hamiltonian_via_k(&g, &out.point, m.lambda)?, momentum(&g, &out.point)?);
    plot::residual_table(ctx.csv_file("project_residuals.csv")?, &out)?;
    ctx.write_json(
        "project.json",
        &json!({
            "manifest": projected,
            "projection": out,
            "reduction": out.reduction(),
            "k_form_residual": (&k_form - &eps).l2_norm(&g),
        }),
    )?;
    if out.converged {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "projection did not reach the tolerance in {} iterations",
            out.iterations
        )))
    }
}

fn kids(ctx: &Ctx, manifest: Option<&Path>, grid: &GridArgs, threshold: Option<f64>, dense: Option<usize>) -> CliResult<()> {
    let (g, p) = point_or_background(ctx, manifest, grid)?;
    let mut opts = ctx.solve_options();
    if let Some(d) = dense {
        opts.dense_threshold = d;
    }
    let threshold = threshold.or(ctx.config.threshold).unwrap_or(1e-8);
    let report = kid_kernel(&g, &p, g.lambda(), threshold, &opts)?;
    plot::singular_table(ctx.csv_file("kids_singular_values.csv")?, &report)?;
    ctx.write_json("kids.json", &report)
}

fn norms(ctx: &Ctx, manifest: &Path, k: usize) -> CliResult<()> {
    let (_, g, p) = read_phase_point(manifest)?;
    let bg = background(&g);
    let dg: SymField = &p.g.0 - &bg.g.0;
    let dpi: SymField = &p.pi.0 - &bg.pi.0;
    let value = phi(&g, &p, g.lambda())?;
    let table: Vec<_> = (0..=k)
        .map(|j| {
            json!({
                "k": j,
                "metric_deviation": g.sobolev_norm(&dg, j),
                "momentum_deviation": g.sobolev_norm(&dpi, j),
                "hamiltonian": g.sobolev_norm(&value.phi0, j),
                "momentum_constraint": g.sobolev_norm(&value.phii, j),
            })
        })
        .collect();
    ctx.write_json("norms.json", &table)
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let config = load_config(cli.config.as_deref())?;
    if let Some(s) = &config.solve {
        s.validate()?;
    }
    fs::create_dir_all(&cli.out)?;
    let ctx = Ctx { config, out: cli.out };
    match &cli.command {
        Command::Gen {
            grid,
            background,
            seed,
            band,
            amplitude,
            stem,
            text,
        } => gen(&ctx, grid, *background, *seed, *band, *amplitude, stem, *text),
        Command::Phi { manifest } => phi_cmd(&ctx, manifest),
        Command::CheckAdjoint { manifest, grid, trials } => {
            let (g, p) = point_or_background(&ctx, manifest.as_deref(), grid)?;
            let r = check_adjoint(&g, &p, g.lambda(), ctx.trials(trials.trials, 20), ctx.seed(trials.seed))?;
            ctx.write_json("check-adjoint.json", &r)?;
            all_pass(&[r])
        }
        Command::Identities { manifest, grid, trials } => {
            let (g, p) = point_or_background(&ctx, manifest.as_deref(), grid)?;
            let (n, seed) = (ctx.trials(trials.trials, 20), ctx.seed(trials.seed));
            let reports = vec![
                check_second_derivative_identity(&g, n, seed)?,
                check_trace_identity(&g, &p.g.0, g.lambda(), n, seed)?,
            ];
            ctx.write_json("identities.json", &reports)?;
            all_pass(&reports)
        }
        Command::Verify { suite, grid, trials } => {
            let reports = run_suite(&ctx, *suite, grid, trials)?;
            ctx.write_json("verify.json", &reports)?;
            all_pass(&reports)
        }
        Command::Project {
            manifest,
            epsilon,
            strategy,
            max_iters,
            newton_tol,
        } => project(&ctx, manifest, *epsilon, *strategy, *max_iters, *newton_tol),
        Command::Kids {
            manifest,
            grid,
            threshold,
            dense_threshold,
        } => kids(&ctx, manifest.as_deref(), grid, *threshold, *dense_threshold),
        Command::Norms { manifest, k } => norms(&ctx, manifest, *k),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
