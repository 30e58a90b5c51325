//! The `otmorph` command line: `morph`, `verify` and `convergence`.
//!
//! Exit codes: 0 success, 1 error, 2 fixed point not reached, 3 verification failed.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::driver::{bb_cost, run_fixed_point, IterationReport, SolverConfig};
use crate::elliptic::solve_potential;
use crate::error::{Error, Result};
use crate::fields::{
    export_frames, load_density, prepare_pair, read_scalar_field, read_velocity_field, write_scalar_field,
    write_velocity_field, FrameFormat, ScalarField2D, SpaceTimeField, VelocityField,
};
use crate::mesh::{build_space_time_grid, quad4, Grid2D, QuadratureRule};
use crate::oracle::{
    integrate_flow, ode_lsq_field, representation_density, w2_1d_oracle, x_marginal, AnalyticVelocity, Direction,
};
use crate::transport::{assemble_lsq, lsq_residual, solve_transport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERATIONS: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

/// Thresholds used by `verify`.
pub const REPRESENTATION_TOL: f64 = 5e-2;
pub const DUALITY_TOL: f64 = 1e-8;
pub const MASS_DRIFT_TOL: f64 = 1e-2;
pub const W2_REL_TOL: f64 = 0.10;
const DUALITY_SAMPLES: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "otmorph", version, about = "Optimal-transport morphing between two grayscale images")]
pub struct Cli {
    /// Print errors on stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the interpolating density sequence between two PGM images.
    Morph(MorphArgs),
    /// Check a finished run directory against the characteristic oracles.
    Verify(VerifyArgs),
    /// Mesh-refinement study for the elliptic and transport solvers.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct MorphArgs {
    #[arg(long)]
    pub rho0: PathBuf,
    #[arg(long)]
    pub rho1: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    /// Flat JSON file with `SolverConfig` keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `pgm16` or `csv`.
    #[arg(long, default_value = "pgm16")]
    pub frames: FrameFormat,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Everything a command needs, with paths and configuration already resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub config: SolverConfig,
    pub seed: Option<u64>,
}

/// Refinement study settings: cell counts per axis for each case, plus solver keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub elliptic_cells: Vec<usize>,
    pub transport_cells: Vec<usize>,
    #[serde(flatten)]
    pub solver: SolverConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            elliptic_cells: vec![8, 16, 32],
            transport_cells: vec![8, 16, 32],
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub case: &'static str,
    pub h: f64,
    pub error: f64,
    pub order: Option<f64>,
}

/// Parse arguments, run the command under the thread policy from
/// `OTMORPH_THREADS`, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let json_errors = cli.json_errors;
    match with_thread_policy(|| dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            report_error(&e, json_errors);
            EXIT_ERROR
        }
    }
}

fn with_thread_policy<R: Send>(f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let threads = match std::env::var("OTMORPH_THREADS") {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("OTMORPH_THREADS must be a non-negative integer, got {s:?}")))?,
        ),
        Err(_) => None,
    };
    match threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
            pool.install(f)
        }
    }
}

fn report_error(e: &Error, json_errors: bool) {
    if json_errors {
        let mut obj = json!({ "error": e.kind(), "message": e.to_string() });
        if let Some(path) = error_path(e) {
            obj["path"] = json!(path);
        }
        eprintln!("{obj}");
    } else {
        eprintln!("error: {e}");
    }
}

fn error_path(e: &Error) -> Option<&Path> {
    match e {
        Error::Ingestion { path, .. } | Error::Export { path, .. } | Error::Io { path, .. } | Error::Artifact { path, .. } => {
            Some(path)
        }
        Error::Iteration { source, .. } => error_path(source),
        _ => None,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Morph(a) => {
            let mut config = match &a.config {
                Some(p) => read_json::<SolverConfig>(p)?,
                None => SolverConfig::default(),
            };
            config.nx = a.nx.unwrap_or(config.nx);
            config.ny = a.ny.unwrap_or(config.ny);
            config.nt = a.nt.unwrap_or(config.nt);
            config.validate()?;
            let manifest = RunManifest {
                subcommand: "morph".into(),
                inputs: vec![absolute(&a.rho0), absolute(&a.rho1)],
                output: absolute(&a.out),
                config,
                seed: None,
            };
            cmd_morph(&manifest, a.frames)
        }
        Command::Verify(a) => {
            let dir = absolute(&a.run);
            let config = read_json::<SolverConfig>(&dir.join("config.json"))?;
            let manifest = RunManifest {
                subcommand: "verify".into(),
                inputs: vec![dir.clone()],
                output: dir,
                config,
                seed: Some(a.seed),
            };
            cmd_verify(&manifest)
        }
        Command::Convergence(a) => {
            let study = match &a.config {
                Some(p) => read_json::<ConvergenceConfig>(p)?,
                None => ConvergenceConfig::default(),
            };
            study.solver.validate()?;
            cmd_convergence(&absolute(&a.out), &study)
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Export {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// Load, prepare, solve, and write the run directory.
pub fn cmd_morph(manifest: &RunManifest, frames: FrameFormat) -> Result<i32> {
    let cfg = &manifest.config;
    let grid = Grid2D::new(cfg.nx, cfg.ny)?;
    let raw0 = load_density(&manifest.inputs[0], &grid)?;
    let raw1 = load_density(&manifest.inputs[1], &grid)?;
    let (rho0, rho1) = prepare_pair(&raw0, &raw1, cfg)?;
    let run = run_fixed_point(&rho0, &rho1, cfg)?;

    let out = &manifest.output;
    fs::create_dir_all(out).map_err(|source| Error::Export {
        path: out.clone(),
        source,
    })?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("manifest.json"), manifest)?;
    write_json(&out.join("report.json"), &run.report)?;
    write_scalar_field(out.join("rho"), &run.rho)?;
    write_velocity_field(out.join("velocity"), &run.velocity)?;
    export_frames(&run.rho, out.join("frames"), frames)?;

    let last = run.report.last();
    log::info!(
        "{:?} after {} iterations, residual {:.3e}, cost {:.6e}",
        run.report.verdict,
        run.report.iterations(),
        last.residual_l2,
        last.transport_cost
    );
    Ok(if run.report.converged() {
        EXIT_OK
    } else {
        EXIT_MAX_ITERATIONS
    })
}

/// Run every check on a run directory and write `verify.json`.
pub fn cmd_verify(manifest: &RunManifest) -> Result<i32> {
    let dir = &manifest.output;
    let report = verify_run(dir, &manifest.config, manifest.seed.unwrap_or(0))?;
    write_json(&dir.join("verify.json"), &report)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn check(name: &str, value: f64, threshold: f64, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        value,
        threshold,
        detail,
    }
}

/// True when every column of the field is constant in `y` away from the top and
/// bottom rows (which `prepare_pair` may have replaced by an average).
pub fn is_y_constant(f: &ScalarField2D) -> bool {
    let g = f.grid();
    let scale = f.max().abs().max(1.0);
    (0..g.nx()).all(|i| {
        let base = f.values()[g.index(i, 1)];
        (1..g.ny() - 1).all(|j| (f.values()[g.index(i, j)] - base).abs() <= 1e-12 * scale)
    })
}

pub fn verify_run(dir: &Path, cfg: &SolverConfig, seed: u64) -> Result<VerifyReport> {
    let (rho, rho_ok) = read_scalar_field(dir.join("rho"))?;
    let (v, v_ok) = read_velocity_field(dir.join("velocity"))?;
    let report: IterationReport = read_json(&dir.join("report.json"))?;
    if rho.grid() != v.grid() {
        return Err(Error::Artifact {
            path: dir.to_path_buf(),
            message: "stored density and velocity have different grids".into(),
        });
    }
    let grid = rho.grid().clone();
    let rho0 = rho.slice(0);
    let rho1 = rho.slice(grid.nt() - 1);
    let last = report.last();
    let mut checks = Vec::new();

    // conservation: artifacts intact, residual reproduces the recorded one, mass kept
    let recomputed = lsq_residual(&rho, &v)?;
    let mass0 = rho0.integral();
    let drift = rho
        .slice_masses()
        .iter()
        .map(|m| (m - mass0).abs() / mass0)
        .fold(0.0, f64::max);
    let reproduces = recomputed <= last.lsq_residual * (1.0 + 1e-6) + 1e-14;
    checks.push(check(
        "conservation",
        recomputed,
        last.lsq_residual,
        rho_ok && v_ok && reproduces && drift <= MASS_DRIFT_TOL,
        format!(
            "checksums rho={rho_ok} velocity={v_ok}; lsq residual {recomputed:.6e} (recorded {:.6e}); max mass drift {drift:.3e} (limit {MASS_DRIFT_TOL})",
            last.lsq_residual
        ),
    ));

    // representation formulas at the stored iterate; the two-endpoint exponential
    // form decides, the quotient form is recorded alongside
    let exponential = ode_lsq_field(&v, &grid, &rho0, &rho1, cfg);
    let rel = exponential.l2_distance(&rho) / rho.l2_norm();
    let quotient = match representation_density(&rho, &v, &rho0, &rho1, cfg) {
        Ok(rep) => format!("{:.6e}", rep.l2_distance(&rho) / rho.l2_norm()),
        Err(e) => e.to_string(),
    };
    checks.push(check(
        "representation",
        rel,
        REPRESENTATION_TOL,
        rel <= REPRESENTATION_TOL,
        format!("relative L2 distance to the stored density; quotient form: {quotient}"),
    ));

    // flow duality on seeded samples
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..DUALITY_SAMPLES {
        let (s, t): (f64, f64) = (rng.gen(), rng.gen());
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let a = integrate_flow(&v, Direction::Minus, 1.0 - s, 1.0 - t, x, cfg);
        let b = integrate_flow(&v, Direction::Plus, s, t, x, cfg);
        worst = worst.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()));
    }
    checks.push(check(
        "flow-duality",
        worst,
        DUALITY_TOL,
        worst <= DUALITY_TOL,
        format!("{DUALITY_SAMPLES} samples, seed {seed}"),
    ));

    if is_y_constant(&rho0) && is_y_constant(&rho1) {
        let cost = bb_cost(&rho, &v)?;
        let w2 = w2_1d_oracle(&x_marginal(&rho0), &x_marginal(&rho1))?;
        let (value, passed, detail) = if w2 <= 1e-12 {
            (cost, cost <= 1e-10, format!("oracle W2^2 {w2:.3e}; absolute cost {cost:.6e}"))
        } else {
            let rel = (cost - w2).abs() / w2;
            (rel, rel <= W2_REL_TOL, format!("cost {cost:.6e}, oracle W2^2 {w2:.6e}"))
        };
        checks.push(check("w2-1d", value, W2_REL_TOL, passed, detail));
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { seed, passed, checks })
}

/// Write `convergence.csv` with one row per refinement level.
pub fn cmd_convergence(out: &Path, study: &ConvergenceConfig) -> Result<i32> {
    fs::create_dir_all(out).map_err(|source| Error::Export {
        path: out.to_path_buf(),
        source,
    })?;
    write_json(&out.join("config.json"), study)?;
    let mut rows = elliptic_study(&study.elliptic_cells, &study.solver)?;
    rows.extend(transport_study(&study.transport_cells, &study.solver)?);
    write_text(&out.join("convergence.csv"), &study_csv(&rows))?;
    Ok(EXIT_OK)
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut csv = String::from("case,h,error,order\n");
    for r in rows {
        let order = r.order.map(|o| format!("{o:.6}")).unwrap_or_default();
        csv.push_str(&format!("{},{:.10e},{:.10e},{}\n", r.case, r.h, r.error, order));
    }
    csv
}

fn with_orders(case: &'static str, errors: Vec<(f64, f64)>) -> Vec<StudyRow> {
    let mut rows = Vec::with_capacity(errors.len());
    for (k, &(h, error)) in errors.iter().enumerate() {
        let order = (k > 0).then(|| {
            let (hp, ep) = errors[k - 1];
            (ep / error).ln() / (hp / h).ln()
        });
        rows.push(StudyRow { case, h, error, order });
    }
    rows
}

/// `||phi_h - sin(pi x) sin(pi y)||_L2` for unit coefficient, with 3x3 Gauss per element.
pub fn elliptic_manufactured_error(cells: usize, cfg: &SolverConfig) -> Result<f64> {
    let g = Grid2D::new(cells + 1, cells + 1)?;
    let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let rho = ScalarField2D::constant(&g, 1.0);
    let rhs = ScalarField2D::from_fn(&g, |x, y| 2.0 * PI * PI * exact(x, y));
    let phi = solve_potential(&rho, &rhs, 0.0, cfg)?.phi;
    let rule = QuadratureRule::<2>::gauss(3);
    let mut sq = 0.0;
    for (ei, ej) in g.elements() {
        let nodes = g.element_nodes(ei, ej);
        let origin = g.position(ei, ej);
        for (p, w) in rule.iter() {
            let (n, _) = quad4(*p);
            let approx: f64 = (0..4).map(|a| n[a] * phi.values()[nodes[a]]).sum();
            let e = approx - exact(origin[0] + p[0] * g.hx(), origin[1] + p[1] * g.hy());
            sq += w * g.hx() * g.hy() * e * e;
        }
    }
    Ok(sq.sqrt())
}

fn elliptic_study(cells: &[usize], cfg: &SolverConfig) -> Result<Vec<StudyRow>> {
    let errors = cells
        .iter()
        .map(|&n| Ok((1.0 / n as f64, elliptic_manufactured_error(n, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(with_orders("elliptic", errors))
}

/// Speed of the prescribed translation in the transport case.
pub const TRANSLATION: [f64; 2] = [0.2, 0.0];

/// Bump profile used by the prescribed-velocity transport case.
pub fn transport_profile(x: f64, y: f64) -> f64 {
    0.3 + 0.7 * (-((x - 0.4).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.1f64.powi(2))).exp()
}

/// Relative L2(Q) distance between the least-squares density for a constant
/// translation and the characteristics solution on an `nx x ny x nt` grid.
pub fn transport_translation_error(nx: usize, ny: usize, nt: usize, cfg: &SolverConfig) -> Result<f64> {
    let grid = build_space_time_grid(nx, ny, nt)?;
    let g = grid.spatial();
    let rho0 = ScalarField2D::from_fn(g, transport_profile);
    let rho1 = ScalarField2D::from_fn(g, |x, y| transport_profile(x - TRANSLATION[0], y - TRANSLATION[1]));
    let lifting = crate::mesh::interpolate_lifting(&rho0, &rho1, &grid)?;
    let v = VelocityField::constant(&grid, TRANSLATION);
    let sys = assemble_lsq(&v, &lifting, cfg)?;
    let rho = solve_transport(&sys, cfg)?.rho;
    let field = AnalyticVelocity::unbounded(|_, _| TRANSLATION);
    let oracle: SpaceTimeField = ode_lsq_field(&field, &grid, &rho0, &rho1, cfg);
    Ok(rho.l2_distance(&oracle) / oracle.l2_norm())
}

fn transport_study(cells: &[usize], cfg: &SolverConfig) -> Result<Vec<StudyRow>> {
    let errors = cells
        .iter()
        .map(|&n| {
            let nt = (n / 2).max(2) + 1;
            Ok((1.0 / n as f64, transport_translation_error(n + 1, n + 1, nt, cfg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(with_orders("transport", errors))
}
