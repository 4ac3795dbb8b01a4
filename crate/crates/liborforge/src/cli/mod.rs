//! Command-line surface: declarative model ingestion, subcommand
//! orchestration, and report/CSV emission.
//!
//! Exit codes are the machine contract: 0 success, 1 check failure,
//! 2 schema error, 3 invariant violation, 4 numerical divergence.
//! CSV numbers use the shortest round-trip decimal form, so identical
//! inputs and seeds give byte-identical files for any worker count.

mod document;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::core::ModelFamily;
use crate::drift_engine::{
    drift_residual_sweep, positivity_check, structure_preservation_check, validate_assumptions,
    ResidualSummary,
};
use crate::simulation::{
    caplet_table, forward_price_paths, martingale_test, simulate_driver, SimulationConfig,
};
use crate::{Error, Result};

pub use document::{
    build_model, canonical_json, parse_spec, DriverDoc, FamilyDoc, ParsedModel, SpecDocument,
    TerminalParams, VolatilityDoc,
};

/// Residual gate of the `validate` subcommand: algebraic identity for the
/// closed-form families, integration accuracy for the affine family.
pub const RESIDUAL_TOL_CLOSED_FORM: f64 = 1e-10;
pub const RESIDUAL_TOL_AFFINE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "liborforge",
    about = "Arbitrage-free forward-rate models: validation, simulation and pricing"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Audit model assumptions and sweep the drift-condition residuals.
    Validate(CommonArgs),
    /// Simulate driver paths and emit path and forward-price series.
    Simulate(CommonArgs),
    /// Solve the Riccati system per terminal parameter and emit the flows.
    Riccati(CommonArgs),
    /// Monte Carlo martingale test of the terminal-quoted forward prices.
    #[command(name = "check-martingale")]
    CheckMartingale(CommonArgs),
    /// Price caplets across tenors and strikes.
    Price(PriceArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Model document (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Path count override.
    #[arg(long)]
    paths: Option<usize>,
    /// Step override: simulation time step, or the integration step for
    /// `riccati`.
    #[arg(long)]
    step: Option<f64>,
    /// Output directory for report.txt and CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Sabotage switch: zero the model drift before simulating.
    #[arg(long)]
    zero_drift: bool,
}

#[derive(Debug, Args)]
struct PriceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Strike override; may repeat. Defaults to zero plus each initial rate.
    #[arg(long)]
    strike: Vec<f64>,
}

/// Run the CLI and translate the outcome into the exit-code contract.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version via this path as well
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Schema(_) | Error::Io(_) => 2,
        Error::Domain(_) | Error::Index(_) | Error::Invariant(_) | Error::Contract(_) => 3,
        Error::Divergence(_) | Error::Calibration(_) | Error::Simulation(_) => 4,
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate(args) => run_validate(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::Riccati(args) => run_riccati(&args),
        Command::CheckMartingale(args) => run_check_martingale(&args),
        Command::Price(args) => run_price(&args),
    }
}

fn load(args: &CommonArgs) -> Result<(ParsedModel, SimulationConfig)> {
    let parsed = parse_spec(&args.spec)?;
    let mut sim = parsed.simulation.clone();
    if let Some(seed) = args.seed {
        sim.master_seed = seed;
    }
    if let Some(paths) = args.paths {
        sim = SimulationConfig::new(paths, sim.time_step, sim.master_seed)
            .map(|c| c.with_workers(sim.worker_hint))?
            .with_zero_drift(sim.zero_drift);
    }
    if let Some(step) = args.step {
        sim = SimulationConfig::new(sim.path_count, step, sim.master_seed)
            .map(|c| c.with_workers(sim.worker_hint))?
            .with_zero_drift(sim.zero_drift);
    }
    sim = sim.with_zero_drift(args.zero_drift);
    Ok((parsed, sim))
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
        })
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn write_report(&self, text: &str) -> Result<()> {
        std::fs::write(self.dir.join("report.txt"), text)?;
        Ok(())
    }
}

fn residual_tolerance(parsed: &ParsedModel) -> f64 {
    match parsed.model.family() {
        ModelFamily::Affine(_) => RESIDUAL_TOL_AFFINE,
        _ => RESIDUAL_TOL_CLOSED_FORM,
    }
}

fn run_validate(args: &CommonArgs) -> Result<bool> {
    let (parsed, sim) = load(args)?;
    let out = OutputDir::create(&args.out)?;
    let model = &parsed.model;

    let report = validate_assumptions(model)?;
    let sweep = drift_residual_sweep(model, 1000, sim.master_seed)?;
    let tol = residual_tolerance(&parsed);
    let residuals_ok = sweep.iter().all(|r| r.max_abs_residual < tol);
    let positivity = positivity_check(model, 10_000)?;
    let structure = structure_preservation_check(model, 100)?;

    let rows: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.name,
                fmt_f(c.value),
                c.bound.map(fmt_f).unwrap_or_default(),
                c.passed,
                c.detail.replace(',', ";")
            )
        })
        .collect();
    out.write_csv("validation.csv", "name,value,bound,passed,detail", &rows)?;

    let rows: Vec<String> = sweep
        .iter()
        .map(|r: &ResidualSummary| {
            format!(
                "{},{},{},{},{},{}",
                r.tenor_index,
                r.condition,
                fmt_f(r.max_abs_residual),
                r.samples,
                fmt_f(tol),
                r.max_abs_residual < tol
            )
        })
        .collect();
    out.write_csv(
        "residuals.csv",
        "tenor,condition,max_abs_residual,samples,tolerance,pass",
        &rows,
    )?;

    let mut text = String::new();
    let _ = writeln!(text, "model family: {}", model.family().name());
    let _ = writeln!(text, "tenors: {}", model.tenor().interval_count());
    let _ = writeln!(text, "\nassumption checks:");
    for c in &report.checks {
        let _ = writeln!(
            text,
            "  [{}] {:<24} value {:<24} {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            fmt_f(c.value),
            c.detail
        );
    }
    let _ = writeln!(text, "\ndrift-condition residual sweep (tolerance {tol}):");
    for r in &sweep {
        let _ = writeln!(
            text,
            "  [{}] tenor {} ({}) max |residual| = {}",
            if r.max_abs_residual < tol { "pass" } else { "FAIL" },
            r.tenor_index,
            r.condition,
            fmt_f(r.max_abs_residual)
        );
    }
    let _ = writeln!(text, "\ninformational properties (not gating):");
    let _ = writeln!(
        text,
        "  non-negative rates: {}",
        if positivity.passed() { "satisfied on samples" } else { "violated" }
    );
    for e in positivity.entries.iter().chain(&positivity.monotone) {
        if let Some((t, x, v)) = &e.witness {
            let _ = writeln!(
                text,
                "    witness tenor {}: value {} at t = {}, x = {:?}",
                e.tenor_index,
                fmt_f(*v),
                fmt_f(*t),
                x
            );
        }
    }
    let _ = writeln!(
        text,
        "  structure preserving: {}",
        if structure.preserving() { "yes" } else { "no" }
    );
    for e in &structure.entries {
        if let Some((a, b)) = &e.witness {
            let _ = writeln!(
                text,
                "    witness tenor {}: tilts differ between x = {a:?} and x = {b:?}",
                e.tenor_index
            );
        }
    }
    let verdict = report.passed() && residuals_ok;
    let _ = writeln!(text, "\nverdict: {}", if verdict { "PASS" } else { "FAIL" });
    out.write_report(&text)?;
    Ok(verdict)
}

fn run_simulate(args: &CommonArgs) -> Result<bool> {
    let (parsed, sim) = load(args)?;
    let out = OutputDir::create(&args.out)?;
    let model = &parsed.model;
    let grid = simulate_driver(model, &sim)?;

    let d = grid.dimension;
    let mut header = String::from("path,time");
    for i in 0..d {
        let _ = write!(header, ",x{i}");
    }
    let mut rows = Vec::with_capacity(grid.path_count() * grid.times.len());
    for p in 0..grid.path_count() {
        for (i, t) in grid.times.iter().enumerate() {
            let mut row = format!("{p},{}", fmt_f(*t));
            for v in grid.state(p, i) {
                let _ = write!(row, ",{}", fmt_f(*v));
            }
            rows.push(row);
        }
    }
    out.write_csv("paths.csv", &header, &rows)?;

    let n_rates = model.tenor().rate_count();
    let series: Vec<Vec<Vec<f64>>> = (1..=n_rates)
        .map(|k| forward_price_paths(model, &grid, k))
        .collect::<Result<_>>()?;
    let mut header = String::from("path,time");
    for k in 1..=n_rates {
        let _ = write!(header, ",f{k}");
    }
    let mut rows = Vec::with_capacity(grid.path_count() * grid.times.len());
    for p in 0..grid.path_count() {
        for (i, t) in grid.times.iter().enumerate() {
            let mut row = format!("{p},{}", fmt_f(*t));
            for s in &series {
                let _ = write!(row, ",{}", fmt_f(s[p][i]));
            }
            rows.push(row);
        }
    }
    out.write_csv("forward_prices.csv", &header, &rows)?;

    let text = format!(
        "family: {}\npaths: {}\ntime points: {}\nseed: {}\nstep: {}\nzero_drift: {}\n",
        model.family().name(),
        grid.path_count(),
        grid.times.len(),
        sim.master_seed,
        fmt_f(sim.time_step),
        sim.zero_drift
    );
    out.write_report(&text)?;
    Ok(true)
}

fn run_riccati(args: &CommonArgs) -> Result<bool> {
    let (parsed, _) = load(args)?;
    let out = OutputDir::create(&args.out)?;
    let affine = match parsed.model.family() {
        ModelFamily::Affine(a) => a,
        other => {
            return Err(Error::contract(format!(
                "riccati requires the affine family, spec declares {}",
                other.name()
            )))
        }
    };
    // re-solve when an explicit integration step is requested
    let affine_owned;
    let affine = match args.step {
        Some(step) => {
            affine_owned = crate::affine::AffineModelSpec::with_step(
                affine.driver().clone(),
                affine.u().to_vec(),
                affine.horizon(),
                step,
            )?;
            &affine_owned
        }
        None => affine,
    };

    let mut text = String::from("riccati flows per terminal parameter\n");
    for (idx, _) in affine.u().iter().enumerate() {
        let k = idx + 1;
        let sol = affine.solution(k)?;
        let rows: Vec<String> = sol
            .grid
            .iter()
            .zip(sol.phi.iter().zip(&sol.psi))
            .map(|(t, (phi, psi))| format!("{},{},{}", fmt_f(*t), fmt_f(*phi), fmt_f(*psi)))
            .collect();
        out.write_csv(&format!("riccati_k{k}.csv"), "t,phi,psi", &rows)?;
        let _ = writeln!(
            text,
            "  k = {k}: u = {}, phi(T) = {}, psi(T) = {}",
            fmt_f(sol.u),
            fmt_f(sol.terminal_phi()),
            fmt_f(sol.terminal_psi())
        );
    }
    out.write_report(&text)?;
    Ok(true)
}

fn run_check_martingale(args: &CommonArgs) -> Result<bool> {
    let (parsed, sim) = load(args)?;
    let out = OutputDir::create(&args.out)?;
    let model = &parsed.model;
    let checkpoints: Vec<f64> = model.tenor().rate_indices().map(|k| model.tenor().date(k)).collect();
    let report = martingale_test(model, &sim, &checkpoints)?;

    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.tenor_index,
                fmt_f(r.time),
                fmt_f(r.sample_mean),
                fmt_f(r.target),
                fmt_f(r.std_error),
                fmt_f(r.z_score),
                r.pass
            )
        })
        .collect();
    out.write_csv(
        "martingale.csv",
        "tenor,time,mean,target,std_error,z,pass",
        &rows,
    )?;

    let mut text = format!(
        "martingale test: {} paths, seed {}, zero_drift {}\n",
        report.paths, sim.master_seed, sim.zero_drift
    );
    for r in &report.rows {
        let _ = writeln!(
            text,
            "  [{}] tenor {} at t = {}: mean {} vs target {} (z = {})",
            if r.pass { "pass" } else { "FAIL" },
            r.tenor_index,
            fmt_f(r.time),
            fmt_f(r.sample_mean),
            fmt_f(r.target),
            fmt_f(r.z_score)
        );
    }
    let _ = writeln!(
        text,
        "verdict: {}",
        if report.passed() { "PASS" } else { "FAIL" }
    );
    out.write_report(&text)?;
    Ok(report.passed())
}

fn run_price(args: &PriceArgs) -> Result<bool> {
    let (parsed, sim) = load(&args.common)?;
    let out = OutputDir::create(&args.common.out)?;
    let model = &parsed.model;

    let strikes = if args.strike.is_empty() {
        let mut s = vec![0.0];
        for k in model.tenor().rate_indices() {
            s.push(model.initial_curve().libor(model.tenor(), k)?);
        }
        s
    } else {
        args.strike.clone()
    };
    let quotes = caplet_table(model, &sim, &strikes)?;

    let rows: Vec<String> = quotes
        .iter()
        .map(|q| {
            format!(
                "{},{},{},{}",
                q.tenor_index,
                fmt_f(q.strike),
                fmt_f(q.price),
                fmt_f(q.std_error)
            )
        })
        .collect();
    out.write_csv("caplets.csv", "tenor,strike,price,std_error", &rows)?;

    let mut text = format!("caplet prices: {} paths, seed {}\n", sim.path_count, sim.master_seed);
    for q in &quotes {
        let _ = writeln!(
            text,
            "  tenor {} strike {}: {} (se {})",
            q.tenor_index,
            fmt_f(q.strike),
            fmt_f(q.price),
            fmt_f(q.std_error)
        );
    }
    out.write_report(&text)?;
    Ok(true)
}
