//! One function per subcommand: orchestrates the core pipelines, writes the
//! JSON report plus CSV tables, and returns the process exit code.
//!
//! Exit discipline: 0 success, 1 a checked bound was violated (the report is
//! still written), 2 usage/config errors (nothing written), 3 numerical
//! failures.

use crate::config::{ConfigError, ResolvedRun, EXIT_OK, EXIT_VERIFICATION};
use crate::report::{envelope, mode_headers, ReportWriter};
use rayon::prelude::*;
use serde::Serialize;
use slowfol_core::analysis::{
    backward_rate, convergence_study, invariance_check, order_study, parallelism_offset,
    StudyConfig, StudyReport,
};
use slowfol_core::dynamics::Form;
use slowfol_core::error::Error as CoreError;
use slowfol_core::lp::{
    fiber_table, lp_fiber, lp_manifold, manifold_table, solve_order1_systems, FiberTable,
};
use slowfol_core::noise::{check_eta_xi_law, rng, NoiseRealization, TimeGrid};
use slowfol_core::sysspec::rho;
use std::path::Path;

#[derive(Debug)]
pub enum CommandError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Config(e.0)
    }
}

impl From<CoreError> for CommandError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::InvalidArgument(_) => {
                CommandError::Config(e.to_string())
            }
            other => CommandError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e.to_string())
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Config(m) => write!(f, "config error: {m}"),
            CommandError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CommandError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

type CmdResult = Result<i32, CommandError>;

fn noise_grid(run: &ResolvedRun, forward_margin: f64) -> Result<TimeGrid, CommandError> {
    let hi = (forward_margin.max(1.0) / run.dt).ceil() * run.dt;
    Ok(TimeGrid::new(-run.t_horizon, hi, run.dt)?)
}

fn noise_for_seed(
    run: &ResolvedRun,
    eps_for_eta: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<NoiseRealization, CommandError> {
    Ok(NoiseRealization::generate(
        &run.spec,
        eps_for_eta,
        grid,
        seed,
    )?)
}

fn zeta_row(zeta: &[f64], rest: &[f64]) -> Vec<f64> {
    let mut row = zeta.to_vec();
    row.extend_from_slice(rest);
    row
}

pub fn cmd_check(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct CheckResult {
        eps: Option<f64>,
        rho_at_eps: Option<f64>,
        rho_zero_limit: f64,
    }
    let eps = run.config.study.eps;
    let rho_at_eps = match eps {
        Some(e) => Some(rho(&run.spec, e)?),
        None => None,
    };
    let ok = run.hypothesis.all_ok();
    let result = CheckResult {
        eps,
        rho_at_eps,
        rho_zero_limit: run.spec.rho_zero_limit(),
    };
    let mut w = ReportWriter::new(out_dir, "check", &run.config_hash)?;
    w.write_json(&envelope(run, "check", Some(ok), result))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}

fn write_fiber_csv(
    w: &mut ReportWriter,
    table: &FiberTable,
    ds: usize,
    df: usize,
) -> Result<(), CommandError> {
    let mut header = mode_headers("zeta", ds);
    header.extend(mode_headers("l", df));
    header.push("iterations".into());
    header.push("residual".into());
    let rows: Vec<Vec<f64>> = table
        .zeta_grid
        .iter()
        .zip(&table.l_values)
        .zip(table.iterations.iter().zip(&table.residuals))
        .map(|((z, l), (it, r))| {
            let mut row = zeta_row(z, l);
            row.push(*it as f64);
            row.push(*r);
            row
        })
        .collect();
    w.write_csv("fiber", &header, &rows)?;
    Ok(())
}

fn write_trajectory_csv(
    w: &mut ReportWriter,
    name: &str,
    traj: &slowfol_core::dynamics::Trajectory,
) -> Result<(), CommandError> {
    let mut header = vec!["t".to_string()];
    header.extend(mode_headers("slow", traj.slow.dim));
    header.extend(mode_headers("fast", traj.fast.dim));
    let rows: Vec<Vec<f64>> = (0..traj.grid.n_points)
        .map(|j| {
            let mut row = vec![traj.grid.time(j)];
            row.extend_from_slice(traj.slow.row(j));
            row.extend_from_slice(traj.fast.row(j));
            row
        })
        .collect();
    w.write_csv(name, &header, &rows)?;
    Ok(())
}

/// Shared driver of the fiber and critical commands (they differ only in
/// the solving form).
fn fiber_command(run: &ResolvedRun, out_dir: &Path, command: &str, form: Form) -> CmdResult {
    let zetas = run.require(&run.config.study.zeta_grid, "zeta_grid")?;
    let base_slow = run.require(&run.config.study.base_slow, "base_slow")?;
    let base_fast = run.require(&run.config.study.base_fast, "base_fast")?;
    let dump = run.config.study.dump_trajectories.unwrap_or(false);
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, 1.0)?;
    let eps_for_eta = match form {
        Form::Eps(e) => e,
        Form::Scaled(_) => 1.0,
    };
    let noise = noise_for_seed(run, eps_for_eta, &grid, run.seed)?;

    let orbit = slowfol_core::lp::solve_orbit(&run.spec, form, &noise, &base_slow, &cfg)?;
    let mut table = FiberTable {
        base_slow: base_slow.clone(),
        base_fast: base_fast.clone(),
        eps: match form {
            Form::Eps(e) | Form::Scaled(e) => e,
        },
        scaled_form: matches!(form, Form::Scaled(_)),
        zeta_grid: zetas.clone(),
        l_values: Vec::new(),
        iterations: Vec::new(),
        residuals: Vec::new(),
    };
    let mut w = ReportWriter::new(out_dir, command, &run.config_hash)?;
    if dump {
        write_trajectory_csv(&mut w, "base-orbit", &orbit.trajectory)?;
    }
    for (zi, zeta) in zetas.iter().enumerate() {
        let u0: Vec<f64> = zeta.iter().zip(&base_slow).map(|(z, x)| z - x).collect();
        let diff = slowfol_core::lp::solve_difference(
            &run.spec,
            form,
            &noise,
            &orbit.trajectory,
            &u0,
            &cfg,
        )?;
        table.l_values.push(
            base_fast
                .iter()
                .zip(diff.v_at_zero())
                .map(|(y, v)| y + v)
                .collect(),
        );
        table.iterations.push(diff.stats.iterations);
        table.residuals.push(diff.stats.reported_residual());
        if dump {
            write_trajectory_csv(&mut w, &format!("difference-{zi}"), &diff.trajectory)?;
        }
    }
    write_fiber_csv(&mut w, &table, run.spec.dim_slow(), run.spec.dim_fast())?;
    w.write_json(&envelope(run, command, None, &table))?;
    Ok(EXIT_OK)
}

pub fn cmd_fiber(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    let eps = run.require(&run.config.study.eps, "eps")?;
    fiber_command(run, out_dir, "fiber", Form::Eps(eps))
}

pub fn cmd_critical(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    fiber_command(run, out_dir, "critical", Form::Scaled(0.0))
}

pub fn cmd_manifold(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct ManifoldResult {
        eps: f64,
        zeta_grid: Vec<Vec<f64>>,
        h_values: Vec<Vec<f64>>,
        iterations: Vec<usize>,
        residuals: Vec<f64>,
    }
    let eps = run.require(&run.config.study.eps, "eps")?;
    let zetas = run.require(&run.config.study.zeta_grid, "zeta_grid")?;
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, 1.0)?;
    let noise = noise_for_seed(run, eps, &grid, run.seed)?;
    let mut h_values = Vec::with_capacity(zetas.len());
    let mut iterations = Vec::with_capacity(zetas.len());
    let mut residuals = Vec::with_capacity(zetas.len());
    for zeta in &zetas {
        let (h, orbit) = lp_manifold(&run.spec, eps, &noise, zeta, &cfg)?;
        h_values.push(h);
        iterations.push(orbit.stats.iterations);
        residuals.push(orbit.stats.reported_residual());
    }
    let result = ManifoldResult {
        eps,
        zeta_grid: zetas.clone(),
        h_values,
        iterations,
        residuals,
    };
    let mut w = ReportWriter::new(out_dir, "manifold", &run.config_hash)?;
    let mut header = mode_headers("zeta", run.spec.dim_slow());
    header.extend(mode_headers("h", run.spec.dim_fast()));
    header.push("iterations".into());
    header.push("residual".into());
    let rows: Vec<Vec<f64>> = result
        .zeta_grid
        .iter()
        .zip(&result.h_values)
        .zip(result.iterations.iter().zip(&result.residuals))
        .map(|((z, h), (it, r))| {
            let mut row = zeta_row(z, h);
            row.push(*it as f64);
            row.push(*r);
            row
        })
        .collect();
    w.write_csv("manifold", &header, &rows)?;
    w.write_json(&envelope(run, "manifold", None, &result))?;
    Ok(EXIT_OK)
}

pub fn cmd_expand(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct ExpandResult {
        zeta_grid: Vec<Vec<f64>>,
        l0_values: Vec<Vec<f64>>,
        l1_values: Vec<Vec<f64>>,
    }
    let zetas = run.require(&run.config.study.zeta_grid, "zeta_grid")?;
    let base_slow = run.require(&run.config.study.base_slow, "base_slow")?;
    let base_fast = run.require(&run.config.study.base_fast, "base_fast")?;
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, 1.0)?;
    let noise = noise_for_seed(run, 1.0, &grid, run.seed)?;
    let mut l0_values = Vec::with_capacity(zetas.len());
    let mut l1_values = Vec::with_capacity(zetas.len());
    for zeta in &zetas {
        let sys = solve_order1_systems(&run.spec, &noise, &base_slow, &base_fast, zeta, &cfg)?;
        let n = sys.grid.n_points;
        let l0: Vec<f64> = base_fast
            .iter()
            .zip(sys.critical_v0.row(n - 1))
            .map(|(y, v)| y + v)
            .collect();
        l0_values.push(l0);
        l1_values.push(sys.l1().to_vec());
    }
    let result = ExpandResult {
        zeta_grid: zetas.clone(),
        l0_values,
        l1_values,
    };
    let mut w = ReportWriter::new(out_dir, "expand", &run.config_hash)?;
    let df = run.spec.dim_fast();
    let mut header = mode_headers("zeta", run.spec.dim_slow());
    header.extend(mode_headers("l0", df));
    header.extend(mode_headers("l1", df));
    let rows: Vec<Vec<f64>> = result
        .zeta_grid
        .iter()
        .zip(result.l0_values.iter().zip(&result.l1_values))
        .map(|(z, (l0, l1))| {
            let mut row = zeta_row(z, l0);
            row.extend_from_slice(l1);
            row
        })
        .collect();
    w.write_csv("expansion", &header, &rows)?;
    w.write_json(&envelope(run, "expand", None, &result))?;
    Ok(EXIT_OK)
}

pub fn cmd_rates(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct RatesResult {
        membership_residuals: [f64; 2],
        membership_tol: f64,
        diagnostic: Option<String>,
        fit: Option<slowfol_core::analysis::RateFit>,
    }
    let eps = run.require(&run.config.study.eps, "eps")?;
    let base_slow = run.require(&run.config.study.base_slow, "base_slow")?;
    let base_fast = run.require(&run.config.study.base_fast, "base_fast")?;
    let z1 = run.require(&run.config.study.point1_slow, "point1_slow")?;
    let z2 = run.require(&run.config.study.point2_slow, "point2_slow")?;
    let t_window = run.config.study.t_window.unwrap_or(10.0);
    let membership_tol = run.config.study.tolerance.unwrap_or(1e-3);
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, 1.0)?;
    let noise = noise_for_seed(run, eps, &grid, run.seed)?;

    // Resolve the fast coordinates: supplied points are checked against the
    // fiber; absent ones are taken on it.
    let mut resids = [0.0f64; 2];
    let mut resolve = |zeta: &Vec<f64>,
                       given: &Option<Vec<f64>>,
                       slot: usize|
     -> Result<Vec<f64>, CommandError> {
        let sol = lp_fiber(&run.spec, eps, &noise, &base_slow, &base_fast, zeta, &cfg)?;
        match given {
            Some(y) => {
                resids[slot] = y
                    .iter()
                    .zip(&sol.l_value)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                Ok(y.clone())
            }
            None => Ok(sol.l_value),
        }
    };
    let y1 = resolve(&z1, &run.config.study.point1_fast, 0)?;
    let y2 = resolve(&z2, &run.config.study.point2_fast, 1)?;

    let mut w = ReportWriter::new(out_dir, "rates", &run.config_hash)?;
    if resids[0] > membership_tol || resids[1] > membership_tol {
        let result = RatesResult {
            membership_residuals: resids,
            membership_tol,
            diagnostic: Some(format!(
                "point pair is not on the fiber of the base: l-value residuals {:.3e}, {:.3e} exceed {membership_tol:.3e}",
                resids[0], resids[1]
            )),
            fit: None,
        };
        w.write_json(&envelope(run, "rates", Some(false), &result))?;
        return Ok(EXIT_VERIFICATION);
    }
    let fit = backward_rate(
        &run.spec,
        eps,
        &noise,
        &base_slow,
        &base_fast,
        (&z1, &y1),
        (&z2, &y2),
        t_window,
        membership_tol * 10.0,
        &cfg,
    )?;
    let slope_ok = fit.fitted_slope >= run.spec.beta() - 0.05;
    let ok = fit.bound_constant_ok && slope_ok;
    let rows: Vec<Vec<f64>> = fit
        .times
        .iter()
        .zip(&fit.log_distances)
        .map(|(t, d)| vec![*t, *d])
        .collect();
    w.write_csv(
        "decay",
        &["t".to_string(), "log_distance".to_string()],
        &rows,
    )?;
    let result = RatesResult {
        membership_residuals: resids,
        membership_tol,
        diagnostic: if ok {
            None
        } else {
            Some(format!(
                "backward envelope violated: max ratio {:.4}, fitted slope {:.4} (beta = {})",
                fit.max_bound_ratio,
                fit.fitted_slope,
                run.spec.beta()
            ))
        },
        fit: Some(fit),
    };
    w.write_json(&envelope(run, "rates", Some(ok), &result))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}

pub fn cmd_parallel(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct ParallelResult {
        eps: f64,
        replicas: usize,
        tolerance: f64,
        deviations: Vec<f64>,
        max_deviation: f64,
    }
    let eps = run.require(&run.config.study.eps, "eps")?;
    let zetas = run.require(&run.config.study.zeta_grid, "zeta_grid")?;
    let base_slow = run.require(&run.config.study.base_slow, "base_slow")?;
    let base_fast = run.require(&run.config.study.base_fast, "base_fast")?;
    let replicas = run.config.study.replicas.unwrap_or(1);
    let tolerance = run.config.study.tolerance.unwrap_or(1e-2);
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, 1.0)?;

    let spec = &run.spec;
    let deviations: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| -> Result<f64, CoreError> {
            let seed = rng::replica_seed(run.seed, i as u64);
            let noise = NoiseRealization::generate(spec, eps, &grid, seed)?;
            let fib = fiber_table(
                spec,
                Form::Eps(eps),
                &noise,
                &base_slow,
                &base_fast,
                &zetas,
                &cfg,
            )?;
            let man = manifold_table(spec, eps, &noise, &zetas, &base_slow, &cfg)?;
            parallelism_offset(&fib, &man)
        })
        .collect::<Result<Vec<f64>, CoreError>>()
        .map_err(|e| CommandError::Numerical(e.to_string()))?;
    let max_deviation = deviations.iter().copied().fold(0.0f64, f64::max);
    let ok = max_deviation <= tolerance;
    let result = ParallelResult {
        eps,
        replicas,
        tolerance,
        deviations: deviations.clone(),
        max_deviation,
    };
    let mut w = ReportWriter::new(out_dir, "parallel", &run.config_hash)?;
    let rows: Vec<Vec<f64>> = deviations
        .iter()
        .enumerate()
        .map(|(i, d)| vec![i as f64, *d])
        .collect();
    w.write_csv(
        "deviations",
        &["replica".to_string(), "deviation".to_string()],
        &rows,
    )?;
    w.write_json(&envelope(run, "parallel", Some(ok), &result))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}

pub fn cmd_invariance(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct InvarianceResult {
        eps: f64,
        tau: f64,
        tolerance: f64,
        residual: f64,
        point_fast_source: String,
    }
    let eps = run.require(&run.config.study.eps, "eps")?;
    let base_slow = run.require(&run.config.study.base_slow, "base_slow")?;
    let base_fast = run.require(&run.config.study.base_fast, "base_fast")?;
    let point_slow = run.require(&run.config.study.point1_slow, "point1_slow")?;
    let tau = run.require(&run.config.study.tau, "tau")?;
    let tolerance = run.config.study.tolerance.unwrap_or(1e-3);
    let cfg = run.norm_config()?;
    let grid = noise_grid(run, tau + 1.0)?;
    let noise = noise_for_seed(run, eps, &grid, run.seed)?;
    let (point_fast, source) = match &run.config.study.point1_fast {
        Some(y) => (y.clone(), "config".to_string()),
        None => (
            lp_fiber(
                &run.spec,
                eps,
                &noise,
                &base_slow,
                &base_fast,
                &point_slow,
                &cfg,
            )?
            .l_value,
            "fiber".to_string(),
        ),
    };
    let residual = invariance_check(
        &run.spec,
        eps,
        &noise,
        &base_slow,
        &base_fast,
        &point_slow,
        &point_fast,
        tau,
        run.dt,
        &cfg,
    )?;
    let ok = residual <= tolerance;
    let result = InvarianceResult {
        eps,
        tau,
        tolerance,
        residual,
        point_fast_source: source,
    };
    let mut w = ReportWriter::new(out_dir, "invariance", &run.config_hash)?;
    w.write_json(&envelope(run, "invariance", Some(ok), &result))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}

fn study_config(run: &ResolvedRun) -> Result<StudyConfig, CommandError> {
    Ok(StudyConfig {
        eps_list: run.require(&run.config.study.eps_list, "eps_list")?,
        zeta_set: run.require(&run.config.study.zeta_grid, "zeta_grid")?,
        base_slow: run.require(&run.config.study.base_slow, "base_slow")?,
        base_fast: run.require(&run.config.study.base_fast, "base_fast")?,
        n_replicas: run.require(&run.config.study.replicas, "replicas")?,
        seed: run.seed,
    })
}

fn write_study(
    run: &ResolvedRun,
    out_dir: &Path,
    command: &str,
    report: &StudyReport,
    ok: bool,
) -> CmdResult {
    let mut w = ReportWriter::new(out_dir, command, &run.config_hash)?;
    let rows: Vec<Vec<f64>> = report
        .eps_list
        .iter()
        .zip(report.metric.iter().zip(&report.stderr))
        .map(|(e, (m, s))| vec![*e, *m, *s])
        .collect();
    w.write_csv(
        "table",
        &[
            "eps".to_string(),
            "metric".to_string(),
            "stderr".to_string(),
        ],
        &rows,
    )?;
    w.write_json(&envelope(run, command, Some(ok), report))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}

pub fn cmd_study_convergence(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    let study = study_config(run)?;
    let cfg = run.norm_config()?;
    let report = convergence_study(&run.spec, &study, &cfg)?;
    let order_ok = report
        .fitted_order
        .map(|o| (0.7..=1.3).contains(&o))
        .unwrap_or(true);
    let ok = report.ratios_ok && order_ok;
    write_study(run, out_dir, "study-convergence", &report, ok)
}

pub fn cmd_study_order(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    let study = study_config(run)?;
    let cfg = run.norm_config()?;
    let report = order_study(&run.spec, &study, &cfg)?;
    let ok = report.ratios_ok;
    write_study(run, out_dir, "study-order", &report, ok)
}

pub fn cmd_noise_check(run: &ResolvedRun, out_dir: &Path) -> CmdResult {
    #[derive(Serialize)]
    struct NoiseResult {
        law: slowfol_core::noise::LawDistanceReport,
        variance_checks: Vec<VarianceCheck>,
    }
    #[derive(Serialize)]
    struct VarianceCheck {
        kind: String,
        mode: usize,
        analytic: f64,
        empirical: f64,
        within_3se: bool,
    }
    let eps = run.require(&run.config.study.eps, "eps")?;
    let replicas = run.config.study.replicas.unwrap_or(10_000);
    let t_compare = run.config.study.t_compare.unwrap_or(1.0);
    let law = check_eta_xi_law(&run.spec, eps, t_compare, replicas, run.seed)?;

    // Marginal-variance diagnostics on the first mode of each kind.
    let grid = noise_grid(run, 1.0)?;
    let n_var = replicas.min(4000);
    let spec = &run.spec;
    let samples: Vec<(f64, f64, f64)> = (0..n_var)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64), CoreError> {
            let seed = rng::replica_seed(run.seed ^ 0xA5A5, i as u64);
            let noise = NoiseRealization::generate(spec, eps, &grid, seed)?;
            let z = noise.delta.grid.zero_index();
            Ok((
                noise.delta.values[z][0],
                noise.eta.values[z][0],
                noise.xi.values[z][0],
            ))
        })
        .collect::<Result<_, CoreError>>()
        .map_err(|e| CommandError::Numerical(e.to_string()))?;
    let var_of = |pick: &dyn Fn(&(f64, f64, f64)) -> f64| -> f64 {
        let n = samples.len() as f64;
        let mean = samples.iter().map(pick).sum::<f64>() / n;
        samples
            .iter()
            .map(|s| (pick(s) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    };
    let a0 = spec.slow_op.eigenvalues[0];
    let b0 = spec.fast_op.eigenvalues[0];
    let analytic = [
        spec.sigma1 * spec.sigma1 / (2.0 * a0),
        spec.sigma2 * spec.sigma2 / (2.0 * b0.abs()),
        spec.sigma2 * spec.sigma2 / (2.0 * b0.abs()),
    ];
    let empirical = [var_of(&|s| s.0), var_of(&|s| s.1), var_of(&|s| s.2)];
    let mut variance_checks = Vec::new();
    let mut all_var_ok = true;
    for (i, kind) in ["delta", "eta", "xi"].iter().enumerate() {
        let se = analytic[i].max(1e-30) * (2.0 / n_var as f64).sqrt();
        let within = (empirical[i] - analytic[i]).abs() <= 3.0 * se + 1e-12;
        all_var_ok &= within;
        variance_checks.push(VarianceCheck {
            kind: kind.to_string(),
            mode: 0,
            analytic: analytic[i],
            empirical: empirical[i],
            within_3se: within,
        });
    }
    let ok = law.within_bound && all_var_ok;

    let mut w = ReportWriter::new(out_dir, "noise-check", &run.config_hash)?;
    if run.config.study.dump_paths.unwrap_or(false) {
        let noise = noise_for_seed(run, eps, &grid, rng::replica_seed(run.seed, 0))?;
        for (kind, path) in [
            ("delta", &noise.delta),
            ("eta", &noise.eta),
            ("xi", &noise.xi),
        ] {
            let mut header = vec!["t".to_string()];
            header.extend(mode_headers("mode", path.dim));
            let rows: Vec<Vec<f64>> = (0..path.grid.n_points)
                .map(|j| {
                    let mut row = vec![path.grid.time(j)];
                    row.extend_from_slice(&path.values[j]);
                    row
                })
                .collect();
            w.write_csv(&format!("path-{kind}"), &header, &rows)?;
        }
    }
    let result = NoiseResult {
        law,
        variance_checks,
    };
    w.write_json(&envelope(run, "noise-check", Some(ok), &result))?;
    Ok(if ok { EXIT_OK } else { EXIT_VERIFICATION })
}
