//! Verification drivers: turns the quantitative claims about slow foliations
//! into measurable pass/fail checks and convergence tables.
//!
//! * backward exponential approach of same-fiber orbits, with the pointwise
//!   envelope `e^{beta t} (1 - rho)^{-1} ||zeta_1 - zeta_2||`;
//! * fiber parallelism `l(zeta) - h(zeta) = Y0 - h(X0)`;
//! * fiber invariance under the flow and the noise shift;
//! * distributional convergence of the rescaled fiber to the critical fiber
//!   at rate `O(eps)`, and the second-order accuracy of the expansion
//!   `l^0 + eps l^1`.
//!
//! Convergence in distribution is operationalized as the empirical
//! Wasserstein-1 distance between scalar projections (first fast mode) of
//! fiber values over replicas, with paired driving noise per replica to cut
//! Monte-Carlo variance.

use crate::dynamics::{integrate_forward, Form};
use crate::error::{Error, Result};
use crate::lp::{
    fiber_table, lp_fiber, solve_difference, solve_orbit, solve_order1_systems, FiberTable,
    ManifoldTable, WeightedNormConfig,
};
use crate::noise::{rng, NoiseRealization, TimeGrid};
use crate::sysspec::{rho, SystemSpec};
use rayon::prelude::*;
use serde::Serialize;

/// Empirical 1-Wasserstein distance between two scalar sample sets: the
/// integral of the absolute quantile difference (for equal sizes, the mean
/// absolute difference of order statistics).
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "wasserstein1 needs nonempty samples".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xs.len() as u64, ys.len() as u64);
    let (mut i, mut j) = (0u64, 0u64);
    let mut acc = 0.0;
    let mut q_prev = 0.0f64;
    while i < na && j < nb {
        // Next quantile breakpoint: min((i+1)/na, (j+1)/nb), compared in
        // integer arithmetic for determinism.
        let lhs = (i + 1) * nb;
        let rhs = (j + 1) * na;
        let q_next = if lhs <= rhs {
            (i + 1) as f64 / na as f64
        } else {
            (j + 1) as f64 / nb as f64
        };
        acc += (q_next - q_prev) * (xs[i as usize] - ys[j as usize]).abs();
        q_prev = q_next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(acc)
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Least-squares slope of `log d` against `t`.
fn fit_log_slope(times: &[f64], logd: &[f64]) -> Option<f64> {
    let n = times.len() as f64;
    if times.len() < 2 {
        return None;
    }
    let tm = times.iter().sum::<f64>() / n;
    let dm = logd.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, d) in times.iter().zip(logd) {
        num += (t - tm) * (d - dm);
        den += (t - tm) * (t - tm);
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Result of a backward decay-rate measurement along a fiber.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub times: Vec<f64>,
    pub log_distances: Vec<f64>,
    /// Least-squares decay slope of `ln d(t)` (infinite when the difference
    /// vanishes identically).
    pub fitted_slope: f64,
    /// The guaranteed slope `beta`.
    pub bound_slope: f64,
    /// Whether `d(t) <= slack * e^{beta t} (1-rho)^{-1} ||dzeta||` held at
    /// every grid time of the window.
    pub bound_constant_ok: bool,
    /// Largest observed ratio `d(t) / (e^{beta t} (1-rho)^{-1} ||dzeta||)`.
    pub max_bound_ratio: f64,
    pub rho: f64,
    pub fit_residual: f64,
}

/// Measures how fast two same-fiber orbits approach each other backward in
/// time, via the difference system, and checks the pointwise envelope with
/// multiplicative slack 1.05.
#[allow(clippy::too_many_arguments)]
pub fn backward_rate(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    p1: (&[f64], &[f64]),
    p2: (&[f64], &[f64]),
    t_window: f64,
    on_fiber_tol: f64,
    cfg: &WeightedNormConfig,
) -> Result<RateFit> {
    let form = Form::Eps(eps);
    let orbit = solve_orbit(spec, form, noise, base_slow, cfg)?;
    let rho_val = rho(spec, eps)?;
    let beta = spec.beta();

    let solve_member = |zeta: &[f64], y: &[f64]| -> Result<crate::lp::DifferenceSolution> {
        let u0: Vec<f64> = zeta.iter().zip(base_slow).map(|(z, x)| z - x).collect();
        let diff = solve_difference(spec, form, noise, &orbit.trajectory, &u0, cfg)?;
        let l: Vec<f64> = base_fast
            .iter()
            .zip(diff.v_at_zero())
            .map(|(b, v)| b + v)
            .collect();
        let resid = l2_diff(&l, y);
        if resid > on_fiber_tol {
            return Err(Error::InvalidArgument(format!(
                "point is not on the fiber of the base: |l(zeta) - y| = {resid:.3e} > {on_fiber_tol:.3e}"
            )));
        }
        Ok(diff)
    };
    let d1 = solve_member(p1.0, p1.1)?;
    let d2 = solve_member(p2.0, p2.1)?;

    let grid = &d1.trajectory.grid;
    let dzeta = l2_diff(p1.0, p2.0);
    let envelope_scale = dzeta / (1.0 - rho_val);
    let slack = 1.05;

    let mut times = Vec::new();
    let mut log_distances = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut bound_ok = true;
    let floor = 10.0 * cfg.tol;
    for j in 0..grid.n_points {
        let t = grid.time(j);
        if t < -t_window - 1e-12 {
            continue;
        }
        let d = l2_diff(d1.trajectory.slow.row(j), d2.trajectory.slow.row(j))
            + l2_diff(d1.trajectory.fast.row(j), d2.trajectory.fast.row(j));
        let envelope = envelope_scale * (beta * t).exp();
        if envelope > 0.0 {
            let ratio = d / envelope;
            max_ratio = max_ratio.max(ratio);
            if d > slack * envelope {
                bound_ok = false;
            }
        }
        if d > floor {
            times.push(t);
            log_distances.push(d.ln());
        }
    }
    let (fitted_slope, fit_residual) = if times.len() >= 5 {
        let slope = fit_log_slope(&times, &log_distances).unwrap_or(f64::INFINITY);
        let tm = times.iter().sum::<f64>() / times.len() as f64;
        let dm = log_distances.iter().sum::<f64>() / times.len() as f64;
        let resid = times
            .iter()
            .zip(&log_distances)
            .map(|(t, d)| {
                let pred = dm + slope * (t - tm);
                (d - pred) * (d - pred)
            })
            .sum::<f64>()
            .sqrt();
        (slope, resid)
    } else if times.is_empty() {
        // Identical points: the difference vanishes identically.
        (f64::INFINITY, 0.0)
    } else {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 5 grid points above the noise floor, got {}",
            times.len()
        )));
    };
    Ok(RateFit {
        times,
        log_distances,
        fitted_slope,
        bound_slope: beta,
        bound_constant_ok: bound_ok,
        max_bound_ratio: max_ratio,
        rho: rho_val,
        fit_residual,
    })
}

/// Maximal deviation of the fiber-manifold offset `m(zeta) = l(zeta) -
/// h(zeta)` from the constant `Y0 - h(X0)` over the `zeta` grid.
pub fn parallelism_offset(fiber: &FiberTable, manifold: &ManifoldTable) -> Result<f64> {
    if fiber.zeta_grid != manifold.zeta_grid {
        return Err(Error::GridMismatch(
            "fiber and manifold tables use different zeta grids".into(),
        ));
    }
    let target: Vec<f64> = fiber
        .base_fast
        .iter()
        .zip(&manifold.h_at_base)
        .map(|(y, h)| y - h)
        .collect();
    let mut worst: f64 = 0.0;
    for (l, h) in fiber.l_values.iter().zip(&manifold.h_values) {
        let m: Vec<f64> = l.iter().zip(h).map(|(a, b)| a - b).collect();
        worst = worst.max(l2_diff(&m, &target));
    }
    Ok(worst)
}

/// Flows a fiber point and its base forward by `tau`, recomputes the fiber
/// of the flowed base under the shifted noise, and returns the membership
/// residual of the flowed point.
#[allow(clippy::too_many_arguments)]
pub fn invariance_check(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    point_slow: &[f64],
    point_fast: &[f64],
    tau: f64,
    dt: f64,
    cfg: &WeightedNormConfig,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invariance shift must be > 0, got {tau}"
        )));
    }
    let base_flow = integrate_forward(spec, eps, noise, base_slow, base_fast, tau, dt)?;
    let point_flow = integrate_forward(spec, eps, noise, point_slow, point_fast, tau, dt)?;
    let (bx, by) = base_flow.end_state();
    let (px, py) = point_flow.end_state();
    let shifted = noise.translate(tau)?;
    let sol = lp_fiber(spec, eps, &shifted, bx, by, px, cfg)?;
    Ok(l2_diff(&sol.l_value, py))
}

/// Parameters of a Monte-Carlo study over replicas of the driving noise.
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub eps_list: Vec<f64>,
    pub zeta_set: Vec<Vec<f64>>,
    pub base_slow: Vec<f64>,
    pub base_fast: Vec<f64>,
    pub n_replicas: usize,
    pub seed: u64,
}

/// Result of a convergence or expansion-order study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub eps_list: Vec<f64>,
    /// One metric value per eps (max over the zeta set).
    pub metric: Vec<f64>,
    /// Split-half Monte-Carlo error estimate per eps.
    pub stderr: Vec<f64>,
    /// Log-log slope of metric against eps (absent when a metric vanishes).
    pub fitted_order: Option<f64>,
    /// `metric(eps_i) / metric(eps_{i+1})` for consecutive entries.
    pub ratios: Vec<f64>,
    pub ratios_ok: bool,
    /// Largest `metric(eps) / eps` (the O(eps) constant for convergence
    /// studies).
    pub metric_over_eps_max: f64,
    pub replica_count: usize,
    pub failed_replicas: usize,
    pub seed: u64,
    /// Derived per-replica seeds (full provenance).
    pub seeds: Vec<u64>,
    /// Accepted band for consecutive metric ratios.
    pub tolerance_band: [f64; 2],
    /// Monotonicity of the metric along the decreasing eps list, allowing
    /// two Monte-Carlo standard errors of slack per comparison.
    pub monotone_within_2se: bool,
    /// Internal diagnostic weight exponent, the midpoint
    /// `-gamma_f^2 / (-gamma_s + 2 gamma_f)` of the admissible interval.
    pub alpha: f64,
    /// Guaranteed rate factor `1/gamma_f - 1/(gamma_f - eps gamma_s)` per
    /// eps (the convergence metric is bounded by a constant times it).
    pub rate_factor: Vec<f64>,
    pub projection: String,
    pub t_horizon: f64,
    pub dt: f64,
    pub tol: f64,
    pub tail_tol: f64,
}

fn validate_eps_list(eps_list: &[f64], geometric: bool) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "eps list must be strictly decreasing".into(),
            ));
        }
    }
    if geometric && eps_list.len() >= 3 {
        let r0 = eps_list[0] / eps_list[1];
        for w in eps_list.windows(2) {
            let r = w[0] / w[1];
            if (r - r0).abs() > 1e-9 * r0 {
                return Err(Error::InvalidArgument(
                    "eps list must be geometric for the order study".into(),
                ));
            }
        }
    }
    Ok(())
}

fn study_noise_grid(cfg: &WeightedNormConfig) -> Result<TimeGrid> {
    TimeGrid::new(-cfg.t_horizon, 1.0, cfg.dt)
}

fn split_half_stderr(per_replica: &[f64]) -> f64 {
    let n = per_replica.len();
    if n < 2 {
        return 0.0;
    }
    let half = n / 2;
    let m1 = per_replica[..half].iter().sum::<f64>() / half as f64;
    let m2 = per_replica[half..].iter().sum::<f64>() / (n - half) as f64;
    (m1 - m2).abs() / 2.0
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    spec: &SystemSpec,
    study: &str,
    config: &StudyConfig,
    cfg: &WeightedNormConfig,
    metric: Vec<f64>,
    stderr: Vec<f64>,
    failed: usize,
    used: usize,
    ratio_range: (f64, f64),
    projection: &str,
) -> StudyReport {
    let degenerate = metric.iter().any(|m| *m <= 0.0);
    let fitted_order = if degenerate {
        None
    } else {
        let lt: Vec<f64> = config.eps_list.iter().map(|e| e.ln()).collect();
        let lm: Vec<f64> = metric.iter().map(|m| m.ln()).collect();
        fit_log_slope(&lt, &lm)
    };
    let ratios: Vec<f64> = metric
        .windows(2)
        .map(|w| {
            if w[1] > 0.0 {
                w[0] / w[1]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let ratios_ok = degenerate
        || ratios
            .iter()
            .all(|r| *r >= ratio_range.0 && *r <= ratio_range.1);
    let metric_over_eps_max = metric
        .iter()
        .zip(&config.eps_list)
        .map(|(m, e)| m / e)
        .fold(0.0f64, f64::max);
    let monotone_within_2se = metric
        .windows(2)
        .zip(stderr.windows(2))
        .all(|(m, s)| m[1] <= m[0] + 2.0 * (s[0] + s[1]));
    let alpha = -spec.gamma_f * spec.gamma_f / (-spec.gamma_s + 2.0 * spec.gamma_f);
    let rate_factor: Vec<f64> = config
        .eps_list
        .iter()
        .map(|e| 1.0 / spec.gamma_f - 1.0 / (spec.gamma_f - e * spec.gamma_s))
        .collect();
    StudyReport {
        study: study.into(),
        eps_list: config.eps_list.clone(),
        metric,
        stderr,
        fitted_order,
        ratios,
        ratios_ok,
        metric_over_eps_max,
        replica_count: used,
        failed_replicas: failed,
        seed: config.seed,
        seeds: (0..config.n_replicas)
            .map(|i| rng::replica_seed(config.seed, i as u64))
            .collect(),
        tolerance_band: [ratio_range.0, ratio_range.1],
        monotone_within_2se,
        alpha,
        rate_factor,
        projection: projection.into(),
        t_horizon: cfg.t_horizon,
        dt: cfg.dt,
        tol: cfg.tol,
        tail_tol: cfg.tail_tol,
    }
}

const FAILURE_QUORUM: f64 = 0.05;

fn check_quorum<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let total = results.len();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > FAILURE_QUORUM * total as f64 {
        let first = results
            .into_iter()
            .find_map(|r| r.err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::ReplicaQuorum {
            failed,
            total,
            first,
        });
    }
    Ok(results.into_iter().filter_map(|r| r.ok()).collect())
}

/// Distributional convergence of the rescaled fiber to the critical fiber:
/// per eps, the empirical Wasserstein-1 distance (first fast mode, paired
/// noise) between `l_scaled^eps(zeta)` and `l^0(zeta)` over replicas,
/// maximized over the zeta set. Requires a bounded slow nonlinearity.
pub fn convergence_study(
    spec: &SystemSpec,
    config: &StudyConfig,
    cfg: &WeightedNormConfig,
) -> Result<StudyReport> {
    if spec.f.bounded.is_none() {
        return Err(Error::InvalidArgument(
            "convergence study requires a bounded slow nonlinearity (set the bounded flag)".into(),
        ));
    }
    validate_eps_list(&config.eps_list, false)?;
    for &e in &config.eps_list {
        Form::Scaled(e).gate(spec)?;
    }
    Form::Scaled(0.0).gate(spec)?;
    let grid = study_noise_grid(cfg)?;
    let eps_for_eta = config.eps_list[0];

    // Per replica: projected scaled-fiber values [eps][zeta] and projected
    // critical values [zeta], with shared noise.
    type ReplicaValues = (Vec<Vec<f64>>, Vec<f64>);
    let replica_run = |i: usize| -> Result<ReplicaValues> {
        let seed = rng::replica_seed(config.seed, i as u64);
        let noise = NoiseRealization::generate(spec, eps_for_eta, &grid, seed)?;
        let crit = fiber_table(
            spec,
            Form::Scaled(0.0),
            &noise,
            &config.base_slow,
            &config.base_fast,
            &config.zeta_set,
            cfg,
        )?;
        let l0: Vec<f64> = crit.l_values.iter().map(|l| l[0]).collect();
        let mut per_eps = Vec::with_capacity(config.eps_list.len());
        for &eps in &config.eps_list {
            let tab = fiber_table(
                spec,
                Form::Scaled(eps),
                &noise,
                &config.base_slow,
                &config.base_fast,
                &config.zeta_set,
                cfg,
            )?;
            per_eps.push(tab.l_values.iter().map(|l| l[0]).collect::<Vec<f64>>());
        }
        Ok((per_eps, l0))
    };
    let results: Vec<Result<ReplicaValues>> = (0..config.n_replicas)
        .into_par_iter()
        .map(replica_run)
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    let kept = check_quorum(results)?;
    let used = kept.len();

    let n_zeta = config.zeta_set.len();
    let mut metric = Vec::with_capacity(config.eps_list.len());
    let mut stderr = Vec::with_capacity(config.eps_list.len());
    for (ei, _eps) in config.eps_list.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut worst_abs: Vec<f64> = Vec::new();
        for zi in 0..n_zeta {
            let scaled: Vec<f64> = kept.iter().map(|(pe, _)| pe[ei][zi]).collect();
            let crit: Vec<f64> = kept.iter().map(|(_, l0)| l0[zi]).collect();
            let d = wasserstein1(&scaled, &crit)?;
            if d >= worst {
                worst = d;
                worst_abs = scaled
                    .iter()
                    .zip(&crit)
                    .map(|(a, b)| (a - b).abs())
                    .collect();
            }
        }
        metric.push(worst);
        stderr.push(split_half_stderr(&worst_abs));
    }
    Ok(finish_report(
        spec,
        "convergence",
        config,
        cfg,
        metric,
        stderr,
        failed,
        used,
        (1.0, 4.0),
        "first fast mode",
    ))
}

/// Accuracy of the first-order expansion: per eps the residual
/// `r = || l_scaled^eps - (l^0 + eps l^1) ||` averaged over replicas and
/// maximized over the zeta set, with Richardson ratios targeted at 4.
pub fn order_study(
    spec: &SystemSpec,
    config: &StudyConfig,
    cfg: &WeightedNormConfig,
) -> Result<StudyReport> {
    validate_eps_list(&config.eps_list, true)?;
    for &e in &config.eps_list {
        Form::Scaled(e).gate(spec)?;
    }
    Form::Scaled(0.0).gate(spec)?;
    let grid = study_noise_grid(cfg)?;
    let eps_for_eta = config.eps_list[0];

    // Per replica: residuals [eps][zeta].
    let replica_run = |i: usize| -> Result<Vec<Vec<f64>>> {
        let seed = rng::replica_seed(config.seed, i as u64);
        let noise = NoiseRealization::generate(spec, eps_for_eta, &grid, seed)?;
        let mut expansions = Vec::with_capacity(config.zeta_set.len());
        for zeta in &config.zeta_set {
            let sys = solve_order1_systems(
                spec,
                &noise,
                &config.base_slow,
                &config.base_fast,
                zeta,
                cfg,
            )?;
            let n = sys.grid.n_points;
            let l0: Vec<f64> = config
                .base_fast
                .iter()
                .zip(sys.critical_v0.row(n - 1))
                .map(|(y, v)| y + v)
                .collect();
            let l1 = sys.l1().to_vec();
            expansions.push((l0, l1));
        }
        let mut per_eps = Vec::with_capacity(config.eps_list.len());
        for &eps in &config.eps_list {
            let mut per_zeta = Vec::with_capacity(config.zeta_set.len());
            for (zi, zeta) in config.zeta_set.iter().enumerate() {
                let sol = crate::lp::lp_fiber_scaled(
                    spec,
                    eps,
                    &noise,
                    &config.base_slow,
                    &config.base_fast,
                    zeta,
                    cfg,
                )?;
                let (l0, l1) = &expansions[zi];
                let predicted: Vec<f64> = l0.iter().zip(l1).map(|(a, b)| a + eps * b).collect();
                per_zeta.push(l2_diff(&sol.l_value, &predicted));
            }
            per_eps.push(per_zeta);
        }
        Ok(per_eps)
    };
    let results: Vec<Result<Vec<Vec<f64>>>> = (0..config.n_replicas)
        .into_par_iter()
        .map(replica_run)
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    let kept = check_quorum(results)?;
    let used = kept.len();

    let mut metric = Vec::with_capacity(config.eps_list.len());
    let mut stderr = Vec::with_capacity(config.eps_list.len());
    for ei in 0..config.eps_list.len() {
        let mut worst = 0.0f64;
        let mut worst_samples: Vec<f64> = Vec::new();
        for zi in 0..config.zeta_set.len() {
            let rs: Vec<f64> = kept.iter().map(|per| per[ei][zi]).collect();
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            if mean >= worst {
                worst = mean;
                worst_samples = rs;
            }
        }
        metric.push(worst);
        stderr.push(split_half_stderr(&worst_samples));
    }
    Ok(finish_report(
        spec,
        "order",
        config,
        cfg,
        metric,
        stderr,
        failed,
        used,
        (2.0, 8.0),
        "fast-space norm",
    ))
}

/// Measured Lipschitz quotient of a fiber table against the guaranteed
/// bound `K/(gamma_f + eps beta) * (1 - rho)^{-1}`.
///
/// For the critical fiber the bound is `K/(gamma_f - K)`: the constant slow
/// offset of the critical difference system is not in the weighted backward
/// space, so only the sup-norm contraction argument applies (the sharper
/// weighted constant `K/(gamma_f + beta - K)` is measurably violated).
pub fn lipschitz_estimate(spec: &SystemSpec, table: &FiberTable) -> (f64, f64, bool) {
    let mut estimate = 0.0f64;
    for i in 0..table.zeta_grid.len() {
        for j in (i + 1)..table.zeta_grid.len() {
            let dz = l2_diff(&table.zeta_grid[i], &table.zeta_grid[j]);
            if dz > 1e-12 {
                let dl = l2_diff(&table.l_values[i], &table.l_values[j]);
                estimate = estimate.max(dl / dz);
            }
        }
    }
    let k = spec.lipschitz();
    let beta = spec.beta();
    let bound = if table.scaled_form && table.eps == 0.0 {
        k / (spec.gamma_f - k)
    } else {
        let r = rho(spec, table.eps).unwrap_or(f64::NAN);
        k / (spec.gamma_f + table.eps * beta) / (1.0 - r)
    };
    (estimate, bound, estimate <= bound)
}

/// Convenience: fiber values projected onto the first fast mode, one sample
/// per replica, with both solvers driven by identical noise (used for the
/// law-equality comparison of the plain and rescaled fibers).
#[allow(clippy::too_many_arguments)]
pub fn paired_fiber_samples(
    spec: &SystemSpec,
    eps: f64,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    n_replicas: usize,
    seed: u64,
    cfg: &WeightedNormConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = study_noise_grid(cfg)?;
    let run = |i: usize| -> Result<(f64, f64)> {
        let s = rng::replica_seed(seed, i as u64);
        let noise = NoiseRealization::generate(spec, eps, &grid, s)?;
        let plain = lp_fiber(spec, eps, &noise, base_slow, base_fast, zeta, cfg)?;
        let scaled =
            crate::lp::lp_fiber_scaled(spec, eps, &noise, base_slow, base_fast, zeta, cfg)?;
        Ok((plain.l_value[0], scaled.l_value[0]))
    };
    let results: Vec<Result<(f64, f64)>> = (0..n_replicas).into_par_iter().map(run).collect();
    let kept = check_quorum(results)?;
    Ok(kept.into_iter().unzip())
}

/// Sample standard deviation.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
