//! Lyapunov-Perron contraction solvers.
//!
//! Every invariant object here is the fixed point of an integral operator on
//! a backward function space `[-T, 0]`:
//!
//! * the **base orbit** through a slow value `zeta`: slow component by
//!   backward variation of constants, fast component the tempered bounded
//!   continuation (sup norm; the slow manifold value is `h = Y(0)`);
//! * the **difference system** `(U, V)` of two orbits with `U(0)` given:
//!   solved in the weighted sup norm `sup e^{-w t} (||U|| + ||V||)` with
//!   exponent `w = beta` for the slow-fast system and `w = eps beta` for
//!   the time-rescaled system (the critical system iterates in the plain
//!   sup norm, `w = 0`);
//! * the **first-order systems** `(X^1, Y^1, U^1, V^1)` of the fiber
//!   expansion `l = l^0 + eps l^1 + O(eps^2)`, with the tempered solutions
//!   taken for `Y^1`, `V^1` and the registry supplying exact partial
//!   derivatives of `g`.
//!
//! Picard iteration starts from `(e^{At} U(0), 0)`, which makes the first
//! slow component exact; per-iteration residual ratios are recorded and the
//! largest is reported as the measured contraction factor. The tail of each
//! truncated integral is bounded by the `e^{beta t}` envelope and added to
//! the reported residual.

use crate::dynamics::{
    backward_cumulative_trapezoid, fast_tempered_sweep, slow_backward_sweep, BackwardKernel, Form,
    ForwardKernel, GridSeries, SystemTag, Trajectory, OVERFLOW_BOUND,
};
use crate::error::{Error, Result};
use crate::noise::{NoiseRealization, TimeGrid};
use crate::sysspec::SystemSpec;
use serde::Serialize;

/// Norm and iteration parameters of one solve family.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedNormConfig {
    /// Space parameter `beta = -gamma_s / 2`.
    pub beta: f64,
    /// Truncation horizon `T > 0`; solves run on `[-T, 0]`.
    pub t_horizon: f64,
    pub dt: f64,
    /// Fixed-point tolerance in the weighted norm.
    pub tol: f64,
    pub max_iters: usize,
    /// Target envelope mass beyond `-T`.
    pub tail_tol: f64,
}

impl WeightedNormConfig {
    pub fn for_spec(
        spec: &SystemSpec,
        t_horizon: f64,
        dt: f64,
        tol: f64,
        max_iters: usize,
        tail_tol: f64,
    ) -> Result<Self> {
        if !(t_horizon > 0.0) || !(dt > 0.0) || !(tol > 0.0) || !(tail_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "t_horizon, dt, tol and tail_tol must all be positive".into(),
            ));
        }
        Ok(Self {
            beta: spec.beta(),
            t_horizon,
            dt,
            tol,
            max_iters,
            tail_tol,
        })
    }

    /// Default horizon rule: `T * beta >= ln(1 / tail_tol)`, rounded up to a
    /// step multiple.
    pub fn standard(
        spec: &SystemSpec,
        dt: f64,
        tol: f64,
        max_iters: usize,
        tail_tol: f64,
    ) -> Result<Self> {
        let beta = spec.beta();
        let t_needed = (1.0 / tail_tol).ln() / beta;
        let t_horizon = (t_needed / dt).ceil() * dt;
        Self::for_spec(spec, t_horizon, dt, tol, max_iters, tail_tol)
    }

    /// True when the horizon satisfies the envelope invariant
    /// `T * beta >= ln(1 / tail_tol)`.
    pub fn horizon_satisfies_envelope(&self) -> bool {
        self.t_horizon * self.beta >= (1.0 / self.tail_tol).ln() - 1e-9
    }

    pub fn solve_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(-self.t_horizon, 0.0, self.dt)
    }
}

/// Slow/fast pair on a solve grid; the state iterated by the contraction.
#[derive(Debug, Clone)]
pub struct PairGrid {
    pub slow: GridSeries,
    pub fast: GridSeries,
}

impl PairGrid {
    pub fn zeros(n: usize, ds: usize, df: usize) -> Self {
        Self {
            slow: GridSeries::zeros(n, ds),
            fast: GridSeries::zeros(n, df),
        }
    }
}

/// Iteration diagnostics of one converged (or failed) solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final weighted fixed-point residual; at most `tol` on success.
    pub final_residual: f64,
    /// Largest per-iteration residual ratio observed above tolerance.
    pub contraction_estimate: f64,
    pub residual_history: Vec<f64>,
    pub weight_exponent: f64,
    /// Analytic bound on the truncated-tail contribution beyond `-T`.
    pub tail_bound: f64,
}

impl SolveStats {
    /// Fixed-point residual plus the truncation tail, the honest accuracy
    /// figure for reported values.
    pub fn reported_residual(&self) -> f64 {
        self.final_residual + self.tail_bound
    }
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn weighted_distance(weights: &[f64], a: &PairGrid, b: &PairGrid) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let d = l2_diff(a.slow.row(j), b.slow.row(j)) + l2_diff(a.fast.row(j), b.fast.row(j));
        worst = worst.max(w * d);
    }
    worst
}

fn weighted_norm(weights: &[f64], a: &PairGrid) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        worst = worst.max(w * (l2(a.slow.row(j)) + l2(a.fast.row(j))));
    }
    worst
}

fn check_pair_finite(grid: &TimeGrid, pair: &PairGrid) -> Result<()> {
    for j in 0..grid.n_points {
        for &v in pair.slow.row(j).iter().chain(pair.fast.row(j)) {
            if !v.is_finite() || v.abs() > OVERFLOW_BOUND {
                return Err(Error::Overflow {
                    t: grid.time(j),
                    value: v,
                    bound: OVERFLOW_BOUND,
                });
            }
        }
    }
    Ok(())
}

/// Picard iteration of an integral operator until the weighted residual
/// drops below tolerance.
///
/// `map` writes the image of `cur` into `next`; the residual is the weighted
/// sup distance between iterates with exponent `weight_exponent`. Ratios of
/// consecutive residuals estimate the contraction factor; three consecutive
/// ratios at or above one abort with a divergence diagnostic (the operator
/// is not contracting on the visited set, e.g. `rho >= 1` or a box
/// violation).
pub fn lp_contract<F>(
    mut map: F,
    initial: PairGrid,
    grid: &TimeGrid,
    weight_exponent: f64,
    cfg: &WeightedNormConfig,
) -> Result<(PairGrid, SolveStats)>
where
    F: FnMut(&PairGrid, &mut PairGrid) -> Result<()>,
{
    let weights: Vec<f64> = grid.times().map(|t| (-weight_exponent * t).exp()).collect();
    let mut cur = initial;
    let mut next = cur.clone();
    let mut residuals: Vec<f64> = Vec::new();
    let mut converged = false;
    for _k in 1..=cfg.max_iters {
        map(&cur, &mut next)?;
        check_pair_finite(grid, &next)?;
        let r = weighted_distance(&weights, &cur, &next);
        residuals.push(r);
        std::mem::swap(&mut cur, &mut next);
        if r <= cfg.tol {
            converged = true;
            break;
        }
        let n = residuals.len();
        if n >= 4
            && residuals[n - 3..]
                .iter()
                .zip(&residuals[n - 4..n - 1])
                .all(|(r1, r0)| r1 >= r0)
        {
            return Err(Error::Divergence {
                iterations: n,
                ratio: residuals[n - 1] / residuals[n - 2],
            });
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: residuals.len(),
            residual: *residuals.last().unwrap_or(&f64::NAN),
            tol: cfg.tol,
        });
    }
    let contraction_estimate = residuals
        .windows(2)
        .filter(|w| w[0] > cfg.tol)
        .map(|w| w[1] / w[0])
        .fold(0.0f64, f64::max);
    let tail_bound = cfg.tail_tol * weighted_norm(&weights, &cur);
    let final_residual = residuals.last().copied().unwrap_or(0.0);
    Ok((
        cur,
        SolveStats {
            iterations: residuals.len(),
            final_residual,
            contraction_estimate,
            residual_history: residuals,
            weight_exponent,
            tail_bound,
        },
    ))
}

/// Noise arguments of the composed nonlinearities, sampled on the solve grid.
struct NoiseTable {
    slow: GridSeries,
    fast: GridSeries,
}

fn noise_table(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    grid: &TimeGrid,
) -> Result<NoiseTable> {
    let mut slow = GridSeries::zeros(grid.n_points, spec.dim_slow());
    let mut fast = GridSeries::zeros(grid.n_points, spec.dim_fast());
    for j in 0..grid.n_points {
        let t = grid.time(j);
        slow.row_mut(j).copy_from_slice(&form.noise_slow(noise, t)?);
        fast.row_mut(j).copy_from_slice(&form.noise_fast(noise, t)?);
    }
    Ok(NoiseTable { slow, fast })
}

/// Homogeneous backward decay `e^{lam rate t} v0` on the grid (the Picard
/// starting guess for slow components).
fn homogeneous_slow(spec: &SystemSpec, form: Form, grid: &TimeGrid, v0: &[f64]) -> GridSeries {
    let (srate, _) = form.slow_scales();
    let n = grid.n_points;
    let mut out = GridSeries::zeros(n, spec.dim_slow());
    out.row_mut(n - 1).copy_from_slice(v0);
    let decay: Vec<f64> = spec
        .slow_op
        .eigenvalues
        .iter()
        .map(|a| (-a * srate * grid.dt).exp())
        .collect();
    for j in (1..n).rev() {
        let prev: Vec<f64> = out.row(j).iter().zip(&decay).map(|(v, d)| v * d).collect();
        out.row_mut(j - 1).copy_from_slice(&prev);
    }
    out
}

/// A solved base orbit plus its iteration diagnostics.
#[derive(Debug, Clone)]
pub struct OrbitSolution {
    pub trajectory: Trajectory,
    pub stats: SolveStats,
}

/// Solves the coupled backward orbit system through slow value `zeta`:
///
/// ```text
///   X(t) = e^{At} zeta + INT_0^t e^{A(t-s)} F ds
///   Y(t) = (tempered) INT_{-inf}^t (fast kernel) G ds
/// ```
///
/// in the plain sup norm on `[-T, 0]` (the orbit itself does not decay
/// backward, only orbit differences do). The slow manifold value is `Y(0)`.
pub fn solve_orbit(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<OrbitSolution> {
    form.validate()?;
    form.gate(spec)?;
    if zeta.len() != spec.dim_slow() {
        return Err(Error::GridMismatch(format!(
            "zeta has dim {} but slow space has dim {}",
            zeta.len(),
            spec.dim_slow()
        )));
    }
    let grid = cfg.solve_grid()?;
    let nt = noise_table(spec, form, noise, &grid)?;
    let (srate, sdrive) = form.slow_scales();
    let (frate, fdrive) = form.fast_scales();
    let bk = BackwardKernel::new(&spec.slow_op.eigenvalues, srate, sdrive, cfg.dt);
    let fk = ForwardKernel::new(&spec.fast_op.eigenvalues, frate, fdrive, cfg.dt);
    let n = grid.n_points;
    let (ds, df) = (spec.dim_slow(), spec.dim_fast());

    let mut f_samples = GridSeries::zeros(n, ds);
    let mut g_samples = GridSeries::zeros(n, df);
    let mut xa = vec![0.0; ds];
    let mut ya = vec![0.0; df];
    let map = |cur: &PairGrid, next: &mut PairGrid| -> Result<()> {
        for j in 0..n {
            for m in 0..ds {
                xa[m] = cur.slow.row(j)[m] + nt.slow.row(j)[m];
            }
            for m in 0..df {
                ya[m] = cur.fast.row(j)[m] + nt.fast.row(j)[m];
            }
            f_samples.row_mut(j).copy_from_slice(&spec.f.eval(&xa, &ya));
            g_samples.row_mut(j).copy_from_slice(&spec.g.eval(&xa, &ya));
        }
        slow_backward_sweep(&bk, zeta, &f_samples, &mut next.slow);
        fast_tempered_sweep(&fk, &g_samples, &mut next.fast);
        Ok(())
    };

    let initial = PairGrid {
        slow: homogeneous_slow(spec, form, &grid, zeta),
        fast: GridSeries::zeros(n, df),
    };
    // Orbits are iterated in the plain sup norm.
    let (pair, stats) = lp_contract(map, initial, &grid, 0.0, cfg)?;
    Ok(OrbitSolution {
        trajectory: Trajectory {
            grid,
            slow: pair.slow,
            fast: pair.fast,
            tag: form.tag(),
        },
        stats,
    })
}

/// A solved difference system plus diagnostics.
#[derive(Debug, Clone)]
pub struct DifferenceSolution {
    pub trajectory: Trajectory,
    pub stats: SolveStats,
}

impl DifferenceSolution {
    /// `V(0)`, the fast offset the fiber map adds to `Y0`.
    pub fn v_at_zero(&self) -> &[f64] {
        self.trajectory.fast.row(self.trajectory.grid.n_points - 1)
    }
}

/// Solves the difference fixed point `(U, V)` against a base backward orbit:
///
/// ```text
///   U(t) = e^{At} U(0) + INT_0^t e^{A(t-s)} dF ds
///   V(t) = (tempered) INT (fast kernel) dG ds
/// ```
///
/// in the weighted norm with exponent `beta` (or `eps beta` for the
/// rescaled form, sup norm for the critical form).
pub fn solve_difference(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    base: &Trajectory,
    u0: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<DifferenceSolution> {
    form.validate()?;
    form.gate(spec)?;
    let grid = cfg.solve_grid()?;
    if base.grid != grid {
        return Err(Error::GridMismatch(
            "base trajectory grid does not match the solve grid".into(),
        ));
    }
    if base.tag != form.tag() {
        return Err(Error::GridMismatch(format!(
            "base trajectory was solved for {:?}, difference requested for {:?}",
            base.tag,
            form.tag()
        )));
    }
    let nt = noise_table(spec, form, noise, &grid)?;
    let (srate, sdrive) = form.slow_scales();
    let (frate, fdrive) = form.fast_scales();
    let bk = BackwardKernel::new(&spec.slow_op.eigenvalues, srate, sdrive, cfg.dt);
    let fk = ForwardKernel::new(&spec.fast_op.eigenvalues, frate, fdrive, cfg.dt);
    let n = grid.n_points;
    let (ds, df) = (spec.dim_slow(), spec.dim_fast());

    // Base nonlinearity values are iteration-independent.
    let mut base_xa = GridSeries::zeros(n, ds);
    let mut base_ya = GridSeries::zeros(n, df);
    let mut f_base = GridSeries::zeros(n, ds);
    let mut g_base = GridSeries::zeros(n, df);
    for j in 0..n {
        let bx = base_xa.row_mut(j);
        for m in 0..ds {
            bx[m] = base.slow.row(j)[m] + nt.slow.row(j)[m];
        }
        let by = base_ya.row_mut(j);
        for m in 0..df {
            by[m] = base.fast.row(j)[m] + nt.fast.row(j)[m];
        }
        let fb = spec.f.eval(base_xa.row(j), base_ya.row(j));
        f_base.row_mut(j).copy_from_slice(&fb);
        let gb = spec.g.eval(base_xa.row(j), base_ya.row(j));
        g_base.row_mut(j).copy_from_slice(&gb);
    }

    let mut df_samples = GridSeries::zeros(n, ds);
    let mut dg_samples = GridSeries::zeros(n, df);
    let mut xa = vec![0.0; ds];
    let mut ya = vec![0.0; df];
    let map = |cur: &PairGrid, next: &mut PairGrid| -> Result<()> {
        for j in 0..n {
            for m in 0..ds {
                xa[m] = cur.slow.row(j)[m] + base_xa.row(j)[m];
            }
            for m in 0..df {
                ya[m] = cur.fast.row(j)[m] + base_ya.row(j)[m];
            }
            let fv = spec.f.eval(&xa, &ya);
            let dfr = df_samples.row_mut(j);
            for m in 0..ds {
                dfr[m] = fv[m] - f_base.row(j)[m];
            }
            let gv = spec.g.eval(&xa, &ya);
            let dgr = dg_samples.row_mut(j);
            for m in 0..df {
                dgr[m] = gv[m] - g_base.row(j)[m];
            }
        }
        slow_backward_sweep(&bk, u0, &df_samples, &mut next.slow);
        fast_tempered_sweep(&fk, &dg_samples, &mut next.fast);
        Ok(())
    };

    let initial = PairGrid {
        slow: homogeneous_slow(spec, form, &grid, u0),
        fast: GridSeries::zeros(n, df),
    };
    let w = form.weight_exponent(cfg.beta);
    let (pair, stats) = lp_contract(map, initial, &grid, w, cfg)?;
    Ok(DifferenceSolution {
        trajectory: Trajectory {
            grid,
            slow: pair.slow,
            fast: pair.fast,
            tag: SystemTag::DifferenceEps,
        },
        stats,
    })
}

/// One fiber evaluation: the value `l` and the solved difference system.
#[derive(Debug, Clone)]
pub struct FiberSolution {
    pub l_value: Vec<f64>,
    pub difference: DifferenceSolution,
}

fn fiber_value(y0: &[f64], diff: &DifferenceSolution) -> Vec<f64> {
    y0.iter()
        .zip(diff.v_at_zero())
        .map(|(y, v)| y + v)
        .collect()
}

fn fiber_for_form(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<(FiberSolution, OrbitSolution)> {
    let orbit = solve_orbit(spec, form, noise, base_slow, cfg)?;
    let u0: Vec<f64> = zeta.iter().zip(base_slow).map(|(z, x)| z - x).collect();
    let diff = solve_difference(spec, form, noise, &orbit.trajectory, &u0, cfg)?;
    let l = fiber_value(base_fast, &diff);
    Ok((
        FiberSolution {
            l_value: l,
            difference: diff,
        },
        orbit,
    ))
}

/// Slow-fiber map `l^eps(zeta, (X0, Y0), omega) = Y0 + V(0)` of the
/// slow-fast random system.
pub fn lp_fiber(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<FiberSolution> {
    Ok(fiber_for_form(spec, Form::Eps(eps), noise, base_slow, base_fast, zeta, cfg)?.0)
}

/// Fiber map of the time-rescaled system (equal to `lp_fiber` in law).
pub fn lp_fiber_scaled(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<FiberSolution> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lp_fiber_scaled needs eps > 0, got {eps}"
        )));
    }
    Ok(fiber_for_form(
        spec,
        Form::Scaled(eps),
        noise,
        base_slow,
        base_fast,
        zeta,
        cfg,
    )?
    .0)
}

/// Critical-fiber map `l^0(zeta, (X0, Y0), omega) = Y0 + V^0(0)`.
pub fn lp_critical_fiber(
    spec: &SystemSpec,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<FiberSolution> {
    Ok(fiber_for_form(
        spec,
        Form::Scaled(0.0),
        noise,
        base_slow,
        base_fast,
        zeta,
        cfg,
    )?
    .0)
}

/// Slow-manifold value `h^eps(zeta, omega) = Y(0)` of the coupled orbit
/// fixed point with `X(0) = zeta`.
pub fn lp_manifold(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<(Vec<f64>, OrbitSolution)> {
    let orbit = solve_orbit(spec, Form::Eps(eps), noise, zeta, cfg)?;
    let h = orbit
        .trajectory
        .fast
        .row(orbit.trajectory.grid.n_points - 1)
        .to_vec();
    Ok((h, orbit))
}

/// Fiber values over a `zeta` grid around one base point, sharing a single
/// base-orbit solve.
#[derive(Debug, Clone, Serialize)]
pub struct FiberTable {
    pub base_slow: Vec<f64>,
    pub base_fast: Vec<f64>,
    /// Scale parameter of the solving form (0 for the critical fiber).
    pub eps: f64,
    pub scaled_form: bool,
    pub zeta_grid: Vec<Vec<f64>>,
    pub l_values: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

pub fn fiber_table(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zetas: &[Vec<f64>],
    cfg: &WeightedNormConfig,
) -> Result<FiberTable> {
    let orbit = solve_orbit(spec, form, noise, base_slow, cfg)?;
    let mut l_values = Vec::with_capacity(zetas.len());
    let mut iterations = Vec::with_capacity(zetas.len());
    let mut residuals = Vec::with_capacity(zetas.len());
    for zeta in zetas {
        let u0: Vec<f64> = zeta.iter().zip(base_slow).map(|(z, x)| z - x).collect();
        let diff = solve_difference(spec, form, noise, &orbit.trajectory, &u0, cfg)?;
        l_values.push(fiber_value(base_fast, &diff));
        iterations.push(diff.stats.iterations);
        residuals.push(diff.stats.reported_residual());
    }
    let (eps, scaled_form) = match form {
        Form::Eps(e) => (e, false),
        Form::Scaled(e) => (e, true),
    };
    Ok(FiberTable {
        base_slow: base_slow.to_vec(),
        base_fast: base_fast.to_vec(),
        eps,
        scaled_form,
        zeta_grid: zetas.to_vec(),
        l_values,
        iterations,
        residuals,
    })
}

/// Manifold values over a `zeta` grid plus the value at a base slow point.
#[derive(Debug, Clone, Serialize)]
pub struct ManifoldTable {
    pub zeta_grid: Vec<Vec<f64>>,
    pub h_values: Vec<Vec<f64>>,
    pub base_slow: Vec<f64>,
    pub h_at_base: Vec<f64>,
}

pub fn manifold_table(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    zetas: &[Vec<f64>],
    base_slow: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<ManifoldTable> {
    let mut h_values = Vec::with_capacity(zetas.len());
    for zeta in zetas {
        h_values.push(lp_manifold(spec, eps, noise, zeta, cfg)?.0);
    }
    let h_at_base = lp_manifold(spec, eps, noise, base_slow, cfg)?.0;
    Ok(ManifoldTable {
        zeta_grid: zetas.to_vec(),
        h_values,
        base_slow: base_slow.to_vec(),
        h_at_base,
    })
}

/// The four first-order expansion systems along the critical objects.
#[derive(Debug, Clone)]
pub struct Order1Systems {
    pub grid: TimeGrid,
    pub x1: GridSeries,
    pub y1: GridSeries,
    pub u1: GridSeries,
    pub v1: GridSeries,
    pub critical_orbit: Trajectory,
    pub critical_v0: GridSeries,
    pub stats_y1: SolveStats,
    pub stats_v1: SolveStats,
}

impl Order1Systems {
    /// `l^1 = V^1(0)`.
    pub fn l1(&self) -> &[f64] {
        self.v1.row(self.grid.n_points - 1)
    }
}

/// Solves the first-order systems `X^1, Y^1, U^1, V^1` of the expansion
/// around the critical objects:
///
/// * `X^1' = A X0 + F(X0, Y^0)` and `U^1' = A U^0(0) + dF` by direct
///   backward quadrature with `X^1(0) = U^1(0) = 0`;
/// * `Y^1` and `V^1` as the tempered solutions of their linearized
///   equations, with `g_x`, `g_y` supplied exactly by the registry.
pub fn solve_order1_systems(
    spec: &SystemSpec,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<Order1Systems> {
    let form = Form::Scaled(0.0);
    let grid = cfg.solve_grid()?;
    let n = grid.n_points;
    let (ds, df) = (spec.dim_slow(), spec.dim_fast());

    // Critical base orbit (X^0 = x0 frozen, Y^0 tempered) and critical
    // difference (U^0 = zeta - x0 frozen, V^0 tempered).
    let orbit = solve_orbit(spec, form, noise, base_slow, cfg)?;
    let u0: Vec<f64> = zeta.iter().zip(base_slow).map(|(z, x)| z - x).collect();
    let diff = solve_difference(spec, form, noise, &orbit.trajectory, &u0, cfg)?;
    let _ = base_fast; // the first-order systems do not depend on Y0

    let delta0 = noise.delta_at_zero();
    let base_x_arg: Vec<f64> = base_slow.iter().zip(&delta0).map(|(x, d)| x + d).collect();
    let zeta_arg: Vec<f64> = zeta.iter().zip(&delta0).map(|(z, d)| z + d).collect();

    // Fast arguments along the critical orbit and along the shifted fiber
    // orbit: Y^0 + xi and V^0 + Y^0 + xi.
    let mut base_y_arg = GridSeries::zeros(n, df);
    let mut fiber_y_arg = GridSeries::zeros(n, df);
    for j in 0..n {
        let xi = noise.xi.eval(grid.time(j))?;
        for m in 0..df {
            let y0v = orbit.trajectory.fast.row(j)[m];
            base_y_arg.row_mut(j)[m] = y0v + xi[m];
            fiber_y_arg.row_mut(j)[m] = diff.trajectory.fast.row(j)[m] + y0v + xi[m];
        }
    }

    // X^1(t) = INT_0^t [A x0 + F(X^0, Y^0)] ds, X^1(0) = 0.
    let mut integrand = GridSeries::zeros(n, ds);
    for j in 0..n {
        let fv = spec.f.eval(&base_x_arg, base_y_arg.row(j));
        let row = integrand.row_mut(j);
        for m in 0..ds {
            row[m] = spec.slow_op.eigenvalues[m] * base_slow[m] + fv[m];
        }
    }
    let mut x1 = GridSeries::zeros(n, ds);
    backward_cumulative_trapezoid(cfg.dt, &integrand, &mut x1);

    // U^1(t) = INT_0^t [A U^0(0) + dF] ds, U^1(0) = 0.
    for j in 0..n {
        let fv = spec.f.eval(&zeta_arg, fiber_y_arg.row(j));
        let fb = spec.f.eval(&base_x_arg, base_y_arg.row(j));
        let row = integrand.row_mut(j);
        for m in 0..ds {
            row[m] = spec.slow_op.eigenvalues[m] * u0[m] + fv[m] - fb[m];
        }
    }
    let mut u1 = GridSeries::zeros(n, ds);
    backward_cumulative_trapezoid(cfg.dt, &integrand, &mut u1);

    // Tempered fixed point for Y^1:
    //   Y^1(t) = INT e^{B(t-s)} [ g_x(base)[X^1] + g_y(base)[Y^1] ] ds.
    let fk = ForwardKernel::new(&spec.fast_op.eigenvalues, 1.0, 1.0, cfg.dt);
    let mut samples = GridSeries::zeros(n, df);
    let map_y1 = |cur: &PairGrid, next: &mut PairGrid| -> Result<()> {
        for j in 0..n {
            let gx = spec
                .g
                .dir_deriv_slow(&base_x_arg, base_y_arg.row(j), x1.row(j));
            let gy = spec
                .g
                .dir_deriv_fast(&base_x_arg, base_y_arg.row(j), cur.fast.row(j));
            let row = samples.row_mut(j);
            for m in 0..df {
                row[m] = gx[m] + gy[m];
            }
        }
        next.slow = cur.slow.clone();
        fast_tempered_sweep(&fk, &samples, &mut next.fast);
        Ok(())
    };
    let (pair_y1, stats_y1) = lp_contract(map_y1, PairGrid::zeros(n, 0, df), &grid, 0.0, cfg)?;
    let y1 = pair_y1.fast;

    // Tempered fixed point for V^1 with the four-term linearized drive.
    let mut samples_v = GridSeries::zeros(n, df);
    let map_v1 = |cur: &PairGrid, next: &mut PairGrid| -> Result<()> {
        for j in 0..n {
            let ux: Vec<f64> = u1
                .row(j)
                .iter()
                .zip(x1.row(j))
                .map(|(a, b)| a + b)
                .collect();
            let vy: Vec<f64> = cur
                .fast
                .row(j)
                .iter()
                .zip(y1.row(j))
                .map(|(a, b)| a + b)
                .collect();
            let gx_f = spec.g.dir_deriv_slow(&zeta_arg, fiber_y_arg.row(j), &ux);
            let gy_f = spec.g.dir_deriv_fast(&zeta_arg, fiber_y_arg.row(j), &vy);
            let gx_b = spec
                .g
                .dir_deriv_slow(&base_x_arg, base_y_arg.row(j), x1.row(j));
            let gy_b = spec
                .g
                .dir_deriv_fast(&base_x_arg, base_y_arg.row(j), y1.row(j));
            let row = samples_v.row_mut(j);
            for m in 0..df {
                row[m] = gx_f[m] + gy_f[m] - gx_b[m] - gy_b[m];
            }
        }
        next.slow = cur.slow.clone();
        fast_tempered_sweep(&fk, &samples_v, &mut next.fast);
        Ok(())
    };
    let (pair_v1, stats_v1) = lp_contract(map_v1, PairGrid::zeros(n, 0, df), &grid, 0.0, cfg)?;
    let v1 = pair_v1.fast;

    Ok(Order1Systems {
        grid,
        x1,
        y1,
        u1,
        v1,
        critical_orbit: orbit.trajectory,
        critical_v0: diff.trajectory.fast,
        stats_y1,
        stats_v1,
    })
}

/// First-order fiber coefficient `l^1(zeta, (X0, Y0), omega) = V^1(0)`.
pub fn lp_first_order(
    spec: &SystemSpec,
    noise: &NoiseRealization,
    base_slow: &[f64],
    base_fast: &[f64],
    zeta: &[f64],
    cfg: &WeightedNormConfig,
) -> Result<(Vec<f64>, Order1Systems)> {
    let systems = solve_order1_systems(spec, noise, base_slow, base_fast, zeta, cfg)?;
    Ok((systems.l1().to_vec(), systems))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::noise::NoiseRealization;
    use crate::sysspec::{
        EvalMode, NonlinKind, NonlinSpec, Nonlinearity, SpectralOperator, SystemSpec,
    };

    fn cfg_for(spec: &SystemSpec, dt: f64) -> WeightedNormConfig {
        WeightedNormConfig::standard(spec, dt, 1e-9, 200, 1e-6).unwrap()
    }

    fn noise_for(
        spec: &SystemSpec,
        eps: f64,
        cfg: &WeightedNormConfig,
        seed: u64,
    ) -> NoiseRealization {
        let grid = TimeGrid::new(-cfg.t_horizon, 1.0, cfg.dt).unwrap();
        NoiseRealization::generate(spec, eps, &grid, seed).unwrap()
    }

    #[test]
    fn zero_nonlinearity_converges_in_one_iteration() {
        let spec = builtin::linear_scalar_system(1.0, -1.0, 0.0, 0.0);
        let cfg = cfg_for(&spec, 0.01);
        let noise = noise_for(&spec, 0.1, &cfg, 1);
        let orbit = solve_orbit(&spec, Form::Eps(0.1), &noise, &[1.0], &cfg).unwrap();
        assert_eq!(orbit.stats.iterations, 1);
        // (e^{At} U(0), 0) is already the fixed point.
        let diff = solve_difference(
            &spec,
            Form::Eps(0.1),
            &noise,
            &orbit.trajectory,
            &[0.5],
            &cfg,
        )
        .unwrap();
        assert_eq!(diff.stats.iterations, 1);
        let n = diff.trajectory.grid.n_points;
        let t = diff.trajectory.grid.time(0);
        assert!((diff.trajectory.slow.row(0)[0] - 0.5 * t.exp()).abs() < 1e-12);
        assert_eq!(diff.trajectory.fast.row(n - 1)[0], 0.0);
    }

    #[test]
    fn manifold_matches_motivating_oracle() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 3);
        let (h, orbit) = lp_manifold(&spec, 0.1, &noise, &[1.0], &cfg).unwrap();
        let expect = builtin::oracle_motivating_manifold(0.1, 1.0);
        assert!((h[0] - expect).abs() < 1e-4, "h = {} vs {expect}", h[0]);
        assert!(orbit.stats.contraction_estimate < 0.95);

        let (h0, _) = lp_manifold(&spec, 0.1, &noise, &[0.0], &cfg).unwrap();
        assert!(h0[0].abs() < 1e-12);
    }

    #[test]
    fn manifold_zero_when_g_zero() {
        let spec = builtin::linear_scalar_system(1.0, -1.0, 0.0, 1.0);
        let cfg = cfg_for(&spec, 0.01);
        let noise = noise_for(&spec, 0.1, &cfg, 5);
        let (h, _) = lp_manifold(&spec, 0.1, &noise, &[2.0], &cfg).unwrap();
        assert_eq!(h[0], 0.0);
    }

    #[test]
    fn fiber_matches_motivating_oracle() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 7);
        // (eps, zeta, x0, y0) = (0.1, 2, 1, 0) -> 2.5
        let sol = lp_fiber(&spec, 0.1, &noise, &[1.0], &[0.0], &[2.0], &cfg).unwrap();
        assert!(
            (sol.l_value[0] - 2.5).abs() < 1e-4,
            "l = {} vs 2.5",
            sol.l_value[0]
        );
        // (0.01, 0, 1, 2) -> 2 - 1/1.02
        let noise2 = noise_for(&spec, 0.01, &cfg, 7);
        let sol = lp_fiber(&spec, 0.01, &noise2, &[1.0], &[2.0], &[0.0], &cfg).unwrap();
        let expect = builtin::oracle_motivating_fiber(0.01, 0.0, 1.0, 2.0);
        assert!(
            (sol.l_value[0] - expect).abs() < 1e-4,
            "l = {} vs {expect}",
            sol.l_value[0]
        );
    }

    #[test]
    fn fiber_through_base_point_returns_y0() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 11);
        let sol = lp_fiber(&spec, 0.1, &noise, &[1.0], &[0.7], &[1.0], &cfg).unwrap();
        assert!((sol.l_value[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn scaled_fiber_equals_plain_fiber_on_motivating() {
        // The motivating transformed system is deterministic, so the law
        // equality collapses to an exact one.
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.2, &cfg, 13);
        let a = lp_fiber(&spec, 0.2, &noise, &[1.0], &[0.0], &[2.0], &cfg).unwrap();
        let b = lp_fiber_scaled(&spec, 0.2, &noise, &[1.0], &[0.0], &[2.0], &cfg).unwrap();
        assert!(
            (a.l_value[0] - b.l_value[0]).abs() < 1e-5,
            "{} vs {}",
            a.l_value[0],
            b.l_value[0]
        );
        let c = lp_fiber_scaled(&spec, 0.2, &noise, &[1.0], &[0.4], &[1.0], &cfg).unwrap();
        assert!((c.l_value[0] - 0.4).abs() < 1e-9, "base point membership");
    }

    #[test]
    fn critical_fiber_matches_oracle() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 17);
        let sol = lp_critical_fiber(&spec, &noise, &[1.0], &[0.0], &[2.0], &cfg).unwrap();
        assert!(
            (sol.l_value[0] - 3.0).abs() < 1e-6,
            "l0 = {} vs 3",
            sol.l_value[0]
        );
        let sol = lp_critical_fiber(&spec, &noise, &[1.3], &[0.6], &[1.3], &cfg).unwrap();
        assert!((sol.l_value[0] - 0.6).abs() < 1e-10);
        // g = 0 -> l0 = Y0 for all zeta.
        let lin = builtin::linear_scalar_system(1.0, -1.0, 0.0, 1.0);
        let noise = noise_for(&lin, 0.1, &cfg, 17);
        let sol = lp_critical_fiber(&lin, &noise, &[0.2], &[0.9], &[2.0], &cfg).unwrap();
        assert_eq!(sol.l_value[0], 0.9);
    }

    #[test]
    fn contraction_ratios_stay_below_rho_plus_slack() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 19);
        let rho = crate::sysspec::rho(&spec, 0.1).unwrap();
        let sol = lp_fiber(&spec, 0.1, &noise, &[1.0], &[0.0], &[1.7], &cfg).unwrap();
        assert!(
            sol.difference.stats.contraction_estimate <= rho + 0.1,
            "estimate {} vs rho {}",
            sol.difference.stats.contraction_estimate,
            rho
        );
    }

    #[test]
    fn forced_divergence_raises_error() {
        // An artificial expanding map: rho effectively 1.2.
        let spec = builtin::linear_scalar_system(1.0, -1.0, 0.0, 0.0);
        let cfg = cfg_for(&spec, 0.05);
        let grid = cfg.solve_grid().unwrap();
        let n = grid.n_points;
        let map = |cur: &PairGrid, next: &mut PairGrid| -> Result<()> {
            for j in 0..n {
                next.slow.row_mut(j)[0] = 1.2 * cur.slow.row(j)[0] + 1.0;
                next.fast.row_mut(j)[0] = 1.2 * cur.fast.row(j)[0] + 1.0;
            }
            Ok(())
        };
        let initial = PairGrid::zeros(n, 1, 1);
        let err = lp_contract(map, initial, &grid, 0.0, &cfg);
        assert!(
            matches!(
                err,
                Err(Error::Divergence { .. }) | Err(Error::NoConvergence { .. })
            ),
            "got {err:?}"
        );
    }

    #[test]
    fn first_order_matches_motivating_taylor_coefficient() {
        // l^1(zeta = 2, x0 = 1) = -2 (zeta^2 - x0^2) = -6.
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 23);
        let (l1, sys) = lp_first_order(&spec, &noise, &[1.0], &[0.0], &[2.0], &cfg).unwrap();
        assert!((l1[0] + 6.0).abs() < 1e-6, "l1 = {}", l1[0]);
        assert!(sys.stats_v1.iterations >= 1);

        // zeta = x0 -> l1 = 0.
        let (l1, _) = lp_first_order(&spec, &noise, &[1.0], &[0.0], &[1.0], &cfg).unwrap();
        assert!(l1[0].abs() < 1e-10);
    }

    #[test]
    fn first_order_linear_g_closed_form() {
        // g = c1 x + c2 y, f = 0, sigma = 0, a = 1, b = -1:
        // l^1 = -c1 a u0 / (1 - c2)^2 (tempered first-order solution).
        let (c1, c2) = (0.1, 0.1);
        let spec = SystemSpec::new(
            SpectralOperator::new(vec![1.0]).unwrap(),
            SpectralOperator::new(vec![-1.0]).unwrap(),
            Nonlinearity::zero(),
            NonlinSpec {
                kind: NonlinKind::Linear { cx: c1, cy: c2 },
                declared_lipschitz: 0.2,
                bounded: None,
                box_radius: None,
                mode: EvalMode::Pointwise,
            },
            0.0,
            0.0,
            -1.0,
            1.0,
        )
        .unwrap();
        let cfg = cfg_for(&spec, 1e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 29);
        let u0 = 1.5;
        let (l1, _) = lp_first_order(&spec, &noise, &[0.4], &[0.0], &[0.4 + u0], &cfg).unwrap();
        let lambda = 1.0 - c2;
        let expect = -c1 * 1.0 * u0 / (lambda * lambda);
        assert!((l1[0] - expect).abs() < 1e-6, "l1 = {} vs {expect}", l1[0]);
    }

    #[test]
    fn first_order_finite_difference_oracle() {
        // g_y = 0, f = 0, sigma1 = 0: Richardson-extrapolated forward
        // difference of the scaled fiber in eps approximates l^1.
        let spec = SystemSpec::new(
            SpectralOperator::new(vec![1.0]).unwrap(),
            SpectralOperator::new(vec![-1.0]).unwrap(),
            Nonlinearity::zero(),
            NonlinSpec {
                kind: NonlinKind::ScaledCos {
                    coeff: 0.25,
                    arg: crate::sysspec::FieldArg::Slow,
                },
                declared_lipschitz: 0.25,
                bounded: Some(0.5),
                box_radius: None,
                mode: EvalMode::Pointwise,
            },
            0.0,
            1.0,
            -1.0,
            1.0,
        )
        .unwrap();
        let cfg = cfg_for(&spec, 1e-3);
        let noise = noise_for(&spec, 1e-3, &cfg, 31);
        let (x0, y0, zeta) = ([0.3], [0.2], [1.1]);
        let (l1, _) = lp_first_order(&spec, &noise, &x0, &y0, &zeta, &cfg).unwrap();
        let l0 = lp_critical_fiber(&spec, &noise, &x0, &y0, &zeta, &cfg)
            .unwrap()
            .l_value[0];
        let eps = 1e-3;
        let le = lp_fiber_scaled(&spec, eps, &noise, &x0, &y0, &zeta, &cfg)
            .unwrap()
            .l_value[0];
        let le2 = lp_fiber_scaled(&spec, eps / 2.0, &noise, &x0, &y0, &zeta, &cfg)
            .unwrap()
            .l_value[0];
        let d1 = (le - l0) / eps;
        let d2 = (le2 - l0) / (eps / 2.0);
        let extrapolated = 2.0 * d2 - d1;
        assert!(
            (l1[0] - extrapolated).abs() < 1e-3,
            "l1 = {} vs fd {}",
            l1[0],
            extrapolated
        );
    }

    #[test]
    fn fiber_table_entry_at_base_is_y0() {
        let spec = builtin::motivating_system().unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 37);
        let zetas: Vec<Vec<f64>> = vec![vec![0.5], vec![1.0], vec![1.5]];
        let table =
            fiber_table(&spec, Form::Eps(0.1), &noise, &[1.0], &[0.3], &zetas, &cfg).unwrap();
        assert!((table.l_values[1][0] - 0.3).abs() < 1e-9);
        assert_eq!(table.zeta_grid.len(), 3);
    }

    #[test]
    fn truncation_consistency_under_horizon_doubling() {
        let spec = builtin::motivating_system().unwrap();
        let dt = 2e-3;
        let cfg1 = WeightedNormConfig::for_spec(&spec, 28.0, dt, 1e-9, 200, 1e-6).unwrap();
        let cfg2 = WeightedNormConfig::for_spec(&spec, 56.0, dt, 1e-9, 200, 1e-6).unwrap();
        let grid = TimeGrid::new(-56.0, 1.0, dt).unwrap();
        let noise = NoiseRealization::generate(&spec, 0.1, &grid, 41).unwrap();
        let a = lp_fiber(&spec, 0.1, &noise, &[1.0], &[0.0], &[1.8], &cfg1).unwrap();
        let b = lp_fiber(&spec, 0.1, &noise, &[1.0], &[0.0], &[1.8], &cfg2).unwrap();
        let scale = a.l_value[0].abs().max(1.0);
        assert!(
            (a.l_value[0] - b.l_value[0]).abs() < 1e-6 * scale * 10.0,
            "T = 28 vs 56: {} vs {}",
            a.l_value[0],
            b.l_value[0]
        );
    }

    #[test]
    fn initial_condition_lipschitz_bound() {
        // || Psi(.; U0) - Psi(.; U0') ||_w <= || U0 - U0' || / (1 - rho) + tol,
        // on a system whose declared Lipschitz constant is global (the
        // motivating quadratic exceeds its local declaration off the box).
        let spec = SystemSpec::new(
            SpectralOperator::new(vec![1.0]).unwrap(),
            SpectralOperator::new(vec![-1.0]).unwrap(),
            Nonlinearity::zero(),
            NonlinSpec {
                kind: NonlinKind::Linear { cx: 0.1, cy: 0.1 },
                declared_lipschitz: 0.2,
                bounded: None,
                box_radius: None,
                mode: EvalMode::Pointwise,
            },
            0.0,
            0.0,
            -1.0,
            1.0,
        )
        .unwrap();
        let cfg = cfg_for(&spec, 2e-3);
        let noise = noise_for(&spec, 0.1, &cfg, 43);
        let orbit = solve_orbit(&spec, Form::Eps(0.1), &noise, &[1.0], &cfg).unwrap();
        let d1 = solve_difference(
            &spec,
            Form::Eps(0.1),
            &noise,
            &orbit.trajectory,
            &[0.6],
            &cfg,
        )
        .unwrap();
        let d2 = solve_difference(
            &spec,
            Form::Eps(0.1),
            &noise,
            &orbit.trajectory,
            &[0.9],
            &cfg,
        )
        .unwrap();
        let grid = cfg.solve_grid().unwrap();
        let weights: Vec<f64> = grid.times().map(|t| (-cfg.beta * t).exp()).collect();
        let pa = PairGrid {
            slow: d1.trajectory.slow.clone(),
            fast: d1.trajectory.fast.clone(),
        };
        let pb = PairGrid {
            slow: d2.trajectory.slow.clone(),
            fast: d2.trajectory.fast.clone(),
        };
        let dist = weighted_distance(&weights, &pa, &pb);
        let rho = crate::sysspec::rho(&spec, 0.1).unwrap();
        assert!(
            dist <= 0.3 / (1.0 - rho) + 1e-6,
            "weighted distance {dist} vs bound {}",
            0.3 / (1.0 - rho)
        );
    }
}
