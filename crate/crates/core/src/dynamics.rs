//! Exponential product integrators for the four systems attached to a
//! slow-fast random evolutionary system.
//!
//! Every linear part is diagonal, so each mode carries an exact exponential
//! kernel; the nonlinear terms are integrated by product integration with
//! piecewise-linear samples,
//!
//! ```text
//!   INT_0^h e^{lam (h-s)} S(s) ds
//!       ~ h [ (phi1 - phi2)(lam h) S_j + phi2(lam h) S_{j+1} ]
//! ```
//!
//! which is exact on the linear parts for any step and uniformly accurate in
//! the scale parameter (plain quadrature would need `dt << eps`).
//!
//! Backward fast continuations are always the *tempered* (bounded) ones: the
//! naive backward fast equation amplifies at rate `gamma_f / eps` and is
//! numerically ill-posed, while the backward integral representations
//! omit the homogeneous fast term. The tempered fixed points live in
//! [`crate::lp`]; the thin wrappers here delegate to them.

use crate::error::{Error, Result};
use crate::noise::{NoiseRealization, TimeGrid};
use crate::sysspec::{contraction_gate, SystemSpec, RHO_LIMIT};
use serde::{Deserialize, Serialize};

/// Abort bound for any state entry.
pub const OVERFLOW_BOUND: f64 = 1e12;

/// Which of the system family a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemTag {
    RandomEps,
    DifferenceEps,
    ScaledEps,
    Critical,
    FirstOrder,
}

/// Flat time-major storage for a vector-valued grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    pub dim: usize,
    data: Vec<f64>,
}

impl GridSeries {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let width = self.dim.max(1);
        self.data.chunks(width).take(self.len())
    }
}

/// Time grid plus slow/fast state arrays for one system realization.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub slow: GridSeries,
    pub fast: GridSeries,
    pub tag: SystemTag,
}

impl Trajectory {
    pub fn state_at(&self, t: f64) -> Result<(&[f64], &[f64])> {
        let j = self.grid.index_of(t)?;
        Ok((self.slow.row(j), self.fast.row(j)))
    }

    pub fn end_state(&self) -> (&[f64], &[f64]) {
        let j = self.grid.n_points - 1;
        (self.slow.row(j), self.fast.row(j))
    }
}

/// `phi1(z) = (e^z - 1)/z`.
#[inline]
pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        z.exp_m1() / z
    }
}

/// `phi2(z) = (e^z - 1 - z)/z^2`.
#[inline]
pub(crate) fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z / 720.0)))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Per-mode forward step data: `x' = exp x + w0 S_j + w1 S_{j+1}`,
/// predictor `x_pred = exp x + wp S_j`.
#[derive(Debug, Clone)]
pub(crate) struct ForwardKernel {
    pub exp: Vec<f64>,
    pub wp: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
}

impl ForwardKernel {
    /// `lam` per mode; `scale` multiplies the nonlinear drive (1, eps, or 1/eps).
    pub fn new(lambdas: &[f64], rate_scale: f64, drive_scale: f64, h: f64) -> Self {
        let mut exp = Vec::with_capacity(lambdas.len());
        let mut wp = Vec::with_capacity(lambdas.len());
        let mut w0 = Vec::with_capacity(lambdas.len());
        let mut w1 = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let z = lam * rate_scale * h;
            exp.push(z.exp());
            wp.push(drive_scale * h * phi1(z));
            w0.push(drive_scale * h * (phi1(z) - phi2(z)));
            w1.push(drive_scale * h * phi2(z));
        }
        Self { exp, wp, w0, w1 }
    }
}

/// Per-mode backward step data for the slow component:
/// `u_{j-1} = exp u_j - (w_prev S_{j-1} + w_cur S_j)`.
#[derive(Debug, Clone)]
pub(crate) struct BackwardKernel {
    pub exp: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub w_cur: Vec<f64>,
}

impl BackwardKernel {
    pub fn new(lambdas: &[f64], rate_scale: f64, drive_scale: f64, h: f64) -> Self {
        let mut exp = Vec::with_capacity(lambdas.len());
        let mut w_prev = Vec::with_capacity(lambdas.len());
        let mut w_cur = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let zb = -lam * rate_scale * h;
            exp.push(zb.exp());
            w_prev.push(drive_scale * h * phi2(zb));
            w_cur.push(drive_scale * h * (phi1(zb) - phi2(zb)));
        }
        Self { exp, w_prev, w_cur }
    }
}

/// Backward sweep of the slow component from its value at t = 0 (the last
/// grid index), with drive samples `s` on the whole grid.
pub(crate) fn slow_backward_sweep(
    kern: &BackwardKernel,
    end_value: &[f64],
    samples: &GridSeries,
    out: &mut GridSeries,
) {
    let n = samples.len();
    out.row_mut(n - 1).copy_from_slice(end_value);
    for j in (1..n).rev() {
        // Split borrow: rows j and j-1 are disjoint.
        let (head, tail) = out.data.split_at_mut(j * out.dim);
        let cur = &tail[..out.dim];
        let prev = &mut head[(j - 1) * out.dim..];
        let s_prev = samples.row(j - 1);
        let s_cur = samples.row(j);
        for m in 0..out.dim {
            prev[m] =
                kern.exp[m] * cur[m] - (kern.w_prev[m] * s_prev[m] + kern.w_cur[m] * s_cur[m]);
        }
    }
}

/// Tempered (bounded backward) sweep of the fast component: accumulates the
/// exponential convolution forward from the left grid edge.
///
/// The start value is the quasi-equilibrium of the edge sample,
/// `V(-T) = (w0 + w1) S(-T) / (1 - e^{lam h})`, the exact infinite-history
/// value for a constant drive. The left-edge truncation error is then
/// proportional to the drive's backward variation rather than its size,
/// and decays like `e^{lam (t + T)}` into the grid.
pub(crate) fn fast_tempered_sweep(
    kern: &ForwardKernel,
    samples: &GridSeries,
    out: &mut GridSeries,
) {
    let n = samples.len();
    {
        let s0 = samples.row(0);
        let first = out.row_mut(0);
        for m in 0..first.len() {
            first[m] = (kern.w0[m] + kern.w1[m]) * s0[m] / (1.0 - kern.exp[m]);
        }
    }
    for j in 1..n {
        let (head, tail) = out.data.split_at_mut(j * out.dim);
        let prev = &head[(j - 1) * out.dim..];
        let cur = &mut tail[..out.dim];
        let s_prev = samples.row(j - 1);
        let s_cur = samples.row(j);
        for m in 0..out.dim {
            cur[m] = kern.exp[m] * prev[m] + kern.w0[m] * s_prev[m] + kern.w1[m] * s_cur[m];
        }
    }
}

/// Backward cumulative trapezoid from 0 at the last index:
/// `out(t) = INT_0^t s(u) du` for t <= 0.
pub(crate) fn backward_cumulative_trapezoid(h: f64, samples: &GridSeries, out: &mut GridSeries) {
    let n = samples.len();
    for v in out.row_mut(n - 1) {
        *v = 0.0;
    }
    for j in (1..n).rev() {
        let (head, tail) = out.data.split_at_mut(j * out.dim);
        let cur = &tail[..out.dim];
        let prev = &mut head[(j - 1) * out.dim..];
        let s_prev = samples.row(j - 1);
        let s_cur = samples.row(j);
        for m in 0..out.dim {
            prev[m] = cur[m] - 0.5 * h * (s_prev[m] + s_cur[m]);
        }
    }
}

/// Which member of the system family an operator or solver works on.
///
/// * `Eps(eps)` — the slow-fast random system at scale `eps > 0` (noise
///   composition `delta(t)`, `eta^{1/eps}(t)`; fast kernel `B/eps`).
/// * `Scaled(eps)` — the time-rescaled system (noise `delta(eps t)`,
///   `xi(t)`; fast kernel `B`, slow kernel `eps A`). `Scaled(0)` is the
///   critical system: the slow component is frozen and `delta` enters
///   frozen at time zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Form {
    Eps(f64),
    Scaled(f64),
}

impl Form {
    pub fn validate(&self) -> Result<()> {
        match self {
            Form::Eps(e) if !(*e > 0.0) => Err(Error::InvalidArgument(format!(
                "the slow-fast system needs eps > 0, got {e}"
            ))),
            Form::Scaled(e) if !(*e >= 0.0) => Err(Error::InvalidArgument(format!(
                "the rescaled system needs eps >= 0, got {e}"
            ))),
            _ => Ok(()),
        }
    }

    /// Contraction gate appropriate to the form.
    pub fn gate(&self, spec: &SystemSpec) -> Result<f64> {
        match self {
            Form::Eps(e) => contraction_gate(spec, *e),
            Form::Scaled(e) if *e > 0.0 => contraction_gate(spec, *e),
            Form::Scaled(_) => {
                let r = spec.rho_zero_limit();
                if r >= RHO_LIMIT {
                    Err(Error::ContractionGate {
                        rho: r,
                        limit: RHO_LIMIT,
                        eps: 0.0,
                    })
                } else {
                    Ok(r)
                }
            }
        }
    }

    pub fn tag(&self) -> SystemTag {
        match self {
            Form::Eps(_) => SystemTag::RandomEps,
            Form::Scaled(e) if *e == 0.0 => SystemTag::Critical,
            Form::Scaled(_) => SystemTag::ScaledEps,
        }
    }

    /// (rate multiplier, drive multiplier) for the slow component.
    pub(crate) fn slow_scales(&self) -> (f64, f64) {
        match self {
            Form::Eps(_) => (1.0, 1.0),
            Form::Scaled(e) => (*e, *e),
        }
    }

    /// (rate multiplier, drive multiplier) for the fast component.
    pub(crate) fn fast_scales(&self) -> (f64, f64) {
        match self {
            Form::Eps(e) => (1.0 / e, 1.0 / e),
            Form::Scaled(_) => (1.0, 1.0),
        }
    }

    /// Slow-space noise entering the nonlinearity arguments at time `t`.
    pub(crate) fn noise_slow(&self, noise: &NoiseRealization, t: f64) -> Result<Vec<f64>> {
        match self {
            Form::Eps(_) => noise.delta.eval(t),
            Form::Scaled(e) => noise.delta.eval(e * t),
        }
    }

    /// Fast-space noise entering the nonlinearity arguments at time `t`.
    pub(crate) fn noise_fast(&self, noise: &NoiseRealization, t: f64) -> Result<Vec<f64>> {
        match self {
            Form::Eps(_) => noise.eta.eval(t),
            Form::Scaled(_) => noise.xi.eval(t),
        }
    }

    /// Weight exponent of the backward norm for difference solves.
    pub(crate) fn weight_exponent(&self, beta: f64) -> f64 {
        match self {
            Form::Eps(_) => beta,
            Form::Scaled(e) => e * beta,
        }
    }
}

fn check_finite(t: f64, values: &[f64]) -> Result<()> {
    for &v in values {
        if !v.is_finite() || v.abs() > OVERFLOW_BOUND {
            return Err(Error::Overflow {
                t,
                value: v,
                bound: OVERFLOW_BOUND,
            });
        }
    }
    Ok(())
}

/// Forward integration of the chosen form on `[0, horizon]` with a
/// predictor plus two product-integration corrector passes per step.
fn forward_engine(
    spec: &SystemSpec,
    form: Form,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    form.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "forward horizon must be > 0, got {horizon}"
        )));
    }
    let grid = TimeGrid::new(0.0, horizon, dt)?;
    let ds = spec.dim_slow();
    let df = spec.dim_fast();
    if x0.len() != ds || y0.len() != df {
        return Err(Error::GridMismatch(format!(
            "initial state dims ({}, {}) do not match spec ({ds}, {df})",
            x0.len(),
            y0.len()
        )));
    }
    let (srate, sdrive) = form.slow_scales();
    let (frate, fdrive) = form.fast_scales();
    let ks = ForwardKernel::new(&spec.slow_op.eigenvalues, srate, sdrive, dt);
    let kf = ForwardKernel::new(&spec.fast_op.eigenvalues, frate, fdrive, dt);

    let n = grid.n_points;
    let mut slow = GridSeries::zeros(n, ds);
    let mut fast = GridSeries::zeros(n, df);
    slow.row_mut(0).copy_from_slice(x0);
    fast.row_mut(0).copy_from_slice(y0);

    let mut ns_cur = form.noise_slow(noise, 0.0)?;
    let mut nf_cur = form.noise_fast(noise, 0.0)?;
    let mut xa = vec![0.0; ds];
    let mut ya = vec![0.0; df];
    for j in 0..n - 1 {
        let t1 = grid.time(j + 1);
        let x = slow.row(j).to_vec();
        let y = fast.row(j).to_vec();
        for m in 0..ds {
            xa[m] = x[m] + ns_cur[m];
        }
        for m in 0..df {
            ya[m] = y[m] + nf_cur[m];
        }
        let f0 = spec.f.eval(&xa, &ya);
        let g0 = spec.g.eval(&xa, &ya);

        let mut xp: Vec<f64> = (0..ds)
            .map(|m| ks.exp[m] * x[m] + ks.wp[m] * f0[m])
            .collect();
        let mut yp: Vec<f64> = (0..df)
            .map(|m| kf.exp[m] * y[m] + kf.wp[m] * g0[m])
            .collect();

        let ns_next = form.noise_slow(noise, t1)?;
        let nf_next = form.noise_fast(noise, t1)?;
        for _pass in 0..2 {
            for m in 0..ds {
                xa[m] = xp[m] + ns_next[m];
            }
            for m in 0..df {
                ya[m] = yp[m] + nf_next[m];
            }
            let f1 = spec.f.eval(&xa, &ya);
            let g1 = spec.g.eval(&xa, &ya);
            for m in 0..ds {
                xp[m] = ks.exp[m] * x[m] + ks.w0[m] * f0[m] + ks.w1[m] * f1[m];
            }
            for m in 0..df {
                yp[m] = kf.exp[m] * y[m] + kf.w0[m] * g0[m] + kf.w1[m] * g1[m];
            }
        }
        check_finite(t1, &xp)?;
        check_finite(t1, &yp)?;
        slow.row_mut(j + 1).copy_from_slice(&xp);
        fast.row_mut(j + 1).copy_from_slice(&yp);
        ns_cur = ns_next;
        nf_cur = nf_next;
    }
    Ok(Trajectory {
        grid,
        slow,
        fast,
        tag: form.tag(),
    })
}

/// Integrates the slow-fast random system forward on `[0, horizon]`.
pub fn integrate_forward(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    forward_engine(spec, Form::Eps(eps), noise, x0, y0, horizon, dt)
}

/// Integrates the time-rescaled system. Positive horizons march forward;
/// negative horizons return the tempered backward orbit on `[horizon, 0]`.
pub fn integrate_scaled(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if horizon > 0.0 {
        forward_engine(spec, Form::Scaled(eps), noise, x0, y0, horizon, dt)
    } else {
        let cfg = crate::lp::WeightedNormConfig::for_spec(spec, -horizon, dt, 1e-10, 200, 1e-6)?;
        let orbit = crate::lp::solve_orbit(spec, Form::Scaled(eps), noise, x0, &cfg)?;
        Ok(orbit.trajectory)
    }
}

/// Integrates the critical system (`Scaled(0)`): the slow component is
/// frozen and `Y^0` follows `dY = BY + g(X_0 + delta(0), Y + xi(t))`.
pub fn integrate_critical(
    spec: &SystemSpec,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    integrate_scaled(spec, 0.0, noise, x0, y0, horizon, dt)
}

/// Backward continuation of a base orbit on `[-T, 0]`: the slow component
/// is integrated backward from `x0` (stable), the fast component is the
/// tempered bounded continuation. When `g` depends on the fast variable the
/// tempered fast value at zero need not match `y0`; the mismatch
/// `||Y_tempered(0) - y0||` is reported instead of guessed away.
pub struct BackwardOrbit {
    pub trajectory: Trajectory,
    pub fast_mismatch_at_zero: f64,
    pub iterations: usize,
    pub final_residual: f64,
}

pub fn integrate_base_backward(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
    t_horizon: f64,
    dt: f64,
) -> Result<BackwardOrbit> {
    let cfg = crate::lp::WeightedNormConfig::for_spec(spec, t_horizon, dt, 1e-10, 200, 1e-6)?;
    let orbit = crate::lp::solve_orbit(spec, Form::Eps(eps), noise, x0, &cfg)?;
    let y_end = orbit
        .trajectory
        .fast
        .row(orbit.trajectory.grid.n_points - 1);
    let mismatch = y_end
        .iter()
        .zip(y0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(BackwardOrbit {
        fast_mismatch_at_zero: mismatch,
        iterations: orbit.stats.iterations,
        final_residual: orbit.stats.reported_residual(),
        trajectory: orbit.trajectory,
    })
}

/// Solves the difference system `(U, V)` of two orbits through the base
/// point, given the base backward orbit, with `U(0) = u0`. Returns the
/// solved `(U, V)` trajectory (the fixed point delegates to [`crate::lp`]).
pub fn integrate_difference(
    spec: &SystemSpec,
    eps: f64,
    noise: &NoiseRealization,
    base: &Trajectory,
    u0: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    let t_horizon = -base.grid.t_min;
    let cfg = crate::lp::WeightedNormConfig::for_spec(spec, t_horizon, dt, 1e-10, 200, 1e-6)?;
    let sol = crate::lp::solve_difference(spec, Form::Eps(eps), noise, base, u0, &cfg)?;
    Ok(sol.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::noise::NoiseRealization;

    fn quiet_noise(spec: &SystemSpec, eps: f64, lo: f64, hi: f64, dt: f64) -> NoiseRealization {
        let grid = TimeGrid::new(lo, hi, dt).unwrap();
        NoiseRealization::generate(spec, eps, &grid, 7).unwrap()
    }

    #[test]
    fn linear_forward_is_exact() {
        // f = g = 0, sigma = 0, scalar a = 1: X(t) = X0 e^t to rounding.
        let spec = builtin::linear_scalar_system(1.0, -1.0, 0.0, 0.0);
        let noise = quiet_noise(&spec, 0.5, 0.0, 1.0, 0.05);
        let traj = integrate_forward(&spec, 0.5, &noise, &[1.0], &[1.0], 1.0, 0.05).unwrap();
        let (x, y) = traj.end_state();
        assert!((x[0] - 1f64.exp()).abs() / 1f64.exp() < 1e-10);
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn motivating_forward_matches_closed_form() {
        // a = 1, b = -1, g = x^2, f = 0, sigma1 = 0: closed-form Y at
        // eps = 0.5, dt = 1e-3.
        let spec = builtin::motivating_system().unwrap();
        let eps = 0.5;
        let (x0, y0, t_end) = (1.0, 1.0, 0.5);
        let noise = quiet_noise(&spec, eps, 0.0, t_end, 1e-3);
        let traj = integrate_forward(&spec, eps, &noise, &[x0], &[y0], t_end, 1e-3).unwrap();
        let (x, y) = traj.end_state();
        let (xo, yo) = builtin::oracle_motivating_forward(eps, t_end, x0, y0);
        assert!((x[0] - xo).abs() < 1e-9, "slow error {}", (x[0] - xo).abs());
        assert!((y[0] - yo).abs() < 1e-6, "fast error {}", (y[0] - yo).abs());
    }

    #[test]
    fn self_convergence_under_dt_halving() {
        // Halving dt changes the endpoint by O(dt): the coarse-to-fine error
        // must shrink by at least ~2x per halving.
        let spec = builtin::motivating_system().unwrap();
        let eps = 0.5;
        let err_at = |dt: f64| {
            let noise = quiet_noise(&spec, eps, 0.0, 1.0, dt);
            let traj = integrate_forward(&spec, eps, &noise, &[1.0], &[0.5], 1.0, dt).unwrap();
            let (_, y) = traj.end_state();
            let (_, yo) = builtin::oracle_motivating_forward(eps, 1.0, 1.0, 0.5);
            (y[0] - yo).abs()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        assert!(
            e2 > 0.0 && e1 / e2 > 1.8,
            "ratio {} (e1={e1}, e2={e2})",
            e1 / e2
        );
    }

    #[test]
    fn critical_forward_matches_closed_form() {
        let spec = builtin::motivating_system().unwrap();
        let noise = quiet_noise(&spec, 0.1, 0.0, 2.0, 1e-3);
        let (x0, y0) = (1.2, 0.3);
        let traj = integrate_critical(&spec, &noise, &[x0], &[y0], 2.0, 1e-3).unwrap();
        let (x, y) = traj.end_state();
        assert!((x[0] - x0).abs() < 1e-14, "X^0 is frozen");
        let yo = builtin::oracle_motivating_critical_orbit(2.0, x0, y0);
        assert!((y[0] - yo).abs() < 1e-6, "error {}", (y[0] - yo).abs());
    }

    #[test]
    fn critical_linear_decay_is_exact() {
        // g = 0, sigma2 = 0, scalar b = -1: Y^0(t) = e^{-t} Y0 exactly.
        let spec = builtin::linear_scalar_system(1.0, -1.0, 0.0, 0.0);
        let noise = quiet_noise(&spec, 0.1, 0.0, 1.0, 0.1);
        let traj = integrate_critical(&spec, &noise, &[0.0], &[2.0], 1.0, 0.1).unwrap();
        let (_, y) = traj.end_state();
        assert!((y[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn critical_orbit_approaches_x0_squared() {
        let spec = builtin::motivating_system().unwrap();
        let noise = quiet_noise(&spec, 0.1, 0.0, 12.0, 1e-2);
        let (x0, y0) = (1.5, -0.7);
        let traj = integrate_critical(&spec, &noise, &[x0], &[y0], 12.0, 1e-2).unwrap();
        let (_, y) = traj.end_state();
        let envelope = (y0 - x0 * x0).abs() * (-12.0f64).exp() + 1e-6;
        assert!((y[0] - x0 * x0).abs() < 2.0 * envelope + 1e-4);
    }

    #[test]
    fn scaled_at_zero_eps_equals_critical() {
        let spec = builtin::fhn_like_system(1, 2).unwrap();
        let grid = TimeGrid::new(-1.0, 2.0, 0.01).unwrap();
        let noise = NoiseRealization::generate(&spec, 1.0, &grid, 99).unwrap();
        let a = integrate_scaled(&spec, 0.0, &noise, &[0.4], &[0.1, 0.0], 2.0, 0.01).unwrap();
        let b = integrate_critical(&spec, &noise, &[0.4], &[0.1, 0.0], 2.0, 0.01).unwrap();
        for j in 0..a.grid.n_points {
            for m in 0..2 {
                assert_eq!(a.fast.row(j)[m], b.fast.row(j)[m]);
            }
            assert_eq!(a.slow.row(j)[0], b.slow.row(j)[0]);
        }
    }

    #[test]
    fn scaled_slow_component_is_exponential() {
        // f = 0: the scaled slow part X(t) = X0 e^{eps t} is kernel-exact.
        let spec = builtin::motivating_system().unwrap();
        let eps = 0.3;
        let noise = quiet_noise(&spec, eps, -1.0, 2.0, 0.01);
        let traj = integrate_scaled(&spec, eps, &noise, &[1.0], &[0.0], 2.0, 0.01).unwrap();
        let (x, _) = traj.end_state();
        assert!((x[0] - (eps * 2.0).exp()).abs() < 1e-8);
    }

    #[test]
    fn scaled_fast_matches_time_rescaled_solution() {
        // For the motivating data the rescaled fast solution equals
        // Y^eps(eps t) driven by the rescaled noise (all deterministic here).
        let spec = builtin::motivating_system().unwrap();
        let eps = 0.25;
        let (x0, y0, t_end) = (0.9, 0.4, 2.0);
        let noise = quiet_noise(&spec, eps, -1.0, t_end, 1e-3);
        let traj = integrate_scaled(&spec, eps, &noise, &[x0], &[y0], t_end, 1e-3).unwrap();
        let (_, y) = traj.end_state();
        let (_, yo) = builtin::oracle_motivating_forward(eps, eps * t_end, x0, y0);
        assert!((y[0] - yo).abs() < 1e-6, "error {}", (y[0] - yo).abs());
    }

    #[test]
    fn forward_cocycle_property() {
        // Restarting at t1 with shifted noise reproduces the long run.
        let spec = builtin::fhn_like_system(1, 2).unwrap();
        let grid = TimeGrid::new(-0.5, 1.5, 0.01).unwrap();
        let noise = NoiseRealization::generate(&spec, 0.2, &grid, 5).unwrap();
        let x0 = [0.3];
        let y0 = [0.2, -0.1];
        let full = integrate_forward(&spec, 0.2, &noise, &x0, &y0, 0.8, 0.01).unwrap();
        let (xm, ym) = full.state_at(0.4).unwrap();
        let shifted = noise.translate(0.4).unwrap();
        let tail = integrate_forward(&spec, 0.2, &shifted, xm, ym, 0.4, 0.01).unwrap();
        let (xe, ye) = full.end_state();
        let (xt, yt) = tail.end_state();
        let steps = 80.0;
        for (a, b) in xe.iter().zip(xt).chain(ye.iter().zip(yt)) {
            assert!(
                (a - b).abs() < 1e-8 * steps,
                "cocycle defect {}",
                (a - b).abs()
            );
        }
    }

    #[test]
    fn scaled_and_critical_backward_orbits_are_tempered() {
        // Motivating data: the scaled backward orbit has the closed form
        // X(t) = X0 e^{eps t}, Y(t) = X0^2 e^{2 eps t} / (1 + 2 eps); the
        // critical one freezes at Y = X0^2. Neither depends on the supplied
        // fast value (the homogeneous fast term is dropped).
        let spec = builtin::motivating_system().unwrap();
        let eps = 0.25;
        // The horizon must clear the tempered boundary layer: the zero
        // start at -T decays like e^{-gamma_f (t + T)}.
        let noise = quiet_noise(&spec, eps, -16.0, 1.0, 5e-3);
        let (x0, y0) = (1.0, 0.7);
        let traj = integrate_scaled(&spec, eps, &noise, &[x0], &[y0], -16.0, 5e-3).unwrap();
        let (xs, ys) = traj.state_at(-4.0).unwrap();
        assert!((xs[0] - x0 * (eps * -4.0f64).exp()).abs() < 1e-10);
        let y_exact = x0 * x0 * (2.0 * eps * -4.0f64).exp() / (1.0 + 2.0 * eps);
        assert!(
            (ys[0] - y_exact).abs() < 1e-6,
            "Y(-4) = {} vs {y_exact}",
            ys[0]
        );
        let (_, y_end) = traj.state_at(0.0).unwrap();
        assert!((y_end[0] - x0 * x0 / (1.0 + 2.0 * eps)).abs() < 1e-6);

        // The critical drive is constant here, so the quasi-equilibrium
        // start makes the tempered solution exact across the whole grid.
        let crit = integrate_critical(&spec, &noise, &[x0], &[y0], -16.0, 5e-3).unwrap();
        let (_, yc) = crit.state_at(-4.0).unwrap();
        assert!(
            (yc[0] - x0 * x0).abs() < 1e-9,
            "critical tempered Y = {}",
            yc[0]
        );
    }

    #[test]
    fn overflow_aborts_with_diagnostic() {
        // Strong expansion: a = 40 blows past the bound before t = 1 when
        // started large.
        let spec = builtin::linear_scalar_system(40.0, -1.0, 0.0, 0.0);
        let noise = quiet_noise(&spec, 0.5, 0.0, 1.0, 0.01);
        let res = integrate_forward(&spec, 0.5, &noise, &[1e3], &[0.0], 1.0, 0.01);
        match res {
            Err(Error::Overflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
