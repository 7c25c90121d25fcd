//! System description in diagonal spectral (Galerkin) form and the standing
//! hypothesis gate.
//!
//! A system is specified by the eigenvalue lists of the slow operator `A`
//! and fast operator `B`, two registered nonlinearities `f`, `g`, noise
//! intensities, and the dichotomy rates `gamma_s < 0 < gamma_f`:
//!
//! * H1 (dichotomy): every slow eigenvalue `a >= -gamma_s` (backward
//!   contraction) and every fast eigenvalue `b <= -gamma_f < 0`.
//! * H2 (Lipschitz): `f(0,0) = g(0,0) = 0` and both maps Lipschitz with a
//!   declared constant `K`, spot-checked by sampling.
//! * H3 (gap): `K < (-gamma_s * gamma_f) / (2 gamma_f - gamma_s)`.
//!
//! The contraction constant of the Lyapunov-Perron operator is
//! `rho = K / (-beta - gamma_s) + K / (gamma_f + eps * beta)` with
//! `beta = -gamma_s / 2`; solvers refuse to iterate when `rho >= 0.95`.

use crate::error::{Error, Result};
use crate::noise::rng;
use serde::{Deserialize, Serialize};

/// Solvers refuse to run when `rho(spec, eps)` reaches this value.
pub const RHO_LIMIT: f64 = 0.95;

/// Diagonal operator on a spectral (Galerkin) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralOperator {
    pub eigenvalues: Vec<f64>,
    pub space_dim: usize,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("operator needs at least one mode".into()));
        }
        if eigenvalues.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("non-finite eigenvalue".into()));
        }
        let space_dim = eigenvalues.len();
        Ok(Self {
            eigenvalues,
            space_dim,
        })
    }

    /// Slow role: `a >= -gamma_s` mode-wise, so `e^{At}` contracts for t <= 0.
    pub fn check_slow_role(&self, gamma_s: f64) -> Result<()> {
        for &a in &self.eigenvalues {
            if a < -gamma_s {
                return Err(Error::Hypothesis(format!(
                    "slow eigenvalue {a} violates a >= -gamma_s = {}",
                    -gamma_s
                )));
            }
        }
        Ok(())
    }

    /// Fast role: `b <= -gamma_f < 0` mode-wise.
    pub fn check_fast_role(&self, gamma_f: f64) -> Result<()> {
        for &b in &self.eigenvalues {
            if b > -gamma_f {
                return Err(Error::Hypothesis(format!(
                    "fast eigenvalue {b} violates b <= -gamma_f = {}",
                    -gamma_f
                )));
            }
        }
        Ok(())
    }
}

/// Which input field a pointwise primitive reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldArg {
    Slow,
    Fast,
}

/// Built-in nonlinearity registry.
///
/// `ScaledCos` evaluates `c (cos u - 1)` rather than `c cos u`: subtracting
/// the constant restores `g(0,0) = 0` while leaving the derivative, the
/// Lipschitz constant and every orbit-difference quantity unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NonlinKind {
    Zero,
    ScaledSin {
        coeff: f64,
        arg: FieldArg,
    },
    ScaledCos {
        coeff: f64,
        arg: FieldArg,
    },
    /// `c x^2` on the slow field; only locally Lipschitz, requires a box
    /// radius and enters the gate with a warning.
    QuadraticSlow {
        coeff: f64,
    },
    Linear {
        cx: f64,
        cy: f64,
    },
    Composite(Vec<NonlinKind>),
}

impl NonlinKind {
    fn scalar_eval(&self, x: f64, y: f64) -> f64 {
        match self {
            NonlinKind::Zero => 0.0,
            NonlinKind::ScaledSin { coeff, arg } => {
                coeff * (if *arg == FieldArg::Slow { x } else { y }).sin()
            }
            NonlinKind::ScaledCos { coeff, arg } => {
                coeff * ((if *arg == FieldArg::Slow { x } else { y }).cos() - 1.0)
            }
            NonlinKind::QuadraticSlow { coeff } => coeff * x * x,
            NonlinKind::Linear { cx, cy } => cx * x + cy * y,
            NonlinKind::Composite(terms) => terms.iter().map(|t| t.scalar_eval(x, y)).sum(),
        }
    }

    /// Partial derivative with respect to the slow field, evaluated at (x, y).
    fn scalar_dx(&self, x: f64, _y: f64) -> f64 {
        match self {
            NonlinKind::Zero => 0.0,
            NonlinKind::ScaledSin { coeff, arg } => match arg {
                FieldArg::Slow => coeff * x.cos(),
                FieldArg::Fast => 0.0,
            },
            NonlinKind::ScaledCos { coeff, arg } => match arg {
                FieldArg::Slow => -coeff * x.sin(),
                FieldArg::Fast => 0.0,
            },
            NonlinKind::QuadraticSlow { coeff } => 2.0 * coeff * x,
            NonlinKind::Linear { cx, .. } => *cx,
            NonlinKind::Composite(terms) => terms.iter().map(|t| t.scalar_dx(x, _y)).sum(),
        }
    }

    /// Partial derivative with respect to the fast field.
    fn scalar_dy(&self, _x: f64, y: f64) -> f64 {
        match self {
            NonlinKind::Zero => 0.0,
            NonlinKind::ScaledSin { coeff, arg } => match arg {
                FieldArg::Slow => 0.0,
                FieldArg::Fast => coeff * y.cos(),
            },
            NonlinKind::ScaledCos { coeff, arg } => match arg {
                FieldArg::Slow => 0.0,
                FieldArg::Fast => -coeff * y.sin(),
            },
            NonlinKind::QuadraticSlow { .. } => 0.0,
            NonlinKind::Linear { cy, .. } => *cy,
            NonlinKind::Composite(terms) => terms.iter().map(|t| t.scalar_dy(_x, y)).sum(),
        }
    }

    fn is_local(&self) -> bool {
        match self {
            NonlinKind::QuadraticSlow { .. } => true,
            NonlinKind::Composite(terms) => terms.iter().any(|t| t.is_local()),
            _ => false,
        }
    }
}

/// How coefficient vectors are turned into field values for `f`, `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Componentwise on coefficient vectors. Any field the kind reads must
    /// have the same dimension as the output space.
    Pointwise,
    /// Pseudo-spectral on the sine basis `sin(k xi)` over `[0, pi]` with a
    /// dealiased quadrature grid: synthesize fields at the nodes, apply the
    /// scalar function pointwise, project back onto the output modes.
    SpectralSine,
}

/// Precomputed sine-basis tables for pseudo-spectral evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SineBasis {
    /// `synth_slow[m][k] = sin((k+1) xi_m)` over slow modes.
    synth_slow: Vec<Vec<f64>>,
    synth_fast: Vec<Vec<f64>>,
    /// `analyze[k][m] = 2/(M+1) sin((k+1) xi_m)` onto output modes.
    analyze: Vec<Vec<f64>>,
}

impl SineBasis {
    fn build(dim_slow: usize, dim_fast: usize, dim_out: usize) -> Self {
        let k_max = dim_slow.max(dim_fast).max(dim_out);
        // 2x dealiasing grid.
        let m_quad = 2 * k_max + 1;
        let node = |m: usize| std::f64::consts::PI * (m + 1) as f64 / (m_quad + 1) as f64;
        let synth = |modes: usize| -> Vec<Vec<f64>> {
            (0..m_quad)
                .map(|m| {
                    (0..modes)
                        .map(|k| ((k + 1) as f64 * node(m)).sin())
                        .collect()
                })
                .collect()
        };
        // DST-I orthogonality gives the exact projection weight 2/(M+1).
        let weight = 2.0 / (m_quad + 1) as f64;
        let analyze = (0..dim_out)
            .map(|k| {
                (0..m_quad)
                    .map(|m| weight * ((k + 1) as f64 * node(m)).sin())
                    .collect()
            })
            .collect();
        SineBasis {
            synth_slow: synth(dim_slow),
            synth_fast: synth(dim_fast),
            analyze,
        }
    }

    fn synthesize(table: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
        table
            .iter()
            .map(|row| row.iter().zip(coeffs).map(|(s, c)| s * c).sum())
            .collect()
    }

    fn project(&self, field: &[f64]) -> Vec<f64> {
        self.analyze
            .iter()
            .map(|row| row.iter().zip(field).map(|(a, w)| a * w).sum())
            .collect()
    }
}

/// A registered nonlinearity together with its declared analytic metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    pub kind: NonlinKind,
    /// Declared Lipschitz constant, spot-checked by the gate.
    pub declared_lipschitz: f64,
    /// `Some(C)` when the map is bounded by `C` (needed by the bounded-`f`
    /// convergence studies).
    pub bounded: Option<f64>,
    /// Box radius for locally Lipschitz kinds; the gate refuses local kinds
    /// without one.
    pub box_radius: Option<f64>,
    pub mode: EvalMode,
    dim_slow: usize,
    dim_fast: usize,
    dim_out: usize,
    basis: Option<SineBasis>,
}

impl Nonlinearity {
    pub fn zero() -> NonlinSpec {
        NonlinSpec {
            kind: NonlinKind::Zero,
            declared_lipschitz: 0.0,
            bounded: Some(0.0),
            box_radius: None,
            mode: EvalMode::Pointwise,
        }
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NonlinKind::Zero)
    }

    pub fn is_local(&self) -> bool {
        self.kind.is_local()
    }

    /// Evaluate into the output space.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim_slow);
        debug_assert_eq!(y.len(), self.dim_fast);
        if self.is_zero() {
            return vec![0.0; self.dim_out];
        }
        match self.mode {
            EvalMode::Pointwise => (0..self.dim_out)
                .map(|i| {
                    let xi = if self.dim_slow == self.dim_out {
                        x[i]
                    } else {
                        0.0
                    };
                    let yi = if self.dim_fast == self.dim_out {
                        y[i]
                    } else {
                        0.0
                    };
                    self.kind.scalar_eval(xi, yi)
                })
                .collect(),
            EvalMode::SpectralSine => {
                let basis = self.basis.as_ref().expect("basis built at construction");
                let fx = SineBasis::synthesize(&basis.synth_slow, x);
                let fy = SineBasis::synthesize(&basis.synth_fast, y);
                let field: Vec<f64> = fx
                    .iter()
                    .zip(&fy)
                    .map(|(&a, &b)| self.kind.scalar_eval(a, b))
                    .collect();
                basis.project(&field)
            }
        }
    }

    /// Directional derivative `(d/dx)[u]` at `(x, y)`.
    pub fn dir_deriv_slow(&self, x: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
        if self.is_zero() {
            return vec![0.0; self.dim_out];
        }
        match self.mode {
            EvalMode::Pointwise => (0..self.dim_out)
                .map(|i| {
                    let xi = if self.dim_slow == self.dim_out {
                        x[i]
                    } else {
                        0.0
                    };
                    let yi = if self.dim_fast == self.dim_out {
                        y[i]
                    } else {
                        0.0
                    };
                    let ui = if self.dim_slow == self.dim_out {
                        u[i]
                    } else {
                        0.0
                    };
                    self.kind.scalar_dx(xi, yi) * ui
                })
                .collect(),
            EvalMode::SpectralSine => {
                let basis = self.basis.as_ref().unwrap();
                let fx = SineBasis::synthesize(&basis.synth_slow, x);
                let fy = SineBasis::synthesize(&basis.synth_fast, y);
                let fu = SineBasis::synthesize(&basis.synth_slow, u);
                let field: Vec<f64> = fx
                    .iter()
                    .zip(&fy)
                    .zip(&fu)
                    .map(|((&a, &b), &du)| self.kind.scalar_dx(a, b) * du)
                    .collect();
                basis.project(&field)
            }
        }
    }

    /// Directional derivative `(d/dy)[v]` at `(x, y)`.
    pub fn dir_deriv_fast(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        if self.is_zero() {
            return vec![0.0; self.dim_out];
        }
        match self.mode {
            EvalMode::Pointwise => (0..self.dim_out)
                .map(|i| {
                    let xi = if self.dim_slow == self.dim_out {
                        x[i]
                    } else {
                        0.0
                    };
                    let yi = if self.dim_fast == self.dim_out {
                        y[i]
                    } else {
                        0.0
                    };
                    let vi = if self.dim_fast == self.dim_out {
                        v[i]
                    } else {
                        0.0
                    };
                    self.kind.scalar_dy(xi, yi) * vi
                })
                .collect(),
            EvalMode::SpectralSine => {
                let basis = self.basis.as_ref().unwrap();
                let fx = SineBasis::synthesize(&basis.synth_slow, x);
                let fy = SineBasis::synthesize(&basis.synth_fast, y);
                let fv = SineBasis::synthesize(&basis.synth_fast, v);
                let field: Vec<f64> = fx
                    .iter()
                    .zip(&fy)
                    .zip(&fv)
                    .map(|((&a, &b), &dv)| self.kind.scalar_dy(a, b) * dv)
                    .collect();
                basis.project(&field)
            }
        }
    }
}

/// Declaration of a nonlinearity before dimensions are bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinSpec {
    pub kind: NonlinKind,
    pub declared_lipschitz: f64,
    pub bounded: Option<f64>,
    pub box_radius: Option<f64>,
    pub mode: EvalMode,
}

impl NonlinSpec {
    fn bind(self, dim_slow: usize, dim_fast: usize, dim_out: usize) -> Result<Nonlinearity> {
        if !self.declared_lipschitz.is_finite() || self.declared_lipschitz < 0.0 {
            return Err(Error::Config(format!(
                "declared Lipschitz constant must be finite and >= 0, got {}",
                self.declared_lipschitz
            )));
        }
        check_kind_finite(&self.kind)?;
        if self.mode == EvalMode::Pointwise && !matches!(self.kind, NonlinKind::Zero) {
            let reads_slow = kind_reads_slow(&self.kind);
            let reads_fast = kind_reads_fast(&self.kind);
            if reads_slow && dim_slow != dim_out {
                return Err(Error::Config(format!(
                    "pointwise kind reads the slow field but dim_slow = {dim_slow} != dim_out = {dim_out}"
                )));
            }
            if reads_fast && dim_fast != dim_out {
                return Err(Error::Config(format!(
                    "pointwise kind reads the fast field but dim_fast = {dim_fast} != dim_out = {dim_out}"
                )));
            }
        }
        if self.kind.is_local() && self.box_radius.is_none() {
            return Err(Error::Config(
                "locally Lipschitz kind requires an explicit box_radius".into(),
            ));
        }
        let basis = match self.mode {
            EvalMode::SpectralSine => Some(SineBasis::build(dim_slow, dim_fast, dim_out)),
            EvalMode::Pointwise => None,
        };
        Ok(Nonlinearity {
            kind: self.kind,
            declared_lipschitz: self.declared_lipschitz,
            bounded: self.bounded,
            box_radius: self.box_radius,
            mode: self.mode,
            dim_slow,
            dim_fast,
            dim_out,
            basis,
        })
    }
}

fn check_kind_finite(kind: &NonlinKind) -> Result<()> {
    let bad = |c: f64| !c.is_finite();
    let err = || Error::Config("non-finite coefficient in nonlinearity".into());
    match kind {
        NonlinKind::Zero => Ok(()),
        NonlinKind::ScaledSin { coeff, .. } | NonlinKind::ScaledCos { coeff, .. } => {
            if bad(*coeff) {
                Err(err())
            } else {
                Ok(())
            }
        }
        NonlinKind::QuadraticSlow { coeff } => {
            if bad(*coeff) {
                Err(err())
            } else {
                Ok(())
            }
        }
        NonlinKind::Linear { cx, cy } => {
            if bad(*cx) || bad(*cy) {
                Err(err())
            } else {
                Ok(())
            }
        }
        NonlinKind::Composite(terms) => {
            for t in terms {
                check_kind_finite(t)?;
            }
            Ok(())
        }
    }
}

fn kind_reads_slow(kind: &NonlinKind) -> bool {
    match kind {
        NonlinKind::Zero => false,
        NonlinKind::ScaledSin { arg, .. } | NonlinKind::ScaledCos { arg, .. } => {
            *arg == FieldArg::Slow
        }
        NonlinKind::QuadraticSlow { .. } => true,
        NonlinKind::Linear { cx, .. } => *cx != 0.0,
        NonlinKind::Composite(terms) => terms.iter().any(kind_reads_slow),
    }
}

fn kind_reads_fast(kind: &NonlinKind) -> bool {
    match kind {
        NonlinKind::Zero => false,
        NonlinKind::ScaledSin { arg, .. } | NonlinKind::ScaledCos { arg, .. } => {
            *arg == FieldArg::Fast
        }
        NonlinKind::QuadraticSlow { .. } => false,
        NonlinKind::Linear { cy, .. } => *cy != 0.0,
        NonlinKind::Composite(terms) => terms.iter().any(kind_reads_fast),
    }
}

/// Complete slow-fast system description. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub slow_op: SpectralOperator,
    pub fast_op: SpectralOperator,
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    pub sigma1: f64,
    pub sigma2: f64,
    pub gamma_s: f64,
    pub gamma_f: f64,
}

impl SystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        slow_op: SpectralOperator,
        fast_op: SpectralOperator,
        f: NonlinSpec,
        g: NonlinSpec,
        sigma1: f64,
        sigma2: f64,
        gamma_s: f64,
        gamma_f: f64,
    ) -> Result<Self> {
        if !(gamma_s < 0.0 && gamma_f > 0.0) {
            return Err(Error::Hypothesis(format!(
                "need gamma_s < 0 < gamma_f, got gamma_s = {gamma_s}, gamma_f = {gamma_f}"
            )));
        }
        if !(sigma1 >= 0.0 && sigma2 >= 0.0) || !sigma1.is_finite() || !sigma2.is_finite() {
            return Err(Error::Config(format!(
                "noise intensities must be finite and >= 0, got {sigma1}, {sigma2}"
            )));
        }
        slow_op.check_slow_role(gamma_s)?;
        fast_op.check_fast_role(gamma_f)?;
        let ds = slow_op.space_dim;
        let df = fast_op.space_dim;
        let f = f.bind(ds, df, ds)?;
        let g = g.bind(ds, df, df)?;
        let spec = Self {
            slow_op,
            fast_op,
            f,
            g,
            sigma1,
            sigma2,
            gamma_s,
            gamma_f,
        };
        // H2 requires f(0,0) = 0 and g(0,0) = 0 exactly.
        let zx = vec![0.0; ds];
        let zy = vec![0.0; df];
        if spec.f.eval(&zx, &zy).iter().any(|v| *v != 0.0)
            || spec.g.eval(&zx, &zy).iter().any(|v| *v != 0.0)
        {
            return Err(Error::Hypothesis(
                "nonlinearity does not vanish at the origin".into(),
            ));
        }
        Ok(spec)
    }

    pub fn dim_slow(&self) -> usize {
        self.slow_op.space_dim
    }

    pub fn dim_fast(&self) -> usize {
        self.fast_op.space_dim
    }

    /// Shared Lipschitz constant of the pair (f, g).
    pub fn lipschitz(&self) -> f64 {
        self.f.declared_lipschitz.max(self.g.declared_lipschitz)
    }

    /// `beta = -gamma_s / 2 > 0`, the weight of the backward spaces.
    pub fn beta(&self) -> f64 {
        -self.gamma_s / 2.0
    }

    /// Spectral gap bound of H3: `(-gamma_s gamma_f) / (2 gamma_f - gamma_s)`.
    pub fn gap_bound(&self) -> f64 {
        (-self.gamma_s * self.gamma_f) / (2.0 * self.gamma_f - self.gamma_s)
    }

    /// Limit of `rho` as `eps -> 0+`.
    pub fn rho_zero_limit(&self) -> f64 {
        let beta = self.beta();
        let k = self.lipschitz();
        k / (-beta - self.gamma_s) + k / self.gamma_f
    }
}

/// Contraction constant of the Lyapunov-Perron operator,
/// `rho = K / (-beta - gamma_s) + K / (gamma_f + eps beta)`.
pub fn rho(spec: &SystemSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho requires eps > 0, got {eps}"
        )));
    }
    let beta = spec.beta();
    let k = spec.lipschitz();
    Ok(k / (-beta - spec.gamma_s) + k / (spec.gamma_f + eps * beta))
}

/// Gate used by every solver: returns `rho(spec, eps)` when it is below
/// [`RHO_LIMIT`], otherwise refuses with a diagnostic.
pub fn contraction_gate(spec: &SystemSpec, eps: f64) -> Result<f64> {
    let r = rho(spec, eps)?;
    if r >= RHO_LIMIT {
        return Err(Error::ContractionGate {
            rho: r,
            limit: RHO_LIMIT,
            eps,
        });
    }
    Ok(r)
}

/// Outcome of the standing hypothesis checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1_ok: bool,
    pub h2_ok: bool,
    pub h3_ok: bool,
    pub gap_bound: f64,
    pub beta: f64,
    /// Largest sampled difference quotient for f and g.
    pub sampled_lipschitz_f: f64,
    pub sampled_lipschitz_g: f64,
    pub warnings: Vec<String>,
    pub notes: String,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.h1_ok && self.h2_ok && self.h3_ok
    }
}

/// Sampled Lipschitz estimate over random pairs drawn from the test box.
fn sampled_lipschitz(nl: &Nonlinearity, ds: usize, df: usize, box_r: f64, pairs: usize) -> f64 {
    if nl.is_zero() {
        return 0.0;
    }
    let uniform = |seed_ctr: &mut u64| -> f64 {
        let h = rng::mix64(*seed_ctr);
        *seed_ctr = h;
        ((h >> 11) as f64 / 9_007_199_254_740_992.0) * 2.0 - 1.0
    };
    let mut ctr = 0x5eed_5eed_5eed_5eedu64;
    let mut max_q: f64 = 0.0;
    for _ in 0..pairs {
        let draw = |ctr: &mut u64, n: usize| -> Vec<f64> {
            (0..n).map(|_| box_r * uniform(ctr)).collect()
        };
        let x = draw(&mut ctr, ds);
        let y = draw(&mut ctr, df);
        let xt = draw(&mut ctr, ds);
        let yt = draw(&mut ctr, df);
        let a = nl.eval(&x, &y);
        let b = nl.eval(&xt, &yt);
        let dout = l2_dist(&a, &b);
        let din = l2_dist(&x, &xt) + l2_dist(&y, &yt);
        if din > 1e-12 {
            max_q = max_q.max(dout / din);
        }
    }
    max_q
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs the H1-H3 checks and returns a report; failures are carried in the
/// report rather than raised.
pub fn validate_hypotheses(spec: &SystemSpec) -> HypothesisReport {
    let mut warnings = Vec::new();
    let h1_ok = spec.slow_op.check_slow_role(spec.gamma_s).is_ok()
        && spec.fast_op.check_fast_role(spec.gamma_f).is_ok()
        && spec.gamma_s < 0.0
        && spec.gamma_f > 0.0;

    let ds = spec.dim_slow();
    let df = spec.dim_fast();
    let quot_tol = 1e-6;
    let pairs = 10_000;
    let box_f = spec.f.box_radius.unwrap_or(2.0);
    let box_g = spec.g.box_radius.unwrap_or(2.0);
    let lip_f = sampled_lipschitz(&spec.f, ds, df, box_f, pairs);
    let lip_g = sampled_lipschitz(&spec.g, ds, df, box_g, pairs);
    let h2_ok = lip_f <= spec.f.declared_lipschitz * (1.0 + quot_tol) + 1e-12
        && lip_g <= spec.g.declared_lipschitz * (1.0 + quot_tol) + 1e-12;

    if spec.f.is_local() {
        warnings.push(format!(
            "f is only locally Lipschitz; accepted on box radius {box_f}"
        ));
    }
    if spec.g.is_local() {
        warnings.push(format!(
            "g is only locally Lipschitz; accepted on box radius {box_g}"
        ));
    }

    let gap_bound = spec.gap_bound();
    let beta = spec.beta();
    let k = spec.lipschitz();
    let h3_ok = k < gap_bound;
    let notes = format!(
        "K = {k}, gap bound = {gap_bound:.6}, beta = {beta}, rho(eps->0) = {:.6}",
        spec.rho_zero_limit()
    );
    HypothesisReport {
        h1_ok,
        h2_ok,
        h3_ok,
        gap_bound,
        beta,
        sampled_lipschitz_f: lip_f,
        sampled_lipschitz_g: lip_g,
        warnings,
        notes,
    }
}

/// Serde-friendly description of a nonlinearity, as parsed from a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinConfig {
    /// One of `zero`, `scaled-sin`, `scaled-cos`, `quadratic-slow`,
    /// `linear`, `composite`.
    pub kind: String,
    #[serde(default)]
    pub coeff: Option<f64>,
    /// `slow` or `fast`, for kinds that read a single field.
    #[serde(default)]
    pub arg: Option<String>,
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    pub lipschitz: f64,
    #[serde(default)]
    pub bounded: Option<f64>,
    #[serde(default)]
    pub box_radius: Option<f64>,
    #[serde(default)]
    pub terms: Vec<NonlinConfig>,
}

fn parse_arg(arg: &Option<String>) -> Result<FieldArg> {
    match arg.as_deref() {
        Some("slow") => Ok(FieldArg::Slow),
        Some("fast") => Ok(FieldArg::Fast),
        other => Err(Error::Config(format!(
            "nonlinearity needs arg = \"slow\" or \"fast\", got {other:?}"
        ))),
    }
}

fn parse_kind(cfg: &NonlinConfig) -> Result<NonlinKind> {
    let coeff = cfg.coeff.unwrap_or(1.0);
    match cfg.kind.as_str() {
        "zero" => Ok(NonlinKind::Zero),
        "scaled-sin" => Ok(NonlinKind::ScaledSin {
            coeff,
            arg: parse_arg(&cfg.arg)?,
        }),
        "scaled-cos" => Ok(NonlinKind::ScaledCos {
            coeff,
            arg: parse_arg(&cfg.arg)?,
        }),
        "quadratic-slow" => Ok(NonlinKind::QuadraticSlow { coeff }),
        "linear" => Ok(NonlinKind::Linear {
            cx: cfg.cx.unwrap_or(0.0),
            cy: cfg.cy.unwrap_or(0.0),
        }),
        "composite" => {
            let terms = cfg
                .terms
                .iter()
                .map(parse_kind)
                .collect::<Result<Vec<_>>>()?;
            Ok(NonlinKind::Composite(terms))
        }
        other => Err(Error::Config(format!("unknown nonlinearity kind: {other}"))),
    }
}

impl NonlinConfig {
    pub fn to_spec(&self, mode: EvalMode) -> Result<NonlinSpec> {
        Ok(NonlinSpec {
            kind: parse_kind(self)?,
            declared_lipschitz: self.lipschitz,
            bounded: self.bounded,
            box_radius: self.box_radius,
            mode,
        })
    }
}

/// Serde-friendly description of a whole custom system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub slow_eigenvalues: Vec<f64>,
    pub fast_eigenvalues: Vec<f64>,
    pub gamma_s: f64,
    pub gamma_f: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Use pseudo-spectral sine-basis evaluation for the nonlinearities.
    #[serde(default)]
    pub spectral: bool,
    pub f: NonlinConfig,
    pub g: NonlinConfig,
}

/// Builds a [`SystemSpec`] from a parsed key-value description, enforcing
/// every role invariant.
pub fn build_system(config: &SystemConfig) -> Result<SystemSpec> {
    let mode = if config.spectral {
        EvalMode::SpectralSine
    } else {
        EvalMode::Pointwise
    };
    SystemSpec::new(
        SpectralOperator::new(config.slow_eigenvalues.clone())?,
        SpectralOperator::new(config.fast_eigenvalues.clone())?,
        config.f.to_spec(mode.clone())?,
        config.g.to_spec(mode)?,
        config.sigma1,
        config.sigma2,
        config.gamma_s,
        config.gamma_f,
    )
}
