//! Built-in systems and closed-form oracles.
//!
//! Two systems ship with the toolkit:
//!
//! * the scalar motivating system `dx = x dt`,
//!   `dy = (-y + x^2)/eps dt + dW2/sqrt(eps)`, whose slow fiber, slow
//!   manifold and critical fiber all have closed forms, and
//! * a FitzHugh-Nagumo-like spectral Galerkin system (`A = Id`,
//!   `B` = Dirichlet Laplacian modes `-k^2` on `[0, pi]`, `f = sin/4`,
//!   `g = (cos - 1)/4`) used for Monte-Carlo studies.
//!
//! The closed forms are registered as dimensionless evaluators independent
//! of the numerical pipeline, so solver comparisons are against analytically
//! exact values.

use crate::error::Result;
use crate::sysspec::{
    EvalMode, FieldArg, NonlinKind, NonlinSpec, Nonlinearity, SpectralOperator, SystemSpec,
};

/// Scalar motivating system: slow eigenvalue `1` (`gamma_s = -1`), fast
/// eigenvalue `-1` (`gamma_f = 1`), `f = 0`, `g = x^2` (locally Lipschitz,
/// accepted on the box `|x| <= 1/8` so the declared constant `K = 1/4`
/// clears the gap bound `1/3`), `sigma1 = 0`, `sigma2 = 1`.
pub fn motivating_system() -> Result<SystemSpec> {
    SystemSpec::new(
        SpectralOperator::new(vec![1.0])?,
        SpectralOperator::new(vec![-1.0])?,
        Nonlinearity::zero(),
        NonlinSpec {
            kind: NonlinKind::QuadraticSlow { coeff: 1.0 },
            declared_lipschitz: 0.25,
            bounded: None,
            box_radius: Some(0.125),
            mode: EvalMode::Pointwise,
        },
        0.0,
        1.0,
        -1.0,
        1.0,
    )
}

/// FitzHugh-Nagumo-like Galerkin system. Slow eigenvalues all `1`
/// (`A = Id`), fast eigenvalues `-k^2` for `k = 1..n_fast`, `K = 1/4`,
/// `sigma1 = sigma2 = 1`, `f = sin(y)/4` (bounded), `g = (cos(x) - 1)/4`,
/// both evaluated pseudo-spectrally on the sine basis.
pub fn fhn_like_system(n_slow: usize, n_fast: usize) -> Result<SystemSpec> {
    let slow = SpectralOperator::new(vec![1.0; n_slow.max(1)])?;
    let fast = SpectralOperator::new(
        (1..=n_fast.max(1))
            .map(|k| -((k * k) as f64))
            .collect::<Vec<_>>(),
    )?;
    let pi = std::f64::consts::PI;
    SystemSpec::new(
        slow,
        fast,
        NonlinSpec {
            kind: NonlinKind::ScaledSin {
                coeff: 0.25,
                arg: FieldArg::Fast,
            },
            declared_lipschitz: 0.25,
            bounded: Some(0.25 * pi.sqrt()),
            box_radius: None,
            mode: EvalMode::SpectralSine,
        },
        NonlinSpec {
            kind: NonlinKind::ScaledCos {
                coeff: 0.25,
                arg: FieldArg::Slow,
            },
            declared_lipschitz: 0.25,
            bounded: Some(0.5 * pi.sqrt()),
            box_radius: None,
            mode: EvalMode::SpectralSine,
        },
        1.0,
        1.0,
        -1.0,
        1.0,
    )
}

/// Scalar linear system `dx = a x`, `dy = b y` plus noise, zero
/// nonlinearities. `a > 0`, `b < 0`.
pub fn linear_scalar_system(a: f64, b: f64, sigma1: f64, sigma2: f64) -> SystemSpec {
    SystemSpec::new(
        SpectralOperator::new(vec![a]).unwrap(),
        SpectralOperator::new(vec![b]).unwrap(),
        Nonlinearity::zero(),
        Nonlinearity::zero(),
        sigma1,
        sigma2,
        -a,
        -b,
    )
    .expect("linear scalar system is always valid")
}

/// Scalar system with zero dynamics but a declared Lipschitz constant `k`,
/// for exercising the gap condition and the contraction constant alone.
pub fn gate_test_system(k: f64) -> SystemSpec {
    let mut g = Nonlinearity::zero();
    g.declared_lipschitz = k;
    SystemSpec::new(
        SpectralOperator::new(vec![1.0]).unwrap(),
        SpectralOperator::new(vec![-1.0]).unwrap(),
        Nonlinearity::zero(),
        g,
        0.0,
        0.0,
        -1.0,
        1.0,
    )
    .expect("gate test system is always valid")
}

/// Slow fiber of the motivating system:
/// `l^eps(zeta) = Y0 + (zeta^2 - X0^2) / (1 + 2 eps)`.
pub fn oracle_motivating_fiber(eps: f64, zeta: f64, x0: f64, y0: f64) -> f64 {
    y0 + (zeta * zeta - x0 * x0) / (1.0 + 2.0 * eps)
}

/// Slow manifold of the motivating system: `h^eps(zeta) = zeta^2 / (1 + 2 eps)`.
pub fn oracle_motivating_manifold(eps: f64, zeta: f64) -> f64 {
    zeta * zeta / (1.0 + 2.0 * eps)
}

/// Critical fiber of the motivating system: `l^0(zeta) = Y0 + zeta^2 - X0^2`.
pub fn oracle_motivating_critical(zeta: f64, x0: f64, y0: f64) -> f64 {
    y0 + zeta * zeta - x0 * x0
}

/// First-order coefficient of the fiber expansion in `eps`:
/// `l^eps = l^0 - 2 eps (zeta^2 - X0^2) + O(eps^2)`.
pub fn oracle_motivating_first_order(zeta: f64, x0: f64) -> f64 {
    -2.0 * (zeta * zeta - x0 * x0)
}

/// Forward solution of the motivating random system:
/// `X(t) = X0 e^t`, `Y(t) = Y0 e^{-t/eps} + X0^2 (e^{2t} - e^{-t/eps}) / (1 + 2 eps)`.
pub fn oracle_motivating_forward(eps: f64, t: f64, x0: f64, y0: f64) -> (f64, f64) {
    let x = x0 * t.exp();
    let decay = (-t / eps).exp();
    let y = y0 * decay + x0 * x0 * ((2.0 * t).exp() - decay) / (1.0 + 2.0 * eps);
    (x, y)
}

/// Forward solution of the motivating critical system:
/// `Y^0(t) = e^{-t} Y0 + X0^2 (1 - e^{-t})`.
pub fn oracle_motivating_critical_orbit(t: f64, x0: f64, y0: f64) -> f64 {
    let decay = (-t).exp();
    decay * y0 + x0 * x0 * (1.0 - decay)
}

/// Closed-form oracle bundle for a built-in system.
pub struct OracleSet {
    pub fiber_fn: fn(f64, f64, f64, f64) -> f64,
    pub manifold_fn: fn(f64, f64) -> f64,
    pub critical_fn: fn(f64, f64, f64) -> f64,
    pub first_order_fn: fn(f64, f64) -> f64,
    /// (slow radius, fast radius) on which oracle values stay finite.
    pub validity_box: (f64, f64),
}

/// Oracles of the motivating system.
pub fn motivating_oracles() -> OracleSet {
    OracleSet {
        fiber_fn: oracle_motivating_fiber,
        manifold_fn: oracle_motivating_manifold,
        critical_fn: oracle_motivating_critical,
        first_order_fn: oracle_motivating_first_order,
        validity_box: (10.0, 200.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysspec::validate_hypotheses;
    use proptest::prelude::*;

    #[test]
    fn motivating_rates_and_beta() {
        let spec = motivating_system().unwrap();
        assert_eq!((spec.gamma_s, spec.gamma_f), (-1.0, 1.0));
        assert_eq!(spec.beta(), 0.5);
        let report = validate_hypotheses(&spec);
        assert!(!report.warnings.is_empty(), "local Lipschitz gate warning");
    }

    #[test]
    fn fiber_oracle_values() {
        assert!((oracle_motivating_fiber(0.5, 2.0, 1.0, 0.0) - 1.5).abs() < 1e-15);
        assert!((oracle_motivating_fiber(0.1, 2.0, 1.0, 0.0) - 2.5).abs() < 1e-15);
        assert_eq!(oracle_motivating_fiber(0.37, 1.3, 1.3, 4.2), 4.2);
    }

    #[test]
    fn manifold_oracle_values() {
        assert!((oracle_motivating_manifold(0.1, 1.0) - 1.0 / 1.2).abs() < 1e-15);
        assert_eq!(oracle_motivating_manifold(0.3, 0.0), 0.0);
        assert!((oracle_motivating_manifold(0.5, 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn critical_oracle_values() {
        assert!((oracle_motivating_critical(2.0, 1.0, 0.0) - 3.0).abs() < 1e-15);
        assert_eq!(oracle_motivating_critical(1.3, 1.3, 0.7), 0.7);
        assert!((oracle_motivating_critical(0.0, 1.0, 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fhn_gate_passes_and_modes() {
        let spec = fhn_like_system(1, 3).unwrap();
        let report = validate_hypotheses(&spec);
        assert!(report.all_ok(), "K = 1/4 < 1/3");
        assert_eq!(spec.fast_op.eigenvalues, vec![-1.0, -4.0, -9.0]);
        assert_eq!(spec.beta(), 0.5);
    }

    proptest! {
        /// Fiber minus manifold is constant in zeta (oracle parallelism).
        #[test]
        fn oracle_parallelism_identity(
            idx in 0usize..100,
            x0 in -2.0f64..2.0,
            y0 in -2.0f64..2.0,
            eps in 0.01f64..0.5,
        ) {
            let zeta = -2.0 + 4.0 * (idx as f64) / 99.0;
            let lhs = oracle_motivating_fiber(eps, zeta, x0, y0)
                - oracle_motivating_manifold(eps, zeta);
            let rhs = y0 - oracle_motivating_manifold(eps, x0);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        /// Expansion remainder: fiber = critical - 2 eps (z^2 - x0^2) + r with
        /// r = 4 eps^2 (z^2 - x0^2) / (1 + 2 eps) exactly.
        #[test]
        fn oracle_expansion_remainder(
            zeta in -2.0f64..2.0,
            x0 in -2.0f64..2.0,
            eps in 0.001f64..0.5,
        ) {
            let d = zeta * zeta - x0 * x0;
            let fiber = oracle_motivating_fiber(eps, zeta, x0, 0.0);
            let crit = oracle_motivating_critical(zeta, x0, 0.0);
            let first = eps * oracle_motivating_first_order(zeta, x0);
            let remainder = fiber - crit - first;
            let exact = 4.0 * eps * eps * d / (1.0 + 2.0 * eps);
            prop_assert!((remainder - exact).abs() < 1e-12);
        }
    }
}
