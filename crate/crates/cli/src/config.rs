//! TOML run configuration: parsing, schema validation and system building.
//!
//! The config is the full provenance of a run: any unknown key is rejected,
//! the seed is mandatory, and every scale parameter referenced by the chosen
//! command is checked against the contraction gate at parse time.

use serde::{Deserialize, Serialize};
use slowfol_core::sysspec::{
    build_system, rho, validate_hypotheses, HypothesisReport, SystemConfig, SystemSpec, RHO_LIMIT,
};

/// Exit codes of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Config schema version; must be 1.
    pub schema: u32,
    /// Base seed; mandatory (may be overridden on the command line).
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Worker threads; `SLOWFOL_THREADS` overrides. Never changes output
    /// bytes, only wall time.
    #[serde(default)]
    pub threads: Option<usize>,
    pub system: SystemBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub study: StudyBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    /// `motivating` or `fhn`.
    #[serde(default)]
    pub builtin: Option<String>,
    /// Mode counts for the built-in `fhn` system.
    #[serde(default)]
    pub n_slow: Option<usize>,
    #[serde(default)]
    pub n_fast: Option<usize>,
    /// Full custom system description.
    #[serde(default)]
    pub custom: Option<SystemConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    pub dt: f64,
    /// Truncation horizon; derived from `tail_tol` and `beta` when absent.
    pub t_horizon: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub tail_tol: f64,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            t_horizon: None,
            tol: 1e-9,
            max_iters: 300,
            tail_tol: 1e-6,
        }
    }
}

/// Command-specific parameters. One permissive block; each command checks
/// the keys it needs and names missing ones.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyBlock {
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub zeta_grid: Option<Vec<Vec<f64>>>,
    pub base_slow: Option<Vec<f64>>,
    pub base_fast: Option<Vec<f64>>,
    pub replicas: Option<usize>,
    /// Flow time for the invariance check.
    pub tau: Option<f64>,
    /// Backward fit window for the rates command.
    pub t_window: Option<f64>,
    /// Explicit point pair for the rates command (fast parts optional; when
    /// absent the points are taken on the fiber).
    pub point1_slow: Option<Vec<f64>>,
    pub point1_fast: Option<Vec<f64>>,
    pub point2_slow: Option<Vec<f64>>,
    pub point2_fast: Option<Vec<f64>>,
    /// Verification threshold for parallel / invariance commands.
    pub tolerance: Option<f64>,
    /// Comparison time for noise-check.
    pub t_compare: Option<f64>,
    /// Dump the generated noise paths as CSV (noise-check).
    pub dump_paths: Option<bool>,
    /// Dump the solved backward trajectories as CSV (fiber / critical).
    pub dump_trajectories: Option<bool>,
}

/// A parsed and validated run: the config, the built system and its gate
/// report, and the resolved numerics.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub config_hash: String,
    pub spec: SystemSpec,
    pub hypothesis: HypothesisReport,
    pub seed: u64,
    pub dt: f64,
    pub t_horizon: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub tail_tol: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_spec(block: &SystemBlock) -> Result<SystemSpec, ConfigError> {
    match (&block.builtin, &block.custom) {
        (Some(name), None) => match name.as_str() {
            "motivating" => slowfol_core::builtin::motivating_system()
                .map_err(|e| ConfigError(format!("system.builtin: {e}"))),
            "fhn" => slowfol_core::builtin::fhn_like_system(
                block.n_slow.unwrap_or(1),
                block.n_fast.unwrap_or(3),
            )
            .map_err(|e| ConfigError(format!("system.builtin: {e}"))),
            other => Err(ConfigError(format!(
                "system.builtin: unknown built-in system `{other}` (motivating, fhn)"
            ))),
        },
        (None, Some(custom)) => {
            build_system(custom).map_err(|e| ConfigError(format!("system.custom: {e}")))
        }
        _ => Err(ConfigError(
            "system: exactly one of `builtin` or `custom` must be set".into(),
        )),
    }
}

/// Scale parameters the chosen command will iterate at, for the parse-time
/// contraction gate.
fn eps_in_scope(command: &str, study: &StudyBlock) -> Vec<f64> {
    let mut all = Vec::new();
    match command {
        "study-convergence" | "study-order" => {
            if let Some(list) = &study.eps_list {
                all.extend(list.iter().copied());
            }
        }
        "check" | "critical" | "expand" | "noise-check" => {
            if let Some(e) = study.eps {
                all.push(e);
            }
        }
        _ => {
            if let Some(e) = study.eps {
                all.push(e);
            }
            if let Some(list) = &study.eps_list {
                all.extend(list.iter().copied());
            }
        }
    }
    all
}

/// Parses and validates a config file for `command`.
pub fn parse_config(
    path: &std::path::Path,
    command: &str,
    seed_override: Option<u64>,
) -> Result<ResolvedRun, ConfigError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ConfigError(format!("{} is not UTF-8", path.display())))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if config.schema != 1 {
        return Err(ConfigError(format!(
            "schema: expected 1, got {}",
            config.schema
        )));
    }
    let seed = seed_override
        .or(config.seed)
        .ok_or_else(|| ConfigError("seed: a base seed is mandatory".into()))?;
    let spec = build_spec(&config.system)?;
    let hypothesis = validate_hypotheses(&spec);

    let n = &config.numerics;
    if !(n.dt > 0.0) {
        return Err(ConfigError(format!(
            "numerics.dt must be > 0, got {}",
            n.dt
        )));
    }
    if !(n.tol > 0.0) || !(n.tail_tol > 0.0) {
        return Err(ConfigError(
            "numerics.tol and numerics.tail_tol must be > 0".into(),
        ));
    }
    let beta = spec.beta();
    let t_horizon = match n.t_horizon {
        Some(t) if t > 0.0 => (t / n.dt).round() * n.dt,
        Some(t) => {
            return Err(ConfigError(format!(
                "numerics.t_horizon must be > 0, got {t}"
            )))
        }
        None => ((1.0 / n.tail_tol).ln() / beta / n.dt).ceil() * n.dt,
    };

    for eps in eps_in_scope(command, &config.study) {
        if !(eps > 0.0) {
            return Err(ConfigError(format!("study.eps: must be > 0, got {eps}")));
        }
        let r = rho(&spec, eps).map_err(|e| ConfigError(e.to_string()))?;
        if r >= RHO_LIMIT {
            return Err(ConfigError(format!(
                "study.eps = {eps}: contraction constant rho = {r:.4} >= {RHO_LIMIT}; \
                 the solvers refuse to iterate at this scale"
            )));
        }
    }

    Ok(ResolvedRun {
        config_hash: sha256_hex(&bytes),
        seed,
        dt: n.dt,
        t_horizon,
        tol: n.tol,
        max_iters: n.max_iters,
        tail_tol: n.tail_tol,
        spec,
        hypothesis,
        config,
    })
}

impl ResolvedRun {
    pub fn norm_config(&self) -> Result<slowfol_core::lp::WeightedNormConfig, ConfigError> {
        slowfol_core::lp::WeightedNormConfig::for_spec(
            &self.spec,
            self.t_horizon,
            self.dt,
            self.tol,
            self.max_iters,
            self.tail_tol,
        )
        .map_err(|e| ConfigError(e.to_string()))
    }

    /// Missing-key helper with the key path in the message.
    pub fn require<T: Clone>(&self, value: &Option<T>, key: &str) -> Result<T, ConfigError> {
        value
            .clone()
            .ok_or_else(|| ConfigError(format!("study.{key}: required by this command")))
    }
}
