//! Report persistence: one JSON envelope per run plus CSV tables, with file
//! names deterministic from the command and config hash.
//!
//! Everything except the `timestamp_unix` field is a pure function of
//! `(config, seed)`.

use crate::config::ResolvedRun;
use serde::Serialize;
use slowfol_core::sysspec::HypothesisReport;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct NumericsResolved {
    pub dt: f64,
    pub t_horizon: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub tail_tol: f64,
}

#[derive(Debug, Serialize)]
pub struct ReportEnvelope<T: Serialize> {
    pub command: String,
    pub schema: u32,
    pub version: String,
    /// Wall-clock seconds since the Unix epoch; the only field excluded
    /// from byte-level reproducibility.
    pub timestamp_unix: u64,
    pub config_hash: String,
    pub seed: u64,
    pub numerics: NumericsResolved,
    pub hypothesis: HypothesisReport,
    /// Whether the run's verification checks passed (None for pure
    /// computation commands).
    pub verified: Option<bool>,
    pub result: T,
}

pub fn envelope<T: Serialize>(
    run: &ResolvedRun,
    command: &str,
    verified: Option<bool>,
    result: T,
) -> ReportEnvelope<T> {
    ReportEnvelope {
        command: command.to_string(),
        schema: run.config.schema,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_hash: run.config_hash.clone(),
        seed: run.seed,
        numerics: NumericsResolved {
            dt: run.dt,
            t_horizon: run.t_horizon,
            tol: run.tol,
            max_iters: run.max_iters,
            tail_tol: run.tail_tol,
        },
        hypothesis: run.hypothesis.clone(),
        verified,
        result,
    }
}

/// Short deterministic stem: `<command>-<first 8 hash hex>`.
pub fn file_stem(command: &str, config_hash: &str) -> String {
    format!("{command}-{}", &config_hash[..8.min(config_hash.len())])
}

pub struct ReportWriter {
    dir: PathBuf,
    stem: String,
    pub written: Vec<PathBuf>,
}

impl ReportWriter {
    pub fn new(output_dir: &Path, command: &str, config_hash: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(output_dir)?;
        Ok(Self {
            dir: output_dir.to_path_buf(),
            stem: file_stem(command, config_hash),
            written: Vec::new(),
        })
    }

    pub fn write_json<T: Serialize>(
        &mut self,
        envelope: &ReportEnvelope<T>,
    ) -> std::io::Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", self.stem));
        let body = serde_json::to_string_pretty(envelope).expect("report serialization");
        let mut f = std::fs::File::create(&path)?;
        f.write_all(body.as_bytes())?;
        f.write_all(b"\n")?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Writes a CSV table. `header` names the columns, each row is
    /// formatted with shortest-round-trip floats.
    pub fn write_csv(
        &mut self,
        table: &str,
        header: &[String],
        rows: &[Vec<f64>],
    ) -> std::io::Result<PathBuf> {
        let path = self.dir.join(format!("{}-{table}.csv", self.stem));
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(&path, out)?;
        self.written.push(path.clone());
        Ok(path)
    }
}

/// Column headers `prefix_0..prefix_{n-1}`.
pub fn mode_headers(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|m| format!("{prefix}_{m}")).collect()
}
