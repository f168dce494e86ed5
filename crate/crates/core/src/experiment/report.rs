use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::bench::{BenchmarkReport, ResultRow};
use super::config::ExperimentConfig;

pub const RESULTS_HEADER: &str = "estimator,ratio,relative_rmse,rmse_se,M,wall_ms";
/// Estimators shown in the DR-versus-IS comparison.
pub const FIG_DR_VS_IS: [&str; 5] = ["IS", "IS-Avg", "IS-PW", "DR", "SMRDR"];
pub const FIG_SMRDR_VS_MRDR: [&str; 2] = ["SMRDR", "MRDR"];

/// SHA-256 of the canonical JSON form of the config.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

/// `git describe --always --dirty` of the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_rows(path: &Path, rows: &[&ResultRow], timings: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        let wall = if timings { r.wall_ms } else { 0.0 };
        writeln!(
            w,
            "{},{:?},{:?},{:?},{},{:?}",
            r.estimator, r.ratio, r.relative_rmse, r.rmse_se, r.m, wall
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_replications(path: &Path, report: &BenchmarkReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ratio,replication,seed,estimator,estimate,error")?;
    for (j, &ratio) in report.ratios.iter().enumerate() {
        for (m, &seed) in report.replication_seeds[j].iter().enumerate() {
            for (name, per_ratio) in &report.estimates {
                let est = per_ratio[j][m];
                let err = est - report.truth;
                writeln!(w, "{ratio:?},{m},{seed},{name},{est:?},{err:?}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the result tables and `manifest.json` into `dir`, returning the
/// paths written.
///
/// CSV contents depend only on the config, so two runs with the same config
/// produce identical files. Timings go to the manifest unless the config
/// asks for them in the CSVs.
pub fn write_outputs(config: &ExperimentConfig, report: &BenchmarkReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let timings = config.timings_in_csv;
    let all: Vec<&ResultRow> = report.rows.iter().collect();
    let pick = |names: &[&str]| -> Vec<&ResultRow> {
        report
            .rows
            .iter()
            .filter(|r| names.contains(&r.estimator.as_str()))
            .collect()
    };
    let results = dir.join("results.csv");
    let fig1 = dir.join("fig_dr_vs_is.csv");
    let fig2 = dir.join("fig_smrdr_vs_mrdr.csv");
    let reps = dir.join("replications.csv");
    let manifest = dir.join("manifest.json");
    write_rows(&results, &all, timings)?;
    write_rows(&fig1, &pick(&FIG_DR_VS_IS), timings)?;
    write_rows(&fig2, &pick(&FIG_SMRDR_VS_MRDR), timings)?;
    write_replications(&reps, report)?;

    let timings_ms: Vec<_> = report
        .rows
        .iter()
        .map(|r| json!({"estimator": r.estimator, "ratio": r.ratio, "wall_ms": r.wall_ms}))
        .collect();
    let body = json!({
        "config": config,
        "config_hash": config_hash(config)?,
        "git": git_describe(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "replication_seeds": report.replication_seeds,
        "truth": report.truth,
        "train_size": report.train_size,
        "eval_size": report.eval_size,
        "num_classes": report.num_classes,
        "failures": report.failures,
        "total_wall_ms": report.total_wall_ms,
        "timings_ms": timings_ms,
    });
    fs::write(&manifest, serde_json::to_string_pretty(&body)?)?;
    Ok(vec![results, fig1, fig2, reps, manifest])
}
