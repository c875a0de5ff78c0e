//! On-disk run artifacts and the directory-level audit.
//!
//! Each run writes `run_seed<s>.csv`, `run_seed<s>.manifest.json`,
//! `run_seed<s>.log.json` and `environment_seed<s>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{FrlError, Result};
use crate::fmdp::{FactoredMdp, FlatIndex};
use crate::par::{self, Execution};
use crate::harness::audit::{coverage_audit, width_inequality_checks, width_sums, CoverageReport, FactorWidthCheck};
use crate::harness::run::{episode_regret, EpisodeRecord, RunArtifacts};
use crate::planner::{value_iteration, Policy};
use crate::trajectory::EpisodeLog;

pub const CSV_HEADER: [&str; 8] = [
    "k",
    "delta_k",
    "cum_regret",
    "T",
    "bound_psrl",
    "bound_ucrl",
    "width_sum_reward",
    "width_sum_transition",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub episodes: usize,
    pub wall_clock_seconds: f64,
    pub csv: String,
    pub log: String,
    pub environment: String,
    pub config: ExperimentConfig,
}

/// Policies and trajectories of a run, enough to replay every audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub policies: Vec<Policy>,
    pub episodes: Vec<EpisodeLog>,
    pub value_gaps: Vec<Option<f64>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FrlError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FrlError::io(path, e))
}

pub fn csv_bytes(records: &[EpisodeRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            format_float(r.delta_k),
            format_float(r.cum_regret),
            r.steps.to_string(),
            format_float(r.bound_psrl),
            format_float(r.bound_ucrl),
            format_float(r.width_sum_reward),
            format_float(r.width_sum_transition),
        ])?;
    }
    w.into_inner().map_err(|e| FrlError::Audit(e.to_string()))
}

/// Parses a run CSV back into records (without value gaps).
pub fn read_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(FrlError::Audit(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |field: &str| FrlError::Audit(format!("{}: row {} has a malformed {field}", path.display(), line + 1));
        let float = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(CSV_HEADER[i]));
        out.push(EpisodeRecord {
            k: row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("k"))?,
            delta_k: float(1)?,
            cum_regret: float(2)?,
            steps: row.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("T"))?,
            bound_psrl: float(4)?,
            bound_ucrl: float(5)?,
            width_sum_reward: float(6)?,
            width_sum_transition: float(7)?,
            value_gap: None,
        });
    }
    Ok(out)
}

/// Writes one run's artifacts into `dir`, returning the manifest path.
pub fn write_run(dir: &Path, config: &ExperimentConfig, run: &RunArtifacts) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| FrlError::io(dir, e))?;
    let seed = run.record.seed;
    let csv_name = format!("run_seed{seed}.csv");
    let log_name = format!("run_seed{seed}.log.json");
    let env_name = format!("environment_seed{seed}.json");
    let csv_path = dir.join(&csv_name);
    fs::write(&csv_path, csv_bytes(&run.record.episodes)?).map_err(|e| FrlError::io(&csv_path, e))?;
    let log = RunLog {
        seed,
        policies: run.policies.clone(),
        episodes: run.logs.clone(),
        value_gaps: run.record.episodes.iter().map(|e| e.value_gap).collect(),
    };
    write_text(&dir.join(&log_name), &serde_json::to_string(&log)?)?;
    run.environment.write_json(&dir.join(&env_name))?;
    let manifest = Manifest {
        config_hash: run.record.config_hash.clone(),
        seed,
        version: crate::VERSION.to_string(),
        episodes: run.record.episodes.len(),
        wall_clock_seconds: run.wall_clock_seconds,
        csv: csv_name,
        log: log_name,
        environment: env_name,
        config: config.clone(),
    };
    let path = dir.join(format!("run_seed{seed}.manifest.json"));
    write_text(&path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Manifest paths in `dir`, ordered by seed.
pub fn discover_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| FrlError::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FrlError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name.strip_prefix("run_seed").and_then(|r| r.strip_suffix(".manifest.json")) {
            if let Ok(seed) = seed.parse::<u64>() {
                found.push((seed, path));
            }
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub struct LoadedRun {
    pub manifest: Manifest,
    pub records: Vec<EpisodeRecord>,
    pub log: RunLog,
    pub environment: FactoredMdp,
}

pub fn load_run(manifest_path: &Path) -> Result<LoadedRun> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_str(&read_text(manifest_path)?)?;
    let records = read_csv(&dir.join(&manifest.csv))?;
    let log: RunLog = serde_json::from_str(&read_text(&dir.join(&manifest.log))?)?;
    let environment = FactoredMdp::read_json(&dir.join(&manifest.environment))?;
    Ok(LoadedRun {
        manifest,
        records,
        log,
        environment,
    })
}

/// A recorded value that disagrees with its replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub episode: usize,
    pub column: String,
    pub recorded: f64,
    pub replayed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub seed: u64,
    pub width_checks: Vec<FactorWidthCheck>,
    pub mismatches: Vec<Mismatch>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryAudit {
    pub runs: Vec<RunAudit>,
    /// Present when the runs used an optimistic agent.
    pub coverage: Option<CoverageReport>,
    pub passed: bool,
}

const REPLAY_TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= REPLAY_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Replays one run: width sums and regret against the log, and the
/// width-sum inequality for every factor.
pub fn audit_run(run: &LoadedRun) -> Result<RunAudit> {
    let cfg = &run.manifest.config;
    let env = &run.environment;
    let index = FlatIndex::new(&env.structure, cfg.cap())?;
    let logs = &run.log.episodes;
    if run.records.len() != logs.len() || run.log.policies.len() != logs.len() {
        return Err(FrlError::Audit(format!(
            "seed {}: {} CSV rows, {} logged episodes, {} policies",
            run.manifest.seed,
            run.records.len(),
            logs.len(),
            run.log.policies.len()
        )));
    }
    let mut mismatches = Vec::new();
    let mut push = |episode: usize, column: &str, recorded: f64, replayed: f64| {
        mismatches.push(Mismatch {
            episode,
            column: column.into(),
            recorded,
            replayed,
        })
    };

    if cfg.audit.width {
        let sums = width_sums(&env.structure, &index, logs, cfg.audit.delta)?;
        for (rec, (r, t)) in run.records.iter().zip(sums) {
            if !close(rec.width_sum_reward, r) {
                push(rec.k, "width_sum_reward", rec.width_sum_reward, r);
            }
            if !close(rec.width_sum_transition, t) {
                push(rec.k, "width_sum_transition", rec.width_sum_transition, t);
            }
        }
    }

    let tab = env.flatten_with(&index)?;
    let (v_star, _) = value_iteration(&tab);
    let mut cum = 0.0;
    for (rec, policy) in run.records.iter().zip(&run.log.policies) {
        let delta_k = episode_regret(&tab, policy, &v_star);
        cum += delta_k;
        if rec.delta_k != delta_k {
            push(rec.k, "delta_k", rec.delta_k, delta_k);
        }
        if rec.cum_regret != cum {
            push(rec.k, "cum_regret", rec.cum_regret, cum);
        }
    }

    let width_checks = if cfg.audit.width {
        width_inequality_checks(&env.structure, &index, logs, cfg.audit.delta)?
    } else {
        Vec::new()
    };
    let passed = mismatches.is_empty() && width_checks.iter().all(|c| c.audit.holds());
    Ok(RunAudit {
        seed: run.manifest.seed,
        width_checks,
        mismatches,
        passed,
    })
}

/// Audits every run found in `dir`.
pub fn audit_directory(dir: &Path) -> Result<DirectoryAudit> {
    let manifests = discover_runs(dir)?;
    if manifests.is_empty() {
        return Err(FrlError::Audit(format!("no runs found in {}", dir.display())));
    }
    let loaded = manifests.iter().map(|p| load_run(p)).collect::<Result<Vec<_>>>()?;
    let runs = par::map(Execution::default(), &loaded, audit_run).into_iter().collect::<Result<Vec<_>>>()?;
    let first = &loaded[0].manifest.config;
    let coverage = if first.agent.algorithm.is_ucrl() {
        let pairs: Vec<(&FactoredMdp, &[EpisodeLog])> =
            loaded.iter().map(|r| (&r.environment, r.log.episodes.as_slice())).collect();
        Some(coverage_audit(&pairs, first.agent.delta, 1.0, first.cap(), Execution::default())?)
    } else {
        None
    };
    let passed = runs.iter().all(|r| r.passed);
    Ok(DirectoryAudit { runs, coverage, passed })
}
