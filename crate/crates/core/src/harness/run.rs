//! Replicated experiment runs, aggregate CSV, and the run manifest.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Algo, ExperimentConfig, FullMeasTarget};
use crate::baselines;
use crate::error::{Error, Result};
use crate::fedrep::{self, GradMode};
use crate::fullmeas::{self, FullMeasProblem};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Stream};
use crate::synthetic;
use crate::table::{self, Table, CSV_SCHEMA_VERSION};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "FEDREP_LAB_THREADS";

/// Slack on the population-mode per-round contraction check.
pub const CONTRACTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Federated runs; `run.algo` picks FedRep or a baseline.
    Fed,
    FullMeas,
    NewClient,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Fed => "fed",
            Engine::FullMeas => "fullmeas",
            Engine::NewClient => "newclient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub engine: Engine,
    pub config: ExperimentConfig,
    pub replicate_seeds: Vec<u64>,
    pub wall_time_secs: f64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub csv: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub engine: Engine,
    pub config: ExperimentConfig,
    pub csv: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub wall_time_secs: f64,
}

impl RunOutcome {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Worker cap from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::config(THREADS_ENV, format!("`{v}` is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Io(e.to_string()))
}

struct ReplicateOutput {
    table: Table,
    checks: Vec<Check>,
    warnings: Vec<String>,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn fed_replicate(cfg: &ExperimentConfig, seed: u64) -> Result<ReplicateOutput> {
    let mut fc = cfg.fed.clone();
    fc.seed = seed;
    let gt = synthetic::generate_ground_truth(fc.n, fc.d, fc.k, seed)?;
    let trace = match cfg.run.algo {
        Algo::FedRep => fedrep::run_fedrep(&gt, &fc)?,
        Algo::GdGd => baselines::run_gdgd(&gt, &fc, 1, None)?,
        Algo::TenGdGd => baselines::run_gdgd(&gt, &fc, 10, None)?,
        Algo::Local => return local_replicate(&gt, &fc),
        Algo::Global => {
            let mut t = Table::new(vec!["pop_loss"]);
            t.push(vec![Some(baselines::global_model_error(&gt))]);
            return Ok(ReplicateOutput {
                table: t,
                checks: Vec::new(),
                warnings: Vec::new(),
            });
        }
    };
    let mut checks = Vec::new();
    if cfg.run.check_theorem {
        let full = fc.participants() == fc.n;
        if fc.grad_mode == GradMode::Population && full && cfg.run.algo == Algo::FedRep {
            checks.push(check(
                "contraction",
                trace.contraction_holds(CONTRACTION_TOL),
                format!(
                    "max ratio {} vs bound {}",
                    trace.max_contraction_ratio(),
                    trace.rate_bound()
                ),
            ));
        } else {
            let first = trace.records.first().map_or(f64::NAN, |r| r.dist);
            checks.push(check(
                "decreasing_trend",
                trace.final_dist() < first,
                format!("dist {first} -> {}", trace.final_dist()),
            ));
        }
    }
    Ok(ReplicateOutput {
        table: trace.table(),
        checks,
        warnings: trace.warnings.clone(),
    })
}

/// Local-only regression on the samples a client would see over the run.
fn local_replicate(gt: &synthetic::GroundTruth, fc: &fedrep::FedConfig) -> Result<ReplicateOutput> {
    let batches_per_client = match fc.data_mode {
        fedrep::DataMode::Fixed => 1,
        fedrep::DataMode::Fresh => ((fc.rounds as f64 * fc.r).ceil() as usize).max(1),
    };
    let mut t = Table::new(vec!["client", "samples", "pop_loss"]);
    for i in 0..gt.n() {
        let batches: Vec<_> = (0..batches_per_client as u64)
            .map(|c| synthetic::sample_batch(gt, i, fc.m, fc.noise_var, fc.seed, c))
            .collect::<Result<_>>()?;
        let theta = baselines::local_only_fit(&batches)?;
        let loss = 0.5 * (theta - gt.regressor(i)).norm_squared();
        t.push(vec![
            Some(i as f64),
            Some((batches_per_client * fc.m) as f64),
            Some(loss),
        ]);
    }
    Ok(ReplicateOutput {
        table: t,
        checks: Vec::new(),
        warnings: Vec::new(),
    })
}

fn fullmeas_replicate(cfg: &ExperimentConfig, seed: u64) -> Result<ReplicateOutput> {
    let s = &cfg.fullmeas;
    let (problem, v0) = match s.target {
        FullMeasTarget::Random => (
            FullMeasProblem::random(s.n, s.d, s.k, seed)?,
            fullmeas::random_orthonormal_start(s.d, s.k, seed)?,
        ),
        FullMeasTarget::Identity => (
            FullMeasProblem::identity(s.n),
            fullmeas::random_orthonormal_start(s.n, s.n, seed)?,
        ),
    };
    let r0 = linalg::qr_decompose(&v0)?.r;
    let eta = match s.eta {
        Some(e) => e,
        None => fullmeas::theorem_step_size(&problem, &r0)? * s.eta_scale,
    };
    let trace = fullmeas::run_fullmeas(&problem, &v0, eta, s.rounds)?;
    let checks = if cfg.run.check_theorem {
        trace
            .check_theorem()
            .named()
            .iter()
            .map(|&(name, ok)| check(name, ok, String::new()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(ReplicateOutput {
        table: trace.table(),
        checks,
        warnings: Vec::new(),
    })
}

/// Representation learned by a federated run, then scored on new clients.
fn newclient_replicate(cfg: &ExperimentConfig, seed: u64) -> Result<ReplicateOutput> {
    let mut fc = cfg.fed.clone();
    fc.seed = seed;
    let gt = synthetic::generate_ground_truth(fc.n, fc.d, fc.k, seed)?;
    let trace = fedrep::run_fedrep(&gt, &fc)?;
    let b_learned: &Matrix = &trace.final_state.b;
    let nc = &cfg.newclient;
    let mut t = Table::new(vec![
        "client",
        "m_new",
        "mse_fedrep",
        "mse_fedavg_style",
        "mse_local",
    ]);
    for c in 0..nc.clients {
        let client_seed = rng::derive_seed(seed, Stream::NewClient, &[c as u64]);
        let r = baselines::new_client_eval(
            &gt,
            b_learned,
            nc.m_new,
            nc.noise_var,
            client_seed,
            nc.test_size,
        )?;
        t.push(vec![
            Some(c as f64),
            Some(r.m_new as f64),
            Some(r.mse_fedrep),
            Some(r.mse_fedavg_style),
            Some(r.mse_local),
        ]);
    }
    let mut checks = Vec::new();
    if cfg.run.check_theorem && nc.clients > 0 {
        let med = |name| {
            let v: Vec<f64> = t.column(name).unwrap().into_iter().flatten().collect();
            table::median(&v)
        };
        let (fr, fa, lo) = (med("mse_fedrep"), med("mse_fedavg_style"), med("mse_local"));
        checks.push(check(
            "median_gap_vs_local",
            fr < 0.1 * lo,
            format!("median fedrep {fr} vs local {lo}"),
        ));
        checks.push(check(
            "median_gap_vs_fedavg_style",
            fr < fa,
            format!("median fedrep {fr} vs fedavg-style {fa}"),
        ));
    }
    Ok(ReplicateOutput {
        table: t,
        checks,
        warnings: trace.warnings,
    })
}

fn opt_cell(v: Option<u64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn assemble_csv(algo: &str, tables: &[(u64, Table)], with_median: bool) -> String {
    let columns = &tables[0].1.columns;
    let mut out = format!(
        "schema_version,algo,block,replicate,seed,{}\n",
        columns.join(",")
    );
    let mut line = |block: &str, rep: Option<u64>, seed: Option<u64>, row: &[Option<f64>]| {
        let cells: Vec<String> = row.iter().map(|&c| table::cell(c)).collect();
        out.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{algo},{block},{},{},{}\n",
            opt_cell(rep),
            opt_cell(seed),
            cells.join(",")
        ));
    };
    for (i, (seed, t)) in tables.iter().enumerate() {
        for row in &t.rows {
            line("replicate", Some(i as u64), Some(*seed), row);
        }
    }
    let refs: Vec<&Table> = tables.iter().map(|(_, t)| t).collect();
    let mut blocks: Vec<(&str, Vec<Vec<Option<f64>>>)> = vec![
        ("mean", table::cellwise(&refs, table::mean)),
        ("std", table::cellwise(&refs, table::std_dev)),
    ];
    if with_median {
        blocks.push(("median", table::cellwise(&refs, table::median)));
    }
    for (name, rows) in blocks {
        for row in &rows {
            line(name, None, None, row);
        }
    }
    out
}

/// Runs every replicate of `cfg` on a pool of `threads` workers and assembles
/// the aggregate CSV. The CSV does not depend on the worker count.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    engine: Engine,
    threads: Option<usize>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let seeds: Vec<u64> = (0..cfg.run.replicates)
        .map(|i| cfg.replicate_seed(i))
        .collect();
    let pool = thread_pool(threads)?;
    let results: Vec<Result<ReplicateOutput>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| match engine {
                Engine::Fed => fed_replicate(cfg, seed),
                Engine::FullMeas => fullmeas_replicate(cfg, seed),
                Engine::NewClient => newclient_replicate(cfg, seed),
            })
            .collect()
    });

    let mut tables = Vec::with_capacity(results.len());
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    for (i, (res, &seed)) in results.into_iter().zip(&seeds).enumerate() {
        let out = res.map_err(|e| Error::Replicate {
            replicate: i,
            source: Box::new(e),
        })?;
        for c in out.checks {
            checks.push(Check {
                name: format!("replicate{i}.{}", c.name),
                ..c
            });
        }
        warnings.extend(
            out.warnings
                .into_iter()
                .map(|w| format!("replicate {i}: {w}")),
        );
        tables.push((seed, out.table));
    }
    let algo = match engine {
        Engine::Fed => cfg.run.algo.as_str(),
        Engine::FullMeas => "fullmeas",
        Engine::NewClient => "newclient",
    };
    let csv = assemble_csv(algo, &tables, engine == Engine::NewClient);
    Ok(RunOutcome {
        engine,
        config: cfg.clone(),
        csv,
        checks,
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes the CSV and its manifest atomically; returns the manifest.
pub fn write_outputs(outcome: &RunOutcome, csv_path: &Path) -> Result<RunManifest> {
    let cfg = &outcome.config;
    let manifest = RunManifest {
        schema_version: CSV_SCHEMA_VERSION,
        code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        engine: outcome.engine,
        config: cfg.clone(),
        replicate_seeds: (0..cfg.run.replicates)
            .map(|i| cfg.replicate_seed(i))
            .collect(),
        wall_time_secs: outcome.wall_time_secs,
        checks: outcome.checks.clone(),
        warnings: outcome.warnings.clone(),
        csv: csv_path.display().to_string(),
    };
    write_atomic(csv_path, outcome.csv.as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&manifest_path(csv_path), json.as_bytes())?;
    Ok(manifest)
}

/// Matplotlib script plotting the mean block of an aggregate CSV.
pub fn plot_script(csv_path: &Path, engine: Engine) -> String {
    let (x, y) = match engine {
        Engine::Fed => ("round", "dist"),
        Engine::FullMeas => ("round", "loss"),
        Engine::NewClient => ("client", "mse_fedrep"),
    };
    format!(
        r#"import csv
import matplotlib.pyplot as plt

rows = [r for r in csv.DictReader(open({path:?})) if r["block"] == "replicate"]
series = {{}}
for r in rows:
    if r["{y}"] == "":
        continue
    series.setdefault(r["replicate"], ([], []))
    series[r["replicate"]][0].append(float(r["{x}"]))
    series[r["replicate"]][1].append(float(r["{y}"]))
for rep, (xs, ys) in sorted(series.items()):
    plt.semilogy(xs, ys, label="replicate " + rep)
plt.xlabel("{x}")
plt.ylabel("{y}")
plt.legend()
plt.savefig({png:?})
"#,
        path = csv_path.display().to_string(),
        png = format!("{}.png", csv_path.display()),
    )
}
