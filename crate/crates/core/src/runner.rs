//! Executes scenario sets and writes per-run outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::metrics::{
    detect_reactions, summarize, summary_table, write_csv, MetricsError, ReactionRecord, RunMeta, Summary,
};
use crate::sim::{self, EventTrace, SimError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub dir: PathBuf,
    pub trace: EventTrace<f64>,
    pub records: Vec<ReactionRecord<f64>>,
    pub summary: Result<Summary, String>,
}

pub fn meta(cfg: &ScenarioConfig) -> RunMeta {
    RunMeta {
        scenario: cfg.scenario.clone(),
        topology: cfg.topology,
        estimator: cfg.estimator.strategy,
        report_period_ms: cfg.report_period_ms,
    }
}

fn write(path: PathBuf, contents: &str) -> Result<(), RunError> {
    fs::write(&path, contents).map_err(|source| RunError::Io { path, source })
}

/// Runs one scenario and writes `trace.tsv`, `reactions.csv`, `summary.txt`
/// and the resolved `config.toml` into `dir`.
pub fn run_one(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutcome, RunError> {
    let trace = sim::run::<f64>(cfg)?;
    let records = detect_reactions(&trace)?;
    let summary = summarize(&records).map_err(|e| e.to_string());

    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join("config.toml"), &cfg.to_toml())?;
    write(dir.join("trace.tsv"), &trace.to_text())?;
    write_csv(&records, &meta(cfg), &dir.join("reactions.csv"))?;
    let mut text = format!(
        "scenario {}\ntopology {}\nshaping {} on {}\nestimator {}\nreport period {} ms\nseed {}\n\n",
        cfg.scenario,
        cfg.topology.label(),
        cfg.shaping.kind,
        cfg.shaped_path().as_str(),
        cfg.estimator.strategy,
        cfg.report_period_ms,
        cfg.seed
    );
    text.push_str(&summary_table("run", &[(cfg.run_name(), summary.clone())]));
    write(dir.join("summary.txt"), &text)?;

    Ok(RunOutcome {
        config: cfg.clone(),
        dir: dir.to_path_buf(),
        trace,
        records,
        summary,
    })
}

pub struct MatrixReport {
    pub runs: Vec<(ScenarioConfig, Result<RunOutcome, RunError>)>,
}

impl MatrixReport {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.is_ok())
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_ok() {
            0
        } else {
            1
        }
    }

    /// Cross-run comparison: one row per run, labelled by what varies across the set.
    pub fn comparison_table(&self) -> String {
        let cfgs: Vec<&ScenarioConfig> = self.runs.iter().map(|(c, _)| c).collect();
        let varies = |f: &dyn Fn(&ScenarioConfig) -> String| {
            cfgs.iter()
                .map(|c| f(c))
                .collect::<std::collections::BTreeSet<_>>()
                .len()
                > 1
        };
        type Dim = (&'static str, Box<dyn Fn(&ScenarioConfig) -> String>);
        let dims: Vec<Dim> = vec![
            ("topology", Box::new(|c| c.topology.label().to_string())),
            ("shaping", Box::new(|c| c.shaping.kind.to_string())),
            ("path", Box::new(|c| c.shaped_path().as_str().to_string())),
            ("period", Box::new(|c| format!("{} ms", c.report_period_ms))),
            ("estimator", Box::new(|c| c.estimator.strategy.to_string())),
            ("seed", Box::new(|c| format!("seed {}", c.seed))),
            ("scenario", Box::new(|c| c.scenario.clone())),
        ];
        let used: Vec<&Dim> = dims.iter().filter(|(_, f)| varies(f.as_ref())).collect();
        let header = if used.is_empty() {
            "run".to_string()
        } else {
            used.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(" / ")
        };
        let rows: Vec<(String, Result<Summary, String>)> = self
            .runs
            .iter()
            .map(|(c, r)| {
                let label = if used.is_empty() {
                    c.run_name()
                } else {
                    used.iter().map(|(_, f)| f(c)).collect::<Vec<_>>().join(" / ")
                };
                let s = match r {
                    Ok(o) => o.summary.clone(),
                    Err(e) => Err(format!("run failed: {e}")),
                };
                (label, s)
            })
            .collect();
        summary_table(&header, &rows)
    }
}

/// Runs every config into its own directory under `out_root`, in parallel
/// when asked. Results keep the input order either way.
pub fn run_matrix(configs: &[ScenarioConfig], out_root: &Path, parallel: bool) -> MatrixReport {
    let mut names: Vec<String> = configs.iter().map(ScenarioConfig::run_name).collect();
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) || names[i + 1..].contains(&names[i]) {
            names[i] = format!("{}-{}", names[i], i);
        }
    }
    let job = |(cfg, name): (&ScenarioConfig, &String)| (cfg.clone(), run_one(cfg, &out_root.join(name)));
    let runs = if parallel {
        configs.par_iter().zip(names.par_iter()).map(job).collect()
    } else {
        configs.iter().zip(names.iter()).map(job).collect()
    };
    MatrixReport { runs }
}
