//! Experiment runner: tasks x strategies x seeds x episodes, episode logs
//! and aggregate tables.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bench::{execute, generate_demo, spawn, BenchError, TaskSpec};
use crate::codec::BimanualAction;
use crate::demos::{load_dataset, sample_batch, write_dataset, DemoError, Demonstration};
use crate::gateway::{
    CallStats, ChatBackend, FlakyBackend, Gateway, GatewayError, HttpBackend, HttpConfig, NearestDemoOracle,
    OracleOptions,
};
use crate::par;
use crate::strategies::{run_strategy, Episode, StrategyConfig};

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Oracle,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub http: HttpConfig,
    pub oracle: OracleOptions,
    /// Unparseable answers served before each distinct request succeeds.
    pub injected_parse_failures: usize,
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, EvalError> {
        let base: Arc<dyn ChatBackend> = match self.kind {
            BackendKind::Oracle => Arc::new(NearestDemoOracle::with_options(self.oracle)),
            BackendKind::Http => Arc::new(HttpBackend::new(self.http.clone())?),
        };
        Ok(if self.injected_parse_failures > 0 {
            Arc::new(FlakyBackend::new(base, self.injected_parse_failures))
        } else {
            base
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Built-in task names.
    pub tasks: Vec<String>,
    /// Additional task definitions.
    pub task_specs: Vec<TaskSpec>,
    pub strategies: Vec<StrategyConfig>,
    pub backend: BackendConfig,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Demonstrations per prompt.
    pub n_demos: usize,
    /// Size of the generated demonstration pool per task.
    pub pool_size: usize,
    /// Per-task datasets under `<dir>/<task>/`, used instead of generation
    /// when present.
    pub dataset_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Worker threads, 0 = all cores.
    pub width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tasks: TaskSpec::BUILTIN.iter().map(|s| s.to_string()).collect(),
            task_specs: Vec::new(),
            strategies: vec![StrategyConfig::default()],
            backend: BackendConfig::default(),
            seeds: vec![0, 1, 2],
            episodes: 100,
            n_demos: 10,
            pool_size: 100,
            dataset_dir: None,
            out: None,
            width: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.n_demos == 0 {
            return bad("n_demos must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("no seeds given");
        }
        if self.strategies.is_empty() {
            return bad("no strategies given");
        }
        if self.tasks.is_empty() && self.task_specs.is_empty() {
            return bad("no tasks given");
        }
        if self.strategies.iter().any(|s| s.n_candidates == 0) {
            return bad("n_candidates must be at least 1");
        }
        if self.dataset_dir.is_none() && self.pool_size < self.n_demos {
            return Err(EvalError::Config(format!(
                "pool_size {} is smaller than n_demos {}",
                self.pool_size, self.n_demos
            )));
        }
        Ok(())
    }

    pub fn resolve_tasks(&self) -> Result<Vec<TaskSpec>, EvalError> {
        let mut tasks = Vec::new();
        for name in &self.tasks {
            match self.task_specs.iter().find(|t| &t.name == name) {
                Some(t) => tasks.push(t.clone()),
                None => tasks.push(TaskSpec::builtin(name)?),
            }
        }
        for t in &self.task_specs {
            if !tasks.iter().any(|x| x.name == t.name) {
                tasks.push(t.clone());
            }
        }
        for t in &tasks {
            t.validate()?;
        }
        Ok(tasks)
    }
}

/// Stable 64-bit seed derived from labelled parts.
pub fn derive_seed(parts: &[&dyn std::fmt::Display]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Expert demonstrations for `task` from seeds disjoint from episode seeds.
pub fn generate_pool(task: &TaskSpec, size: usize) -> Result<Vec<Demonstration>, EvalError> {
    par::map_range(size, |i| generate_demo(task, derive_seed(&[&"pool", &task.name, &i])))
        .into_iter()
        .map(|r| r.map_err(EvalError::from))
        .collect()
}

/// Writes `size` expert demos per task under `<dir>/<task>/`.
pub fn generate_datasets(tasks: &[TaskSpec], size: usize, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut written = Vec::new();
    for t in tasks {
        let pool = generate_pool(t, size)?;
        let sub = dir.join(&t.name);
        write_dataset(&sub, &pool)?;
        written.push(sub);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: String,
    pub strategy: String,
    pub seed: u64,
    pub episode: usize,
    pub success: bool,
    pub reason: String,
    pub calls: usize,
    pub prompt_chars: usize,
    pub completion_chars: usize,
    pub parse_failures: usize,
    pub wall_ms: u64,
    #[serde(default)]
    pub selected: Option<usize>,
    #[serde(default)]
    pub scores: Vec<Option<u8>>,
    pub plan: Vec<BimanualAction>,
}

struct Job<'a> {
    task: &'a TaskSpec,
    pool: &'a [Demonstration],
    strategy: &'a StrategyConfig,
    seed: u64,
    episode: usize,
}

fn run_episode(job: &Job<'_>, backend: &Arc<dyn ChatBackend>, n_demos: usize) -> Result<EpisodeRecord, EvalError> {
    let episode_seed = derive_seed(&[&"episode", &job.task.name, &job.seed, &job.episode]);
    let (world, obs) = spawn(job.task, episode_seed)?;
    let batch = sample_batch(job.pool, n_demos, derive_seed(&[&"batch", &job.task.name, &job.seed, &job.episode]))?;
    let gateway = Gateway::new(backend.clone());
    let start = Instant::now();
    let outcome = run_strategy(
        Episode {
            gateway: &gateway,
            demos: &batch,
            obs: &obs,
            seed: episode_seed,
        },
        job.strategy,
        Some(job.pool),
    );
    let wall_ms = start.elapsed().as_millis() as u64;
    let stats = CallStats::from_records(&gateway.take_records());
    let (success, reason, plan, selected, scores) = match outcome {
        Ok(plan) => {
            let r = execute(&world, &plan.actions);
            (r.success, r.reason, plan.actions, plan.provenance.selected, plan.provenance.scores)
        }
        Err(e) => {
            log::debug!("{} {} seed {} ep {}: {e}", job.task.name, job.strategy.label(), job.seed, job.episode);
            (false, e.reason_tag(), Vec::new(), None, Vec::new())
        }
    };
    Ok(EpisodeRecord {
        task: job.task.name.clone(),
        strategy: job.strategy.label(),
        seed: job.seed,
        episode: job.episode,
        success,
        reason,
        calls: stats.calls,
        prompt_chars: stats.prompt_chars,
        completion_chars: stats.completion_chars,
        parse_failures: stats.parse_failures,
        wall_ms,
        selected,
        scores,
        plan,
    })
}

fn load_pool(cfg: &RunConfig, task: &TaskSpec) -> Result<Vec<Demonstration>, EvalError> {
    if let Some(dir) = &cfg.dataset_dir {
        let sub = dir.join(&task.name);
        if sub.is_dir() {
            let pool = load_dataset(&sub)?;
            if pool.len() < cfg.n_demos {
                return Err(EvalError::Config(format!(
                    "{} holds {} demos, fewer than n_demos {}",
                    sub.display(),
                    pool.len(),
                    cfg.n_demos
                )));
            }
            return Ok(pool);
        }
        log::info!("{} not found; generating {} demos", sub.display(), cfg.pool_size);
    }
    generate_pool(task, cfg.pool_size)
}

/// All episode records, in (task, strategy, seed, episode) order.
pub fn run_episodes(cfg: &RunConfig) -> Result<Vec<EpisodeRecord>, EvalError> {
    cfg.validate()?;
    let tasks = cfg.resolve_tasks()?;
    let backend = cfg.backend.build()?;
    par::with_width(cfg.width, || {
        let pools = tasks
            .iter()
            .map(|t| load_pool(cfg, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut jobs = Vec::new();
        for (task, pool) in tasks.iter().zip(&pools) {
            for strategy in &cfg.strategies {
                for &seed in &cfg.seeds {
                    for episode in 0..cfg.episodes {
                        jobs.push(Job {
                            task,
                            pool,
                            strategy,
                            seed,
                            episode,
                        });
                    }
                }
            }
        }
        par::map(&jobs, |_, job| run_episode(job, &backend, cfg.n_demos))
            .into_iter()
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub strategy: String,
    pub episodes: usize,
    /// Success rate per seed, in percent, in seed order.
    pub seed_success: Vec<f64>,
    pub success_mean: f64,
    pub success_sd: f64,
    pub calls_mean: f64,
    pub calls_sd: f64,
    pub chars_mean: f64,
    pub chars_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub task: String,
    pub strategy: String,
    pub wall_ms_median: f64,
    pub wall_ms_q1: f64,
    pub wall_ms_q3: f64,
}

/// Deterministic part of a report, written as the machine summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<ReportRow>,
    pub timing: Vec<TimingRow>,
}

impl AggregateReport {
    pub fn summary(&self) -> Summary {
        Summary { rows: self.rows.clone() }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes") + "\n"
    }

    pub fn from_summary(summary: Summary) -> Self {
        Self {
            rows: summary.rows,
            timing: Vec::new(),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Groups records by (task, strategy) in first-appearance order.
pub fn aggregate(records: &[EpisodeRecord]) -> AggregateReport {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (r.task.clone(), r.strategy.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut report = AggregateReport::default();
    for (task, strategy) in keys {
        let group: Vec<&EpisodeRecord> = records
            .iter()
            .filter(|r| r.task == task && r.strategy == strategy)
            .collect();
        let mut seeds: Vec<u64> = Vec::new();
        for r in &group {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        let seed_success: Vec<f64> = seeds
            .iter()
            .map(|s| {
                let eps: Vec<_> = group.iter().filter(|r| r.seed == *s).collect();
                round4(100.0 * eps.iter().filter(|r| r.success).count() as f64 / eps.len() as f64)
            })
            .collect();
        let calls: Vec<f64> = group.iter().map(|r| r.calls as f64).collect();
        let chars: Vec<f64> = group
            .iter()
            .map(|r| (r.prompt_chars + r.completion_chars) as f64)
            .collect();
        let mut wall: Vec<f64> = group.iter().map(|r| r.wall_ms as f64).collect();
        wall.sort_by(f64::total_cmp);
        report.rows.push(ReportRow {
            task: task.clone(),
            strategy: strategy.clone(),
            episodes: group.len(),
            success_mean: round4(mean(&seed_success)),
            success_sd: round4(sample_sd(&seed_success)),
            seed_success,
            calls_mean: round4(mean(&calls)),
            calls_sd: round4(sample_sd(&calls)),
            chars_mean: round4(mean(&chars)),
            chars_sd: round4(sample_sd(&chars)),
        });
        report.timing.push(TimingRow {
            task,
            strategy,
            wall_ms_median: quantile(&wall, 0.5),
            wall_ms_q1: quantile(&wall, 0.25),
            wall_ms_q3: quantile(&wall, 0.75),
        });
    }
    report
}

fn ordered<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Success table (strategies x tasks plus average) followed by the cost
/// table (calls, characters, wall time per episode).
pub fn report_tables(report: &AggregateReport) -> String {
    let tasks = ordered(report.rows.iter().map(|r| r.task.clone()));
    let strategies = ordered(report.rows.iter().map(|r| r.strategy.clone()));
    let mut out = String::new();

    let _ = write!(out, "{:<16}", "strategy");
    for t in &tasks {
        let _ = write!(out, " | {t:>16}");
    }
    let _ = writeln!(out, " | {:>16}", "average");
    for s in &strategies {
        let _ = write!(out, "{s:<16}");
        let mut means = Vec::new();
        for t in &tasks {
            match report.rows.iter().find(|r| &r.task == t && &r.strategy == s) {
                Some(r) => {
                    means.push(r.success_mean);
                    let _ = write!(out, " | {:>16}", format!("{:.1} ± {:.1}", r.success_mean, r.success_sd));
                }
                None => {
                    let _ = write!(out, " | {:>16}", "-");
                }
            }
        }
        let _ = writeln!(out, " | {:>16}", format!("{:.1}", mean(&means)));
    }

    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<16} | {:<16} | {:>14} | {:>20} | {:>22}",
        "task", "strategy", "calls/ep", "chars/ep", "wall ms median [IQR]"
    );
    for r in &report.rows {
        let timing = report
            .timing
            .iter()
            .find(|t| t.task == r.task && t.strategy == r.strategy)
            .map(|t| format!("{:.0} [{:.0}, {:.0}]", t.wall_ms_median, t.wall_ms_q1, t.wall_ms_q3))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<16} | {:<16} | {:>14} | {:>20} | {:>22}",
            r.task,
            r.strategy,
            format!("{:.1} ± {:.1}", r.calls_mean, r.calls_sd),
            format!("{:.0} ± {:.0}", r.chars_mean, r.chars_sd),
            timing
        );
    }
    out
}

pub fn write_episode_log(path: &Path, records: &[EpisodeRecord]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_episode_log(path: &Path) -> Result<Vec<EpisodeRecord>, EvalError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| EvalError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_summary(path: &Path) -> Result<Summary, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

/// Writes the episode log, summary, timing and rendered tables into `dir`.
pub fn write_outputs(dir: &Path, records: &[EpisodeRecord], report: &AggregateReport) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_episode_log(&dir.join(EPISODES_FILE), records)?;
    let p = dir.join(SUMMARY_FILE);
    fs::write(&p, report.summary_json()).map_err(io_err(&p))?;
    let p = dir.join(TIMING_FILE);
    fs::write(&p, serde_json::to_string_pretty(&report.timing).expect("timing serializes") + "\n").map_err(io_err(&p))?;
    let p = dir.join(REPORT_FILE);
    fs::write(&p, report_tables(report)).map_err(io_err(&p))?;
    Ok(())
}

/// Runs every episode, aggregates, and writes outputs when `cfg.out` is set.
pub fn run_experiment(cfg: &RunConfig) -> Result<(Vec<EpisodeRecord>, AggregateReport), EvalError> {
    let records = run_episodes(cfg)?;
    let report = aggregate(&records);
    if let Some(dir) = &cfg.out {
        write_outputs(dir, &records, &report)?;
    }
    Ok((records, report))
}
