use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use bimanual_icl::bench::TaskSpec;
use bimanual_icl::codec::Arm;
use bimanual_icl::demos::{load_dataset, read_demo};
use bimanual_icl::eval::{
    aggregate, generate_datasets, read_episode_log, report_tables, run_experiment, write_outputs, BackendKind,
    RunConfig, EPISODES_FILE, SUMMARY_FILE,
};
use bimanual_icl::gateway::Gateway;
use bimanual_icl::judge::{score_plan, JudgeMode};
use bimanual_icl::strategies::{StrategyConfig, StrategyKind};

#[derive(Parser)]
#[command(name = "bimanual-icl", version, about = "Leader-follower in-context learning for bimanual manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstration datasets.
    GenData(GenDataArgs),
    /// Run an experiment and write logs, summary and tables.
    Run(RunArgs),
    /// Re-render the tables from an episode log.
    Report(ReportArgs),
    /// Score a plan file against reference demos.
    Judge(JudgeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    Right,
    Left,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Right => Arm::Right,
            ArmArg::Left => Arm::Left,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeArg {
    Rubric,
    Llm,
}

impl From<JudgeArg> for JudgeMode {
    fn from(j: JudgeArg) -> Self {
        match j {
            JudgeArg::Rubric => JudgeMode::Rubric,
            JudgeArg::Llm => JudgeMode::Llm,
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendArg,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long)]
    timeout_secs: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Task names; repeat or comma-separate. Defaults to all built-in tasks.
    #[arg(long, value_delimiter = ',')]
    task: Vec<String>,
    /// Demonstrations per task.
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON run configuration; its keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    task: Vec<String>,
    /// sa, da, lf, debate, bon, debate+bon (or full names).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    n_demos: Option<usize>,
    #[arg(long, value_enum)]
    leader_arm: Option<ArmArg>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long, value_enum)]
    judge: Option<JudgeArg>,
    /// Datasets written by gen-data; generated on the fly when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Worker threads, 0 = all cores.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding the episode log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JudgeArgs {
    /// Plan in demonstration format: {"observation": ..., "actions": [[14 ints], ...]}.
    #[arg(long)]
    plan: PathBuf,
    /// Directory of reference demonstrations.
    #[arg(long)]
    demos: PathBuf,
    #[arg(long, value_enum, default_value = "rubric")]
    mode: JudgeArg,
    #[command(flatten)]
    backend: BackendArgs,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_config(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn apply_backend(cfg: &mut RunConfig, b: &BackendArgs) {
    cfg.backend.kind = match b.backend {
        BackendArg::Oracle => BackendKind::Oracle,
        BackendArg::Http => BackendKind::Http,
    };
    if let Some(u) = &b.endpoint {
        cfg.backend.http.url = u.clone();
    }
    if let Some(m) = &b.model {
        cfg.backend.http.model = m.clone();
    }
    if let Some(t) = b.timeout_secs {
        cfg.backend.http.timeout_secs = t;
    }
    cfg.backend.http.api_key_env = b.api_key_env.clone();
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if !args.task.is_empty() {
        cfg.tasks = args.task.clone();
    }
    if !args.strategy.is_empty() {
        cfg.strategies = args
            .strategy
            .iter()
            .map(|s| s.parse::<StrategyKind>().map(StrategyConfig::new))
            .collect::<Result<_, _>>()
            .map_err(anyhow::Error::msg)?;
    }
    for s in &mut cfg.strategies {
        if let Some(a) = args.leader_arm {
            s.leader_arm = a.into();
        }
        if let Some(n) = args.n_candidates {
            s.n_candidates = n;
        }
        if let Some(r) = args.max_retries {
            s.max_retries = r;
        }
        if let Some(j) = args.judge {
            s.judge_mode = j.into();
        }
    }
    apply_backend(&mut cfg, &args.backend);
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(n) = args.n_demos {
        cfg.n_demos = n;
    }
    if let Some(p) = args.pool_size {
        cfg.pool_size = p;
    }
    if let Some(w) = args.width {
        cfg.width = w;
    }
    if args.dataset.is_some() {
        cfg.dataset_dir = args.dataset.clone();
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if let Some(path) = &args.config {
        let mut value = serde_json::to_value(&cfg)?;
        merge(&mut value, read_config(path)?);
        cfg = serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
    }
    Ok(cfg)
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let names: Vec<String> = if args.task.is_empty() {
        TaskSpec::BUILTIN.iter().map(|s| s.to_string()).collect()
    } else {
        args.task.clone()
    };
    let tasks = names
        .iter()
        .map(|n| TaskSpec::builtin(n))
        .collect::<Result<Vec<_>, _>>()?;
    for dir in generate_datasets(&tasks, args.episodes, &args.out)? {
        println!("wrote {} demos to {}", args.episodes, dir.display());
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let (records, report) = run_experiment(&cfg)?;
    print!("{}", report_tables(&report));
    match &cfg.out {
        Some(dir) => println!("{} episodes logged to {}", records.len(), dir.join(EPISODES_FILE).display()),
        None => println!("{} episodes (no --out, nothing written)", records.len()),
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let records = read_episode_log(&args.out.join(EPISODES_FILE))?;
    let report = aggregate(&records);
    write_outputs(&args.out, &records, &report)?;
    print!("{}", report_tables(&report));
    println!("summary: {}", args.out.join(SUMMARY_FILE).display());
    Ok(())
}

fn judge(args: &JudgeArgs) -> Result<()> {
    let plan = read_demo(&args.plan)?;
    let demos = load_dataset(&args.demos)?;
    if demos.is_empty() {
        bail!("no demonstrations in {}", args.demos.display());
    }
    let mut cfg = RunConfig::default();
    apply_backend(&mut cfg, &args.backend);
    let gateway = Gateway::new(cfg.backend.build()?);
    let verdict = score_plan(&gateway, &plan.actions, &plan.observation, &demos, args.mode.into())?;
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Judge(a) => judge(a),
    }
}
