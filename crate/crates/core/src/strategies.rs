//! Prediction strategies: single agent, dual agent, leader-follower, arms'
//! debate, and best-of-n selection over either of the last two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Arm, BimanualAction, DiscreteAction};
use crate::demos::{sample_batch, Demonstration};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::judge::{Judge, JudgeError, JudgeMode, LlmJudge, RubricJudge};
use crate::observation::Observation;
use crate::par;
use crate::prompt::{build_follower_prompt, build_reversed_leader_prompt, build_single_prompt, ArmFilter, PromptBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingleAgent,
    DualAgent,
    LeaderFollower,
    ArmsDebate,
    BestOfN,
    DebatePlusBon,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::SingleAgent,
        StrategyKind::DualAgent,
        StrategyKind::LeaderFollower,
        StrategyKind::ArmsDebate,
        StrategyKind::BestOfN,
        StrategyKind::DebatePlusBon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SingleAgent => "single_agent",
            StrategyKind::DualAgent => "dual_agent",
            StrategyKind::LeaderFollower => "leader_follower",
            StrategyKind::ArmsDebate => "arms_debate",
            StrategyKind::BestOfN => "best_of_n",
            StrategyKind::DebatePlusBon => "debate_plus_bon",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            StrategyKind::SingleAgent => "SA",
            StrategyKind::DualAgent => "DA",
            StrategyKind::LeaderFollower => "LF",
            StrategyKind::ArmsDebate => "Debate",
            StrategyKind::BestOfN => "BoN",
            StrategyKind::DebatePlusBon => "Debate+BoN",
        }
    }

    /// Gateway calls per episode when every answer parses first time.
    pub fn call_budget(self, n_candidates: usize) -> usize {
        match self {
            StrategyKind::SingleAgent => 1,
            StrategyKind::DualAgent | StrategyKind::LeaderFollower => 2,
            StrategyKind::ArmsDebate => 4,
            StrategyKind::BestOfN => 3 * n_candidates,
            StrategyKind::DebatePlusBon => 5 * n_candidates,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        Ok(match key.as_str() {
            "single_agent" | "sa" => StrategyKind::SingleAgent,
            "dual_agent" | "da" => StrategyKind::DualAgent,
            "leader_follower" | "lf" => StrategyKind::LeaderFollower,
            "arms_debate" | "debate" => StrategyKind::ArmsDebate,
            "best_of_n" | "bon" => StrategyKind::BestOfN,
            "debate_plus_bon" | "debate_bon" | "debate__bon" => StrategyKind::DebatePlusBon,
            _ => return Err(format!("unknown strategy '{s}'")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub leader_arm: Arm,
    pub n_candidates: usize,
    pub max_retries: usize,
    /// Temperature of the plain strategies' calls.
    pub temperature: f64,
    /// Temperature of best-of-n candidate generation.
    pub candidate_temperature: f64,
    pub judge_temperature: f64,
    pub judge_mode: JudgeMode,
    /// Draw a fresh demo batch for every best-of-n candidate.
    pub resample_per_candidate: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::LeaderFollower,
            leader_arm: Arm::Right,
            n_candidates: 5,
            max_retries: 2,
            temperature: 0.0,
            candidate_temperature: 1.0,
            judge_temperature: 0.0,
            judge_mode: JudgeMode::Llm,
            resample_per_candidate: false,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn leader_is_right(&self) -> bool {
        self.leader_arm == Arm::Right
    }

    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::BestOfN | StrategyKind::DebatePlusBon => format!("{}(n={})", self.kind.short(), self.n_candidates),
            _ => self.kind.short().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: Option<StrategyKind>,
    pub tags: Vec<String>,
    /// Selected candidate and per-candidate scores for best-of-n runs.
    pub selected: Option<usize>,
    pub scores: Vec<Option<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BimanualPlan {
    pub actions: Vec<BimanualAction>,
    pub provenance: Provenance,
}

impl BimanualPlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("cannot compose an empty trajectory")]
    EmptyTrajectory,
    #[error("no demonstrations given")]
    NoDemos,
    #[error("n_candidates must be at least 1")]
    NoCandidates,
    #[error("{phase} call failed: {source}")]
    Call {
        phase: String,
        #[source]
        source: Box<GatewayError>,
    },
    #[error("all {} candidates failed; first: {}", failures.len(), failures.first().map(String::as_str).unwrap_or(""))]
    AllCandidatesFailed { failures: Vec<String> },
}

impl StrategyError {
    pub fn phase(&self) -> Option<&str> {
        match self {
            StrategyError::Call { phase, .. } => Some(phase),
            _ => None,
        }
    }

    /// Short tag for episode logs.
    pub fn reason_tag(&self) -> String {
        match self {
            StrategyError::EmptyTrajectory => "empty_trajectory".into(),
            StrategyError::NoDemos => "no_demos".into(),
            StrategyError::NoCandidates => "no_candidates".into(),
            StrategyError::AllCandidatesFailed { .. } => "all_candidates_failed".into(),
            StrategyError::Call { phase, source } => {
                let kind = match source.as_ref() {
                    GatewayError::ExhaustedRetries { .. } => "exhausted_retries",
                    GatewayError::Timeout { .. } => "timeout",
                    GatewayError::Transport { .. } => "transport",
                    GatewayError::OracleParse(_) => "oracle_parse",
                    GatewayError::Config(_) => "config",
                };
                format!("{kind}@{phase}")
            }
        }
    }
}

/// Zips leader and follower trajectories, repeating the shorter one's last
/// action. The leader fills the right slot iff `leader_is_right`.
pub fn compose(
    leader: &[DiscreteAction],
    follower: &[DiscreteAction],
    leader_is_right: bool,
) -> Result<Vec<BimanualAction>, StrategyError> {
    let (Some(&ll), Some(&fl)) = (leader.last(), follower.last()) else {
        return Err(StrategyError::EmptyTrajectory);
    };
    let len = leader.len().max(follower.len());
    Ok((0..len)
        .map(|k| {
            let l = leader.get(k).copied().unwrap_or(ll);
            let f = follower.get(k).copied().unwrap_or(fl);
            if leader_is_right {
                BimanualAction::new(l, f)
            } else {
                BimanualAction::new(f, l)
            }
        })
        .collect())
}

/// Per-episode inputs shared by all strategies.
#[derive(Clone, Copy)]
pub struct Episode<'a> {
    pub gateway: &'a Gateway,
    pub demos: &'a [Demonstration],
    pub obs: &'a Observation,
    pub seed: u64,
}

struct Caller<'a> {
    ep: Episode<'a>,
    cfg: &'a StrategyConfig,
    prefix: String,
    temperature: f64,
    seed: u64,
}

impl Caller<'_> {
    fn tag(&self, phase: &str) -> String {
        format!("{}{phase}", self.prefix)
    }

    fn call(&self, phase: &str, bundle: PromptBundle) -> Result<Vec<Vec<u8>>, StrategyError> {
        let tag = self.tag(phase);
        let arity = bundle.arm.arity();
        let req = ChatRequest::new(bundle.system_text, bundle.user_text, self.temperature, tag.clone()).with_seed(self.seed);
        self.ep
            .gateway
            .complete_parsed(&req, arity, self.cfg.max_retries)
            .map(|p| p.actions)
            .map_err(|source| StrategyError::Call { phase: tag, source: Box::new(source) })
    }

    fn arm(&self, phase: &str, bundle: PromptBundle) -> Result<Vec<DiscreteAction>, StrategyError> {
        Ok(self
            .call(phase, bundle)?
            .iter()
            .map(|r| DiscreteAction::try_from(r.iter().map(|&v| i64::from(v)).collect::<Vec<_>>()).expect("validated"))
            .collect())
    }

    fn leader_follower(&self, tags: &mut Vec<String>) -> Result<Vec<BimanualAction>, StrategyError> {
        let ep = self.ep;
        let leader_is_right = self.cfg.leader_is_right();
        let leader = self.arm("leader", build_single_prompt(ep.demos, ep.obs, self.cfg.leader_arm.into()))?;
        tags.push(self.tag("leader"));
        let follower = self.arm("follower", build_follower_prompt(ep.demos, ep.obs, &leader, leader_is_right))?;
        tags.push(self.tag("follower"));
        compose(&leader, &follower, leader_is_right)
    }

    fn debate(&self, tags: &mut Vec<String>) -> Result<Vec<BimanualAction>, StrategyError> {
        let ep = self.ep;
        let right = self.cfg.leader_is_right();
        let l1 = self.arm("r1/leader", build_single_prompt(ep.demos, ep.obs, self.cfg.leader_arm.into()))?;
        tags.push(self.tag("r1/leader"));
        let f1 = self.arm("r1/follower", build_follower_prompt(ep.demos, ep.obs, &l1, right))?;
        tags.push(self.tag("r1/follower"));
        let l2 = self.arm("r2/leader", build_reversed_leader_prompt(ep.demos, ep.obs, &f1, right))?;
        tags.push(self.tag("r2/leader"));
        let f2 = self.arm("r2/follower", build_follower_prompt(ep.demos, ep.obs, &l2, right))?;
        tags.push(self.tag("r2/follower"));
        compose(&l2, &f2, right)
    }
}

fn caller<'a>(ep: Episode<'a>, cfg: &'a StrategyConfig) -> Caller<'a> {
    Caller {
        ep,
        cfg,
        prefix: String::new(),
        temperature: cfg.temperature,
        seed: ep.seed,
    }
}

fn plan(kind: StrategyKind, actions: Vec<BimanualAction>, tags: Vec<String>) -> BimanualPlan {
    BimanualPlan {
        actions,
        provenance: Provenance {
            kind: Some(kind),
            tags,
            ..Provenance::default()
        },
    }
}

fn check_demos(ep: &Episode<'_>) -> Result<(), StrategyError> {
    if ep.demos.is_empty() {
        Err(StrategyError::NoDemos)
    } else {
        Ok(())
    }
}

/// One 14-tuple call predicting both arms.
pub fn run_single_agent(ep: Episode<'_>, cfg: &StrategyConfig) -> Result<BimanualPlan, StrategyError> {
    check_demos(&ep)?;
    let c = caller(ep, cfg);
    let rows = c.call("single", build_single_prompt(ep.demos, ep.obs, ArmFilter::Both))?;
    let actions = rows
        .iter()
        .map(|r| BimanualAction::try_from(r.iter().map(|&v| i64::from(v)).collect::<Vec<_>>()).expect("validated"))
        .collect();
    Ok(plan(StrategyKind::SingleAgent, actions, vec!["single".into()]))
}

/// Two independent single-arm calls, issued concurrently.
pub fn run_dual_agent(ep: Episode<'_>, cfg: &StrategyConfig) -> Result<BimanualPlan, StrategyError> {
    check_demos(&ep)?;
    let c = caller(ep, cfg);
    let (right, left) = par::join(
        || c.arm("right", build_single_prompt(ep.demos, ep.obs, ArmFilter::Right)),
        || c.arm("left", build_single_prompt(ep.demos, ep.obs, ArmFilter::Left)),
    );
    let actions = compose(&right?, &left?, true)?;
    Ok(plan(StrategyKind::DualAgent, actions, vec!["right".into(), "left".into()]))
}

/// Leader prediction, then the follower conditioned on it.
pub fn run_leader_follower(ep: Episode<'_>, cfg: &StrategyConfig) -> Result<BimanualPlan, StrategyError> {
    check_demos(&ep)?;
    let mut tags = Vec::new();
    let actions = caller(ep, cfg).leader_follower(&mut tags)?;
    Ok(plan(StrategyKind::LeaderFollower, actions, tags))
}

/// Two leader-follower rounds; round 2 reverses the conditioning and only
/// its predictions form the plan.
pub fn run_arms_debate(ep: Episode<'_>, cfg: &StrategyConfig) -> Result<BimanualPlan, StrategyError> {
    check_demos(&ep)?;
    let mut tags = Vec::new();
    let actions = caller(ep, cfg).debate(&mut tags)?;
    Ok(plan(StrategyKind::ArmsDebate, actions, tags))
}

fn candidate_seed(seed: u64, j: usize) -> u64 {
    seed ^ (j as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `n_candidates` plans with `debate` or leader-follower, scores
/// each with `judge`, and keeps the first highest-scoring one.
///
/// `pool` is only used with `resample_per_candidate`: candidate `j` then
/// draws its own batch of `ep.demos.len()` demos from it.
fn run_selection(
    ep: Episode<'_>,
    cfg: &StrategyConfig,
    judge: &dyn Judge,
    debate: bool,
    pool: Option<&[Demonstration]>,
) -> Result<BimanualPlan, StrategyError> {
    check_demos(&ep)?;
    if cfg.n_candidates == 0 {
        return Err(StrategyError::NoCandidates);
    }
    let kind = if debate {
        StrategyKind::DebatePlusBon
    } else {
        StrategyKind::BestOfN
    };
    let batches: Vec<Option<Vec<Demonstration>>> = (0..cfg.n_candidates)
        .map(|j| match pool {
            Some(pool) if cfg.resample_per_candidate => {
                sample_batch(pool, ep.demos.len(), candidate_seed(ep.seed, j)).ok()
            }
            _ => None,
        })
        .collect();

    let candidates = par::map_range(cfg.n_candidates, |j| {
        let demos = batches[j].as_deref().unwrap_or(ep.demos);
        let c = Caller {
            ep: Episode { demos, ..ep },
            cfg,
            prefix: format!("cand{j}/"),
            temperature: cfg.candidate_temperature,
            seed: candidate_seed(ep.seed, j),
        };
        let mut tags = Vec::new();
        let result = if debate {
            c.debate(&mut tags)
        } else {
            c.leader_follower(&mut tags)
        };
        result.map(|actions| (actions, tags))
    });

    let scores = par::map(&candidates, |j, cand| -> Result<u8, String> {
        let (actions, _) = cand.as_ref().map_err(|e| e.to_string())?;
        judge
            .score(ep.gateway, actions, ep.obs, ep.demos, &format!("cand{j}/judge"), candidate_seed(ep.seed, j))
            .map(|v| v.score)
            .map_err(|e: JudgeError| format!("cand{j}/judge: {e}"))
    });

    let mut failures = Vec::new();
    let mut best: Option<(usize, u8)> = None;
    for (j, s) in scores.iter().enumerate() {
        match s {
            Ok(score) => {
                if best.is_none_or(|(_, b)| *score > b) {
                    best = Some((j, *score));
                }
            }
            Err(e) => failures.push(e.clone()),
        }
    }
    let Some((j, _)) = best else {
        return Err(StrategyError::AllCandidatesFailed { failures });
    };
    if !failures.is_empty() {
        log::debug!("{} of {} candidates failed", failures.len(), cfg.n_candidates);
    }
    let mut tags: Vec<String> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if let Ok((_, t)) = c {
            tags.extend(t.iter().cloned());
            if scores[i].is_ok() {
                tags.push(format!("cand{i}/judge"));
            }
        }
    }
    let (actions, _) = candidates.into_iter().nth(j).expect("index in range").expect("scored candidate");
    Ok(BimanualPlan {
        actions,
        provenance: Provenance {
            kind: Some(kind),
            tags,
            selected: Some(j),
            scores: scores.iter().map(|s| s.as_ref().ok().copied()).collect(),
        },
    })
}

pub fn run_best_of_n(ep: Episode<'_>, cfg: &StrategyConfig, judge: &dyn Judge) -> Result<BimanualPlan, StrategyError> {
    run_selection(ep, cfg, judge, false, None)
}

pub fn run_debate_plus_bon(ep: Episode<'_>, cfg: &StrategyConfig, judge: &dyn Judge) -> Result<BimanualPlan, StrategyError> {
    run_selection(ep, cfg, judge, true, None)
}

/// Dispatches on `cfg.kind`. `pool` feeds per-candidate resampling.
pub fn run_strategy(
    ep: Episode<'_>,
    cfg: &StrategyConfig,
    pool: Option<&[Demonstration]>,
) -> Result<BimanualPlan, StrategyError> {
    let llm = LlmJudge {
        max_retries: cfg.max_retries,
        temperature: cfg.judge_temperature,
    };
    let judge: &dyn Judge = match cfg.judge_mode {
        JudgeMode::Rubric => &RubricJudge,
        JudgeMode::Llm => &llm,
    };
    match cfg.kind {
        StrategyKind::SingleAgent => run_single_agent(ep, cfg),
        StrategyKind::DualAgent => run_dual_agent(ep, cfg),
        StrategyKind::LeaderFollower => run_leader_follower(ep, cfg),
        StrategyKind::ArmsDebate => run_arms_debate(ep, cfg),
        StrategyKind::BestOfN => run_selection(ep, cfg, judge, false, pool),
        StrategyKind::DebatePlusBon => run_selection(ep, cfg, judge, true, pool),
    }
}
