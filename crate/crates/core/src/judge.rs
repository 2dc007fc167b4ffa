//! Consistency scoring of candidate plans.
//!
//! [`score_rubric`] applies the four checks of the judge prompt
//! deterministically; [`LlmJudge`] sends that prompt through the gateway and
//! parses the JSON verdict. Both yield a [`JudgeVerdict`] whose score is
//! `clamp(3 + check1 + check2 + check3 + check4, 1, 5)`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codec::{Arm, BimanualAction};
use crate::demos::Demonstration;
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::observation::{nearest_index, Observation};
use crate::prompt::build_judge_prompt;

/// Collision threshold between the two grippers, in voxels.
pub const COLLISION_DISTANCE: f64 = 10.0;
/// L-infinity tolerance between the first candidate and demo positions.
pub const FIRST_ACTION_TOLERANCE: u8 = 5;
/// Right arm must stay above this x, the left arm below [`LEFT_X_LIMIT`].
pub const RIGHT_X_LIMIT: u8 = 30;
pub const LEFT_X_LIMIT: u8 = 70;
/// Steps tolerated on the wrong side before check 4 fails.
pub const MAX_WRONG_SIDE_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub check1: i8,
    pub check2: i8,
    pub check3: i8,
    pub check4: i8,
    pub score: u8,
    pub reasons: [String; 4],
}

pub fn clamp_score(check1: i8, check2: i8, check3: i8, check4: i8) -> u8 {
    (3 + i32::from(check1) + i32::from(check2) + i32::from(check3) + i32::from(check4)).clamp(1, 5) as u8
}

impl JudgeVerdict {
    pub fn new(checks: [i8; 4], reasons: [String; 4]) -> Self {
        let [check1, check2, check3, check4] = checks;
        Self {
            check1,
            check2,
            check3,
            check4,
            score: clamp_score(check1, check2, check3, check4),
            reasons,
        }
    }

    /// JSON in the schema the judge prompt asks for.
    pub fn to_json(&self) -> String {
        let fmt = |v: i8, r: &str| {
            let sign = if v > 0 { "+1".to_string() } else { v.to_string() };
            format!("{sign}: {r}")
        };
        serde_json::json!({
            "check1": fmt(self.check1, &self.reasons[0]),
            "check2": fmt(self.check2, &self.reasons[1]),
            "check3": fmt(self.check3, &self.reasons[2]),
            "check4": fmt(self.check4, &self.reasons[3]),
            "score": self.score,
        })
        .to_string()
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge verdict is not valid JSON: {0}")]
    Parse(String),
    #[error("judge call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("judge verdict could not be parsed after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("empty plan or demonstration set")]
    Empty,
}

fn position(a: &crate::codec::DiscreteAction) -> [i32; 3] {
    a.voxel.map(i32::from)
}

fn distance(a: [i32; 3], b: [i32; 3]) -> f64 {
    ((0..3).map(|i| f64::from(a[i] - b[i]).powi(2)).sum::<f64>()).sqrt()
}

/// Check 1: -1 iff at some step the grippers are closer than 10 voxels while
/// both moved since the previous step (step 0 counts as moving).
pub fn check_collision(plan: &[BimanualAction]) -> (i8, String) {
    for (k, a) in plan.iter().enumerate() {
        let moved = |arm: Arm| k == 0 || plan[k - 1].arm(arm).voxel != a.arm(arm).voxel;
        let d = distance(position(&a.right), position(&a.left));
        if d < COLLISION_DISTANCE && moved(Arm::Right) && moved(Arm::Left) {
            return (-1, format!("step {k}: both arms moving {d:.2} voxels apart"));
        }
    }
    (1, "all moving steps keep at least 10 voxels separation".into())
}

fn nearest_demo<'a>(obs: &Observation, demos: &'a [Demonstration]) -> Option<&'a Demonstration> {
    nearest_index(obs, demos.iter().map(|d| &d.observation)).map(|i| &demos[i])
}

fn z_signs(plan: &[BimanualAction], arm: Arm) -> Vec<i8> {
    plan.windows(2)
        .map(|w| (i16::from(w[1].arm(arm).voxel[2]) - i16::from(w[0].arm(arm).voxel[2])).signum() as i8)
        .filter(|&s| s != 0)
        .collect()
}

/// Check 2: first positions within 5 voxels (L-infinity) of the nearest
/// demo's and identical z-delta sign sequences, for both arms.
pub fn check_demo_match(plan: &[BimanualAction], obs: &Observation, demos: &[Demonstration]) -> (i8, String) {
    let (Some(demo), Some(first)) = (nearest_demo(obs, demos), plan.first()) else {
        return (-1, "no plan or no demos".into());
    };
    for arm in [Arm::Right, Arm::Left] {
        let a = position(&first.arm(arm));
        let b = position(&demo.actions[0].arm(arm));
        let linf = (0..3).map(|i| (a[i] - b[i]).unsigned_abs()).max().unwrap_or(0);
        if linf > u32::from(FIRST_ACTION_TOLERANCE) {
            return (-1, format!("{arm} arm first action {linf} voxels from the demo"));
        }
        if z_signs(plan, arm) != z_signs(&demo.actions, arm) {
            return (-1, format!("{arm} arm z-trajectory shape differs from the demo"));
        }
    }
    (1, "first actions and z-trajectory shapes match the nearest demo".into())
}

fn transitions(plan: &[BimanualAction], arm: Arm) -> Vec<(u8, u8)> {
    plan.windows(2)
        .map(|w| (w[0].arm(arm).gripper, w[1].arm(arm).gripper))
        .filter(|(a, b)| a != b)
        .collect()
}

/// Check 3: -1 iff either arm's ordered gripper transitions differ from the
/// nearest demo's.
pub fn check_gripper(plan: &[BimanualAction], obs: &Observation, demos: &[Demonstration]) -> (i8, String) {
    let Some(demo) = nearest_demo(obs, demos) else {
        return (-1, "no demos".into());
    };
    for arm in [Arm::Right, Arm::Left] {
        if transitions(plan, arm) != transitions(&demo.actions, arm) {
            return (-1, format!("{arm} gripper sequence differs from the demo"));
        }
    }
    (0, "gripper transitions match the nearest demo".into())
}

/// Check 4: -1 iff the right arm spends more than 3 steps at x <= 30 or the
/// left arm more than 3 steps at x >= 70.
pub fn check_workspace(plan: &[BimanualAction]) -> (i8, String) {
    let right = plan.iter().filter(|a| a.right.voxel[0] <= RIGHT_X_LIMIT).count();
    let left = plan.iter().filter(|a| a.left.voxel[0] >= LEFT_X_LIMIT).count();
    if right > MAX_WRONG_SIDE_STEPS {
        (-1, format!("right arm at x <= 30 for {right} steps"))
    } else if left > MAX_WRONG_SIDE_STEPS {
        (-1, format!("left arm at x >= 70 for {left} steps"))
    } else {
        (0, "both arms stay on their side".into())
    }
}

pub fn score_rubric(plan: &[BimanualAction], obs: &Observation, demos: &[Demonstration]) -> JudgeVerdict {
    let (c1, r1) = check_collision(plan);
    let (c2, r2) = check_demo_match(plan, obs, demos);
    let (c3, r3) = check_gripper(plan, obs, demos);
    let (c4, r4) = check_workspace(plan);
    JudgeVerdict::new([c1, c2, c3, c4], [r1, r2, r3, r4])
}

fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, ch) in text[start..].char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn check_value(v: &Value, allowed: &[i8]) -> Option<(i8, String)> {
    let (value, reason) = match v {
        Value::String(s) => {
            let t = s.trim_start();
            let end = t.find(|c: char| !(c == '+' || c == '-' || c.is_ascii_digit())).unwrap_or(t.len());
            let value: i8 = t[..end].trim_start_matches('+').parse().ok()?;
            let reason = t[end..].trim_start_matches([':', ' ']).to_string();
            (value, reason)
        }
        Value::Number(n) => (i8::try_from(n.as_i64()?).ok()?, String::new()),
        _ => return None,
    };
    allowed.contains(&value).then_some((value, reason))
}

/// Parses a judge answer. The reported score is ignored in favour of the
/// clamp of the reported checks when the two disagree.
pub fn parse_verdict(text: &str) -> Result<JudgeVerdict, JudgeError> {
    let body = first_json_object(text).ok_or_else(|| JudgeError::Parse("no JSON object".into()))?;
    let v: Value = serde_json::from_str(body).map_err(|e| JudgeError::Parse(e.to_string()))?;
    let get = |key: &str, allowed: &[i8]| {
        v.get(key)
            .and_then(|x| check_value(x, allowed))
            .ok_or_else(|| JudgeError::Parse(format!("missing or invalid '{key}'")))
    };
    let (c1, r1) = get("check1", &[1, -1])?;
    let (c2, r2) = get("check2", &[1, -1])?;
    let (c3, r3) = get("check3", &[0, -1])?;
    let (c4, r4) = get("check4", &[0, -1])?;
    let verdict = JudgeVerdict::new([c1, c2, c3, c4], [r1, r2, r3, r4]);
    let reported = v.get("score").and_then(Value::as_i64);
    if reported != Some(i64::from(verdict.score)) {
        log::debug!(
            "judge reported score {reported:?}, recomputed {} from its checks",
            verdict.score
        );
    }
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Rubric,
    #[default]
    Llm,
}

/// Scores one candidate plan for the scene `obs`.
pub trait Judge: Send + Sync {
    fn score(
        &self,
        gateway: &Gateway,
        plan: &[BimanualAction],
        obs: &Observation,
        demos: &[Demonstration],
        tag: &str,
        seed: u64,
    ) -> Result<JudgeVerdict, JudgeError>;
}

/// Deterministic rubric, no model calls.
#[derive(Debug, Clone, Copy, Default)]
pub struct RubricJudge;

impl Judge for RubricJudge {
    fn score(
        &self,
        _gateway: &Gateway,
        plan: &[BimanualAction],
        obs: &Observation,
        demos: &[Demonstration],
        _tag: &str,
        _seed: u64,
    ) -> Result<JudgeVerdict, JudgeError> {
        if plan.is_empty() || demos.is_empty() {
            return Err(JudgeError::Empty);
        }
        Ok(score_rubric(plan, obs, demos))
    }
}

/// Sends the judge prompt through the gateway and parses the verdict,
/// re-asking with the same prompt up to `max_retries` times.
#[derive(Debug, Clone, Copy)]
pub struct LlmJudge {
    pub max_retries: usize,
    pub temperature: f64,
}

impl Default for LlmJudge {
    fn default() -> Self {
        Self {
            max_retries: 2,
            temperature: 0.0,
        }
    }
}

impl Judge for LlmJudge {
    fn score(
        &self,
        gateway: &Gateway,
        plan: &[BimanualAction],
        obs: &Observation,
        demos: &[Demonstration],
        tag: &str,
        seed: u64,
    ) -> Result<JudgeVerdict, JudgeError> {
        if plan.is_empty() || demos.is_empty() {
            return Err(JudgeError::Empty);
        }
        let bundle = build_judge_prompt(demos, obs, plan);
        let req = ChatRequest::new(bundle.system_text, bundle.user_text, self.temperature, tag).with_seed(seed);
        let mut last = String::new();
        for attempt in 1..=self.max_retries + 1 {
            let text = gateway.complete_attempt(&req, attempt)?;
            match parse_verdict(&text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    gateway.mark_last_parse_failure(tag);
                    last = e.to_string();
                }
            }
        }
        Err(JudgeError::Exhausted {
            attempts: self.max_retries + 1,
            last,
        })
    }
}

/// Scores with the rubric or through the gateway.
pub fn score_plan(
    gateway: &Gateway,
    plan: &[BimanualAction],
    obs: &Observation,
    demos: &[Demonstration],
    mode: JudgeMode,
) -> Result<JudgeVerdict, JudgeError> {
    match mode {
        JudgeMode::Rubric => RubricJudge.score(gateway, plan, obs, demos, "judge", 0),
        JudgeMode::Llm => LlmJudge::default().score(gateway, plan, obs, demos, "judge", 0),
    }
}
