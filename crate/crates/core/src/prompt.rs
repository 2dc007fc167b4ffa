//! Prompt text for the in-context agents and parsing of their answers.
//!
//! The user message is a flat sequence `obs_1>actions_1, ..., obs_N>actions_N, obs_test>`.
//! Observations render as `{'name': [x, y, z], ...}` with an optional partner
//! entry (`'leader_arm'` or `'follower_arm'`) holding a list of 7-tuples,
//! always last. Actions render as `[[a, b, ...], [...]]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Arm, BimanualAction, CodecError, DiscreteAction};
use crate::demos::Demonstration;
use crate::observation::{Observation, PartnerKey, PartnerTrajectory};

const AGENT_INSTRUCTIONS: &str = "We provide you with some demos in the format of observation>[action_1, action_2, ...].\n\
Then you will receive a new observation and you need to output a list of actions that matches the trend in the demos.\n\
Do not output anything else.";

/// System prompt of the rubric judge.
pub const JUDGE_SYSTEM_PROMPT: &str = r#"You are a strict judge evaluating bimanual robot action plans.

CONTEXT: Two Franka Panda arms (right=indices 0-6, left=indices 7-13) in a 100x100x100 voxel workspace. Each 14-dim action is [right_x, right_y, right_z, right_rot1, right_rot2, right_rot3, right_gripper, left_x, left_y, left_z, left_rot1, left_rot2, left_rot3, left_gripper].

TASK: Score the CANDIDATE plan from 1 to 5. START AT 3 and adjust:

CHECK 1 - Arm collision risk (+1 or -1):
At each timestep, compute the Euclidean distance between right [x,y,z] and left [x,y,z]. If ANY step has distance < 10 voxels AND both arms are actively moving (not stationary), that is a collision risk: -1. If all steps have safe separation: +1.

CHECK 2 - Target + trajectory match vs demos (+1 or -1):
Does the candidate approach the SAME objects as in demos (first action within 5 voxels of demo first action)? Does the z-trajectory follow the same shape (e.g. approach high, descend to grasp, lift)? Both must be true for +1. Either failing: -1.

CHECK 3 - Gripper logic (0 or -1):
For EACH arm: does the gripper open/close at the correct step relative to when the arm reaches the object? Closing too early (before reaching), or gripper sequence inverted vs demos: -1.

CHECK 4 - Workspace reachability (0 or -1):
Right arm should mostly operate in x > 30 (its reachable zone). Left arm should mostly operate in x < 70. If an arm consistently reaches into the opposite side of the workspace (>3 steps): -1.

Final score = 3 + check1 + check2 + check3 + check4, clamped to [1, 5].

You MUST show your work for each check, then give the final score.
Output ONLY valid JSON:
{"check1": "+1 or -1: <reason>", "check2": "+1 or -1: <reason>", "check3": "0 or -1: <reason>", "check4": "0 or -1: <reason>", "score": <int 1-5>}"#;

const JUDGE_DEMOS_HEADER: &str = "Reference Demos\n";
const JUDGE_CANDIDATE_HEADER: &str = "\n\nCandidate Plan\n";

/// System prompt for a single-arm agent (leader or follower).
pub fn arm_system_prompt(arm: Arm) -> String {
    format!(
        "You are the {arm} arm of a bimanual Franka Panda robot with parallel grippers.\n{AGENT_INSTRUCTIONS}"
    )
}

/// System prompt for the single agent predicting both arms at once.
pub fn bimanual_system_prompt() -> String {
    format!(
        "You are both arms of a bimanual Franka Panda robot with parallel grippers. \
Each action lists the right arm's 7 values followed by the left arm's 7 values.\n{AGENT_INSTRUCTIONS}"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmFilter {
    Right,
    Left,
    Both,
}

impl ArmFilter {
    pub fn arity(self) -> usize {
        match self {
            ArmFilter::Both => BimanualAction::ARITY,
            _ => DiscreteAction::ARITY,
        }
    }
}

impl From<Arm> for ArmFilter {
    fn from(arm: Arm) -> Self {
        match arm {
            Arm::Right => ArmFilter::Right,
            Arm::Left => ArmFilter::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Single,
    Leader,
    Follower,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub role: PromptRole,
    pub arm: ArmFilter,
}

fn render_ints(out: &mut String, values: &[u8]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{v}");
    }
    out.push(']');
}

fn render_rows<I, R>(out: &mut String, rows: I)
where
    I: IntoIterator<Item = R>,
    R: AsRef<[u8]>,
{
    out.push('[');
    for (i, row) in rows.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        render_ints(out, row.as_ref());
    }
    out.push(']');
}

/// Renders an action list as `[[...], [...]]`.
pub fn render_actions<I, R>(rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<[u8]>,
{
    let mut s = String::new();
    render_rows(&mut s, rows);
    s
}

pub fn serialize_observation(obs: &Observation) -> String {
    let mut s = String::from("{");
    let mut first = true;
    for (name, v) in obs.entries() {
        if !first {
            s.push_str(", ");
        }
        first = false;
        let _ = write!(s, "'{name}': ");
        render_ints(&mut s, &v);
    }
    if let Some(p) = obs.partner() {
        if !first {
            s.push_str(", ");
        }
        let _ = write!(s, "'{}': ", p.key.as_str());
        render_rows(&mut s, p.actions.iter().map(DiscreteAction::to_array));
    }
    s.push('}');
    s
}

fn filtered_rows(actions: &[BimanualAction], filter: ArmFilter) -> Vec<Vec<u8>> {
    actions
        .iter()
        .map(|a| match filter {
            ArmFilter::Both => a.to_array().to_vec(),
            ArmFilter::Right => a.right.to_array().to_vec(),
            ArmFilter::Left => a.left.to_array().to_vec(),
        })
        .collect()
}

fn arm_actions(actions: &[BimanualAction], arm: Arm) -> Vec<DiscreteAction> {
    actions.iter().map(|a| a.arm(arm)).collect()
}

fn assemble_user_text(pairs: impl IntoIterator<Item = (String, String)>, test: &Observation) -> String {
    let mut s = String::new();
    for (obs, actions) in pairs {
        let _ = write!(s, "{obs}>{actions}, ");
    }
    let _ = write!(s, "{}>", serialize_observation(test));
    s
}

/// Plain ICL prompt; `Both` predicts 14-tuples, a single arm 7-tuples.
pub fn build_single_prompt(
    demos: &[Demonstration],
    test_obs: &Observation,
    filter: ArmFilter,
) -> PromptBundle {
    let pairs = demos.iter().map(|d| {
        (
            serialize_observation(&d.observation),
            render_actions(filtered_rows(&d.actions, filter)),
        )
    });
    let (system_text, role) = match filter {
        ArmFilter::Both => (bimanual_system_prompt(), PromptRole::Single),
        ArmFilter::Right => (arm_system_prompt(Arm::Right), PromptRole::Leader),
        ArmFilter::Left => (arm_system_prompt(Arm::Left), PromptRole::Leader),
    };
    PromptBundle {
        system_text,
        user_text: assemble_user_text(pairs, test_obs),
        role,
        arm: filter,
    }
}

/// ICL prompt for `predict` conditioned on its partner's trajectory.
///
/// Every demo observation carries the partner arm's ground-truth actions
/// under `key`, the demo answers are `predict`'s own actions, and the test
/// observation carries `partner_pred`.
pub fn build_conditioned_prompt(
    demos: &[Demonstration],
    test_obs: &Observation,
    predict: Arm,
    key: PartnerKey,
    partner_pred: &[DiscreteAction],
    role: PromptRole,
) -> PromptBundle {
    let partner = predict.other();
    let pairs = demos.iter().map(|d| {
        let obs = d
            .observation
            .with_partner(key, arm_actions(&d.actions, partner));
        (
            serialize_observation(&obs),
            render_actions(filtered_rows(&d.actions, predict.into())),
        )
    });
    let test = test_obs.with_partner(key, partner_pred.to_vec());
    PromptBundle {
        system_text: arm_system_prompt(predict),
        user_text: assemble_user_text(pairs, &test),
        role,
        arm: predict.into(),
    }
}

/// Follower prompt: demos and test observation carry `leader_arm`.
pub fn build_follower_prompt(
    demos: &[Demonstration],
    test_obs: &Observation,
    leader_pred: &[DiscreteAction],
    leader_is_right: bool,
) -> PromptBundle {
    let follower = if leader_is_right { Arm::Left } else { Arm::Right };
    build_conditioned_prompt(
        demos,
        test_obs,
        follower,
        PartnerKey::LeaderArm,
        leader_pred,
        PromptRole::Follower,
    )
}

/// Reversed conditioning: the leader re-predicts given `follower_arm`.
pub fn build_reversed_leader_prompt(
    demos: &[Demonstration],
    test_obs: &Observation,
    follower_pred: &[DiscreteAction],
    leader_is_right: bool,
) -> PromptBundle {
    let leader = if leader_is_right { Arm::Right } else { Arm::Left };
    build_conditioned_prompt(
        demos,
        test_obs,
        leader,
        PartnerKey::FollowerArm,
        follower_pred,
        PromptRole::Leader,
    )
}

/// Judge prompt: reference demos, then the candidate plan for `test_obs`.
pub fn build_judge_prompt(
    demos: &[Demonstration],
    test_obs: &Observation,
    candidate: &[BimanualAction],
) -> PromptBundle {
    let mut user = String::from(JUDGE_DEMOS_HEADER);
    for (i, d) in demos.iter().enumerate() {
        if i > 0 {
            user.push_str(", ");
        }
        let _ = write!(
            user,
            "{}>{}",
            serialize_observation(&d.observation),
            render_actions(filtered_rows(&d.actions, ArmFilter::Both))
        );
    }
    user.push_str(JUDGE_CANDIDATE_HEADER);
    let _ = write!(
        user,
        "{}>{}",
        serialize_observation(test_obs),
        render_actions(filtered_rows(candidate, ArmFilter::Both))
    );
    PromptBundle {
        system_text: JUDGE_SYSTEM_PROMPT.to_string(),
        user_text: user,
        role: PromptRole::Judge,
        arm: ArmFilter::Both,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no bracketed list of integer lists found")]
    ParseFailure,
    #[error("action {index} has {got} integers, expected {expected}")]
    ArityMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("action {index}: {source}")]
    RangeViolation {
        index: usize,
        #[source]
        source: CodecError,
    },
}

/// Validated model answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCompletion {
    pub actions: Vec<Vec<u8>>,
    pub raw: String,
}

impl ParsedCompletion {
    pub fn arm_actions(&self) -> Vec<DiscreteAction> {
        self.actions
            .iter()
            .map(|r| {
                let ints: Vec<i64> = r.iter().map(|&v| i64::from(v)).collect();
                DiscreteAction::from_ints(&ints).expect("validated at parse time")
            })
            .collect()
    }

    pub fn bimanual_actions(&self) -> Vec<BimanualAction> {
        self.actions
            .iter()
            .map(|r| {
                let ints: Vec<i64> = r.iter().map(|&v| i64::from(v)).collect();
                BimanualAction::from_ints(&ints).expect("validated at parse time")
            })
            .collect()
    }
}

/// Extracts the first bracketed list of integer lists from free text and
/// validates it as 7- or 14-tuples of in-range action values.
///
/// Prose, code fences and trailing commas around or inside the list are
/// tolerated. A lone flat list is accepted as a single action.
pub fn parse_completion(text: &str, arity: usize) -> Result<ParsedCompletion, ParseError> {
    let rows = extract_int_rows(text).ok_or(ParseError::ParseFailure)?;
    if rows.is_empty() {
        return Err(ParseError::ParseFailure);
    }
    let mut actions = Vec::with_capacity(rows.len());
    for (index, row) in rows.iter().enumerate() {
        if row.len() != arity {
            return Err(ParseError::ArityMismatch {
                index,
                expected: arity,
                got: row.len(),
            });
        }
        let checked = match arity {
            BimanualAction::ARITY => BimanualAction::from_ints(row).map(|a| a.to_array().to_vec()),
            _ => DiscreteAction::from_ints(row).map(|a| a.to_array().to_vec()),
        };
        actions.push(checked.map_err(|source| ParseError::RangeViolation { index, source })?);
    }
    Ok(ParsedCompletion {
        actions,
        raw: text.to_string(),
    })
}

fn extract_int_rows(text: &str) -> Option<Vec<Vec<i64>>> {
    let starts: Vec<usize> = text.match_indices('[').map(|(i, _)| i).collect();
    for &start in &starts {
        let mut c = Cursor::new(&text[start..]);
        if let Some(rows) = c.rows() {
            return Some(rows);
        }
    }
    for &start in &starts {
        let mut c = Cursor::new(&text[start..]);
        if let Some(row) = c.int_list() {
            if !row.is_empty() {
                return Some(vec![row]);
            }
        }
    }
    None
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Self {
            s: s.as_bytes(),
            pos: 0,
        }
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn int(&mut self) -> Option<i64> {
        self.ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits {
            self.pos = start;
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
    }

    /// `[` items separated by `,`, optional trailing comma, `]`.
    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> Option<T>) -> Option<Vec<T>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut out = Vec::new();
        loop {
            if self.eat(b']') {
                return Some(out);
            }
            out.push(item(self)?);
            if self.eat(b',') {
                continue;
            }
            return self.eat(b']').then_some(out);
        }
    }

    fn int_list(&mut self) -> Option<Vec<i64>> {
        self.list(Self::int)
    }

    fn rows(&mut self) -> Option<Vec<Vec<i64>>> {
        self.list(Self::int_list)
    }

    fn quoted_name(&mut self) -> Option<String> {
        if !self.eat(b'\'') {
            return None;
        }
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != b'\'' {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).ok()?.to_string();
        self.pos += 1;
        (self.pos <= self.s.len()).then_some(name)
    }

    fn observation(&mut self) -> Option<Observation> {
        if !self.eat(b'{') {
            return None;
        }
        let mut obs = Observation::new();
        let mut partner = None;
        if self.eat(b'}') {
            return Some(obs);
        }
        loop {
            let name = self.quoted_name()?;
            if !self.eat(b':') {
                return None;
            }
            if let Some(key) = PartnerKey::from_key(&name) {
                let rows = self.rows()?;
                let actions = rows
                    .iter()
                    .map(|r| DiscreteAction::from_ints(r).ok())
                    .collect::<Option<Vec<_>>>()?;
                partner = Some(PartnerTrajectory { key, actions });
            } else {
                let v = self.int_list()?;
                let voxel: [u8; 3] = v
                    .iter()
                    .map(|&x| u8::try_from(x).ok())
                    .collect::<Option<Vec<u8>>>()?
                    .try_into()
                    .ok()?;
                obs.insert(name, voxel).ok()?;
            }
            if self.eat(b',') {
                continue;
            }
            if self.eat(b'}') {
                break;
            }
            return None;
        }
        Some(match partner {
            Some(p) => obs.with_partner(p.key, p.actions),
            None => obs,
        })
    }
}

/// A demonstration as it appears inside a prompt: observation (possibly
/// with a partner entry) and raw action rows of 7 or 14 integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDemo {
    pub observation: Observation,
    pub actions: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub demos: Vec<PromptDemo>,
    pub test: Observation,
}

impl ParsedPrompt {
    /// Arity of the demo answers, when all demos agree.
    pub fn arity(&self) -> Option<usize> {
        let first = self.demos.first()?.actions.first()?.len();
        self.demos
            .iter()
            .flat_map(|d| &d.actions)
            .all(|r| r.len() == first)
            .then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt does not follow the demo grammar: {0}")]
pub struct PromptGrammarError(pub String);

fn demo_sequence(c: &mut Cursor<'_>, trailing_test: bool) -> Result<(Vec<PromptDemo>, Option<Observation>), PromptGrammarError> {
    let err = |m: &str| PromptGrammarError(m.to_string());
    let mut demos = Vec::new();
    loop {
        let obs = c.observation().ok_or_else(|| err("expected an observation"))?;
        if !c.eat(b'>') {
            return Err(err("expected '>' after an observation"));
        }
        if trailing_test && c.at_end() {
            return Ok((demos, Some(obs)));
        }
        let actions = c.rows().ok_or_else(|| err("expected an action list after '>'"))?;
        demos.push(PromptDemo {
            observation: obs,
            actions,
        });
        if !trailing_test && (c.at_end() || c.peek() != Some(b',')) {
            return Ok((demos, None));
        }
        if !c.eat(b',') {
            return Err(err("expected ', ' between demonstrations"));
        }
    }
}

/// Parses an ICL user message back into its demos and test observation.
pub fn parse_prompt(user_text: &str) -> Result<ParsedPrompt, PromptGrammarError> {
    let mut c = Cursor::new(user_text);
    let (demos, test) = demo_sequence(&mut c, true)?;
    Ok(ParsedPrompt {
        demos,
        test: test.expect("trailing test observation"),
    })
}

/// Parsed judge request: reference demos and the candidate with its scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedJudgePrompt {
    pub demos: Vec<PromptDemo>,
    pub candidate: PromptDemo,
}

pub fn parse_judge_prompt(user_text: &str) -> Result<ParsedJudgePrompt, PromptGrammarError> {
    let err = |m: &str| PromptGrammarError(m.to_string());
    let body = user_text
        .strip_prefix(JUDGE_DEMOS_HEADER)
        .ok_or_else(|| err("missing reference demos header"))?;
    let (demos_text, cand_text) = body
        .split_once(JUDGE_CANDIDATE_HEADER)
        .ok_or_else(|| err("missing candidate plan header"))?;
    let (demos, _) = demo_sequence(&mut Cursor::new(demos_text), false)?;
    let mut c = Cursor::new(cand_text);
    let (mut cand, _) = demo_sequence(&mut c, false)?;
    if cand.len() != 1 || !c.at_end() {
        return Err(err("expected exactly one candidate plan"));
    }
    Ok(ParsedJudgePrompt {
        demos,
        candidate: cand.remove(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act7(v: [i64; 7]) -> DiscreteAction {
        DiscreteAction::from_ints(&v).unwrap()
    }

    fn demo(obj: [u8; 3], right: [i64; 7], left: [i64; 7]) -> Demonstration {
        let obs = Observation::from_entries([("ball", obj)]).unwrap();
        Demonstration::new(obs, vec![BimanualAction::new(act7(right), act7(left))]).unwrap()
    }

    #[test]
    fn observation_grammar() {
        assert_eq!(serialize_observation(&Observation::new()), "{}");
        let obs = Observation::from_entries([("ball", [50, 49, 31])]).unwrap();
        assert_eq!(serialize_observation(&obs), "{'ball': [50, 49, 31]}");
        let aug = obs.with_partner(PartnerKey::LeaderArm, vec![act7([50, 49, 40, 36, 36, 0, 1])]);
        assert_eq!(
            serialize_observation(&aug),
            "{'ball': [50, 49, 31], 'leader_arm': [[50, 49, 40, 36, 36, 0, 1]]}"
        );
        let only_partner = Observation::new().with_partner(PartnerKey::FollowerArm, vec![]);
        assert_eq!(serialize_observation(&only_partner), "{'follower_arm': []}");
    }

    #[test]
    fn single_prompt_structure() {
        let d = demo([1, 2, 3], [1, 2, 3, 4, 5, 6, 1], [7, 8, 9, 10, 11, 12, 0]);
        let test = Observation::from_entries([("ball", [4, 5, 6])]).unwrap();
        let p = build_single_prompt(std::slice::from_ref(&d), &test, ArmFilter::Both);
        assert_eq!(
            p.user_text,
            "{'ball': [1, 2, 3]}>[[1, 2, 3, 4, 5, 6, 1, 7, 8, 9, 10, 11, 12, 0]], {'ball': [4, 5, 6]}>"
        );
        assert_eq!(p.role, PromptRole::Single);
        let p = build_single_prompt(std::slice::from_ref(&d), &test, ArmFilter::Right);
        assert_eq!(
            p.user_text,
            "{'ball': [1, 2, 3]}>[[1, 2, 3, 4, 5, 6, 1]], {'ball': [4, 5, 6]}>"
        );
        assert!(p.system_text.starts_with("You are the right arm"));
        let demos: Vec<_> = (0..10).map(|_| d.clone()).collect();
        let p = build_single_prompt(&demos, &test, ArmFilter::Left);
        assert_eq!(p.user_text.matches('>').count(), 11);
        assert!(p.user_text.ends_with('>'));
    }

    #[test]
    fn follower_prompt_structure() {
        let d = demo([1, 2, 3], [1, 2, 3, 4, 5, 6, 1], [7, 8, 9, 10, 11, 12, 0]);
        let test = Observation::from_entries([("ball", [4, 5, 6])]).unwrap();
        let pred = vec![act7([9, 9, 9, 0, 0, 0, 1])];
        let p = build_follower_prompt(std::slice::from_ref(&d), &test, &pred, true);
        assert_eq!(
            p.user_text,
            "{'ball': [1, 2, 3], 'leader_arm': [[1, 2, 3, 4, 5, 6, 1]]}>[[7, 8, 9, 10, 11, 12, 0]], \
{'ball': [4, 5, 6], 'leader_arm': [[9, 9, 9, 0, 0, 0, 1]]}>"
        );
        assert!(p.system_text.starts_with("You are the left arm"));
        let p = build_reversed_leader_prompt(std::slice::from_ref(&d), &test, &pred, true);
        assert!(p.user_text.contains("'follower_arm': [[7, 8, 9, 10, 11, 12, 0]]"));
        assert!(!p.user_text.contains("leader_arm"));
        assert!(p.system_text.starts_with("You are the right arm"));
    }

    #[test]
    fn completion_examples() {
        let p = parse_completion("[[1,2,3,4,5,6,1]]", 7).unwrap();
        assert_eq!(p.actions, vec![vec![1, 2, 3, 4, 5, 6, 1]]);
        let text = "Here is the plan:\n```[[1,2,3,4,5,6,1],[1,2,9,4,5,6,0]]```";
        assert_eq!(parse_completion(text, 7).unwrap().actions.len(), 2);
        assert!(matches!(
            parse_completion("[[1,2,3]]", 7),
            Err(ParseError::ArityMismatch { index: 0, expected: 7, got: 3 })
        ));
        assert!(matches!(parse_completion("no list here", 7), Err(ParseError::ParseFailure)));
        assert!(matches!(parse_completion("[]", 7), Err(ParseError::ParseFailure)));
        assert!(matches!(
            parse_completion("[[1,2,3,4,5,72,1]]", 7),
            Err(ParseError::RangeViolation { index: 0, .. })
        ));
    }

    #[test]
    fn completion_tolerance() {
        let text = "```json\n[\n  [1, 2, 3, 4, 5, 6, 1,],\n  [1, 2, 3, 4, 5, 6, 0],\n]\n```";
        assert_eq!(parse_completion(text, 7).unwrap().actions.len(), 2);
        assert_eq!(parse_completion("answer: [1,2,3,4,5,6,1]", 7).unwrap().actions.len(), 1);
        let nested = "see [note] then [[[1,2,3,4,5,6,1]]]";
        assert_eq!(parse_completion(nested, 7).unwrap().actions.len(), 1);
    }

    #[test]
    fn prompt_parses_back() {
        let d = demo([1, 2, 3], [1, 2, 3, 4, 5, 6, 1], [7, 8, 9, 10, 11, 12, 0]);
        let test = Observation::from_entries([("ball", [4, 5, 6])]).unwrap();
        let pred = vec![act7([9, 9, 9, 0, 0, 0, 1])];
        let p = build_follower_prompt(&[d.clone(), d.clone()], &test, &pred, true);
        let parsed = parse_prompt(&p.user_text).unwrap();
        assert_eq!(parsed.demos.len(), 2);
        assert_eq!(parsed.test, test.with_partner(PartnerKey::LeaderArm, pred));
        assert_eq!(parsed.arity(), Some(7));
        assert!(parse_prompt("hello").is_err());

        let j = build_judge_prompt(std::slice::from_ref(&d), &test, &d.actions);
        let pj = parse_judge_prompt(&j.user_text).unwrap();
        assert_eq!(pj.demos.len(), 1);
        assert_eq!(pj.candidate.observation, test);
        assert_eq!(pj.candidate.actions[0].len(), 14);
    }
}
