use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Arm, BimanualAction, DiscreteAction, VOXEL_MAX};
use crate::demos::Demonstration;
use crate::judge::score_rubric;
use crate::observation::{nearest_index, Observation};
use crate::prompt::{
    arm_system_prompt, parse_judge_prompt, parse_prompt, render_actions, PromptDemo, JUDGE_SYSTEM_PROMPT,
};

use super::{ChatBackend, ChatRequest, GatewayError};

/// Uniform integer jitter of at most `amplitude` voxels per axis on every
/// predicted position of `arm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmNoise {
    pub arm: Arm,
    pub amplitude: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub noise: Option<ArmNoise>,
    /// Re-anchor keyframes at which the demo's arm was within
    /// `anchor_radius` voxels (L-infinity) of its partner onto the partner
    /// trajectory given in the prompt.
    pub partner_anchoring: bool,
    pub anchor_radius: u8,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            noise: None,
            partner_anchoring: true,
            anchor_radius: 8,
        }
    }
}

/// Offline stand-in for a language model: replays the demo nearest to the
/// test observation, translated by the mean object offset. Judge prompts
/// are answered with the rubric verdict.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestDemoOracle {
    pub options: OracleOptions,
}

impl NearestDemoOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: OracleOptions) -> Self {
        Self { options }
    }

    /// The oracle answer for `req`, without any accounting.
    pub fn respond(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        if req.system == JUDGE_SYSTEM_PROMPT {
            return judge_response(&req.user);
        }
        let parsed = parse_prompt(&req.user).map_err(|e| GatewayError::OracleParse(e.to_string()))?;
        let arity = parsed
            .arity()
            .filter(|&a| a == DiscreteAction::ARITY || a == BimanualAction::ARITY)
            .ok_or_else(|| GatewayError::OracleParse("demos disagree on action arity or have none".into()))?;
        let idx = nearest_index(&parsed.test, parsed.demos.iter().map(|d| &d.observation))
            .ok_or_else(|| GatewayError::OracleParse("prompt holds no demonstrations".into()))?;
        let demo = &parsed.demos[idx];
        let offset = demo.observation.mean_offset_to(&parsed.test).map(|o| o.round() as i64);

        let mut rows = demo.actions.clone();
        for row in &mut rows {
            for base in (0..arity).step_by(DiscreteAction::ARITY) {
                for axis in 0..3 {
                    row[base + axis] = clamp_voxel(row[base + axis] + offset[axis]);
                }
            }
        }

        let arm = output_arm(&req.system, arity);
        if let Some(noise) = self.options.noise {
            self.apply_noise(&mut rows, arity, arm, noise, req.seed);
        }
        if self.options.partner_anchoring && arity == DiscreteAction::ARITY {
            self.anchor(&mut rows, demo, &parsed.test);
        }
        Ok(render_actions(rows.iter().map(|r| r.iter().map(|&v| v as u8).collect::<Vec<u8>>())))
    }

    fn apply_noise(&self, rows: &mut [Vec<i64>], arity: usize, arm: Option<Arm>, noise: ArmNoise, seed: u64) {
        let base = match (arity, arm) {
            (DiscreteAction::ARITY, Some(a)) if a == noise.arm => 0,
            (BimanualAction::ARITY, _) => match noise.arm {
                Arm::Right => 0,
                Arm::Left => DiscreteAction::ARITY,
            },
            _ => return,
        };
        let amp = i64::from(noise.amplitude);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[noise.seed, seed, noise.arm as u64]));
        for row in rows {
            for axis in 0..3 {
                let d = rng.random_range(-amp..=amp);
                row[base + axis] = clamp_voxel(row[base + axis] + d);
            }
        }
    }

    fn anchor(&self, rows: &mut [Vec<i64>], demo: &PromptDemo, test: &Observation) {
        let (Some(demo_partner), Some(test_partner)) = (demo.observation.partner(), test.partner()) else {
            return;
        };
        let radius = i64::from(self.options.anchor_radius);
        for (k, row) in rows.iter_mut().enumerate() {
            let (Some(dp), Some(tp), Some(own)) = (
                demo_partner.actions.get(k),
                test_partner.actions.get(k),
                demo.actions.get(k),
            ) else {
                break;
            };
            let rel: Vec<i64> = (0..3).map(|a| own[a] - i64::from(dp.voxel[a])).collect();
            if rel.iter().all(|d| d.abs() <= radius) {
                for axis in 0..3 {
                    row[axis] = clamp_voxel(i64::from(tp.voxel[axis]) + rel[axis]);
                }
            }
        }
    }
}

fn clamp_voxel(v: i64) -> i64 {
    v.clamp(0, i64::from(VOXEL_MAX))
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

fn output_arm(system: &str, arity: usize) -> Option<Arm> {
    if arity != DiscreteAction::ARITY {
        return None;
    }
    [Arm::Right, Arm::Left]
        .into_iter()
        .find(|&a| system == arm_system_prompt(a))
}

fn to_demo(d: &PromptDemo) -> Result<Demonstration, GatewayError> {
    let actions = d
        .actions
        .iter()
        .map(|r| BimanualAction::from_ints(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| GatewayError::OracleParse(e.to_string()))?;
    Demonstration::new(d.observation.without_partner(), actions).map_err(|e| GatewayError::OracleParse(e.to_string()))
}

fn judge_response(user: &str) -> Result<String, GatewayError> {
    let parsed = parse_judge_prompt(user).map_err(|e| GatewayError::OracleParse(e.to_string()))?;
    let demos = parsed.demos.iter().map(to_demo).collect::<Result<Vec<_>, _>>()?;
    let candidate = to_demo(&parsed.candidate)?;
    Ok(score_rubric(&candidate.actions, &candidate.observation, &demos).to_json())
}

impl ChatBackend for NearestDemoOracle {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.respond(req)
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_follower_prompt, build_single_prompt, parse_completion, ArmFilter};

    fn bi(r: [u8; 3], l: [u8; 3], g: u8) -> BimanualAction {
        BimanualAction::new(
            DiscreteAction::new(r, [0, 0, 0], g).unwrap(),
            DiscreteAction::new(l, [0, 0, 0], g).unwrap(),
        )
    }

    fn demo(o: [u8; 3], actions: Vec<BimanualAction>) -> Demonstration {
        Demonstration::new(Observation::from_entries([("cube", o)]).unwrap(), actions).unwrap()
    }

    fn ask(oracle: &NearestDemoOracle, system: String, user: String, arity: usize) -> Vec<Vec<u8>> {
        let text = oracle.respond(&ChatRequest::new(system, user, 0.0, "t")).unwrap();
        parse_completion(&text, arity).unwrap().actions
    }

    #[test]
    fn zero_offset_replays_verbatim() {
        let demos = vec![
            demo([10, 10, 10], vec![bi([1, 2, 3], [4, 5, 6], 1)]),
            demo([50, 50, 50], vec![bi([60, 50, 50], [40, 50, 50], 0)]),
        ];
        let b = build_single_prompt(&demos, &demos[1].observation, ArmFilter::Both);
        let out = ask(&NearestDemoOracle::new(), b.system_text, b.user_text, 14);
        assert_eq!(out, vec![demos[1].actions[0].to_array().to_vec()]);
    }

    #[test]
    fn shift_translates_positions() {
        let demos = vec![demo([50, 50, 50], vec![bi([60, 50, 50], [40, 50, 50], 1)])];
        let test = Observation::from_entries([("cube", [52u8, 50, 50])]).unwrap();
        let b = build_single_prompt(&demos, &test, ArmFilter::Right);
        let out = ask(&NearestDemoOracle::new(), b.system_text, b.user_text, 7);
        assert_eq!(out, vec![vec![62, 50, 50, 0, 0, 0, 1]]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let demos = vec![
            demo([48, 50, 50], vec![bi([1, 1, 1], [1, 1, 1], 1)]),
            demo([52, 50, 50], vec![bi([2, 2, 2], [2, 2, 2], 1)]),
        ];
        let test = Observation::from_entries([("cube", [50u8, 50, 50])]).unwrap();
        let b = build_single_prompt(&demos, &test, ArmFilter::Right);
        let out = ask(&NearestDemoOracle::new(), b.system_text, b.user_text, 7);
        assert_eq!(out, vec![vec![3, 1, 1, 0, 0, 0, 1]]);
    }

    #[test]
    fn clamps_at_the_workspace_edge() {
        let demos = vec![demo([50, 50, 50], vec![bi([98, 50, 50], [40, 50, 50], 1)])];
        let test = Observation::from_entries([("cube", [55u8, 50, 50])]).unwrap();
        let b = build_single_prompt(&demos, &test, ArmFilter::Right);
        let out = ask(&NearestDemoOracle::new(), b.system_text, b.user_text, 7);
        assert_eq!(out[0][0], 99);
    }

    #[test]
    fn noise_hits_only_the_chosen_arm_and_is_reproducible() {
        let demos = vec![demo(
            [50, 50, 50],
            vec![bi([60, 50, 50], [40, 50, 50], 1), bi([60, 50, 40], [40, 50, 40], 0)],
        )];
        let oracle = NearestDemoOracle::with_options(OracleOptions {
            noise: Some(ArmNoise {
                arm: Arm::Left,
                amplitude: 1,
                seed: 3,
            }),
            partner_anchoring: false,
            ..OracleOptions::default()
        });
        let right = build_single_prompt(&demos, &demos[0].observation, ArmFilter::Right);
        assert_eq!(
            ask(&oracle, right.system_text, right.user_text, 7)[0],
            demos[0].actions[0].right.to_array().to_vec()
        );
        let left = build_single_prompt(&demos, &demos[0].observation, ArmFilter::Left);
        let a = ask(&oracle, left.system_text.clone(), left.user_text.clone(), 7);
        let b = ask(&oracle, left.system_text, left.user_text, 7);
        assert_eq!(a, b);
        for (row, d) in a.iter().zip(&demos[0].actions) {
            for (r, v) in row.iter().zip(d.left.voxel) {
                assert!(r.abs_diff(v) <= 1);
            }
        }
    }

    #[test]
    fn anchoring_follows_the_given_partner() {
        let demos = vec![demo(
            [50, 50, 50],
            vec![bi([60, 50, 50], [30, 50, 50], 1), bi([53, 50, 50], [47, 50, 50], 1)],
        )];
        let mut leader: Vec<DiscreteAction> = demos[0].actions.iter().map(|a| a.right).collect();
        leader[1].voxel[1] = 52;
        let b = build_follower_prompt(&demos, &demos[0].observation, &leader, true);
        let out = ask(&NearestDemoOracle::new(), b.system_text, b.user_text, 7);
        assert_eq!(out[0][..3], [30, 50, 50]);
        assert_eq!(out[1][..3], [47, 52, 50]);
    }

    #[test]
    fn answers_judge_prompts_and_rejects_foreign_text() {
        let demos = vec![demo([50, 50, 50], vec![bi([60, 50, 50], [40, 50, 50], 1)])];
        let b = crate::prompt::build_judge_prompt(&demos, &demos[0].observation, &demos[0].actions);
        let text = NearestDemoOracle::new()
            .respond(&ChatRequest::new(b.system_text, b.user_text, 0.0, "judge"))
            .unwrap();
        assert_eq!(crate::judge::parse_verdict(&text).unwrap().score, 5);
        assert!(matches!(
            NearestDemoOracle::new().respond(&ChatRequest::new("s", "hello", 0.0, "x")),
            Err(GatewayError::OracleParse(_))
        ));
    }
}
