mod common;

use std::sync::Arc;

use bimanual_icl::codec::{Arm, DiscreteAction};
use bimanual_icl::gateway::{ChatBackend, FlakyBackend, Gateway, NearestDemoOracle, ScriptedBackend};
use bimanual_icl::judge::{JudgeMode, JudgeVerdict, RubricJudge};
use bimanual_icl::prompt::{arm_system_prompt, parse_prompt, render_actions};
use bimanual_icl::strategies::{
    run_arms_debate, run_best_of_n, run_dual_agent, run_leader_follower, run_strategy, Episode, StrategyConfig,
    StrategyError, StrategyKind,
};
use common::{fixture_test_obs, two_demo_fixture, Recording};

fn arm_reply(x: u8, rot_z: u8) -> String {
    let a = DiscreteAction::new([x, 45, 20], [36, 0, rot_z], 1).unwrap();
    render_actions([a.to_array()])
}

fn verdict(score: u8) -> String {
    let checks = match score {
        5 => [1, 1, 0, 0],
        4 => [1, 1, -1, 0],
        3 => [1, -1, 0, 0],
        2 => [1, -1, -1, 0],
        _ => [-1, -1, -1, -1],
    };
    let v = JudgeVerdict::new(checks, Default::default());
    assert_eq!(v.score, score);
    v.to_json()
}

fn run(kind: StrategyKind, backend: Arc<dyn ChatBackend>, cfg: Option<StrategyConfig>) -> (Result<Vec<DiscreteAction>, StrategyError>, Gateway) {
    let gw = Gateway::new(backend);
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let cfg = cfg.unwrap_or_else(|| StrategyConfig::new(kind));
    let ep = Episode {
        gateway: &gw,
        demos: &demos,
        obs: &obs,
        seed: 7,
    };
    let out = run_strategy(ep, &cfg, None).map(|p| p.actions.iter().flat_map(|a| [a.right, a.left]).collect());
    (out, gw)
}

#[test]
fn call_budgets_match_strategy_shapes() {
    for kind in StrategyKind::ALL {
        let (out, gw) = run(kind, Arc::new(NearestDemoOracle::new()), None);
        out.unwrap();
        assert_eq!(gw.call_count(), kind.call_budget(5), "{kind:?}");
    }
    let want = [1, 2, 2, 4, 15, 25];
    let got: Vec<usize> = StrategyKind::ALL.iter().map(|k| k.call_budget(5)).collect();
    assert_eq!(got, want);
}

#[test]
fn two_parse_failures_cost_two_extra_calls_each() {
    for kind in StrategyKind::ALL {
        let flaky: Arc<dyn ChatBackend> = Arc::new(FlakyBackend::new(Arc::new(NearestDemoOracle::new()), 2));
        let (out, gw) = run(kind, flaky, None);
        out.unwrap();
        let budget = kind.call_budget(5);
        assert_eq!(gw.call_count(), budget * 3, "{kind:?}");
        assert_eq!(gw.stats().parse_failures, budget * 2, "{kind:?}");
    }
}

#[test]
fn third_parse_failure_exhausts_retries() {
    let flaky: Arc<dyn ChatBackend> = Arc::new(FlakyBackend::new(Arc::new(NearestDemoOracle::new()), 3));
    let (out, gw) = run(StrategyKind::LeaderFollower, flaky, None);
    let err = out.unwrap_err();
    assert_eq!(err.reason_tag(), "exhausted_retries@leader");
    assert_eq!(gw.call_count(), 3);
}

#[test]
fn debate_plan_comes_from_round_two() {
    let scripted = ScriptedBackend::new()
        .on_tag("r1/leader", arm_reply(60, 18))
        .on_tag("r1/follower", arm_reply(30, 54))
        .on_tag("r2/leader", arm_reply(61, 18))
        .on_tag("r2/follower", arm_reply(31, 54));
    let rec = Recording::new(Arc::new(scripted));
    let gw = Gateway::new(rec.clone());
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 0 };
    let plan = run_arms_debate(ep, &StrategyConfig::new(StrategyKind::ArmsDebate)).unwrap();
    assert_eq!(plan.actions.len(), 1);
    assert_eq!(plan.actions[0].right.voxel[0], 61);
    assert_eq!(plan.actions[0].left.voxel[0], 31);
    assert_eq!(plan.provenance.tags, ["r1/leader", "r1/follower", "r2/leader", "r2/follower"]);

    // Round 2 leader sees the round 1 follower; round 2 follower sees the round 2 leader.
    let r2l = parse_prompt(&rec.by_tag("r2/leader").user).unwrap();
    assert_eq!(r2l.test.partner().unwrap().actions[0].voxel[0], 30);
    let r2f = parse_prompt(&rec.by_tag("r2/follower").user).unwrap();
    assert_eq!(r2f.test.partner().unwrap().actions[0].voxel[0], 61);
}

#[test]
fn best_of_n_keeps_first_maximum() {
    let mut scripted = ScriptedBackend::new();
    for (j, s) in [3u8, 5, 5, 2, 4].into_iter().enumerate() {
        scripted = scripted
            .on_tag(format!("cand{j}/leader"), arm_reply(60 + j as u8, 18))
            .on_tag(format!("cand{j}/follower"), arm_reply(30, 54))
            .on_tag(format!("cand{j}/judge"), verdict(s));
    }
    let mut cfg = StrategyConfig::new(StrategyKind::BestOfN);
    cfg.judge_mode = JudgeMode::Llm;
    let gw = Gateway::new(Arc::new(scripted));
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 3 };
    let plan = run_strategy(ep, &cfg, None).unwrap();
    assert_eq!(plan.provenance.selected, Some(1));
    assert_eq!(plan.provenance.scores, [Some(3), Some(5), Some(5), Some(2), Some(4)]);
    assert_eq!(plan.actions[0].right.voxel[0], 61);
    assert_eq!(gw.call_count(), 15);
}

#[test]
fn best_of_n_skips_failed_candidates() {
    let mut scripted = ScriptedBackend::new();
    for (j, s) in [3u8, 5, 5, 2, 4].into_iter().enumerate() {
        let leader = if j == 1 { "no plan".to_string() } else { arm_reply(60 + j as u8, 18) };
        scripted = scripted
            .on_tag(format!("cand{j}/leader"), leader)
            .on_tag(format!("cand{j}/follower"), arm_reply(30, 54))
            .on_tag(format!("cand{j}/judge"), verdict(s));
    }
    let gw = Gateway::new(Arc::new(scripted));
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 3 };
    let plan = run_strategy(ep, &StrategyConfig::new(StrategyKind::BestOfN), None).unwrap();
    assert_eq!(plan.provenance.selected, Some(2));
    assert_eq!(plan.provenance.scores[1], None);
    assert!(!plan.provenance.tags.iter().any(|t| t.starts_with("cand1/")));
}

#[test]
fn best_of_n_fails_when_every_candidate_fails() {
    let gw = Gateway::new(Arc::new(ScriptedBackend::constant("nothing")));
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 3 };
    let err = run_best_of_n(ep, &StrategyConfig::new(StrategyKind::BestOfN), &RubricJudge).unwrap_err();
    match err {
        StrategyError::AllCandidatesFailed { failures } => assert_eq!(failures.len(), 5),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rubric_judge_adds_no_calls() {
    let mut cfg = StrategyConfig::new(StrategyKind::BestOfN);
    cfg.judge_mode = JudgeMode::Rubric;
    let (out, gw) = run(StrategyKind::BestOfN, Arc::new(NearestDemoOracle::new()), Some(cfg));
    out.unwrap();
    assert_eq!(gw.call_count(), 10);
}

#[test]
fn candidates_use_distinct_seeds_and_sampling_temperature() {
    let rec = Recording::new(Arc::new(NearestDemoOracle::new()));
    let (out, _) = run(StrategyKind::BestOfN, rec.clone(), None);
    out.unwrap();
    let mut seeds: Vec<u64> = (0..5).map(|j| rec.by_tag(&format!("cand{j}/leader")).seed).collect();
    assert!(rec.requests().iter().filter(|r| r.tag.ends_with("/leader")).all(|r| r.temperature == 1.0));
    assert!(rec.requests().iter().filter(|r| r.tag.ends_with("/judge")).all(|r| r.temperature == 0.0));
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 5);
}

#[test]
fn dual_agent_calls_are_independent() {
    let rec = Recording::new(Arc::new(NearestDemoOracle::new()));
    let gw = Gateway::new(rec.clone());
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 0 };
    run_dual_agent(ep, &StrategyConfig::new(StrategyKind::DualAgent)).unwrap();
    for (tag, arm) in [("right", Arm::Right), ("left", Arm::Left)] {
        let req = rec.by_tag(tag);
        assert_eq!(req.system, arm_system_prompt(arm));
        let parsed = parse_prompt(&req.user).unwrap();
        assert!(parsed.test.partner().is_none());
        assert!(parsed.demos.iter().all(|d| d.observation.partner().is_none()));
    }
}

#[test]
fn follower_sees_leader_prediction_verbatim() {
    let rec = Recording::new(Arc::new(ScriptedBackend::new().on_tag("leader", arm_reply(64, 18)).on_tag("follower", arm_reply(33, 54))));
    let gw = Gateway::new(rec.clone());
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 0 };
    let plan = run_leader_follower(ep, &StrategyConfig::new(StrategyKind::LeaderFollower)).unwrap();
    let follower = rec.by_tag("follower");
    assert!(follower.user.ends_with(&format!("'leader_arm': {}}}>", arm_reply(64, 18))));
    assert_eq!(plan.actions[0].right.voxel[0], 64);
    assert_eq!(plan.actions[0].left.voxel[0], 33);
}

#[test]
fn left_leader_swaps_roles() {
    let rec = Recording::new(Arc::new(ScriptedBackend::new().on_tag("leader", arm_reply(35, 54)).on_tag("follower", arm_reply(66, 18))));
    let gw = Gateway::new(rec.clone());
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &demos, obs: &obs, seed: 0 };
    let mut cfg = StrategyConfig::new(StrategyKind::LeaderFollower);
    cfg.leader_arm = Arm::Left;
    let plan = run_leader_follower(ep, &cfg).unwrap();
    assert_eq!(rec.by_tag("leader").system, arm_system_prompt(Arm::Left));
    assert_eq!(rec.by_tag("follower").system, arm_system_prompt(Arm::Right));
    let parsed = parse_prompt(&rec.by_tag("follower").user).unwrap();
    // Follower demos answer with right-arm actions, conditioned on the left arm.
    assert_eq!(parsed.demos[0].actions[0][0], 69);
    assert_eq!(parsed.demos[0].observation.partner().unwrap().actions[0].voxel[0], 18);
    assert_eq!(plan.actions[0].left.voxel[0], 35);
    assert_eq!(plan.actions[0].right.voxel[0], 66);
}

#[test]
fn empty_demo_batch_is_rejected() {
    let gw = Gateway::new(Arc::new(NearestDemoOracle::new()));
    let obs = fixture_test_obs();
    let ep = Episode { gateway: &gw, demos: &[], obs: &obs, seed: 0 };
    for kind in StrategyKind::ALL {
        assert!(matches!(run_strategy(ep, &StrategyConfig::new(kind), None), Err(StrategyError::NoDemos)));
    }
    assert_eq!(gw.call_count(), 0);
}
