mod common;

use std::fs;

use bimanual_icl::prompt::{
    build_follower_prompt, build_judge_prompt, build_reversed_leader_prompt, build_single_prompt, parse_prompt,
    ArmFilter, PromptBundle,
};
use common::{
    bi, fixture_test_obs, golden_follower_pred as follower_pred, golden_leader_pred as leader_pred, golden_path,
    render_bundle as render, two_demo_fixture,
};

/// Compares against the stored file; `UPDATE_GOLDEN=1` rewrites it.
fn check(name: &str, bundle: &PromptBundle) {
    let path = golden_path(name);
    let got = render(bundle);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &got).unwrap();
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(got, want, "{name} drifted from its golden file");
}

#[test]
fn single_agent_prompt() {
    check("single_agent.txt", &build_single_prompt(&two_demo_fixture(), &fixture_test_obs(), ArmFilter::Both));
}

#[test]
fn leader_prompt() {
    check("leader.txt", &build_single_prompt(&two_demo_fixture(), &fixture_test_obs(), ArmFilter::Right));
}

#[test]
fn follower_prompt() {
    check(
        "follower.txt",
        &build_follower_prompt(&two_demo_fixture(), &fixture_test_obs(), &leader_pred(), true),
    );
}

#[test]
fn debate_round_two_leader_prompt() {
    check(
        "debate_r2_leader.txt",
        &build_reversed_leader_prompt(&two_demo_fixture(), &fixture_test_obs(), &follower_pred(), true),
    );
}

#[test]
fn judge_prompt() {
    let plan = vec![bi([71, 45, 30], 1, [18, 50, 60], 1), bi([71, 45, 20], 0, [38, 45, 40], 0)];
    check("judge.txt", &build_judge_prompt(&two_demo_fixture(), &fixture_test_obs(), &plan));
}

#[test]
fn rendered_prompts_parse_back() {
    let demos = two_demo_fixture();
    let obs = fixture_test_obs();
    let follower = build_follower_prompt(&demos, &obs, &leader_pred(), true);
    let parsed = parse_prompt(&follower.user_text).unwrap();
    assert_eq!(parsed.demos.len(), 2);
    assert_eq!(parsed.arity(), Some(7));
    assert_eq!(parsed.test.without_partner(), obs);
    assert_eq!(parsed.test.partner().unwrap().actions, leader_pred());
    for (p, d) in parsed.demos.iter().zip(&demos) {
        assert_eq!(p.observation.without_partner(), d.observation);
        let left: Vec<Vec<i64>> = d.actions.iter().map(|a| a.left.to_array().map(i64::from).to_vec()).collect();
        assert_eq!(p.actions, left);
    }
}
