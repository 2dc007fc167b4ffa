use std::fs;

use bimanual_icl::eval::{
    aggregate, generate_datasets, read_episode_log, read_summary, report_tables, run_experiment, AggregateReport,
    RunConfig, EPISODES_FILE, REPORT_FILE, SUMMARY_FILE, TIMING_FILE,
};
use bimanual_icl::bench::TaskSpec;
use bimanual_icl::strategies::{StrategyConfig, StrategyKind};

fn small_config() -> RunConfig {
    RunConfig {
        tasks: vec!["handover".into()],
        strategies: vec![StrategyConfig::new(StrategyKind::LeaderFollower)],
        seeds: vec![0, 1],
        episodes: 5,
        n_demos: 4,
        pool_size: 12,
        ..RunConfig::default()
    }
}

#[test]
fn run_writes_ten_records_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out = Some(dir.path().to_path_buf());
    let (records, report) = run_experiment(&cfg).unwrap();
    assert_eq!(records.len(), 10);
    for name in [EPISODES_FILE, SUMMARY_FILE, TIMING_FILE, REPORT_FILE] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }

    let logged = read_episode_log(&dir.path().join(EPISODES_FILE)).unwrap();
    assert_eq!(logged, records);
    assert!(logged.iter().all(|r| r.calls == 2 && r.strategy == "LF"));
    let order: Vec<(u64, usize)> = logged.iter().map(|r| (r.seed, r.episode)).collect();
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(order, sorted);

    let summary = read_summary(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary, report.summary());
    let row = &summary.rows[0];
    assert_eq!(row.episodes, 10);
    assert_eq!(row.seed_success.len(), 2);
    assert_eq!(row.calls_mean, 2.0);
    assert_eq!(row.calls_sd, 0.0);

    // Re-aggregating the log reproduces the summary exactly.
    assert_eq!(aggregate(&logged).summary_json(), fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap());
}

#[test]
fn seed_means_and_sd_follow_records() {
    let (records, report) = run_experiment(&small_config()).unwrap();
    let per_seed: Vec<f64> = [0u64, 1]
        .iter()
        .map(|s| {
            let eps: Vec<_> = records.iter().filter(|r| r.seed == *s).collect();
            100.0 * eps.iter().filter(|r| r.success).count() as f64 / eps.len() as f64
        })
        .collect();
    let row = &report.rows[0];
    assert_eq!(row.seed_success, per_seed);
    let m = (per_seed[0] + per_seed[1]) / 2.0;
    let sd = ((per_seed[0] - m).powi(2) + (per_seed[1] - m).powi(2)).sqrt();
    assert!((row.success_mean - m).abs() < 1e-4);
    assert!((row.success_sd - sd).abs() < 1e-4);
}

#[test]
fn tables_list_every_row() {
    let (_, report) = run_experiment(&small_config()).unwrap();
    let text = report_tables(&report);
    assert!(text.contains("handover"));
    assert!(text.contains("LF"));
    let restored = AggregateReport::from_summary(report.summary());
    assert_eq!(restored.rows, report.rows);
}

#[test]
fn datasets_on_disk_match_generated_pool() {
    let dir = tempfile::tempdir().unwrap();
    let task = TaskSpec::builtin("handover").unwrap();
    generate_datasets(&[task], 12, dir.path()).unwrap();
    let (generated, _) = run_experiment(&small_config()).unwrap();
    let mut cfg = small_config();
    cfg.dataset_dir = Some(dir.path().to_path_buf());
    let (loaded, _) = run_experiment(&cfg).unwrap();
    let strip = |rs: &[bimanual_icl::eval::EpisodeRecord]| -> Vec<(bool, String, usize)> {
        rs.iter().map(|r| (r.success, r.reason.clone(), r.prompt_chars)).collect()
    };
    assert_eq!(strip(&generated), strip(&loaded));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small_config();
    cfg.episodes = 0;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small_config();
    cfg.pool_size = 2;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small_config();
    cfg.tasks = vec!["no-such-task".into()];
    assert!(run_experiment(&cfg).is_err());
}
