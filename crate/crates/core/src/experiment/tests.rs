use super::*;
use crate::engine::EventKind;

fn small(planner: PlannerKind, mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        decider: Decider::Planner {
            planner,
            params: PlannerParams::default(),
        },
        mode,
        episodes: 6,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn results_header_is_stable() {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &[]).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "planner,mode,map_size,n_agents,time_mean,time_std,overlap_mean,overlap_std,\
         coverage_mean,coverage_std,acs_mean,acs_std,episodes\n"
    );
}

#[test]
fn results_roundtrip_losslessly() {
    let cfg = small(PlannerKind::Nearest, Mode::Async);
    let out = run_experiment(&cfg).unwrap();
    let metrics: Vec<_> = out.iter().map(|o| o.metrics).collect();
    let mut row = ResultRow::new(&cfg, &metrics).unwrap();
    row.time_std = 0.1 + 0.2;
    let mut other = row.clone();
    other.planner = "mcp".into();
    other.mode = Mode::Sync;
    other.overlap_mean = f64::NAN;
    other.overlap_std = f64::NAN;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &[row.clone(), other.clone()]).unwrap();
    let back = read_results_csv(buf.as_slice()).unwrap();
    assert_eq!(back[0], row);
    assert_eq!(back[0].stats(), row.stats());
    assert!(back[1].overlap_mean.is_nan() && back[1].overlap_std.is_nan());
    assert_eq!(back[1].time_std.to_bits(), other.time_std.to_bits());
    assert_eq!(back[1].mode, Mode::Sync);
}

#[test]
fn foreign_header_is_rejected() {
    assert!(read_results_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn summary_matches_per_episode_oracle() {
    let cfg = small(PlannerKind::Voronoi, Mode::Async);
    let out = run_experiment(&cfg).unwrap();
    let row = ResultRow::new(&cfg, &out.iter().map(|o| o.metrics).collect::<Vec<_>>()).unwrap();
    let times: Vec<f64> = out.iter().map(|o| o.metrics.time_or(cfg.t_max())).collect();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((row.time_mean - mean).abs() < 1e-9);
    assert!((row.time_std - std).abs() < 1e-9);
    assert_eq!(row.episodes, 6);
    assert_eq!(row.planner, "voronoi");
}

#[test]
fn runs_are_deterministic_and_embed_their_config() {
    let cfg = small(PlannerKind::Rrt, Mode::Sync);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.log.to_jsonl(), y.log.to_jsonl());
    }
    let meta = &a[3].log.header.meta;
    assert_eq!(meta["episode"], 3);
    let back: ExperimentConfig = serde_json::from_value(meta["experiment"].clone()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn order_does_not_depend_on_pool_size() {
    let cfg = small(PlannerKind::Apf, Mode::Async);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap())
    };
    let one = run(1);
    let three = run(3);
    let idx: Vec<u64> = three.iter().map(|o| o.index).collect();
    assert_eq!(idx, (0..6).collect::<Vec<_>>());
    for (x, y) in one.iter().zip(&three) {
        assert_eq!(x.log.to_jsonl(), y.log.to_jsonl());
    }
}

#[test]
fn modes_share_episode_seeds() {
    let a = run_experiment(&small(PlannerKind::Nearest, Mode::Async)).unwrap();
    let s = run_experiment(&small(PlannerKind::Nearest, Mode::Sync)).unwrap();
    for (x, y) in a.iter().zip(&s) {
        assert_eq!(x.log.header.seeds, y.log.header.seeds);
        assert_eq!(x.log.header.map, y.log.header.map);
        assert_eq!(x.log.header.spawns, y.log.header.spawns);
    }
}

#[test]
fn compare_builds_the_matrix() {
    let configs: Vec<_> = [PlannerKind::Nearest, PlannerKind::Utility]
        .into_iter()
        .flat_map(|p| [small(p, Mode::Sync), small(p, Mode::Async)])
        .map(|mut c| {
            c.episodes = 3;
            c
        })
        .collect();
    let cmp = compare(&configs).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    assert_eq!(
        cmp.columns,
        ["nearest_sync", "nearest_async", "utility_sync", "utility_async"]
    );

    let a = run_experiment(&configs[1]).unwrap();
    let s = run_experiment(&configs[0]).unwrap();
    let cap = configs[0].t_max();
    let oracle: Vec<f64> = a
        .iter()
        .zip(&s)
        .map(|(x, y)| x.metrics.time_or(cap) - y.metrics.time_or(cap))
        .collect();
    assert_eq!(cmp.async_minus_sync("nearest").unwrap(), oracle);

    let mut buf = Vec::new();
    cmp.write_paired_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,nearest_sync_time,nearest_async_time,utility_sync_time,utility_async_time,\
         nearest_async_minus_sync,utility_async_minus_sync"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn compare_refuses_mismatched_configs() {
    let a = small(PlannerKind::Nearest, Mode::Async);
    let mut b = small(PlannerKind::Nearest, Mode::Sync);
    b.map_size = 25;
    assert!(matches!(
        compare(&[a.clone(), b.clone()]),
        Err(ExperimentError::RefusesMismatched(_))
    ));
    b.map_size = 15;
    b.n_agents = 3;
    assert!(matches!(
        check_comparable(&[a.clone(), b]),
        Err(ExperimentError::RefusesMismatched(_))
    ));
    assert!(matches!(
        check_comparable(&[a.clone(), a.clone()]),
        Err(ExperimentError::RefusesMismatched(_))
    ));
    assert!(matches!(
        check_comparable(&[a]),
        Err(ExperimentError::RefusesMismatched(_))
    ));
}

#[test]
fn write_run_lays_out_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(PlannerKind::Nearest, Mode::Async);
    cfg.episodes = 2;
    let out = run_experiment(&cfg).unwrap();
    let row = write_run(dir.path(), &cfg, &out).unwrap();
    let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(read_results_csv(text.as_bytes()).unwrap(), vec![row]);
    let cfg_back: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(cfg_back, cfg);
    for o in &out {
        let text = fs::read_to_string(dir.path().join(LOG_DIR).join(log_file_name(o.index))).unwrap();
        let log = EpisodeLog::from_jsonl(&text).unwrap();
        assert_eq!(log.events, o.log.events);
        assert_eq!(log.events.last().unwrap().kind, EventKind::End);
    }
    let episodes = fs::read_to_string(dir.path().join(EPISODES_FILE)).unwrap();
    assert_eq!(episodes.lines().count(), 3);
}

#[test]
fn random_and_policy_deciders_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let policy = Policy::new(crate::policy::PolicyConfig::default(), &mut rng).unwrap();
    let path = dir.path().join("p.bin");
    policy.save(&path).unwrap();
    for decider in [
        Decider::Random { goal_grid: 5 },
        Decider::Policy {
            checkpoint: path.clone(),
            greedy: false,
        },
    ] {
        let cfg = ExperimentConfig {
            decider,
            episodes: 2,
            ..Default::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.len(), 2);
    }
    let missing = ExperimentConfig {
        decider: Decider::Policy {
            checkpoint: dir.path().join("none.bin"),
            greedy: false,
        },
        ..Default::default()
    };
    assert!(matches!(run_experiment(&missing), Err(ExperimentError::Checkpoint(_))));
}

#[test]
fn invalid_configs_are_refused() {
    let mut cfg = ExperimentConfig::default();
    cfg.episodes = 0;
    assert!(cfg.validate().is_err());
    cfg.episodes = 1;
    cfg.n_agents = 0;
    assert!(cfg.validate().is_err());
    let json = r#"{"map_size": 15, "bogus": 1}"#;
    assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
}

#[test]
fn t_max_follows_map_size_unless_set() {
    let mut cfg = ExperimentConfig::default();
    assert_eq!(cfg.t_max(), default_t_max(15));
    cfg.map_size = 25;
    assert_eq!(cfg.engine_config().t_max_s, default_t_max(25));
    cfg.t_max_s = Some(42.0);
    assert_eq!(cfg.engine_config().t_max_s, 42.0);
}

#[test]
fn map_file_fixes_the_map_of_every_episode() {
    let dir = tempfile::tempdir().unwrap();
    let map = crate::worldgen::generate_map(&crate::scenario::map_spec(15, 3)).unwrap();
    let path = dir.path().join("map.txt");
    fs::write(&path, map.to_ascii()).unwrap();
    let mut cfg = small(PlannerKind::Nearest, Mode::Async);
    cfg.episodes = 3;
    cfg.map_file = Some(path.clone());
    let out = run_experiment(&cfg).unwrap();
    assert!(out
        .iter()
        .all(|o| o.log.header.map().unwrap().to_ascii() == map.to_ascii()));
    assert_ne!(out[0].log.header.spawns, out[1].log.header.spawns);

    let mut other = cfg.clone();
    other.mode = Mode::Sync;
    other.map_file = None;
    assert!(matches!(
        check_comparable(&[cfg.clone(), other]),
        Err(ExperimentError::RefusesMismatched(_))
    ));

    cfg.map_size = 25;
    assert!(matches!(run_experiment(&cfg), Err(ExperimentError::InvalidConfig(_))));
    fs::write(&path, "###\n#x#\n###\n").unwrap();
    cfg.map_size = 15;
    assert!(matches!(run_experiment(&cfg), Err(ExperimentError::Io { .. })));
}
