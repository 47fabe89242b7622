use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use async_explore::engine::EpisodeLog;
use async_explore::experiment::read_results_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_async-explore"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const RUN: &str = r#"
map_size = 15
n_agents = 2
episodes = 3
seed = 4

[decider]
kind = "planner"
planner = "nearest"
"#;

#[test]
fn run_writes_logs_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", RUN);
    let out = dir.path().join("out");
    let stdout = ok(bin()
        .args(["--jobs", "2", "run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    assert!(stdout.contains("nearest"));
    let rows = read_results_csv(fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].episodes, 3);
    assert_eq!(fs::read_dir(out.join("logs")).unwrap().count(), 3);
}

#[test]
fn single_episode_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", &RUN.replace("episodes = 3", "episodes = 1"));
    let mut texts = Vec::new();
    for (k, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{k}"));
        ok(bin()
            .args(["--jobs", jobs, "run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap());
        texts.push(fs::read_to_string(out.join("logs/episode_0000.jsonl")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let log = EpisodeLog::from_jsonl(&texts[0]).unwrap();
    assert_eq!(log.header.meta["experiment"]["seed"], 4);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &RUN.replace("episodes = 3", "episodes = 1"));
    let out = dir.path().join("o");
    ok(bin()
        .args(["run", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let saved = fs::read_to_string(out.join("config.json")).unwrap();
    assert!(saved.contains("\"seed\": 9"));
}

#[test]
fn bad_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "map_size = 15\nplanner = \"nearest\"\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml"), "{err}");

    let cfg = write(dir.path(), "zero.toml", "episodes = 0\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn compare_matrix_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.toml",
        r#"
planners = ["nearest", "utility"]
modes = ["sync", "async"]
[base]
map_size = 15
n_agents = 2
episodes = 2
seed = 1
"#,
    );
    let out = dir.path().join("cmp");
    ok(bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let rows = read_results_csv(fs::File::open(out.join("compare.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let paired = fs::read_to_string(out.join("paired.csv")).unwrap();
    let header = paired.lines().next().unwrap();
    assert!(header.contains("nearest_async_minus_sync"));
    assert_eq!(paired.lines().count(), 3);
}

#[test]
fn compare_refuses_mismatched_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", RUN);
    let b = write(dir.path(), "b.toml", &RUN.replace("map_size = 15", "map_size = 25"));
    let out = bin()
        .args(["compare", "--config"])
        .arg(&a)
        .arg("--config")
        .arg(&b)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not comparable"));
}

const TRAIN: &str = r#"
seed = 2
map_size = 15
step_max = 0
episodes_per_batch = 2
eval_every = 1
eval_episodes = 2
[engine]
n_agents = 2
[hyper]
lr = 0.001
"#;

#[test]
fn train_zero_steps_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", TRAIN);
    let out = dir.path().join("t");
    ok(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    assert!(out.join("policy.bin").exists());
    assert!(out.join("policy.json").exists());
    assert!(!out.join("curves.csv").exists());
    let saved = fs::read_to_string(out.join("train_config.json")).unwrap();
    assert!(saved.contains("\"t_max_s\": 200.0"));
}

#[test]
fn train_resumes_without_step_discontinuity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let first = write(dir.path(), "a.toml", &TRAIN.replace("step_max = 0", "step_max = 60"));
    ok(bin()
        .args(["train", "--config"])
        .arg(&first)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    let n1 = curves.lines().count() - 1;
    assert!(n1 >= 1);
    let second = write(dir.path(), "b.toml", &TRAIN.replace("step_max = 0", "step_max = 200"));
    ok(bin()
        .args(["train", "--config"])
        .arg(&second)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());

    let mut rd = csv::Reader::from_path(out.join("curves.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    let bi = headers.iter().position(|h| h == "batch").unwrap();
    let si = headers.iter().position(|h| h == "steps").unwrap();
    let rows: Vec<(usize, u64)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[bi].parse().unwrap(), r[si].parse().unwrap())
        })
        .collect();
    assert!(rows.len() > n1);
    for (k, w) in rows.windows(2).enumerate() {
        assert_eq!(w[1].0, w[0].0 + 1, "batch gap after row {k}");
        assert!(w[1].1 > w[0].1, "steps not increasing after row {k}");
    }
    assert!(rows.last().unwrap().1 >= 200);
    let evals = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(evals.lines().count() - 1, rows.len());
}

#[test]
fn eval_rows_follow_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.toml",
        &TRAIN
            .replace("step_max = 0", "step_max = 300")
            .replace("eval_every = 1", "eval_every = 2"),
    );
    let out = dir.path().join("t");
    ok(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let batches = fs::read_to_string(out.join("curves.csv")).unwrap().lines().count() - 1;
    let evals = fs::read_to_string(out.join("eval.csv")).unwrap().lines().count() - 1;
    assert_eq!(evals, batches / 2);
}

#[test]
fn replay_frames_and_every() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", &RUN.replace("episodes = 3", "episodes = 1"));
    let out = dir.path().join("o");
    ok(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let log_path = out.join("logs/episode_0000.jsonl");
    let log = EpisodeLog::from_jsonl(&fs::read_to_string(&log_path).unwrap()).unwrap();

    let all = ok(bin().arg("replay").arg(&log_path).output().unwrap());
    let headers: Vec<&str> = all.lines().filter(|l| l.starts_with("t=")).collect();
    assert_eq!(headers.len(), log.events.len() + 1);
    let expected = (log.summary.final_ratio * log.header.reachable_cells as f64).round() as usize;
    assert!(headers
        .last()
        .unwrap()
        .ends_with(&format!("explored={expected}/{}", log.header.reachable_cells)));

    let k = 10;
    let sparse = ok(bin()
        .arg("replay")
        .arg(&log_path)
        .args(["--every", "10"])
        .output()
        .unwrap());
    let n = sparse.lines().filter(|l| l.starts_with("t=")).count();
    let n_events = log.events.len();
    assert_eq!(n, 1 + n_events / k + usize::from(n_events % k != 0));
    assert_eq!(all, ok(bin().arg("replay").arg(&log_path).output().unwrap()));
}

#[test]
fn replay_of_header_only_log_shows_initial_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", &RUN.replace("episodes = 3", "episodes = 1"));
    let out = dir.path().join("o");
    ok(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let text = fs::read_to_string(out.join("logs/episode_0000.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let trimmed = write(
        dir.path(),
        "empty.jsonl",
        &format!("{}\n{}\n", lines[0], lines.last().unwrap()),
    );
    let frames = ok(bin().arg("replay").arg(&trimmed).output().unwrap());
    assert_eq!(frames.lines().filter(|l| l.starts_with("t=")).count(), 1);
    assert_eq!(frames.lines().count(), 16);
}

#[test]
fn corrupt_log_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", &RUN.replace("episodes = 3", "episodes = 1"));
    let out = dir.path().join("o");
    ok(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let text = fs::read_to_string(out.join("logs/episode_0000.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = "{not json".into();
    let bad = write(dir.path(), "bad.jsonl", &lines.join("\n"));
    let res = bin().arg("replay").arg(&bad).output().unwrap();
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn map_gen_matches_run_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "maps.toml", "map_size = 15\ncount = 2\nseed = 4\n");
    let out = dir.path().join("maps");
    ok(bin()
        .args(["map-gen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let run_cfg = write(dir.path(), "run.toml", &RUN.replace("episodes = 3", "episodes = 2"));
    let run_out = dir.path().join("r");
    ok(bin()
        .args(["run", "--config"])
        .arg(&run_cfg)
        .arg("--out")
        .arg(&run_out)
        .output()
        .unwrap());
    for i in 0..2 {
        let map = fs::read_to_string(out.join(format!("map_{i:04}.txt"))).unwrap();
        let log =
            EpisodeLog::from_jsonl(&fs::read_to_string(run_out.join(format!("logs/episode_{i:04}.jsonl"))).unwrap())
                .unwrap();
        assert_eq!(map.lines().collect::<Vec<_>>(), log.header.map);
    }
    let stdout = ok(bin().args(["map-gen", "--seed", "1"]).output().unwrap());
    assert_eq!(stdout.lines().count(), 15);
}

#[test]
fn map_file_flag_replays_one_map() {
    let dir = tempfile::tempdir().unwrap();
    let maps = dir.path().join("maps");
    ok(bin()
        .args(["map-gen", "--seed", "9", "--out"])
        .arg(&maps)
        .output()
        .unwrap());
    let map_path = maps.join("map_0000.txt");
    let map = fs::read_to_string(&map_path).unwrap();
    let cfg = write(dir.path(), "run.toml", RUN);
    let out = dir.path().join("r");
    ok(bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--map-file")
        .arg(&map_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    for i in 0..3 {
        let log = EpisodeLog::from_jsonl(&fs::read_to_string(out.join(format!("logs/episode_{i:04}.jsonl"))).unwrap())
            .unwrap();
        assert_eq!(map.lines().collect::<Vec<_>>(), log.header.map);
    }
    fs::write(&map_path, "#####\n#...#\n#####\n").unwrap();
    let bad = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--map-file")
        .arg(&map_path)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("expected 15x15"));
}

#[test]
fn jobs_zero_is_rejected() {
    let out = bin().args(["--jobs", "0", "map-gen"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["nearest_15.toml", "loss_25.toml"] {
        let text = fs::read_to_string(root.join(name)).unwrap();
        let cfg: async_explore::experiment::ExperimentConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
    }
    let text = fs::read_to_string(root.join("train_15.toml")).unwrap();
    let cfg: async_explore::training::TrainConfig = toml::from_str(&text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.hyper, async_explore::training::TrainHyper::desk_preset());
    let table: toml::Table = fs::read_to_string(root.join("table_15.toml")).unwrap().parse().unwrap();
    assert!(table.contains_key("base"));
}
