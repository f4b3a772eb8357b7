use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn setsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        "# tiny run\nbatch = 2\nqueue_capacity = 8\ncheckpoint_every = 1\nsteps = 50\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn gradcheck_reports_every_component_below_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(&["gradcheck", "--seed", "1", "--cases", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for row in rows {
        let err: f64 = row.split_whitespace().last().unwrap().parse().unwrap();
        assert!(err < 1e-4, "{row}");
    }
}

#[test]
fn pretrain_zero_steps_writes_initial_checkpoint_and_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(&["pretrain", "--steps", "0", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    assert!(run.join("checkpoint-000000.ckpt").is_file());
    assert_eq!(
        fs::read_to_string(run.join("metrics.csv")).unwrap(),
        "step,l_img,l_set,l_geo,total,pair_count,lr\n"
    );
}

#[test]
fn pretrain_is_byte_reproducible_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for out in ["a", "b"] {
        let o = setsim(
            &[
                "pretrain",
                "--config",
                &cfg,
                "--steps",
                "2",
                "--seed",
                "3",
                "--strategy",
                "hungarian",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_dir_sorted(&dir.path().join("a"));
    assert_eq!(a, read_dir_sorted(&dir.path().join("b")));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "checkpoint-000000.ckpt",
            "checkpoint-000001.ckpt",
            "checkpoint-000002.ckpt",
            "config.txt",
            "final.ckpt",
            "metrics.csv"
        ]
    );
    let config = fs::read_to_string(dir.path().join("a/config.txt")).unwrap();
    assert!(config.contains("steps = 2\n"));
    assert!(config.contains("seed = 3\n"));
    assert!(config.contains("strategy = hungarian\n"));
    assert!(config.contains("batch = 2\n"));
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn eval_matching_prints_five_strategy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(&["eval-matching", "--seed", "0", "--scenes", "10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let names: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(names, ["random", "sort", "hungarian", "set2set", "set2set-nn"]);
    for line in text.lines().skip(1) {
        let p: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn eval_matching_reads_a_pretrain_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(setsim(
        &["pretrain", "--config", &cfg, "--steps", "1", "--out", "run"],
        dir.path()
    )
    .status
    .success());
    let o = setsim(
        &[
            "eval-matching",
            "--checkpoint",
            "run/final.ckpt",
            "--scenes",
            "4",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval/eval-matching.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);
}

#[test]
fn probe_prints_an_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(&["probe", "--scenes", "30", "--epochs", "20"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc: f64 = stdout(&o)
        .trim()
        .strip_prefix("probe_accuracy ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn export_viz_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = setsim(
            &["export-viz", "--count", "2", "--strategy", "set2set-nn", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_dir_sorted(&dir.path().join("a"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, read_dir_sorted(&dir.path().join("b")));
}

#[test]
fn unknown_subcommand_or_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["pretrain", "--frobnicate"],
        &["pretrain", "--strategy", "nope"],
    ] {
        let o = setsim(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(
            String::from_utf8_lossy(&o.stderr).contains("Usage") || String::from_utf8_lossy(&o.stderr).contains("help")
        );
    }
}

#[test]
fn invalid_setting_exits_with_invariant_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(
        &["pretrain", "--delta", "1.5", "--steps", "0", "--out", "run"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
}

#[test]
fn missing_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = setsim(&["probe", "--checkpoint", "absent.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn malformed_inputs_exit_with_format_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    let o = setsim(&["eval-matching", "--checkpoint", "bad.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(5));

    fs::write(dir.path().join("bad.cfg"), "batch = many\n").unwrap();
    let o = setsim(&["pretrain", "--config", "bad.cfg", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}
