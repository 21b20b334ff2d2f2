use std::path::Path;
use std::process::{Command, Output};

use anyhow::Result;
use dept::cli::{AttentionRow, ATTENTION_FILES};

fn dept(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dept"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn avg_tt(line: &str) -> f64 {
    let rest = line.split("AvgTT ").nth(1).expect("AvgTT printed");
    rest.split_whitespace().next().unwrap().parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// A tiny experiment: 2×2 grid, 2 + 1 short rounds, a small encoder.
fn tiny_experiment(dir: &Path) -> Result<()> {
    write(
        dir,
        "scenario.json",
        r#"{"version": 1, "rows": 2, "cols": 2, "lane_length": 300.0,
            "demand": {"preset": "grid-bi"}, "duration": 300}"#,
    )?;
    write(
        dir,
        "experiment.json",
        r#"{"version": 1, "scenario": "scenario.json", "seed": 5, "out": "run",
            "encoder": {"layers": 1, "heads": 2, "d_model": 8, "policy_dim": 2, "ffn_dim": 8, "t_max": 2},
            "schedule": {"total_rounds": 3, "il_rounds": 2, "round_duration": 200,
                         "updates_per_round": 2, "batch_size": 4, "target_sync": 2},
            "prefit": {"iterations": 200, "speed_iterations": 20}}"#,
    )
}

#[test]
fn simulate_baselines_print_metrics() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let ft = dept(dir.path(), &["simulate", "--controller", "fixed-time", "--seed", "1"]);
    assert_eq!(ft.status.code(), Some(0), "{}", stderr(&ft));
    let ft_tt = avg_tt(&stdout(&ft));
    assert!(ft_tt > 0.0);

    let mp = dept(dir.path(), &["simulate", "--controller", "max-pressure", "--seed", "1", "--out", "sim"]);
    assert_eq!(mp.status.code(), Some(0));
    let mp_tt = avg_tt(&stdout(&mp));
    assert!(mp_tt > 0.0 && mp_tt < ft_tt);
    let csv = std::fs::read_to_string(dir.path().join("sim/simulate.csv"))?;
    assert!(csv.starts_with("controller,seed,duration,avg_travel_time,avg_queue,entered,exited\n"));

    // same seed, same output
    let again = dept(dir.path(), &["simulate", "--controller", "fixed-time", "--seed", "1"]);
    assert_eq!(stdout(&again), stdout(&ft));
    Ok(())
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dept(dir.path(), &["grad-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    let err: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{line}");
}

#[test]
fn config_errors_exit_with_one() -> Result<()> {
    let dir = tempfile::tempdir()?;
    write(dir.path(), "v2.json", r#"{"version": 2}"#)?;
    write(dir.path(), "typo.json", r#"{"version": 1, "schedual": {}}"#)?;
    write(dir.path(), "missing.json", r#"{"version": 1, "scenario": "nowhere.json"}"#)?;
    write(dir.path(), "bad_schedule.json", r#"{"version": 1, "schedule": {"il_rounds": 9, "total_rounds": 3}}"#)?;
    let cases: &[&[&str]] = &[
        &[],
        &["frobnicate"],
        &["simulate", "--controller", "teleport"],
        &["simulate", "--controller", "dept"],
        &["--config", "absent.json", "simulate"],
        &["--config", "v2.json", "simulate"],
        &["--config", "typo.json", "simulate"],
        &["--config", "missing.json", "simulate"],
        &["--config", "bad_schedule.json", "train"],
        &["evaluate", "--checkpoint", "absent.json"],
        &["dump-attention", "--block", "7"],
        &["train", "--ablation", "half"],
    ];
    for args in cases {
        let o = dept(dir.path(), args);
        let err = stderr(&o);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {err}");
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("dept: "), "{args:?}: {err}");
    }
    Ok(())
}

#[test]
fn runtime_failure_exits_with_two() -> Result<()> {
    let dir = tempfile::tempdir()?;
    // the output directory cannot be created under a regular file
    write(dir.path(), "blocker", "")?;
    let o = dept(dir.path(), &["dump-attention", "--step", "2", "--out", "blocker/sub"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
    Ok(())
}

#[test]
fn train_evaluate_and_dump_round_trip() -> Result<()> {
    let dir = tempfile::tempdir()?;
    tiny_experiment(dir.path())?;
    let o = dept(dir.path(), &["--config", "experiment.json", "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut reader = csv::Reader::from_path(dir.path().join("run/learning_curve.csv"))?;
    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    assert_eq!(&headers[..6], ["round", "stage", "loss", "avg_travel_time", "avg_queue", "epsilon"]);
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][1], "il");
    assert_eq!(&rows[2][1], "rl");

    // a second run with the same seed reproduces the curve
    let again = dept(dir.path(), &["--config", "experiment.json", "--out", "run2", "train"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("run/learning_curve.csv"))?,
        std::fs::read_to_string(dir.path().join("run2/learning_curve.csv"))?
    );

    let eval = dept(dir.path(), &["evaluate", "--checkpoint", "run/checkpoint.json", "--seed", "3"]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    assert!(avg_tt(&stdout(&eval)) > 0.0);
    let sim = dept(
        dir.path(),
        &["simulate", "--controller", "dept", "--checkpoint", "run/checkpoint.json", "--seed", "3"],
    );
    assert_eq!(stdout(&sim), stdout(&eval));

    let dump = dept(
        dir.path(),
        &["dump-attention", "--checkpoint", "run/checkpoint.json", "--block", "0", "--head", "1", "--step", "3", "--out", "att"],
    );
    assert_eq!(dump.status.code(), Some(0), "{}", stderr(&dump));
    let fresh = |out: &str| dept(dir.path(), &["dump-attention", "--seed", "4", "--step", "2", "--out", out]);
    assert_eq!(fresh("f1").status.code(), Some(0));
    assert_eq!(fresh("f2").status.code(), Some(0));
    for file in ATTENTION_FILES {
        assert_eq!(std::fs::read(dir.path().join("f1").join(file))?, std::fs::read(dir.path().join("f2").join(file))?);
    }
    let read =|file: &str| -> Result<Vec<AttentionRow>> {
        let mut r = csv::Reader::from_path(dir.path().join("att").join(file))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        assert_eq!(&header[..3], ["block", "head", "step"]);
        Ok(r.deserialize().collect::<Result<_, _>>()?)
    };
    let parts: Vec<Vec<AttentionRow>> = ATTENTION_FILES.iter().map(|f| read(f)).collect::<Result<_>>()?;
    let tokens = 4 * 2;
    assert!(parts.iter().all(|p| p.len() == tokens * tokens));
    for i in 0..tokens * tokens {
        let (c, t, r, total) = (&parts[0][i], &parts[1][i], &parts[2][i], &parts[3][i]);
        assert_eq!((total.block, total.head, total.step), (0, 1, 3));
        if !total.masked {
            assert!((c.value + t.value + r.value - total.value).abs() < 1e-9);
        }
    }
    // attention weights are a distribution over each query's keys
    for q in 0..tokens {
        let row = &parts[4][q * tokens..(q + 1) * tokens];
        let sum: f64 = row.iter().map(|e| e.value).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(row.iter().filter(|e| e.masked).all(|e| e.value == 0.0));
    }
    Ok(())
}

#[test]
fn ablation_flag_reaches_the_checkpoint() -> Result<()> {
    let dir = tempfile::tempdir()?;
    tiny_experiment(dir.path())?;
    let o = dept(dir.path(), &["--config", "experiment.json", "--out", "tte", "train", "--ablation", "tte"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let c = dept::trainer::Checkpoint::load(&dir.path().join("tte/checkpoint.json"))?;
    assert_eq!(c.ablation, dept::trainer::AblationFlags::TTE);
    assert_eq!(c.seed, 5);
    Ok(())
}
