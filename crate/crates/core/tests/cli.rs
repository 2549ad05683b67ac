mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kathleen::checkpoint;
use kathleen::config::RunConfig;
use kathleen::model::Kathleen;

fn kathleen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kathleen"))
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

fn write_toy(dir: &Path) {
    let splits = common::toy_splits();
    for (name, rows) in [("train.csv", &splits.train), ("test.csv", &splits.test)] {
        let mut w = csv::Writer::from_path(dir.join(name)).unwrap();
        w.write_record(["text", "label"]).unwrap();
        for e in rows.iter() {
            w.write_record([e.text.as_str(), &e.label.to_string()])
                .unwrap();
        }
        w.flush().unwrap();
    }
}

fn write_config(dir: &Path, extra_train: &str, d: usize) -> std::path::PathBuf {
    let path = dir.join("toy.toml");
    fs::write(
        &path,
        format!(
            "[model]\nd = {d}\nmax_len = 64\n\n[train]\nepochs = 2\n{extra_train}\n\n\
             [data]\ntrain_path = \"train.csv\"\ntest_path = \"test.csv\"\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn defaults_round_trip_through_the_parser() {
    let o = kathleen(&["inspect", "--defaults"]);
    assert!(o.status.success());
    let cfg = RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[model]\nhiden = 3\n").unwrap();
    let o = kathleen(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hiden"), "{}", stderr(&o));
}

#[test]
fn inspect_reports_structural_counts_and_rejects_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("m.kath");
    checkpoint::save(&good, &Kathleen::<f32>::new(Default::default(), 3).unwrap()).unwrap();
    let o = kathleen(&["inspect", good.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("tensor,encoder.wavetable,256,256,"));
    assert!(out.contains("tensor,harmonics.phases,6,6,"));
    assert!(out.contains("tensor,reverb.alpha_pos,256,256,"));

    let bad = dir.path().join("bad.kath");
    let mut bytes = fs::read(&good).unwrap();
    bytes[0] = b'X';
    fs::write(&bad, &bytes).unwrap();
    assert_eq!(
        kathleen(&["inspect", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    fs::write(&bad, &fs::read(&good).unwrap()[..100]).unwrap();
    assert_eq!(
        kathleen(&["inspect", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn gradcheck_passes_and_lists_stop_gradient_rows() {
    let o = kathleen(&["gradcheck", "--size", "tiny"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.starts_with("tensor,elements,max_rel_err,status\n"));
    assert!(out.contains("stopgrad:epm.phase_shift,"));
    assert!(out
        .lines()
        .filter(|l| l.starts_with("stopgrad:"))
        .all(|l| l.ends_with("SKIPPED-FD/PASS-adjoint")));
    assert!(!out.contains("FAIL"));
}

#[test]
fn gradcheck_flags_exactly_the_corrupted_tensor() {
    let o = kathleen(&["gradcheck", "--corrupt", "reverb.alpha_pos"]);
    assert_eq!(o.status.code(), Some(1));
    let failing: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| l.ends_with(",FAIL"))
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(failing, vec!["reverb.alpha_pos".to_string()]);
}

#[test]
fn bench_single_length_gives_one_row() {
    let o = kathleen(&["bench", "--lengths", "256", "--repeat", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "length,mean_ms,std_ms,peak_bytes");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("256,"));
    let peak: usize = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(peak > 0);
}

#[test]
fn bench_rejects_lengths_below_the_window() {
    let o = kathleen(&["bench", "--lengths", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("window"));
}

#[test]
fn missing_dataset_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", 16);
    let o = kathleen(&["train", "--config", cfg.to_str().unwrap(), "--seed", "42"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.csv"), "{}", stderr(&o));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = write_config(dir.path(), "", 32);
    let out = dir.path().join("runs");
    let o = kathleen(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "42",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report-seed42.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["epoch"], 1);
    assert_eq!(lines[1]["epoch"], 2);
    assert_eq!(lines[2]["run"]["seed"], 42);
    assert!(out.join("best-seed42.kath").exists());
    assert!(out.join("last-seed42.kath").exists());

    let best = out.join("best-seed42.kath");
    let o = kathleen(&[
        "evaluate",
        "--checkpoint",
        best.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["count"], 50);
    let rows: Vec<u64> = eval["confusion"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            r.as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_u64().unwrap())
                .sum()
        })
        .collect();
    assert_eq!(rows, vec![25, 25]);

    let other = write_config(dir.path(), "", 16);
    let o = kathleen(&[
        "evaluate",
        "--checkpoint",
        best.to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("encoder.wavetable"), "{}", stderr(&o));
}

#[test]
fn seed_sweep_prints_a_mean_std_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = write_config(dir.path(), "epochs = 1\nseeds = [1, 2]", 16);
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("epochs = 2\n", "");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("runs");
    let o = kathleen(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last: serde_json::Value = serde_json::from_str(stdout(&o).lines().last().unwrap()).unwrap();
    assert_eq!(last["summary"]["seeds"], serde_json::json!([1, 2]));
    assert!(last["summary"]["best_std"].as_f64().unwrap() >= 0.0);
    assert!(stderr(&o).contains("mean ± std"));
    assert!(out.join("report-seed1.jsonl").exists() && out.join("report-seed2.jsonl").exists());
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = write_config(dir.path(), "lr = 1e30", 16);
    let out = dir.path().join("runs");
    let o = kathleen(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("gradient norms"));
}
