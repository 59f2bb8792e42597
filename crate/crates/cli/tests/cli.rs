use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DOMAIN: &str = r#"
[[domains]]
domain_id = "ID"
subjects = 6
clip_seconds = 12.0
hr_mean = HR
hr_stddev = 3.0
noise_level = NOISE
feature_dim = 8
"#;

fn config(dir: &Path, domains: &[(&str, f64, f64)]) -> PathBuf {
    let mut text = String::from("seed = 1\nfold_count = 2\nwidths = [8, 8, 8]\n");
    for (id, hr, noise) in domains {
        text.push_str(
            &DOMAIN
                .replace("ID", id)
                .replace("HR", &format!("{hr:.1}"))
                .replace("NOISE", &format!("{noise:.1}")),
        );
    }
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn three(dir: &Path) -> PathBuf {
    config(dir, &[("clean", 70.0, 0.0), ("mid", 90.0, 1.0), ("noisy", 110.0, 2.0)])
}

fn driftlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlens"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = driftlens(args);
    assert!(
        out.status.success(),
        "driftlens {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

#[test]
fn synth_writes_one_dump_per_domain() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), &[("a", 70.0, 0.0), ("b", 100.0, 1.0)]);
    let out = tmp.path().join("out");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    let mut dumps: Vec<String> = fs::read_dir(out.join("datasets"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".actv"))
        .collect();
    dumps.sort();
    assert_eq!(dumps, ["a.actv", "b.actv"]);
    let summary = fs::read_to_string(out.join("datasets/summary_stats.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(!out.join(".driftlens.lock").exists());
}

#[test]
fn full_run_is_complete_and_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let cfg = three(tmp.path());
    let (first, second) = (tmp.path().join("one"), tmp.path().join("two"));
    ok(&["run", "--config", s(&cfg), "--out", s(&first), "--svg"]);
    ok(&["run", "--config", s(&cfg), "--out", s(&second), "--svg"]);
    let (a, b) = (tree(&first), tree(&second));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs between runs", path.display());
    }
    for name in [
        "models/folds.json",
        "models/mid-fold1.json",
        "activations/clean-fold0__noisy.actv",
        "tables/mae_matrix.csv",
        "tables/ds_diff_long.csv",
        "correlations.csv",
        "selection.csv",
        "selection_summary.csv",
        "report/model_sim_heatmap.svg",
    ] {
        assert!(a.contains_key(Path::new(name)), "missing {name}");
    }
    // 3 domains x 2 folds
    assert_eq!(a.keys().filter(|p| p.starts_with("models") && p.extension().is_some_and(|e| e == "json")).count(), 7);
    let svg = String::from_utf8(a[Path::new("report/ds_sim_heatmap.svg")].clone()).unwrap();
    assert_eq!(svg.matches("<rect").count(), 9);
    assert!(svg.contains("inverted scale"));
}

#[test]
fn report_on_two_domains_draws_a_two_by_two_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), &[("a", 70.0, 0.0), ("b", 100.0, 1.0)]);
    let out = tmp.path().join("out");
    for stage in ["synth", "train", "eval", "metrics"] {
        ok(&[stage, "--config", s(&cfg), "--out", s(&out)]);
    }
    ok(&["report", "--config", s(&cfg), "--out", s(&out), "--svg"]);
    let svg = fs::read_to_string(out.join("report/mae_heatmap.svg")).unwrap();
    assert_eq!(svg.matches("<rect").count(), 4);
    let csv = fs::read_to_string(out.join("report/ds_diff_heatmap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn missing_upstream_names_the_producing_command() {
    let tmp = TempDir::new().unwrap();
    let cfg = three(tmp.path());
    let out = tmp.path().join("out");
    let res = driftlens(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("run `driftlens synth` first"), "{err}");

    let res = driftlens(&["select", "--config", s(&cfg), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("run `driftlens metrics --kind ds_diff` first"));
    assert!(!out.join(".driftlens.lock").exists());
}

#[test]
fn held_lock_is_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = three(tmp.path());
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".driftlens.lock"), "1\n").unwrap();
    let res = driftlens(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("locked"));
}

#[test]
fn fixture_select_reproduces_the_average_row() {
    let tmp = TempDir::new().unwrap();
    let fixtures = fixtures_dir();
    ok(&["select", "--fixtures", s(&fixtures), "--out", s(tmp.path())]);
    let summary = fs::read_to_string(tmp.path().join("fixture_selection_summary.csv")).unwrap();
    let got: BTreeMap<&str, f64> = summary
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    for (case, want) in [("Worst", 10.301), ("Average", 7.314), ("Best", 5.545), ("DS-diff", 6.888)] {
        assert!((got[case] - want).abs() <= 0.01, "{case}: {}", got[case]);
    }
    let table = fs::read_to_string(tmp.path().join("fixture_selection.csv")).unwrap();
    assert_eq!(table.lines().count(), 23);
}

#[test]
fn fixture_correlate_writes_composites() {
    let tmp = TempDir::new().unwrap();
    ok(&["correlate", "--fixtures", s(&fixtures_dir()), "--out", s(tmp.path())]);
    let csv = fs::read_to_string(tmp.path().join("fixture_composites.csv")).unwrap();
    let ds_diff: f64 = csv
        .lines()
        .find(|l| l.starts_with("DS-diff,"))
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!((ds_diff - 0.781).abs() <= 0.002);
    assert!(csv.contains("0.002381"));
}

#[test]
fn correlate_on_metric_equal_to_mae_gives_unit_r() {
    let tmp = TempDir::new().unwrap();
    let cfg = three(tmp.path());
    let out = tmp.path().join("out");
    let mut long = String::from("train_domain,test_domain,fold,value\n");
    let names = ["clean", "mid", "noisy"];
    for (x, a) in names.iter().enumerate() {
        for (y, b) in names.iter().enumerate() {
            for f in 0..2 {
                long.push_str(&format!("{a},{b},{f},{}\n", 1.0 + (x * 2 + y * y + f) as f64));
            }
        }
    }
    fs::create_dir_all(out.join("tables")).unwrap();
    for slug in ["mae", "ds_diff", "ds_sim", "model_sim"] {
        fs::write(out.join(format!("tables/{slug}_long.csv")), &long).unwrap();
    }
    ok(&["correlate", "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("correlations.csv")).unwrap();
    for line in csv.lines().skip(1).filter(|l| !l.starts_with("Composite")) {
        let cells: Vec<&str> = line.split(',').collect();
        for r in [cells[1], cells[4], cells[7]] {
            assert_eq!(r, "1.000000", "{line}");
        }
    }
}

#[test]
fn bad_config_is_rejected_before_any_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "fold_count = 2\nbogus = 1\n").unwrap();
    let out = tmp.path().join("out");
    let res = driftlens(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("invalid config"));
    assert!(!out.exists());
}

#[test]
fn bundled_grid_config_loads() {
    let tmp = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/grid5.toml");
    ok(&["synth", "--config", s(&cfg), "--out", s(tmp.path())]);
    let summary = fs::read_to_string(tmp.path().join("datasets/summary_stats.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
}
