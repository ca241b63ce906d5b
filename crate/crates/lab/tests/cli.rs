use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_d2dce");

/// A few hundred iterations on small networks: enough to exercise the
/// whole pipeline in well under a second of training.
const SMALL: &str = "\
method = reacgan
seeds = 0
total_iters = 30
n_dis = 1
batch_size = 16
g_hidden_width = 8
d_hidden_width = 8
embed_dim = 4
log_interval = 10
eval_samples = 100
";

fn d2dce(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, text).unwrap();
    path
}

fn run_mog(config: &Path, out: &Path, overrides: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "mog",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    for o in overrides {
        args.extend(["--override", o]);
    }
    d2dce(&args)
}

#[test]
fn version_prints_the_package_version() {
    let o = d2dce(&["version"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o).trim(),
        format!("d2dce {}", env!("CARGO_PKG_VERSION"))
    );
}

#[test]
fn verify_gradients_passes_with_enough_comparisons() {
    let o = d2dce(&["verify", "gradients"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(!lines.is_empty());
    for line in lines {
        assert!(line.starts_with("PASS"), "{line}");
        let count: usize = line
            .split(" over ")
            .nth(1)
            .and_then(|r| r.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .expect("comparison count");
        assert!(count >= 100, "{line}");
    }
}

#[test]
fn verify_all_is_deterministic() {
    let a = d2dce(&["verify", "all"]);
    let b = d2dce(&["verify", "all"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn injected_fault_fails_and_names_the_property() {
    let o = d2dce(&[
        "verify",
        "properties",
        "--inject-fault",
        "negative-similarity-sign",
    ]);
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.starts_with("FAIL") && l.contains("hard_negative_mining")),
        "{text}"
    );
    let o = d2dce(&[
        "verify",
        "gradients",
        "--inject-fault",
        "negative-similarity-sign",
    ]);
    assert!(!o.status.success());
}

#[test]
fn overrides_are_echoed_and_files_written() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = d2dce(&[
        "run",
        "mog",
        "--config",
        config.to_str().unwrap(),
        "--override",
        "method=reacgan_tac",
        "seed=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "report.csv",
        "curves.csv",
        "resolved_config.txt",
        "summary.txt",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("method = reacgan_tac\n"), "{resolved}");
    assert!(resolved.contains("seeds = 1\n"));
    assert!(resolved.contains("tau = 0.5\n"), "defaults are echoed too");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("mog,reacgan_tac,1,ok,"));
}

#[test]
fn missing_key_exits_nonzero_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seeds = 0\n");
    let o = run_mog(&config, &dir.path().join("out"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`method`"), "{}", stderr(&o));
}

#[test]
fn parse_errors_cite_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL}# fine\nlearning_rate = 0.1\n"));
    let o = run_mog(&config, &dir.path().join("out"), &[]);
    assert!(!o.status.success());
    let line = SMALL.lines().count() + 2;
    assert!(
        stderr(&o).contains(&format!("run.conf:{line}")),
        "{}",
        stderr(&o)
    );
    let o = run_mog(&config, &dir.path().join("out"), &["nonsense"]);
    assert!(!o.status.success());
}

#[test]
fn same_invocation_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(
            run_mog(&config, out, &["method=acgan,two_c", "mask_drop_p=0.25"])
                .status
                .success()
        );
    }
    for f in ["report.csv", "curves.csv", "resolved_config.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let first = dir.path().join("first");
    assert!(run_mog(&config, &first, &["lr_d=3e-4", "data=separated"])
        .status
        .success());
    let second = dir.path().join("second");
    assert!(run_mog(&first.join("resolved_config.txt"), &second, &[])
        .status
        .success());
    for f in ["report.csv", "curves.csv", "resolved_config.txt"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn divergence_is_reported_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}data = custom\nmeans = -1.6e308, 1.6e308\nstds = 1, 1\n");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = run_mog(&config, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(
        report.lines().nth(1).unwrap().contains(",diverged,"),
        "{report}"
    );
    assert!(stdout(&o).contains("diverged"));
}

#[test]
fn ablation_and_instability_run_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let base = SMALL.replace("method = reacgan\n", "");
    let config = write_config(dir.path(), &format!("{base}p_values = 0, 1\n"));
    let out = dir.path().join("ablation");
    let o = d2dce(&[
        "run",
        "ablation",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("p=1") && report.contains("positive term only"));

    let config = write_config(
        dir.path(),
        &format!("{base}normalize = true\nring_classes = 10\n"),
    );
    let out = dir.path().join("instability");
    let o = d2dce(&[
        "run",
        "instability",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("data = ring\n") && resolved.contains("ring_classes = 10\n"));
}
