use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPHERE: &str = r#"
label = "sphere"

[problem]
kind = "benchmark"
function = "sphere"
dim = 2

[run]
max_generations = 10
"#;

fn hygo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hygo-opt"))
        .args(args)
        .env_remove("HYGO_OPT_JOBS")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn run_is_reproducible_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sphere.toml", SPHERE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = hygo(&["run", "--config", &config, "--seed", "7", "--override", "ga.pm=0.45", "--out", &s(out)]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        let stdout = text(&o.stdout);
        assert!(stdout.contains("pm = 0.45"), "{stdout}");
        assert!(stdout.contains("seed = 7"), "{stdout}");
    }
    for file in ["sphere.log.csv", "sphere.series.csv", "sphere.config.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let log = fs::read_to_string(a.join("sphere.log.csv")).unwrap();
    assert!(log.starts_with("index,stage,generation,origin,flagged,phenotype,cost,genome\n"));
    // The echoed configuration is itself a valid configuration.
    let again = hygo(&[
        "run",
        "--config",
        &s(&a.join("sphere.config.toml")),
        "--out",
        &s(&dir.path().join("c")),
    ]);
    assert!(again.status.success(), "{}", text(&again.stderr));
    assert_eq!(
        fs::read(a.join("sphere.log.csv")).unwrap(),
        fs::read(dir.path().join("c/sphere.log.csv")).unwrap()
    );
}

#[test]
fn configuration_errors_are_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write_config(dir.path(), "missing.toml", "[run]\nseed = 1\n");
    let o = hygo(&["run", "--config", &missing]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("missing key `problem`"), "{}", text(&o.stderr));

    let typo = write_config(dir.path(), "typo.toml", &SPHERE.replace("max_generations", "max_generation"));
    let o = hygo(&["run", "--config", &typo]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(err.contains("max_generation") && err.contains("line"), "{err}");

    let good = write_config(dir.path(), "good.toml", SPHERE);
    let o = hygo(&["run", "--config", &good, "--override", "ga.bogus=1"]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("bogus"));
}

#[test]
fn kfold_rejects_zero_runs_and_is_jobs_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sphere.toml", SPHERE);
    let o = hygo(&["kfold", "--config", &config, "-k", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));

    let mut summaries = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        let o = hygo(&["kfold", "--config", &config, "-k", "6", "--jobs", jobs, "--out", &s(&out)]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        summaries.push(fs::read_to_string(out.join("sphere.summary.csv")).unwrap());
        assert_eq!(
            fs::read_to_string(out.join("sphere.runs.csv")).unwrap().lines().count(),
            7
        );
    }
    assert_eq!(summaries[0], summaries[1]);
    let row: Vec<&str> = summaries[0].lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..5], ["sphere", "sphere-2d", "6", "6", "100"]);
}

#[test]
fn jobs_default_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sphere.toml", SPHERE);
    let o = Command::new(env!("CARGO_BIN_EXE_hygo-opt"))
        .args(["kfold", "--config", &config, "-k", "2", "--out", &s(dir.path())])
        .env("HYGO_OPT_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
}

/// External evaluator returning the sum of squares that dies once when it
/// receives evaluation 120, if the marker file does not exist yet.
fn external_config(marker: &Path) -> String {
    let script = r#"while read tag run idx rest; do
  if [ "$idx" = "120" ] && [ ! -e "$1" ]; then touch "$1"; exit 3; fi
  awk -v i="$idx" -v r="$rest" 'BEGIN { n = split(r, p, " "); s = 0; for (k = 1; k <= n; k++) s += p[k] * p[k]; printf "OK %s %.17g\n", i, s }'
done"#;
    let marker = marker.display().to_string();
    format!(
        r#"label = "ext"

[problem]
kind = "external"
command = "sh"
args = ["-c", {script:?}, "stub", {marker:?}]
timeout = 10.0
space = [{{ min = -5.0, max = 5.0, bits = 12 }}, {{ min = -5.0, max = 5.0, bits = 12 }}]

[run]
max_generations = 4
seed = 3
"#
    )
}

#[test]
fn crashed_run_resumes_to_the_uninterrupted_result() {
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("crashed");
    let config = write_config(dir.path(), "ext.toml", &external_config(&marker));
    let ckpt = dir.path().join("ckpt");

    let o = hygo(&["run", "--config", &config, "--checkpoint-dir", &s(&ckpt), "--out", &s(&dir.path().join("crash"))]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(err.contains("evaluation 120") && err.contains("resume with checkpoint"), "{err}");
    assert!(marker.exists());

    let resumed_out = dir.path().join("resumed");
    let o = hygo(&["resume", &s(&ckpt.join("ext.ckpt")), "--out", &s(&resumed_out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));

    let reference_out = dir.path().join("reference");
    let o = hygo(&["run", "--config", &config, "--out", &s(&reference_out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    for file in ["log.csv", "series.csv"] {
        assert_eq!(
            fs::read(resumed_out.join(format!("ext.{file}"))).unwrap(),
            fs::read(reference_out.join(format!("ext.{file}"))).unwrap(),
            "{file}"
        );
    }

    let o = hygo(&["resume", &s(&ckpt.join("ext.ckpt")), "--out", &s(&dir.path().join("again"))]);
    assert!(o.status.success());
    assert!(text(&o.stdout).contains("already terminated"));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sphere.toml", SPHERE);
    let ckpt = dir.path().join("ckpt");
    let o = hygo(&["run", "--config", &config, "--checkpoint-dir", &s(&ckpt), "--out", &s(dir.path())]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let path = ckpt.join("sphere.ckpt");
    let blob = fs::read_to_string(&path).unwrap();

    let old = dir.path().join("old.ckpt");
    fs::write(&old, blob.replacen("hygo-checkpoint 1 ", "hygo-checkpoint 0 ", 1)).unwrap();
    let o = hygo(&["resume", &s(&old)]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("version"), "{}", text(&o.stderr));

    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &blob[..blob.len() / 2]).unwrap();
    let o = hygo(&["resume", &s(&cut)]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("corrupted"), "{}", text(&o.stderr));

    let o = hygo(&["resume", &s(&dir.path().join("absent.ckpt"))]);
    assert!(!o.status.success());
}

#[test]
fn report_summarises_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sphere.toml", SPHERE);
    let runs = dir.path().join("runs");
    for seed in ["1", "2"] {
        let o = hygo(&[
            "run",
            "--config",
            &config,
            "--seed",
            seed,
            "--override",
            &format!("label=\"s{seed}\""),
            "--override",
            "stop_at_target=false",
            "--override",
            "max_generations=4",
            "--out",
            &s(&runs),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    let report = dir.path().join("report");
    let o = hygo(&["report", &s(&runs.join("s1.log.csv")), "--out", &s(&report)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let series = fs::read_to_string(report.join("s1.series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 4);
    assert!(report.join("s1.scatter.csv").exists());

    let o = hygo(&[
        "report",
        &s(&runs.join("s1.log.csv")),
        &s(&runs.join("s2.log.csv")),
        "--out",
        &s(&report),
    ]);
    assert!(o.status.success());
    let table = text(&o.stdout);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("log") && lines[0].contains("best_cost"));
    let column = lines[0].find("evaluations").unwrap();
    assert!(lines[1..].iter().all(|l| l[column..].chars().next().unwrap().is_ascii_digit()));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "index,stage\n0,0\n").unwrap();
    let o = hygo(&["report", &s(&bad)]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("bad.csv: line 1"));
}

#[test]
fn report_prints_the_best_control_law() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "landau.toml",
        r#"label = "landau"

[problem]
kind = "landau"
periods = 5.0

[run]
mode = "lgp"
n_init = 12
n_explor = 12
n_exploit = 4
max_generations = 2
"#,
    );
    let out = dir.path().join("out");
    let o = hygo(&["run", "--config", &config, "--out", &s(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("landau: b0 = "));
    let o = hygo(&["report", &s(&out.join("landau.log.csv")), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("b0 = "), "{stdout}");
}
