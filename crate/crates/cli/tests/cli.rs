use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIO: &str = r#"
antennas = 2
elements = 6
users = 4
slots_per_period = 5
d_theta = 3
d_beta = 1
d_w = 1
forgetting = 0.05
seed = 3
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-sched"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ris-sched")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_models(dir: &Path, cfg: &Path) -> PathBuf {
    let out = dir.join("gen");
    ok(&[
        "gen",
        "--config",
        s(cfg),
        "--out",
        s(&out),
        "--init-models",
        "--hidden",
        "8",
        "--embed-hidden",
        "8",
    ]);
    out
}

fn outputs(dir: &Path) -> Vec<Vec<u8>> {
    ["trace.csv", "summary.csv", "cdf.csv"]
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn three_stage_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    let models = gen_models(dir.path(), &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "run",
            "--config",
            s(&cfg),
            "--scheduler",
            "gnn3stage",
            "--mode",
            "extra_pilots",
            "--model-sched",
            s(&models.join("model_sched.bin")),
            "--model-ris",
            s(&models.join("model_ris.bin")),
            "--periods",
            "2",
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
    }
    assert_eq!(outputs(&a), outputs(&b));
    let trace = String::from_utf8(fs::read(a.join("trace.csv")).unwrap()).unwrap();
    assert!(trace.starts_with("period,slot,user,scheduled,weight,rate,slot_power,slot_objective,period_pilots\n"));
    assert_eq!(trace.lines().count(), 1 + 2 * 5 * 4);
    let summary = String::from_utf8(fs::read(a.join("summary.csv")).unwrap()).unwrap();
    assert!(summary.contains("pilot_overhead,22\n"), "{summary}");
}

#[test]
fn baselines_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    for (sched, csi) in [
        ("greedy_bcd", "perfect"),
        ("exhaustive", "perfect"),
        ("random", "estimated"),
        ("round_robin", "estimated"),
    ] {
        let out = dir.path().join(sched);
        ok(&[
            "run",
            "--config",
            s(&cfg),
            "--scheduler",
            sched,
            "--csi",
            csi,
            "--periods",
            "1",
            "--out",
            s(&out),
        ]);
        let cdf = String::from_utf8(fs::read(out.join("cdf.csv")).unwrap()).unwrap();
        assert!(cdf.starts_with("user,avg_rate,sched_fraction,cdf\n"));
        assert_eq!(cdf.lines().count(), 5);

        let again = dir.path().join(format!("{sched}_eval"));
        ok(&["eval", "--trace", s(&out.join("trace.csv")), "--out", s(&again)]);
        assert_eq!(
            fs::read(out.join("summary.csv")).unwrap(),
            fs::read(again.join("summary.csv")).unwrap()
        );
        assert_eq!(
            fs::read(out.join("cdf.csv")).unwrap(),
            fs::read(again.join("cdf.csv")).unwrap()
        );
    }
}

#[test]
fn gen_writes_pilots_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    let out = dir.path().join("gen");
    ok(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--realizations",
        "2",
        "--stats",
    ]);
    for f in ["pilots/0.csv", "pilots/0_phases.csv", "pilots/1.csv", "stats.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let pilots = fs::read_to_string(out.join("pilots/1.csv")).unwrap();
    assert!(pilots.starts_with("user,subframe,y0_re,y0_im,y1_re,y1_im\n"));
    assert_eq!(pilots.lines().count(), 1 + 4 * 3);
}

fn fails_with(args: &[&str], needle: &str) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "{args:?}: {err}");
}

#[test]
fn validation_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = scenario(
        dir.path(),
        "antennas = 2\nelements = 4\nusers = 3\nd_theta = 1\nd_beta = 2\n",
    );
    fails_with(
        &["run", "--config", s(&bad), "--scheduler", "random", "--out", s(&out)],
        "d_beta",
    );

    let cfg = scenario(dir.path(), SCENARIO);
    fails_with(
        &["run", "--config", s(&cfg), "--scheduler", "fastest", "--out", s(&out)],
        "unknown scheduler",
    );
    fails_with(
        &[
            "run",
            "--config",
            s(&cfg),
            "--scheduler",
            "random",
            "--csi",
            "genie",
            "--out",
            s(&out),
        ],
        "CSI mode",
    );
    fails_with(
        &["run", "--config", s(&cfg), "--scheduler", "gnn3stage", "--out", s(&out)],
        "--model-sched",
    );
    fails_with(&["gen", "--config", s(&cfg), "--out", s(&out)], "nothing to generate");
    fails_with(
        &["eval", "--trace", s(&dir.path().join("missing.csv")), "--out", s(&out)],
        "missing.csv",
    );

    let models = gen_models(dir.path(), &cfg);
    let other = scenario(dir.path(), &SCENARIO.replace("elements = 6", "elements = 5"));
    fails_with(
        &[
            "run",
            "--config",
            s(&other),
            "--scheduler",
            "gnn3stage",
            "--model-sched",
            s(&models.join("model_sched.bin")),
            "--model-ris",
            s(&models.join("model_ris.bin")),
            "--out",
            s(&out),
        ],
        "model is built for",
    );
}
