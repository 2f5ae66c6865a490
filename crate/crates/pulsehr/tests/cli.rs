//! Command-line behavior: exit codes, config-file and environment seed
//! precedence, and the shape of the files each subcommand leaves behind.
//! Usage mistakes exit 2, unreadable or unusable data exits 1.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pulsehr"));
    c.env_remove("PULSEHR_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn assert_code(out: &Output, want: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{context}: stderr = {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Seed a small processed dataset for the model subcommands.
fn seeded_dataset(dir: &Path) {
    let synth = run_in(
        dir,
        &[
            "synth", "--duration", "90", "--seed", "3", "--out", "ppg.csv", "--truth", "truth.csv",
        ],
    );
    assert_code(&synth, 0, "synth");
    let process = run_in(dir, &["process", "--input", "ppg.csv", "--out", "pphr.csv"]);
    assert_code(&process, 0, "process");
}

#[test]
fn usage_mistakes_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let no_args = run_in(d, &[]);
    assert_code(&no_args, 2, "no subcommand");

    let bad_flag = run_in(d, &["synth", "--no-such-flag"]);
    assert_code(&bad_flag, 2, "unknown flag");

    let zero = run_in(d, &["synth", "--duration", "0", "--out", "a.csv", "--truth", "t.csv"]);
    assert_code(&zero, 2, "zero duration");
    assert!(stderr_of(&zero).contains("duration"), "{}", stderr_of(&zero));

    let scenario = run_in(d, &["synth", "--scenario", "jogging", "--out", "a.csv", "--truth", "t.csv"]);
    assert_code(&scenario, 2, "bad scenario");
    let msg = stderr_of(&scenario);
    for name in ["sitting", "sleeping", "daily"] {
        assert!(msg.contains(name), "scenario error does not list {name}: {msg}");
    }

    let no_features = run_in(
        d,
        &[
            "train", "--pphr", "x.csv", "--truth", "y.csv", "--model", "dt", "--features", "0",
            "--out", "m.phrm",
        ],
    );
    assert_code(&no_features, 2, "zero features");

    let conflict = run_in(
        d,
        &[
            "pipeline", "--ppg", "a.csv", "--truth", "t.csv", "--duration", "60", "--out-dir",
            "out",
        ],
    );
    assert_code(&conflict, 2, "ppg with duration");

    let half_pair = run_in(d, &["pipeline", "--ppg", "a.csv", "--out-dir", "out"]);
    assert_code(&half_pair, 2, "ppg without truth");
}

#[test]
fn config_file_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad_key.cfg"), "seed = 1\nwindow_sz = 8\n").unwrap();
    let unknown = run_in(
        d,
        &["synth", "--config", "bad_key.cfg", "--out", "a.csv", "--truth", "t.csv"],
    );
    assert_code(&unknown, 2, "unknown config key");
    let msg = stderr_of(&unknown);
    assert!(msg.contains("window_sz") && msg.contains("line 2"), "{msg}");

    std::fs::write(d.join("bad_value.cfg"), "duration_s = long\n").unwrap();
    let bad_value = run_in(
        d,
        &["synth", "--config", "bad_value.cfg", "--out", "a.csv", "--truth", "t.csv"],
    );
    assert_code(&bad_value, 2, "unparsable config value");
    assert!(stderr_of(&bad_value).contains("duration_s"), "{}", stderr_of(&bad_value));
}

#[test]
fn data_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = run_in(d, &["process", "--input", "nowhere.csv", "--out", "o.csv"]);
    assert_code(&missing, 1, "missing recording");

    let synth = run_in(
        d,
        &["synth", "--duration", "4", "--seed", "1", "--out", "short.csv", "--truth", "st.csv"],
    );
    assert_code(&synth, 0, "short synth");
    let short = run_in(d, &["process", "--input", "short.csv", "--out", "o.csv"]);
    assert_code(&short, 1, "recording shorter than the window");

    let no_model = run_in(
        d,
        &[
            "eval", "--model", "missing.phrm", "--pphr", "short.csv", "--truth", "st.csv",
            "--out", "m.json",
        ],
    );
    assert_code(&no_model, 1, "missing model");

    seeded_dataset(d);
    let bad_channel = run_in(
        d,
        &["process", "--input", "ppg.csv", "--channel", "5", "--out", "o.csv"],
    );
    assert_code(&bad_channel, 1, "channel beyond the recording");
}

#[test]
fn flags_beat_config_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ppg = |name: &str| d.join(name);
    let synth = |extra_env: Option<(&str, &str)>, args: &[&str]| {
        let mut c = bin();
        if let Some((k, v)) = extra_env {
            c.env(k, v);
        }
        let out = c.args(args).current_dir(d).output().unwrap();
        assert_code(&out, 0, "seeded synth");
    };

    synth(None, &["synth", "--duration", "60", "--seed", "5", "--out", "flag.csv", "--truth", "flag_t.csv"]);
    std::fs::write(d.join("seed.cfg"), "# seed lives here\nseed = 5\n").unwrap();
    synth(None, &["synth", "--duration", "60", "--config", "seed.cfg", "--out", "cfg.csv", "--truth", "cfg_t.csv"]);
    synth(
        Some(("PULSEHR_SEED", "5")),
        &["synth", "--duration", "60", "--out", "env.csv", "--truth", "env_t.csv"],
    );
    let flag = std::fs::read(ppg("flag.csv")).unwrap();
    assert_eq!(flag, std::fs::read(ppg("cfg.csv")).unwrap(), "config seed diverged");
    assert_eq!(flag, std::fs::read(ppg("env.csv")).unwrap(), "environment seed diverged");

    // the flag wins over both quieter sources
    std::fs::write(d.join("other.cfg"), "seed = 9\n").unwrap();
    synth(
        Some(("PULSEHR_SEED", "9")),
        &[
            "synth", "--duration", "60", "--seed", "5", "--config", "other.cfg", "--out",
            "won.csv", "--truth", "won_t.csv",
        ],
    );
    assert_eq!(flag, std::fs::read(ppg("won.csv")).unwrap(), "flag lost the precedence race");

    let garbled = bin()
        .env("PULSEHR_SEED", "abc")
        .args(["synth", "--duration", "60", "--out", "g.csv", "--truth", "gt.csv"])
        .current_dir(d)
        .output()
        .unwrap();
    assert_code(&garbled, 2, "unparsable environment seed");
    assert!(stderr_of(&garbled).contains("PULSEHR_SEED"), "{}", stderr_of(&garbled));
}

#[test]
fn model_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    seeded_dataset(d);

    let train = run_in(
        d,
        &[
            "train", "--pphr", "pphr.csv", "--truth", "truth.csv", "--model", "knn",
            "--features", "3", "--seed", "3", "--out", "knn.phrm",
        ],
    );
    assert_code(&train, 0, "train");
    assert!(d.join("knn.phrm").exists());

    let eval = run_in(
        d,
        &[
            "eval", "--model", "knn.phrm", "--pphr", "pphr.csv", "--truth", "truth.csv",
            "--seed", "3", "--out", "metrics.json",
        ],
    );
    assert_code(&eval, 0, "eval");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    let mape = metrics["mape_pct"].as_f64().expect("accuracy fields");
    assert!(mape.is_finite() && mape >= 0.0, "mape {mape}");
    assert!(metrics.get("latency_median_us").is_none(), "eval must not report latency");

    let bench = run_in(
        d,
        &[
            "bench", "--model", "knn.phrm", "--pphr", "pphr.csv", "--reps", "100", "--warmup",
            "100", "--out", "latency.json",
        ],
    );
    assert_code(&bench, 0, "bench");
    let latency: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("latency.json")).unwrap()).unwrap();
    assert!(latency["latency_median_us"].as_f64().expect("latency fields") > 0.0);

    let tune = run_in(
        d,
        &[
            "tune", "--pphr", "pphr.csv", "--truth", "truth.csv", "--model", "dt", "--features",
            "3", "--iters", "3", "--folds", "3", "--seed", "3", "--out", "dt.phrm",
        ],
    );
    assert_code(&tune, 0, "tune");
    assert!(d.join("dt.phrm").exists());
    // the search report lands next to the model by default
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("dt.search.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "dt");
    assert_eq!(report["trials"].as_array().unwrap().len(), 3);
}

#[test]
fn synth_reports_what_it_wrote() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run_in(
        d,
        &["synth", "--duration", "30", "--seed", "2", "--out", "p.csv", "--truth", "t.csv"],
    );
    assert_code(&out, 0, "synth");
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("750 samples"), "summary line: {line}");
    assert!(line.contains("p.csv") && line.contains("t.csv"), "summary line: {line}");
    assert!(PathBuf::from(d).join("p.csv").exists());
}
