use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segfp_cli::ExperimentConfig;
use segfp_core::eval::{render_markdown, HitCell, HitReport, Metric};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The toy config shrunk so the full command chain runs in seconds.
fn tiny_config(workspace: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(repo_root().join("configs/toy.json")).unwrap();
    c.corpus.n_train = 8;
    c.corpus.n_ref = 4;
    c.corpus.n_dist = 2;
    c.corpus.clip_len_s = 6.0;
    c.training.optimizer.steps = 3;
    c.training.optimizer.batch_pairs = 4;
    c.segmentation.windows_s = vec![1.0];
    c.evaluation.query_lengths_s = vec![1.0, 3.0];
    c.evaluation.queries.queries_per_track = 2;
    c.paths.workspace = workspace.to_path_buf();
    c
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

fn segfp(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segfp"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn invalid_config_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let workspace = dir.path().join("ws");
    let mut config = tiny_config(&workspace);
    config.evaluation.k_nn = 5;
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = segfp(&path, &["gen-corpus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_nn"));
    assert!(!workspace.exists());
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_config(&dir.path().join("ws")));
    let out = segfp(&config, &["train", "--w", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-corpus"));

    let out = segfp(
        &config,
        &["eval", "--db", "nope.nfpd", "--checkpoint", "nope.nfpw"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.nfpd"));

    let missing = segfp(&dir.path().join("absent.json"), &["sweep"]);
    assert!(!missing.status.success());
}

#[test]
fn clean_excerpt_ranks_its_source_first() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let config = write_config(dir.path(), &tiny_config(&ws));
    for args in [
        vec!["gen-corpus"],
        vec!["train", "--w", "1"],
        vec![
            "build-db",
            "--w",
            "1",
            "--checkpoint",
            ws.join("checkpoints/w1.nfpw").to_str().unwrap(),
        ],
    ] {
        let out = segfp(&config, &args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for entry in ["ref-0002", "ref-0003"] {
        let wav = ws.join("corpus/ref").join(format!("{entry}.wav"));
        let out = segfp(
            &config,
            &[
                "query",
                "--db",
                ws.join("db/w1.nfpd").to_str().unwrap(),
                "--checkpoint",
                ws.join("checkpoints/w1.nfpw").to_str().unwrap(),
                "--wav",
                wav.to_str().unwrap(),
                "--l",
                "3",
                "--offset",
                "1.5",
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8(out.stdout).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
        assert_eq!(first["track"], entry);
        assert_eq!(first["start_index"], 3);
        assert_eq!(first["start_time_s"], 1.5);
    }

    let out = segfp(
        &config,
        &[
            "eval",
            "--db",
            ws.join("db/w1.nfpd").to_str().unwrap(),
            "--checkpoint",
            ws.join("checkpoints/w1.nfpw").to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(ws.join("reports/eval_w1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "W,L,top1_exact,top3_exact,top10_exact,top1_near,n_queries"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn markdown_marks_lengths_shorter_than_the_window() {
    let mut cells = Vec::new();
    for w in [0.5, 1.0, 2.0] {
        for l in (1..=10).map(f64::from).filter(|&l| l >= w) {
            cells.push(HitCell {
                window_s: w,
                query_len_s: l,
                top1_exact: 0.5,
                top3_exact: 0.6,
                top10_exact: 0.7,
                top1_near: 0.55,
                n_queries: 4,
            });
        }
    }
    let md = render_markdown(&HitReport { cells });
    let header = md.lines().next().unwrap();
    assert_eq!(header.matches("| L=").count(), 10);
    let rows: Vec<&str> = md.lines().filter(|l| l.contains("| 2 |")).collect();
    assert_eq!(rows.len(), Metric::ALL.len());
    for row in rows {
        let cols: Vec<&str> = row.split('|').map(str::trim).collect();
        assert_eq!(cols[3], "-");
        assert!(cols[4..13]
            .iter()
            .all(|c| c.ends_with('0') || c.ends_with("**")));
    }
}

#[test]
fn replay_advice_from_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let config = write_config(dir.path(), &tiny_config(&ws));
    let mut cells = Vec::new();
    for (w, best) in [(0.5, 0.8), (1.0, 0.9), (2.0, 0.7)] {
        for l in [2.0, 4.0] {
            cells.push(HitCell {
                window_s: w,
                query_len_s: l,
                top1_exact: best,
                top3_exact: best,
                top10_exact: best,
                top1_near: best,
                n_queries: 10,
            });
        }
    }
    let report = dir.path().join("report.json");
    std::fs::write(
        &report,
        serde_json::to_string(&HitReport { cells }).unwrap(),
    )
    .unwrap();
    let out = segfp(
        &config,
        &[
            "advise",
            "--mode",
            "replay",
            "--report",
            report.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 18);
    let summary = |model: &str| {
        lines
            .iter()
            .find(|l| l["model"] == model && l["question_id"] == "summary")
            .unwrap()
            .clone()
    };
    assert_eq!(summary("gpt-5-mini")["distance_to_empirical"], 0.0);
    assert_eq!(summary("gemini-2.5-flash")["distance_to_empirical"], 1.0);
    assert_eq!(summary("gemini-2.5-flash")["consistent"], false);
    assert_eq!(
        summary("gemini-2.5-flash")["interval"],
        serde_json::json!([2.0, 8.0])
    );
    let written = std::fs::read_to_string(ws.join("advice/replay.jsonl")).unwrap();
    assert_eq!(written.lines().count(), 18);
}
