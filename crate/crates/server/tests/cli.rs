mod common;

use std::io::{BufRead, BufReader};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::fixture_path;

const RAMO_VARS: &[&str] = &[
    "RAMO_CONFIG", "RAMO_LISTEN_ADDRESS", "RAMO_CATALOG_PATH", "RAMO_INDEX_PATH",
    "RAMO_EMBEDDER_KIND", "RAMO_EMBEDDER_DIM", "RAMO_GENERATOR_KIND", "RAMO_TOP_K",
    "RAMO_TOKEN_BUDGET", "RAMO_PROMPT_ORDER", "RAMO_TEMPLATE", "RAMO_TEMPLATE_DIR",
    "RAMO_HISTORY_TURNS",
];

fn ramo() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ramo"));
    for var in RAMO_VARS {
        cmd.env_remove(var);
    }
    cmd.env("RUST_LOG", "error");
    cmd
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn ingest_prints_counts_and_writes_clean_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clean.csv");
    let (code, stdout, _) = run(ramo().arg("ingest").arg(fixture_path()).arg("--out").arg(&out));
    assert_eq!(code, 0);
    assert_eq!(stdout, "rows=12 deduped=10\n");
    let (code, stdout, _) = run(ramo().arg("ingest").arg(&out));
    assert_eq!(code, 0);
    assert_eq!(stdout, "rows=10 deduped=10\n");
}

#[test]
fn exit_codes() {
    let (code, _, stderr) = run(&mut ramo());
    assert_eq!(code, 1);
    assert!(stderr.contains("Usage"), "{stderr}");

    let (code, _, stderr) = run(ramo().args(["ask"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("Usage"), "{stderr}");

    let (code, _, stderr) = run(ramo().args(["ask", "hi", "--token-budget", "512"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("token_budget") && stderr.contains("Usage"), "{stderr}");

    let (code, _, stderr) = run(ramo().args(["ingest", "/definitely/not/here.csv"]));
    assert_eq!(code, 2);
    assert!(stderr.starts_with("error:"), "{stderr}");

    let (code, stdout, _) = run(ramo().arg("--help"));
    assert_eq!(code, 0);
    for sub in ["ingest", "build-index", "serve", "ask", "bench"] {
        assert!(stdout.contains(sub), "help lists {sub}");
    }
}

#[test]
fn ask_cold_start_gets_a_reply() {
    let (code, stdout, stderr) =
        run(ramo().args(["ask", "I am a new user", "--catalog"]).arg(fixture_path()));
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.starts_with("Sure! Here are some recommended courses:"));
    assert!(stdout.lines().count() > 1);
}

fn recommendation_count(cmd: &mut Command) -> usize {
    let (code, stdout, stderr) = run(cmd);
    assert_eq!(code, 0, "{stderr}");
    let body: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    body["recommendations"].as_array().unwrap().len()
}

#[test]
fn flags_beat_env_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ramo.toml");
    std::fs::write(
        &config,
        format!("catalog_path = {:?}\ntop_k = 2\n", fixture_path().to_str().unwrap()),
    )
    .unwrap();
    // The scripted generator lists every retrieved course (up to five), so
    // the count shows which top_k won.
    let ask = || {
        let mut cmd = ramo();
        cmd.arg("--config").arg(&config).args(["ask", "python", "--json"]);
        cmd
    };
    assert_eq!(recommendation_count(&mut ask()), 2);
    assert_eq!(recommendation_count(ask().env("RAMO_TOP_K", "3")), 3);
    assert_eq!(recommendation_count(ask().env("RAMO_TOP_K", "3").args(["--top-k", "4"])), 4);
    assert_eq!(recommendation_count(ask().env("RAMO_CONFIG", "/nope").args(["--top-k", "1"])), 1);

    std::fs::write(&config, "top_k = \"many\"\n").unwrap();
    let (code, _, stderr) = run(&mut ask());
    assert_eq!(code, 1, "{stderr}");
}

#[test]
fn build_index_then_ask_with_it() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("fixture.ramoidx");
    let (code, stdout, stderr) = run(ramo()
        .args(["build-index", "--catalog"])
        .arg(fixture_path())
        .arg("--out")
        .arg(&index));
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.starts_with("indexed=10 dim=256 embedder=hashing-v1"), "{stdout}");

    let (code, stdout, stderr) = run(ramo()
        .args(["ask", "I want to learn SQL", "--catalog"])
        .arg(fixture_path())
        .arg("--index")
        .arg(&index));
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("1. SQL for Data Science"), "{stdout}");

    // An index built for a different catalog is refused.
    let other = dir.path().join("other.csv");
    let mut text = std::fs::read_to_string(fixture_path()).unwrap();
    text.push_str("Extra Course,Somewhere,Beginner,4.0,https://x.example,Something new,Stuff\n");
    std::fs::write(&other, text).unwrap();
    let (code, _, stderr) = run(ramo().args(["ask", "sql", "--catalog"]).arg(&other).arg("--index").arg(&index));
    assert_eq!(code, 2);
    assert!(stderr.contains("different catalog"), "{stderr}");

    std::fs::write(&index, b"RAMOIDX\0garbage").unwrap();
    let (code, _, _) = run(ramo().args(["ask", "sql", "--catalog"]).arg(fixture_path()).arg("--index").arg(&index));
    assert_eq!(code, 2);
}

#[test]
fn bench_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let queries = dir.path().join("queries.txt");
    std::fs::write(&queries, "# fixture queries\npython\n\nI am a new user\nsql databases\n").unwrap();
    let (code, stdout, stderr) = run(ramo()
        .args(["bench", "--reps", "10", "--catalog"])
        .arg(fixture_path())
        .arg("--queries")
        .arg(&queries));
    assert_eq!(code, 0, "{stderr}");
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2 + 3 + 1, "{stdout}");
    assert!(lines[0].starts_with("query"));
    assert!(lines[3].contains("NoMatch"));
    assert!(lines[5].starts_with("MEDIAN"));

    let (code, stdout, _) = run(ramo()
        .args(["bench", "--csv", "--reps", "3", "--catalog"])
        .arg(fixture_path())
        .arg("--queries")
        .arg(&queries));
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 1 + 3 + 1);
    assert!(stdout.lines().last().unwrap().starts_with("MEDIAN,"));
    assert!(stdout.lines().next().unwrap().contains(','));
}

/// Kills the server even when an assertion fails.
struct ServerProcess(std::process::Child);

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_and_ask_over_http() {
    let mut child = ramo()
        .args(["serve", "--listen", "127.0.0.1:0", "--catalog"])
        .arg(fixture_path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let server = ServerProcess(child);
    let mut first = String::new();
    BufReader::new(stdout).read_line(&mut first).unwrap();
    let base = first.trim().strip_prefix("listening on ").expect("listen line").to_string();

    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let ok = ureq::get(&format!("{base}/healthz"))
            .call()
            .map(|r| r.status() == 200)
            .unwrap_or(false);
        if ok {
            break;
        }
        assert!(Instant::now() < deadline, "server never became healthy");
        std::thread::sleep(Duration::from_millis(50));
    }

    let (code, stdout, stderr) = run(ramo().args(["ask", "I want to learn SQL", "--server", &base]));
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("SQL for Data Science"), "{stdout}");

    let (code, _, stderr) = run(ramo().args(["ask", "  ", "--server", &base]));
    assert_eq!(code, 2);
    assert!(stderr.contains("400"), "{stderr}");
    drop(server);
}
