use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use amhate_core::pipeline::Manifest;

fn amhate() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amhate"));
    cmd.env("RUST_LOG", "info");
    cmd
}

fn run(args: &[&str]) -> Output {
    amhate().args(args).output().expect("spawn amhate")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_BENCHMARK: &str = r#"
seed = 7

[synth]
docs = 240
noise_posts = 20

[features]
min_df = 2

[embeddings]
dim = 8
epochs = 1

[sbilstm]
embedding_dim = 8
hidden = 8
layers = 1
dense = 8
max_len = 24
epochs = 3
patience = 2

[linear]
epochs = 30
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("amhate.toml");
    fs::write(&path, body).unwrap();
    path
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn config_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = run(&["--config", missing.to_str().unwrap(), "resolve-config"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("nope.toml"));

    let cfg = write_config(dir.path(), "seed = 1\n[linear]\nepochz = 3\n");
    let out = run(&["--config", cfg.to_str().unwrap(), "resolve-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epochz"), "{}", stderr(&out));

    let out = run(&["train", "--model", "linear"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resolve_config_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_BENCHMARK);
    let first = run(&["--config", cfg.to_str().unwrap(), "--seed", "99", "resolve-config"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let resolved = dir.path().join("resolved.toml");
    fs::write(&resolved, &first.stdout).unwrap();
    let second = run(&["--config", resolved.to_str().unwrap(), "resolve-config"]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("seed = 99"));
}

#[test]
fn predict_with_the_bundled_model() {
    let out = run(&["predict", "--text", "ሰላም ነው http://t.co/x"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = line.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 5, "{line}");
    assert!(["racial", "religious", "gender", "nonhate"].contains(&fields[0]));
    let total: f64 = fields[1..]
        .iter()
        .map(|f| f.split_once('=').unwrap().1.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-5, "{total}");

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("docs.txt");
    fs::write(&input, "ሰላም\n\nጤና ይስጥልኝ\n").unwrap();
    let out = run(&["predict", "--file", input.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["id"], "line3");

    assert_eq!(run(&["predict"]).status.code(), Some(2));
    let missing = run(&["predict", "--text", "x", "--model-file", "/nonexistent/model.json"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn train_without_gold_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\n");
    let out = run(&["--config", cfg.to_str().unwrap(), "train", "--model", "linear"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("gold"), "{}", stderr(&out));
    let train = dir.path().join("out").join("train");
    if train.exists() {
        let leftovers: Vec<_> = fs::read_dir(&train).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }
}

#[test]
fn small_benchmark_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_BENCHMARK);
    let bench = |out_dir: &Path| {
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "benchmark",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stderr(&out).contains("macro-F1"));
        files_under(out_dir)
    };
    let run1 = dir.path().join("run1");
    let first = bench(&run1);
    // rerun into the same directory: every byte, configs and manifests included
    assert!(bench(&run1) == first, "rerun changed the output tree");

    // a different output directory changes only the recorded config paths
    let other = bench(&dir.path().join("run2"));
    assert_eq!(first.keys().collect::<Vec<_>>(), other.keys().collect::<Vec<_>>());
    for (path, bytes) in &first {
        let name = path.file_name().unwrap();
        if name == "config.toml" || name == "manifest.json" {
            continue;
        }
        assert!(
            other[path] == *bytes,
            "{} differs between output directories",
            path.display()
        );
    }
    for stage in [
        "ingest",
        "filter",
        "gold",
        "train/linear",
        "evaluate/sbilstm",
        "compare",
    ] {
        let stage_dir = run1.join(stage);
        let manifest = Manifest::read(&stage_dir).unwrap();
        assert!(manifest.verify(&stage_dir).is_empty(), "{stage}");
    }

    // predict with a model from the run
    let model = run1.join("train/sbilstm/model.json");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "predict",
        "--text",
        "ሰላም",
        "--model-file",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // tampering is visible to the manifest check
    fs::write(run1.join("compare/comparison.txt"), "edited").unwrap();
    let stage_dir = run1.join("compare");
    assert_eq!(
        Manifest::read(&stage_dir).unwrap().verify(&stage_dir),
        ["comparison.txt"]
    );
}

#[test]
fn serve_answers_http_with_issued_tokens() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("annotators.json"),
        r#"[{"id": "a1", "display_name": "One", "role": "annotator"},
            {"id": "boss", "display_name": "Admin", "role": "admin"}]"#,
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\n[annotation]\nbind = \"127.0.0.1:0\"\nannotators = \"annotators.json\"\n",
    );
    let mut child = amhate()
        .args(["--config", cfg.to_str().unwrap(), "serve"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("serve exited early").unwrap();
        if let Some((_, addr)) = line.split_once("listening on ") {
            break addr.trim().to_string();
        }
    };

    let tokens: BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/serve/tokens.json")).unwrap()).unwrap();
    assert_eq!(tokens.keys().collect::<Vec<_>>(), ["a1", "boss"]);

    let request = |auth: Option<&str>| {
        let mut stream = TcpStream::connect(&addr).unwrap();
        let auth = auth
            .map(|t| format!("Authorization: Bearer {t}\r\n"))
            .unwrap_or_default();
        write!(
            stream,
            "GET /tasks/next?annotator=a1 HTTP/1.1\r\nHost: localhost\r\n{auth}Connection: close\r\n\r\n"
        )
        .unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        response
    };
    let ok = request(Some(&tokens["a1"]));
    let denied = request(None);
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(ok.starts_with("HTTP/1.1 204"), "{ok}");
    assert!(denied.starts_with("HTTP/1.1 401"), "{denied}");
}
