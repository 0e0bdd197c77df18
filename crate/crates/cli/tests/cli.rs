use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stancegraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stancegraph"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"
kg_entities = "data/entities.tsv"
kg_triples = "data/triples.tsv"
aliases = "data/aliases.tsv"
corpus = "data/corpus.jsonl"
text_dim = 64
kge_dim = 16
kge_epochs = 100
hidden = 16
learning_rate = 0.005
max_epochs = 20
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = stancegraph(dir.path(), &["synth", "generate", "--docs", "60", "--politicians", "20", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("p.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_pipeline_writes_metrics() {
    let dir = workspace();
    let o = stancegraph(dir.path(), &["--config", "p.toml", "pipeline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let first = fs::read(dir.path().join("out/metrics.json")).unwrap();

    let again = stancegraph(dir.path(), &["--config", "p.toml", "pipeline"]);
    assert!(stdout(&again).lines().all(|l| l.ends_with("Cached")), "{}", stdout(&again));
    assert_eq!(fs::read(dir.path().join("out/metrics.json")).unwrap(), first);

    let fresh = stancegraph(dir.path(), &["--config", "p.toml", "--out-dir", "out2", "pipeline"]);
    assert!(fresh.status.success());
    assert_eq!(fs::read(dir.path().join("out2/metrics.json")).unwrap(), first);
}

#[test]
fn kg_stage_alone_succeeds() {
    let dir = workspace();
    let o = stancegraph(dir.path(), &["--config", "p.toml", "pipeline", "--stages", "kg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/kg_stats.json").is_file());
    assert!(!dir.path().join("out/embeddings.tsv").exists());
}

#[test]
fn train_without_graphs_fails_naming_stage() {
    let dir = workspace();
    let o = stancegraph(dir.path(), &["--config", "p.toml", "pipeline", "--stages", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage `graph`"), "{}", stderr(&o));
}

#[test]
fn config_typo_is_rejected_with_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "learningrate = 0.01\n").unwrap();
    let o = stancegraph(dir.path(), &["--config", "bad.toml", "pipeline"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn kg_and_link_subcommands() {
    let dir = workspace();
    let o = stancegraph(dir.path(), &["kg", "validate", "--kg", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok: "));

    let o = stancegraph(dir.path(), &["kg", "stats", "--kg", "data"]);
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["entities"], 36);

    let o = stancegraph(dir.path(), &["--seed", "4", "kg", "drop", "--kg", "data", "--keep", "0.5"]);
    assert!(o.status.success());
    let kept = fs::read_to_string(dir.path().join("out/kg/triples.tsv")).unwrap().lines().count();
    let full = fs::read_to_string(dir.path().join("data/triples.tsv")).unwrap().lines().count();
    assert_eq!(kept, full / 2);

    let o = stancegraph(dir.path(), &["link", "run", "--doc", "data/corpus.jsonl", "--kg", "data", "--aliases", "data/aliases.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("doc_id\tpara_index\tentity_name\tstart\tend"));
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(row.len(), 5);
    assert!(row[3].parse::<usize>().unwrap() < row[4].parse::<usize>().unwrap());
}

#[test]
fn staged_commands_compose() {
    let dir = workspace();
    let run = |args: &[&str]| {
        let o = stancegraph(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["kge", "train", "--kg", "data", "--dim", "8", "--epochs", "20"]);
    run(&["graph", "build", "--config", "p.toml", "--emb", "out/embeddings.tsv"]);
    let o = run(&["--config", "p.toml", "kfold", "--k", "3"]);
    assert!(stdout(&o).starts_with("Acc "), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/kfold.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
}
