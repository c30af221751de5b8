//! Binary-level checks: exit codes, file outputs, and flag contracts.

mod common;

use figcap_core::corpus::Split;
use std::path::Path;
use std::process::Command;

fn figcap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_figcap"))
}

fn write_corpus(dir: &Path, name: &str, records: &[figcap_core::corpus::PaperRecord]) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, common::to_jsonl(records)).unwrap();
    path
}

#[test]
fn validate_clean_corpus_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "clean.jsonl", &common::synthetic_corpus(1, 5, Split::Train));
    let out = figcap()
        .args(["validate", "--corpus"])
        .arg(&corpus)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let report = std::fs::read_to_string(dir.path().join("out/load_report.json")).unwrap();
    assert!(report.contains("\"rejected\": 0"));
}

#[test]
fn validate_bad_line_exits_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = common::to_jsonl(&common::synthetic_corpus(2, 2, Split::Train));
    data.push_str("{\"paper_id\": \"broken\"}\n");
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(&corpus, data).unwrap();

    let out = figcap()
        .args(["validate", "--corpus"])
        .arg(&corpus)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report = std::fs::read_to_string(dir.path().join("out/load_report.json")).unwrap();
    assert!(report.contains("\"line\": 3"), "report was: {report}");
}

#[test]
fn optimize_writes_one_template_per_category_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    // two categories, enough records for a real (non-fallback) run
    let mut records = common::synthetic_corpus(3, 24, Split::Train);
    for (i, r) in records.iter_mut().enumerate() {
        r.categories = vec![if i % 2 == 0 { "cat.A" } else { "cat.B" }.to_string()];
    }
    let corpus = write_corpus(dir.path(), "train.jsonl", &records);

    let config = dir.path().join("run.toml");
    let templates_a = dir.path().join("templates_a");
    let templates_b = dir.path().join("templates_b");
    let toml_for = |templates: &Path| {
        format!(
            "[optimizer]\nn_min = 5\ntrials = 6\nminibatch = 3\nsimba_iterations = 1\nm_instructions = 2\nk_demos = 2\n\n[pipeline]\ntemplates_dir = \"{}\"\nseed = 11\n",
            templates.display()
        )
    };

    for templates in [&templates_a, &templates_b] {
        std::fs::write(&config, toml_for(templates)).unwrap();
        let out = figcap()
            .args(["optimize", "--mock", "--corpus"])
            .arg(&corpus)
            .arg("--config")
            .arg(&config)
            .arg("--out-dir")
            .arg(dir.path().join("opt_out"))
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }

    for templates in [&templates_a, &templates_b] {
        assert!(templates.join("cat.A.json").exists());
        assert!(templates.join("cat.B.json").exists());
    }
    // same seed, same inputs: byte-identical template files
    for name in ["cat.A.json", "cat.B.json"] {
        let a = std::fs::read(templates_a.join(name)).unwrap();
        let b = std::fs::read(templates_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }
}

#[test]
fn optimize_below_n_min_writes_fallback_template() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = common::synthetic_corpus(4, 3, Split::Train);
    for r in records.iter_mut() {
        r.categories = vec!["tiny.cat".to_string()];
    }
    let corpus = write_corpus(dir.path(), "train.jsonl", &records);
    let templates = dir.path().join("templates");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("[pipeline]\ntemplates_dir = \"{}\"\n", templates.display()),
    )
    .unwrap();

    let out = figcap()
        .args(["optimize", "--mock", "--corpus"])
        .arg(&corpus)
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let template = std::fs::read_to_string(templates.join("tiny.cat.json")).unwrap();
    assert!(template.contains("\"fallback\": true"), "template was: {template}");
}

#[test]
fn run_stage1_only_skips_refinement_calls() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "test.jsonl", &common::synthetic_corpus(5, 6, Split::Test));
    let out_dir = dir.path().join("run");
    let out = figcap()
        .args(["run", "--mock", "--stage1-only", "--split", "test", "--corpus"])
        .arg(&corpus)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for entry in std::fs::read_dir(out_dir.join("audit")).unwrap() {
        let audit = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!audit.contains("refine_attempt"), "refinement ran in stage1-only mode");
    }
    // resolved config is part of the run directory
    let dumped = std::fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(dumped.contains("stage1_only = true"));
}

#[test]
fn eval_identical_files_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(6, 4, Split::Test);
    let refs = write_corpus(dir.path(), "refs.jsonl", &records);
    // candidates := the gold captions themselves
    let mut cands = String::new();
    for r in &records {
        cands.push_str(
            &serde_json::json!({
                "paper_id": r.paper_id,
                "caption": r.target.gold_caption.clone().unwrap()
            })
            .to_string(),
        );
        cands.push('\n');
    }
    let cand_path = dir.path().join("cands.jsonl");
    std::fs::write(&cand_path, cands).unwrap();

    let out_dir = dir.path().join("eval");
    let out = figcap()
        .args(["eval", "--candidates"])
        .arg(&cand_path)
        .arg("--references")
        .arg(&refs)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let json = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let table: figcap_core::report::DeltaTable = serde_json::from_str(&json).unwrap();
    for v in table.rows[0].values {
        assert!((v - 1.0).abs() < 1e-12, "expected all metrics 1.0, got {v}");
    }
}

#[test]
fn eval_two_conditions_against_one_reference() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(7, 5, Split::Test);
    let refs = write_corpus(dir.path(), "refs.jsonl", &records);

    let exact = dir.path().join("exact.jsonl");
    let noisy = dir.path().join("noisy.jsonl");
    let mut exact_data = String::new();
    let mut noisy_data = String::new();
    for r in &records {
        let gold = r.target.gold_caption.clone().unwrap();
        exact_data.push_str(&serde_json::json!({"paper_id": r.paper_id, "caption": gold}).to_string());
        exact_data.push('\n');
        noisy_data.push_str(
            &serde_json::json!({"paper_id": r.paper_id, "caption": format!("{gold} extra noise words")})
                .to_string(),
        );
        noisy_data.push('\n');
    }
    std::fs::write(&exact, exact_data).unwrap();
    std::fs::write(&noisy, noisy_data).unwrap();

    let out_dir = dir.path().join("eval");
    let out = figcap()
        .args(["eval", "--candidates"])
        .arg(&noisy)
        .arg(&exact)
        .arg("--references")
        .arg(&refs)
        .args(["--baseline", "exact"])
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let json = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let table: figcap_core::report::DeltaTable = serde_json::from_str(&json).unwrap();
    assert_eq!(table.baseline_name, "exact");
    assert_eq!(table.rows.len(), 2);
    let noisy_row = table.rows.iter().find(|r| r.condition_name == "noisy").unwrap();
    // extra words lower precision against the exact baseline
    assert!(noisy_row.deltas[4].unwrap() < 0.0, "R1-P delta should be negative");
}

#[test]
fn eval_mismatched_ids_only_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(8, 3, Split::Test);
    let refs = write_corpus(dir.path(), "refs.jsonl", &records);
    let cands = dir.path().join("cands.jsonl");
    std::fs::write(
        &cands,
        "{\"paper_id\": \"nobody\", \"caption\": \"unaligned\"}\n",
    )
    .unwrap();

    let out = figcap()
        .args(["eval", "--candidates"])
        .arg(&cands)
        .arg("--references")
        .arg(&refs)
        .arg("--out-dir")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_subcommand_renders_condition_json() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = figcap_core::metrics::evaluate_pair("a b c", "a b d");
    let conditions = vec![
        figcap_core::report::ConditionResult {
            condition_name: "base".into(),
            bundle: bundle.clone(),
            n_instances: 1,
        },
        figcap_core::report::ConditionResult {
            condition_name: "other".into(),
            bundle,
            n_instances: 1,
        },
    ];
    let path = dir.path().join("conditions.json");
    std::fs::write(&path, serde_json::to_string(&conditions).unwrap()).unwrap();

    let out_dir = dir.path().join("report");
    let out = figcap()
        .args(["report", "--conditions"])
        .arg(&path)
        .args(["--baseline", "base"])
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out_dir.join("report.md").exists());
    assert!(out_dir.join("report.csv").exists());
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn filter_audit_writes_per_record_scores() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "train.jsonl", &common::synthetic_corpus(9, 4, Split::Train));
    let out_dir = dir.path().join("fa");
    let out = figcap()
        .args(["filter-audit", "--mock", "--corpus"])
        .arg(&corpus)
        .arg("--out-dir")
        .arg(&out_dir)
        .args(["--lambda", "1.2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let files: Vec<_> = std::fs::read_dir(out_dir.join("filter_audit")).unwrap().collect();
    assert_eq!(files.len(), 4);
}
