use image_transformer::cli::{run, AdjacencyReport, EvalOutput};
use image_transformer::data::{load_regions, read_jsonl, write_regions, CandidateRecord, Dataset, ToyConfig};
use image_transformer::diagnostics::DiagnosticsReport;
use image_transformer::numerics::Tensor;
use image_transformer::training::{load_checkpoint, save_checkpoint};
use std::fs;
use std::path::{Path, PathBuf};

fn imtx(args: &[&str]) -> i32 {
    run(std::iter::once("imtx").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small cross-entropy run on the toy corpus; returns its output directory.
fn train_small(root: &Path, name: &str) -> PathBuf {
    let out = root.join(name);
    let code = imtx(&[
        "train", "--toy", "7", "--phase", "xe", "--xe-epochs", "1", "--n-scenes", "20", "--n-val", "5",
        "--d-model", "16", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    out
}

fn write(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn train_smoke_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a");
    for f in ["resolved_config.json", "metrics.jsonl", "last.ckpt", "xe.ckpt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let resolved: serde_json::Value = serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["run"]["model"]["d_model"], 16);
    assert_eq!(resolved["run"]["train"]["xe_epochs"], 1);
    assert_eq!(resolved["data"], "toy:7");
    let b = train_small(dir.path(), "b");
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(imtx(&["train", "--toy", "7", "--phase", "rl", "--out", p(&out)]), 1);
    assert_eq!(imtx(&["train", "--out", p(&out)]), 1);
    assert_eq!(imtx(&["train", "--toy", "7", "--lr=-1", "--out", p(&out)]), 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"train\": {\"lr0\": \"fast\"}}").unwrap();
    assert_eq!(imtx(&["train", "--toy", "7", "--config", p(&bad), "--out", p(&out)]), 1);
    assert!(!out.join("metrics.jsonl").exists());
    assert_eq!(imtx(&["no-such-command"]), 1);
    assert_eq!(imtx(&["--help"]), 0);
    assert_eq!(imtx(&["train", "--help"]), 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"train": {"xe_epochs": 1, "batch_size": 7, "seed": 4}, "model": {"d_model": 16, "m": 2}, "toy": {"n_scenes": 14}, "n_val": 3}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let code = imtx(&["train", "--toy", "2", "--phase", "xe", "--config", p(&cfg), "--batch-size", "5", "--out", p(&out)]);
    assert_eq!(code, 0);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(r["run"]["train"]["batch_size"], 5);
    assert_eq!(r["run"]["train"]["seed"], 4);
    assert_eq!(r["run"]["model"]["m"], 2);
    assert_eq!(r["run"]["toy"]["seed"], 2);
    assert_eq!(r["model"]["decoder"]["m"], 2);
    let ck = load_checkpoint(&out.join("last.ckpt")).unwrap();
    assert_eq!(ck.progress.steps, 3);
}

#[test]
fn rl_phase_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let xe = train_small(dir.path(), "xe");
    let out = dir.path().join("rl");
    let code = imtx(&[
        "train", "--toy", "7", "--phase", "rl", "--init", p(&xe.join("xe.ckpt")), "--rl-epochs", "1", "--n-scenes", "20",
        "--n-val", "5", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    let ck = load_checkpoint(&out.join("rl.ckpt")).unwrap();
    assert_eq!((ck.progress.xe_epochs_done, ck.progress.rl_epochs_done), (1, 1));
    // checkpoint vocabulary must match the dataset
    let code = imtx(&[
        "train", "--toy", "7", "--phase", "rl", "--init", p(&xe.join("xe.ckpt")), "--n-scenes", "20", "--out",
        p(&dir.path().join("rl2")),
        "--config",
        p(&{
            let c = dir.path().join("v.json");
            fs::write(&c, r#"{"toy": {"vocab_size": 40}}"#).unwrap();
            c
        }),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn adjacency_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("nested.jsonl");
    write(&nested, &[r#"{"scene_id":"nest","boxes":[[0,0,0.9,0.9],[0.1,0.1,0.8,0.8],[0.92,0.92,0.99,0.99]],"features":[[1],[2],[3]]}"#]);
    let disjoint = dir.path().join("disjoint.jsonl");
    write(&disjoint, &[r#"{"scene_id":"apart","boxes":[[0,0,0.4,0.4],[0.5,0.5,0.9,0.9]],"features":[[1],[2]]}"#]);

    let report = |regions: &Path, eps: &str| -> AdjacencyReport {
        let out = dir.path().join("adj.json");
        assert_eq!(imtx(&["adjacency", "--regions", p(regions), "--epsilon", eps, "--out", p(&out)]), 0);
        serde_json::from_slice(&fs::read(&out).unwrap()).unwrap()
    };
    let r = report(&nested, "0.9");
    assert_eq!(r.parent_pairs, 1);
    assert_eq!(r.child_pairs, 1);
    assert_eq!(r.scenes[0].omega_p[1][0], 1);
    assert_eq!(r.scenes[0].omega_c[0][1], 1);
    assert_eq!(r.scenes[0].neighbor_pairs, 9 - 2);
    assert_eq!(report(&disjoint, "0.9").parent_pairs, 0);
    assert_eq!(report(&nested, "1.01").parent_pairs, 0);

    let broken = dir.path().join("broken.jsonl");
    write(&broken, &[r#"{"scene_id":"flip","boxes":[[0.5,0,0.4,1]],"features":[[1]]}"#]);
    assert_eq!(imtx(&["adjacency", "--regions", p(&broken)]), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    assert_eq!(imtx(&["gradcheck", "--primitives-only", "--out", p(&out)]), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let results = report["results"].as_array().unwrap();
    assert!(results.len() > 10);
    for r in results {
        assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4, "{r}");
    }
    assert_eq!(imtx(&["gradcheck", "--primitives-only", "--inject-fault", "--out", p(&out)]), 2);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn caption_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_small(dir.path(), "t");
    let ckpt = run_dir.join("last.ckpt");
    let ds = Dataset::toy(
        &ToyConfig {
            seed: 7,
            n_scenes: 20,
            ..ToyConfig::default()
        },
        5,
    )
    .unwrap();
    let regions = dir.path().join("val.jsonl");
    let scenes: Vec<_> = ds.val().iter().map(|e| e.regions.clone()).collect();
    write_regions(&regions, &scenes).unwrap();

    let caption = |beam: &str, name: &str| -> Vec<CandidateRecord> {
        let out = dir.path().join(name);
        assert_eq!(imtx(&["caption", "--ckpt", p(&ckpt), "--regions", p(&regions), "--beam", beam, "--out", p(&out)]), 0);
        read_jsonl(&out).unwrap()
    };
    let a = caption("3", "a.jsonl");
    let b = caption("3", "b.jsonl");
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());

    let model = load_checkpoint(&ckpt).unwrap();
    let greedy = caption("1", "g.jsonl");
    for (rec, s) in greedy.iter().zip(load_regions(&regions).unwrap()) {
        let beam1 = model.model.beam_search(&s, 1).unwrap();
        assert_eq!(rec.caption, model.vocab.decode(&beam1.tokens));
        assert_eq!(rec.id, s.scene_id);
    }

    let refs = dir.path().join("refs.jsonl");
    let lines: Vec<String> = ds
        .val()
        .iter()
        .map(|e| serde_json::json!({"id": e.regions.scene_id, "captions": e.captions}).to_string())
        .collect();
    fs::write(&refs, lines.join("\n")).unwrap();
    let self_cands = dir.path().join("self.jsonl");
    let lines: Vec<String> = ds
        .val()
        .iter()
        .map(|e| serde_json::json!({"id": e.regions.scene_id, "caption": e.captions[0]}).to_string())
        .collect();
    fs::write(&self_cands, lines.join("\n")).unwrap();
    let eval_out = dir.path().join("eval.json");
    assert_eq!(imtx(&["eval", "--candidates", p(&self_cands), "--references", p(&refs), "--out", p(&eval_out)]), 0);
    let e: EvalOutput = serde_json::from_slice(&fs::read(&eval_out).unwrap()).unwrap();
    assert_eq!(e.n, 5);
    assert_eq!(e.bleu[0], 1.0);
    assert!((e.cider_d - 10.0).abs() < 1e-9);
    assert_eq!(imtx(&["eval", "--candidates", p(&dir.path().join("a.jsonl")), "--references", p(&refs), "--out", p(&eval_out)]), 0);

    // one candidate missing
    let short = dir.path().join("short.jsonl");
    let text = fs::read_to_string(&self_cands).unwrap();
    fs::write(&short, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    assert_eq!(imtx(&["eval", "--candidates", p(&short), "--references", p(&refs)]), 1);

    // feature width mismatch is reported before decoding
    let wide = dir.path().join("wide.jsonl");
    let mut s = scenes[0].clone();
    s.features = Tensor::zeros(&[s.len(), s.feature_width() + 1]);
    write_regions(&wide, &[s]).unwrap();
    assert_eq!(imtx(&["caption", "--ckpt", p(&ckpt), "--regions", p(&wide)]), 1);
}

#[test]
fn diagnose_report_and_constant_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_small(dir.path(), "t");
    let out = dir.path().join("diag.json");
    let args = |ckpt: &Path, out: &Path| {
        imtx(&[
            "diagnose", "--ckpt", p(ckpt), "--toy", "7", "--n-scenes", "20", "--n-val", "5", "--samples", "30", "--out",
            p(out),
        ])
    };
    assert_eq!(args(&run_dir.join("last.ckpt"), &out), 0);
    let r: DiagnosticsReport = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert!(r.samples >= 2 && r.samples <= 30);
    assert!(r.covariance_trace > 0.0);
    assert_eq!(r.branch_mass.len(), 2);
    assert_eq!(r.m_ablation.len(), 3);
    assert_eq!(r.m_ablation[2].covariance_trace, r.covariance_trace);
    assert_eq!(r.m_ablation[0].sub_transformers, vec![0]);
    for l in &r.branch_mass {
        for m in [l.parent, l.neighbor, l.child].into_iter().flatten() {
            assert!((0.0..=1.0 + 1e-9).contains(&m));
        }
    }
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    for key in ["scenes", "samples", "covariance_trace", "branch_mass", "m_ablation"] {
        assert!(v.get(key).is_some(), "{key}");
    }

    // zero information path of the gate: every context is the zero vector
    let mut ck = load_checkpoint(&run_dir.join("last.ckpt")).unwrap();
    for name in ["dec.glu.info.w", "dec.glu.info.b"] {
        let id = ck.model.store.find(name).unwrap();
        let shape = ck.model.store.get(id).shape().to_vec();
        *ck.model.store.get_mut(id) = Tensor::zeros(&shape);
    }
    let flat = dir.path().join("flat.ckpt");
    save_checkpoint(&flat, &ck).unwrap();
    assert_eq!(args(&flat, &out), 0);
    let r: DiagnosticsReport = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(r.covariance_trace, 0.0);

    assert_eq!(
        imtx(&["diagnose", "--ckpt", p(&flat), "--toy", "7", "--n-scenes", "20", "--n-val", "5", "--samples", "1"]),
        1
    );
}

#[test]
fn toy_command_writes_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    assert_eq!(imtx(&["toy", "--seed", "3", "--n-scenes", "12", "--n-val", "4", "--out", p(&out)]), 0);
    let ds = Dataset::load(&out).unwrap();
    assert_eq!(ds.examples.len(), 16);
    assert_eq!(ds.val().len(), 4);
    let run = dir.path().join("run");
    let code = imtx(&["train", "--data", p(&out), "--phase", "xe", "--xe-epochs", "1", "--d-model", "16", "--out", p(&run)]);
    assert_eq!(code, 0);
    assert_eq!(imtx(&["toy", "--vocab-size", "5", "--out", p(&out)]), 1);
}
