use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use multidex_cli::manifest::RunManifest;

const SMALL: &[&str] = &[
    "data.synthetic=true",
    "synthetic.users=150",
    "synthetic.items=60",
    "synthetic.clusters=6",
    "synthetic.semantic_dim=8",
    "collab.dim=8",
    "collab.epochs=3",
    "rqvae.latent_dim=4",
    "rqvae.hidden=16,8",
    "rqvae.codebook_size=8",
    "rqvae.epochs=5",
    "rqvae.batch_size=32",
    "templates.count=3",
    "retrieval.k=10",
    "retrieval.beam_width=10",
];

fn multidex(out: &Path, extra: &[&str], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_multidex"));
    for s in SMALL.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.arg("--set").arg(format!("paths.output={}", out.display()));
    cmd.args(args).output().expect("spawn multidex")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_run_one_by_one_and_record_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in ["prepare", "embed-collab", "build-index", "train-scorers", "retrieve", "rerank", "evaluate", "analyze"] {
        let o = multidex(out, &[], &[stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = multidex(out, &[], &["--mode", "conf-only", "rerank"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let m = RunManifest::load(&out.join("manifests/rerank_conf-only.json")).unwrap();
    assert_eq!(m.config["rerank.mode"], "conf-only");
    assert_eq!(m.seed, 0);
    assert!(m.outputs.iter().any(|f| f.path.ends_with("final_conf-only.jsonl")));
    let full = RunManifest::load(&out.join("manifests/rerank_full.json")).unwrap();
    assert_eq!(full.config["rerank.mode"], "full");

    for f in ["scorers/ceid_t03.txt", "index/vocab.tsv", "eval/metrics.csv", "analysis/chr.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // The recorded digest matches the file on disk.
    let prep = RunManifest::load(&out.join("manifests/prepare.json")).unwrap();
    let test = prep.outputs.iter().find(|f| f.path.ends_with("test.tsv")).unwrap();
    assert_eq!(test.sha256, multidex_cli::manifest::sha256_file(&out.join(&test.path)).unwrap());
}

#[test]
fn file_inputs_match_generated_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(multidex(&a, &[], &["prepare"]).status.success());
    let inter = format!("paths.interactions={}", a.join("data/interactions.tsv").display());
    let sem = format!("paths.semantic={}", a.join("data/semantic_input.txt").display());
    let o = multidex(&b, &["data.synthetic=false", &inter, &sem], &["prepare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["train.tsv", "valid.tsv", "test.tsv", "semantic_emb.txt"] {
        assert_eq!(fs::read(a.join("data").join(f)).unwrap(), fs::read(b.join("data").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_artifacts_name_the_stage_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = multidex(dir.path(), &[], &["build-index"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("run `multidex prepare` first"), "{err}");
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = multidex(dir.path(), &["rerank.alpha=1.5"], &["prepare"]);
    assert!(!o.status.success());
    let o = multidex(dir.path(), &["no.such_key=1"], &["prepare"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no.such_key"), "{}", stderr(&o));

    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "run.seed = banana\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_multidex"))
        .arg("--config")
        .arg(&conf)
        .arg("prepare")
        .output()
        .unwrap();
    assert!(!o.status.success());
}
