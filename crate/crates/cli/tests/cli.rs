use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDate;
use serde_json::Value;
use sleepformer::edf::{build_recording, write_edf, Annotation, AnnotationSignal, SignalHeader};
use sleepformer::model::ModelConfig;
use sleepformer::montage::MONTAGE;
use sleepformer::training::RunConfig;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sleepformer"))
            .arg("--runs-dir")
            .arg(self.path("runs"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    /// Run directories for `command`, oldest first.
    fn runs(&self, command: &str) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(self.path("runs"))
            .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        v.retain(|p| manifest(p)["command"] == command);
        v.sort();
        v
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Tiny synthetic store, split and config.
    fn prepared(&self) {
        self.ok(&["synth", "--n-per-class", "6", "--seed", "3", "--out", &self.s("s.ssep")]);
        self.ok(&["split", "--store", &self.s("s.ssep"), "--seed", "1", "--out", &self.s("splits.tsv")]);
        let cfg = RunConfig { model: ModelConfig::tiny(), max_iterations: 6, eval_every: 3, ..Default::default() };
        std::fs::write(self.path("run.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    }

    fn train(&self, extra: &[&str]) -> PathBuf {
        let (st, sp, cf) = (self.s("s.ssep"), self.s("splits.tsv"), self.s("run.json"));
        let mut args = vec!["train", "--config", &cf, "--store", &st, "--splits", &sp];
        args.extend_from_slice(extra);
        self.ok(&args);
        self.runs("train").pop().unwrap()
    }
}

fn manifest(run: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn output_digests(run: &Path) -> Vec<(String, String)> {
    manifest(run)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let name = Path::new(o["path"].as_str().unwrap()).file_name().unwrap().to_string_lossy().into_owned();
            (name, o["sha256"].as_str().unwrap().to_string())
        })
        .collect()
}

#[test]
fn train_records_override_and_replays_bitwise() {
    let env = Env::new();
    env.prepared();
    let a = env.train(&["--override", "batch_size=32"]);
    let m = manifest(&a);
    assert_eq!(m["overrides"][0], serde_json::json!(["batch_size", 32]));
    assert_eq!(m["config"]["batch_size"], 32);
    assert_eq!(m["config"]["model"]["model_dim"], 8);
    assert!(m["inputs"].as_array().unwrap().iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    for f in ["best.ssck", "last.ssck", "train_log.jsonl", "eval_report.json", "confusion.csv", "config.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(a.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["confusion"]["counts"].as_array().unwrap().len(), 5);
    assert!(report["strata"]["age"].is_object());

    let b = env.train(&["--override", "batch_size=32"]);
    assert_ne!(a, b);
    assert_eq!(output_digests(&a), output_digests(&b));
    assert_eq!(output_digests(&a).len(), 6);
}

#[test]
fn checkpoint_consumers() {
    let env = Env::new();
    env.prepared();
    let run = env.train(&[]);
    let best = run.join("best.ssck").display().to_string();
    let (st, sp) = (env.s("s.ssep"), env.s("splits.tsv"));

    let out = env.ok(&["eval", "--checkpoint", &best, "--store", &st, "--splits", &sp, "--split", "test"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));
    let ev = env.runs("eval").pop().unwrap();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("eval_report.json")).unwrap()).unwrap();
    let cm = report["confusion"]["counts"].as_array().unwrap();
    assert!(cm.iter().all(|r| r.as_array().unwrap().len() == 5));

    env.ok(&["predict", "--checkpoint", &best, "--store", &st]);
    let pred = std::fs::read_to_string(env.runs("predict").pop().unwrap().join("predictions.csv")).unwrap();
    assert_eq!(pred.lines().count(), 31);
    assert!(pred.starts_with("patient_key,epoch_index,true_stage,predicted_stage\n"));

    env.ok(&[
        "export-features",
        "--checkpoint",
        &best,
        "--store",
        &st,
        "--splits",
        &sp,
        "--split",
        "train",
        "--limit",
        "5",
    ]);
    let feats = std::fs::read_to_string(env.runs("export-features").pop().unwrap().join("features.csv")).unwrap();
    assert_eq!(feats.lines().count(), 6);
    assert_eq!(feats.lines().nth(1).unwrap().split(',').count(), 17);

    env.ok(&["export-hypnogram", "--checkpoint", &best, "--store", &st, "--patient", "synth000"]);
    let hyp = env.runs("export-hypnogram").pop().unwrap();
    assert!(std::fs::read_to_string(hyp.join("hypnogram.csv"))
        .unwrap()
        .starts_with("epoch_index,true_stage,predicted_stage"));
    assert!(std::fs::read_to_string(hyp.join("hypnogram.svg")).unwrap().starts_with("<svg"));

    let out = env.ok(&["report", "--run", &run.display().to_string()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("command   train") && text.contains("best      iteration"), "{text}");

    let last = run.join("last.ssck").display().to_string();
    let out = env.run(&["resume", "--checkpoint", &last, "--store", &st, "--splits", &sp, "--override", "lr=0.5"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
    env.ok(&["resume", "--checkpoint", &last, "--store", &st, "--splits", &sp, "--override", "max_iterations=9"]);
    let log = std::fs::read_to_string(env.runs("resume").pop().unwrap().join("train_log.jsonl")).unwrap();
    assert!(log.contains("\"iteration\":9"));
}

#[test]
fn exit_codes() {
    let env = Env::new();
    env.prepared();
    let (st, sp, cf) = (env.s("s.ssep"), env.s("splits.tsv"), env.s("run.json"));
    assert_eq!(code(&env.run(&["--help"])), 0);
    assert_eq!(code(&env.run(&["train"])), 1);
    assert_eq!(code(&env.run(&["frobnicate"])), 1);

    let out = env.run(&["train", "--config", &cf, "--store", &st, "--splits", &sp, "--override", "model.depth=3"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depth"));
    let out = env.run(&["train", "--config", &cf, "--store", &st, "--splits", &sp, "--override", "lr=-1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`lr`"));
    assert_eq!(code(&env.run(&["split", "--store", &st, "--fractions", "0.5,0.5,0.5", "--out", &sp])), 1);

    let missing = env.s("nope.ssep");
    assert_eq!(code(&env.run(&["train", "--config", &cf, "--store", &missing, "--splits", &sp])), 2);
    std::fs::write(env.path("bad.ssep"), b"garbage").unwrap();
    assert_eq!(code(&env.run(&["train", "--config", &cf, "--store", &env.s("bad.ssep"), "--splits", &sp])), 2);
    assert_eq!(code(&env.run(&["eval", "--checkpoint", &env.s("x.ssck"), "--store", &st, "--splits", &sp])), 2);

    let diverge = ["train", "--config", &cf, "--store", &st, "--splits", &sp, "--override", "lr=1e35"];
    let out = env.run(&diverge);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

fn study(channels: usize) -> Vec<u8> {
    let start = NaiveDate::from_ymd_opt(2021, 2, 3).unwrap().and_hms_opt(20, 0, 0).unwrap();
    let n = 90 * 200;
    let sigs = MONTAGE[..channels]
        .iter()
        .enumerate()
        .map(|(c, l)| {
            let x = (0..n).map(|t| 50.0 * (t as f64 * 0.02 * (c + 1) as f64).sin()).collect();
            (SignalHeader::eeg(l, -400.0, 400.0, 200), x)
        })
        .collect();
    let mut rec = build_recording("X F X X", start, 1.0, sigs).unwrap();
    rec.header.reserved = "EDF+C".into();
    rec.annotation_signal = Some(AnnotationSignal { position: channels, header: SignalHeader::annotations(30) });
    rec.annotations = ["Sleep stage W", "Sleep stage N1", "Sleep stage N3"]
        .iter()
        .enumerate()
        .map(|(i, t)| Annotation { onset_s: 30.0 * i as f64, duration_s: Some(30.0), text: t.to_string() })
        .collect();
    rec.header.num_signals = channels + 1;
    rec.header.header_bytes = 256 * (channels + 2);
    write_edf(&rec).unwrap()
}

#[test]
fn ingest_directory() {
    let env = Env::new();
    let edf = env.path("edf");
    std::fs::create_dir(&edf).unwrap();
    let meta = env.path("subjects.jsonl");
    let rows: Vec<String> = ["A", "B", "C"]
        .iter()
        .map(|k| format!(r#"{{"patient_key":"{k}","age_years":4.5,"race":"Asian","sex":"FemaleOrUnknown"}}"#))
        .collect();
    std::fs::write(&meta, rows.join("\n")).unwrap();

    let out = env.run(&[
        "ingest",
        "--edf-dir",
        &edf.display().to_string(),
        "--meta",
        &meta.display().to_string(),
        "--out",
        &env.s("c.ssep"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cohort is empty"));

    std::fs::write(edf.join("A_1.edf"), study(7)).unwrap();
    std::fs::write(edf.join("B_1.edf"), study(7)).unwrap();
    std::fs::write(edf.join("C_1.edf"), study(6)).unwrap();
    let args = |out: &str| {
        vec![
            "ingest".to_string(),
            "--edf-dir".into(),
            edf.display().to_string(),
            "--meta".into(),
            meta.display().to_string(),
            "--out".into(),
            env.s(out),
        ]
    };
    let first: Vec<String> = args("c1.ssep");
    env.ok(&first.iter().map(String::as_str).collect::<Vec<_>>());
    let run = env.runs("ingest").pop().unwrap();
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("ingest_report.json")).unwrap()).unwrap();
    assert_eq!(report["files"].as_array().unwrap().len(), 2);
    assert_eq!(report["rejects"][0]["file"], "C_1.edf");
    assert_eq!(report["rejects"][0]["kind"], "missing_channel");
    assert_eq!(report["total_epochs"], 6);
    assert_eq!(manifest(&run)["inputs"].as_array().unwrap().len(), 4);

    let second: Vec<String> = args("c2.ssep");
    env.ok(&second.iter().map(String::as_str).collect::<Vec<_>>());
    let runs = env.runs("ingest");
    let digest = |r: &Path| output_digests(r).into_iter().find(|(n, _)| n.ends_with(".ssep")).unwrap().1;
    assert_eq!(digest(&runs[runs.len() - 2]), digest(&runs[runs.len() - 1]));
    assert_eq!(std::fs::read(env.path("c1.ssep")).unwrap(), std::fs::read(env.path("c2.ssep")).unwrap());
}

#[test]
fn ablate_single_channel() {
    let env = Env::new();
    let st = env.s("p.ssep");
    env.ok(&["synth", "--n-per-class", "4", "--seed", "5", "--planted-channel", "F4-M1", "--out", &st]);
    env.ok(&["split", "--store", &st, "--seed", "2", "--out", &env.s("sp.tsv")]);
    let cfg = RunConfig { model: ModelConfig::tiny(), max_iterations: 4, eval_every: 2, ..Default::default() };
    std::fs::write(env.path("run.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = env.ok(&[
        "ablate",
        "--config",
        &env.s("run.json"),
        "--store",
        &st,
        "--splits",
        &env.s("sp.tsv"),
        "--channel",
        "F4-M1",
    ]);
    let csv = String::from_utf8_lossy(&out.stdout).into_owned();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "channel,W,N1,N2,N3,REM,overall");
    assert!(lines[1].starts_with("F4-M1,"));
    assert_eq!(lines.len(), 2);
    let run = env.runs("ablate").pop().unwrap();
    assert_eq!(std::fs::read_to_string(run.join("ablation.csv")).unwrap(), csv);
    assert_eq!(code(&env.run(&["ablate", "--store", &st, "--splits", &env.s("sp.tsv"), "--channel", "T3-A2"])), 1);
}
