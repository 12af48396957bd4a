use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sleepformer::dataset::{
    patient_split, read_container, read_split_file, synth_generate_with, write_container, write_split_file, EpochStore,
    Split, SplitSpec, SynthConfig,
};
use sleepformer::epoch::NUM_CHANNELS;
use sleepformer::eval::{
    channel_ablation, evaluate_split, export_features, hypnogram_svg, predict_indices, write_ablation_csv,
    write_confusion_csv, write_features_csv, write_hypnogram_csv, EvalReport, HypnogramRow,
};
use sleepformer::ingest::ingest_dir;
use sleepformer::model::{load_checkpoint, param_count_for, Checkpoint};
use sleepformer::montage::{montage_index, MONTAGE};
use sleepformer::stage::Stage;
use sleepformer::subject::{read_subjects, write_subjects};
use sleepformer::training::{
    checkpoint_run_config, resume, train, RunConfig, TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};

use crate::error::CliError;
use crate::overrides::resolve_config;
use crate::run::{read_manifest, Run, MANIFEST_FILE};
use crate::{Command, ConfigArgs, StoreArgs};

/// `println!` that ends the process quietly when stdout is a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    };
}

pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const SPLIT_REPORT: &str = "split_report.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const FEATURES_CSV: &str = "features.csv";
pub const HYPNOGRAM_CSV: &str = "hypnogram.csv";
pub const HYPNOGRAM_SVG: &str = "hypnogram.svg";

pub fn dispatch(runs_dir: &Path, command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { edf_dir, meta, out, workers } => ingest(runs_dir, &edf_dir, &meta, &out, workers),
        Command::Synth { n_per_class, seed, patients, snr_db, planted_channel, out } => {
            let planted_channel = planted_channel
                .map(|c| montage_index(&c).ok_or_else(|| CliError::user(format!("unknown montage channel `{c}`"))))
                .transpose()?;
            synth(runs_dir, SynthConfig { n_per_class, seed, patients, snr_db, planted_channel }, &out)
        }
        Command::Split { store, seed, fractions, out } => split(runs_dir, &store, seed, &fractions, &out),
        Command::Train { config, data } => train_cmd(runs_dir, &config, &data),
        Command::Resume { checkpoint, config, data } => resume_cmd(runs_dir, &checkpoint, &config, &data),
        Command::Eval { checkpoint, data, split, batch_size } => {
            eval_cmd(runs_dir, &checkpoint, &data, parse_split(&split)?, batch_size)
        }
        Command::Ablate { config, data, channel } => ablate(runs_dir, &config, &data, &channel),
        Command::Predict { checkpoint, data, split, batch_size } => {
            let split = split.as_deref().map(parse_split).transpose()?;
            predict_cmd(runs_dir, &checkpoint, &data, split, batch_size)
        }
        Command::ExportFeatures { checkpoint, data, split, limit, seed } => {
            features_cmd(runs_dir, &checkpoint, &data, parse_split(&split)?, limit, seed)
        }
        Command::ExportHypnogram { checkpoint, data, patient } => hypnogram_cmd(runs_dir, &checkpoint, &data, &patient),
        Command::Report { run } => report(&run),
    }
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(|_| CliError::user(format!("unknown split `{s}` (train, val or test)")))
}

/// Subject sidecar stored next to a container: `store.ssep` → `store.subjects.jsonl`.
pub fn subjects_path(store: &Path) -> PathBuf {
    store.with_extension("subjects.jsonl")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn save_store(run: &mut Run, store: &EpochStore, out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = create(out)?;
    write_container(&mut w, store.epochs())?;
    w.flush()?;
    let sp = subjects_path(out);
    let mut w = create(&sp)?;
    write_subjects(&mut w, store.subjects().values())?;
    w.flush()?;
    run.output(out)?;
    run.output(&sp)?;
    Ok(())
}

/// Reads a container, its subject sidecar and optionally a split file.
fn load_store(run: &mut Run, args: &StoreArgs, need_splits: bool) -> Result<EpochStore, CliError> {
    let epochs = read_container(open(&args.store)?).map_err(|e| CliError::from(e).context(args.store.display()))?;
    run.input(&args.store)?;
    let mut store = EpochStore::new(epochs);
    let sp = subjects_path(&args.store);
    if sp.exists() {
        store.set_subjects(read_subjects(open(&sp)?)?);
        run.input(&sp)?;
    }
    match &args.splits {
        Some(path) => {
            let map = read_split_file(open(path)?).map_err(|e| CliError::from(e).context(path.display()))?;
            store.assign_splits(&map)?;
            run.input(path)?;
        }
        None if need_splits => return Err(CliError::user("--splits is required for this command")),
        None => {}
    }
    Ok(store)
}

fn ingest(runs_dir: &Path, edf_dir: &Path, meta: &Path, out: &Path, workers: Option<usize>) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "ingest")?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    run.manifest.config = json!({ "edf_dir": edf_dir, "meta": meta, "out": out, "workers": workers });
    let subjects = read_subjects(open(meta)?).map_err(|e| CliError::from(e).context(meta.display()))?;
    run.input(meta)?;
    let ingested = ingest_dir(edf_dir, &subjects, workers)?;
    for f in sleepformer::ingest::list_edf_files(edf_dir)? {
        run.input(&f)?;
    }
    let report_path = run.path(INGEST_REPORT);
    write_json(&report_path, &ingested.report)?;
    run.output(&report_path)?;
    for r in &ingested.report.rejects {
        eprintln!("rejected {}: {}", r.file, r.reason);
    }
    if ingested.store.is_empty() {
        run.save()?;
        return Err(CliError::data(format!("no epochs ingested from {}", edf_dir.display())));
    }
    save_store(&mut run, &ingested.store, out)?;
    run.save()?;
    say!(
        "{} epochs from {} files ({} rejected); run {}",
        ingested.report.total_epochs,
        ingested.report.files.len(),
        ingested.report.rejects.len(),
        run.dir.display()
    );
    Ok(())
}

fn synth(runs_dir: &Path, cfg: SynthConfig, out: &Path) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "synth")?;
    run.manifest.seed = Some(cfg.seed);
    run.manifest.config = serde_json::to_value(&cfg)?;
    run.save()?;
    let store = synth_generate_with(&cfg)?;
    save_store(&mut run, &store, out)?;
    run.save()?;
    say!("{} synthetic epochs for {} patients; run {}", store.len(), store.patients().len(), run.dir.display());
    Ok(())
}

fn split(runs_dir: &Path, store_path: &Path, seed: u64, fractions: &str, out: &Path) -> Result<(), CliError> {
    let f: Vec<f64> = fractions
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::user(format!("fractions `{fractions}` are not numbers")))?;
    let [a, b, c] = f[..] else {
        return Err(CliError::user(format!("fractions `{fractions}` need three values")));
    };
    let spec = SplitSpec::new((a, b, c), seed)?;
    let mut run = Run::create(runs_dir, "split")?;
    run.manifest.seed = Some(seed);
    run.manifest.config = serde_json::to_value(&spec)?;
    let mut store = load_store(&mut run, &StoreArgs { store: store_path.to_path_buf(), splits: None }, false)?;
    let map = patient_split(&store.patients(), &spec)?;
    store.assign_splits(&map)?;
    let mut w = create(out)?;
    write_split_file(&mut w, &map)?;
    w.flush()?;
    run.output(out)?;
    let summary: Value = Split::ALL
        .iter()
        .map(|&s| {
            let patients = map.values().filter(|&&v| v == s).count();
            (s.name().to_string(), json!({ "patients": patients, "class_counts": store.class_counts(s) }))
        })
        .collect::<serde_json::Map<_, _>>()
        .into();
    let rp = run.path(SPLIT_REPORT);
    write_json(&rp, &summary)?;
    run.output(&rp)?;
    run.save()?;
    say!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn resolve(base: RunConfig, args: &ConfigArgs, run: &mut Run) -> Result<RunConfig, CliError> {
    let (mut config, applied) = resolve_config(base, args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(p) = &args.config {
        run.input(p)?;
    }
    run.manifest.overrides = applied;
    run.manifest.seed = Some(config.seed);
    Ok(config)
}

/// Writes the log summary, the resolved config and the test-split report.
fn finish_training(
    run: &mut Run,
    config: &RunConfig,
    store: &EpochStore,
    outcome: &TrainOutcome,
) -> Result<(), CliError> {
    for r in &outcome.log.records {
        eprintln!(
            "iter {:>6}  train_loss {:.4}  val_acc {:.4}  val_wf1 {:.4}  val_kappa {:.4}",
            r.iteration, r.train_loss, r.val.accuracy, r.val.weighted_f1, r.val.kappa
        );
    }
    let cp = run.path(CONFIG_FILE);
    write_json(&cp, &RunConfig { checkpoint_dir: None, ..config.clone() })?;
    run.output(&cp)?;
    for name in [BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE] {
        let p = run.path(name);
        if p.exists() {
            run.output(&p)?;
        }
    }
    if !store.indices(Split::Test).is_empty() {
        let channels = config.channel_indices()?;
        let report = evaluate_split(&outcome.best_params, store, Split::Test, &channels, config.batch_size)?;
        write_report(run, &report)?;
        say!(
            "test accuracy {:.4}  weighted F1 {:.4}  kappa {:.4}",
            report.metrics.accuracy,
            report.metrics.weighted_f1,
            report.metrics.kappa
        );
    }
    run.save()?;
    say!("run {}", run.dir.display());
    Ok(())
}

fn write_report(run: &mut Run, report: &EvalReport) -> Result<(), CliError> {
    let rp = run.path(EVAL_REPORT);
    write_json(&rp, report)?;
    run.output(&rp)?;
    let cp = run.path(CONFUSION_CSV);
    let mut w = create(&cp)?;
    write_confusion_csv(&mut w, &report.confusion)?;
    w.flush()?;
    run.output(&cp)?;
    Ok(())
}

fn train_cmd(runs_dir: &Path, args: &ConfigArgs, data: &StoreArgs) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "train")?;
    let mut config = resolve(RunConfig::default(), args, &mut run)?;
    run.manifest.config = serde_json::to_value(&config)?;
    let store = load_store(&mut run, data, true)?;
    run.save()?;
    config.checkpoint_dir = Some(run.dir.clone());
    eprintln!("parameters: {}", param_count_for(&config.model));
    let outcome = train(config.clone(), &store)?;
    finish_training(&mut run, &config, &store, &outcome)
}

fn resume_cmd(runs_dir: &Path, checkpoint: &Path, args: &ConfigArgs, data: &StoreArgs) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "resume")?;
    let ck = load_checkpoint(checkpoint, None)?;
    let base = checkpoint_run_config(&ck)
        .ok_or_else(|| CliError::data(format!("{} does not hold a run state", checkpoint.display())))?;
    run.input(checkpoint)?;
    let mut config = resolve(base, args, &mut run)?;
    run.manifest.config = serde_json::to_value(&config)?;
    let store = load_store(&mut run, data, true)?;
    run.save()?;
    config.checkpoint_dir = Some(run.dir.clone());
    let outcome = resume(checkpoint, config.clone(), &store)?;
    finish_training(&mut run, &config, &store, &outcome)
}

/// Input channels a checkpoint was trained on.
fn checkpoint_channels(ck: &Checkpoint) -> Result<Vec<usize>, CliError> {
    match checkpoint_run_config(ck) {
        Some(c) => Ok(c.channel_indices()?),
        None if ck.config().channels == NUM_CHANNELS => Ok((0..NUM_CHANNELS).collect()),
        None => Err(CliError::data("checkpoint does not record its input channels")),
    }
}

fn load_model(run: &mut Run, path: &Path) -> Result<(Checkpoint, Vec<usize>), CliError> {
    let ck = load_checkpoint(path, None)?;
    run.input(path)?;
    let channels = checkpoint_channels(&ck)?;
    Ok((ck, channels))
}

fn eval_cmd(runs_dir: &Path, checkpoint: &Path, data: &StoreArgs, split: Split, bs: usize) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "eval")?;
    run.manifest.config = json!({ "split": split, "batch_size": bs });
    let (ck, channels) = load_model(&mut run, checkpoint)?;
    let store = load_store(&mut run, data, true)?;
    if store.indices(split).is_empty() {
        return Err(CliError::data(format!("the {split} split is empty")));
    }
    let report = evaluate_split(&ck.params, &store, split, &channels, bs)?;
    write_report(&mut run, &report)?;
    run.save()?;
    let m = &report.metrics;
    say!(
        "{split}: {} epochs  accuracy {:.4}  macro F1 {:.4}  weighted F1 {:.4}  kappa {:.4}; run {}",
        m.total,
        m.accuracy,
        m.macro_f1,
        m.weighted_f1,
        m.kappa,
        run.dir.display()
    );
    Ok(())
}

fn ablate(runs_dir: &Path, args: &ConfigArgs, data: &StoreArgs, channels: &[String]) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "ablate")?;
    let mut config = resolve(RunConfig::default(), args, &mut run)?;
    let channels: Vec<String> =
        if channels.is_empty() { MONTAGE.iter().map(|s| s.to_string()).collect() } else { channels.to_vec() };
    for c in &channels {
        if montage_index(c).is_none() {
            return Err(CliError::user(format!("unknown montage channel `{c}`")));
        }
    }
    run.manifest.config = json!({ "run": config, "channels": channels });
    let store = load_store(&mut run, data, true)?;
    run.save()?;
    config.checkpoint_dir = Some(run.dir.clone());
    let mut rows = Vec::new();
    for c in &channels {
        let row = channel_ablation(&config, &store, c)?;
        eprintln!("{}: overall {:.4}", row.channel, row.overall_accuracy);
        rows.push(row);
    }
    let p = run.path(ABLATION_CSV);
    let mut w = create(&p)?;
    write_ablation_csv(&mut w, &rows)?;
    w.flush()?;
    run.output(&p)?;
    run.save()?;
    print!("{}", std::fs::read_to_string(&p)?);
    Ok(())
}

fn predict_cmd(
    runs_dir: &Path,
    checkpoint: &Path,
    data: &StoreArgs,
    split: Option<Split>,
    bs: usize,
) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "predict")?;
    run.manifest.config = json!({ "split": split, "batch_size": bs });
    let (ck, channels) = load_model(&mut run, checkpoint)?;
    let store = load_store(&mut run, data, split.is_some())?;
    let indices: Vec<usize> = match split {
        Some(s) => store.indices(s).to_vec(),
        None => (0..store.len()).collect(),
    };
    let p = predict_indices(&ck.params, &store, &indices, &channels, bs)?;
    let path = run.path(PREDICTIONS_CSV);
    let mut w = create(&path)?;
    writeln!(w, "patient_key,epoch_index,true_stage,predicted_stage")?;
    for ((&i, &t), &y) in p.indices.iter().zip(&p.truth).zip(&p.preds) {
        let e = store.epoch(i);
        writeln!(w, "{},{},{},{}", e.patient_key, e.epoch_index, stage_name(t)?, stage_name(y)?)?;
    }
    w.flush()?;
    run.output(&path)?;
    run.save()?;
    say!("{} predictions; run {}", p.preds.len(), run.dir.display());
    Ok(())
}

fn stage_name(i: usize) -> Result<&'static str, CliError> {
    Stage::from_index(i)
        .map(Stage::short_name)
        .ok_or_else(|| CliError { kind: crate::error::ExitKind::Internal, message: format!("stage index {i}") })
}

fn features_cmd(
    runs_dir: &Path,
    checkpoint: &Path,
    data: &StoreArgs,
    split: Split,
    limit: Option<usize>,
    seed: u64,
) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "export-features")?;
    run.manifest.seed = Some(seed);
    run.manifest.config = json!({ "split": split, "limit": limit });
    let (ck, channels) = load_model(&mut run, checkpoint)?;
    let store = load_store(&mut run, data, true)?;
    let rows = export_features(&ck.params, &store, split, &channels, limit, seed)?;
    let path = run.path(FEATURES_CSV);
    let mut w = create(&path)?;
    write_features_csv(&mut w, &rows)?;
    w.flush()?;
    run.output(&path)?;
    run.save()?;
    say!("{} feature rows; run {}", rows.len(), run.dir.display());
    Ok(())
}

fn hypnogram_cmd(runs_dir: &Path, checkpoint: &Path, data: &StoreArgs, patient: &str) -> Result<(), CliError> {
    let mut run = Run::create(runs_dir, "export-hypnogram")?;
    run.manifest.config = json!({ "patient": patient });
    let (ck, channels) = load_model(&mut run, checkpoint)?;
    let store = load_store(&mut run, data, false)?;
    let mut indices: Vec<usize> = (0..store.len()).filter(|&i| store.epoch(i).patient_key == patient).collect();
    if indices.is_empty() {
        return Err(CliError::data(format!("no epochs for patient `{patient}`")));
    }
    indices.sort_by_key(|&i| store.epoch(i).epoch_index);
    let p = predict_indices(&ck.params, &store, &indices, &channels, 64)?;
    let rows: Vec<HypnogramRow> = p
        .indices
        .iter()
        .zip(&p.preds)
        .map(|(&i, &y)| {
            let e = store.epoch(i);
            Stage::from_index(y)
                .map(|predicted| HypnogramRow { epoch_index: e.epoch_index, truth: e.label, predicted })
                .ok_or_else(|| CliError { kind: crate::error::ExitKind::Internal, message: format!("stage {y}") })
        })
        .collect::<Result<_, _>>()?;
    let csv = run.path(HYPNOGRAM_CSV);
    let mut w = create(&csv)?;
    write_hypnogram_csv(&mut w, &rows)?;
    w.flush()?;
    let svg = run.path(HYPNOGRAM_SVG);
    std::fs::write(&svg, hypnogram_svg(&rows))?;
    run.output(&csv)?;
    run.output(&svg)?;
    run.save()?;
    say!("{} epochs for {patient}; run {}", rows.len(), run.dir.display());
    Ok(())
}

fn pct(v: &Value) -> String {
    v.as_f64().map_or("-".into(), |x| format!("{:.1}%", 100.0 * x))
}

fn report(dir: &Path) -> Result<(), CliError> {
    let m = read_manifest(&dir.join(MANIFEST_FILE))?;
    say!("command   {}", m.command);
    say!("created   {}", m.created);
    say!("version   {}", m.code_version);
    if let Some(s) = m.seed {
        say!("seed      {s}");
    }
    for (k, v) in &m.overrides {
        say!("override  {k}={v}");
    }
    for f in &m.inputs {
        say!("input     {} {}", &f.sha256[..12], f.path);
    }
    let log = dir.join(LOG_FILE);
    if log.exists() {
        let log = sleepformer::training::TrainLog::read_jsonl(open(&log)?)?;
        say!("parameters {}", log.param_count);
        say!("{:>8} {:>10} {:>8} {:>8} {:>8}", "iter", "train_loss", "val_acc", "val_wf1", "kappa");
        for r in &log.records {
            say!(
                "{:>8} {:>10.4} {:>8.4} {:>8.4} {:>8.4}",
                r.iteration,
                r.train_loss,
                r.val.accuracy,
                r.val.weighted_f1,
                r.val.kappa
            );
        }
        if let Some(b) = &log.best {
            say!("best      iteration {} metric {:.4}", b.iteration, b.metric);
        }
    }
    let ev = dir.join(EVAL_REPORT);
    if ev.exists() {
        let r: Value = serde_json::from_reader(open(&ev)?).map_err(|e| CliError::data(e.to_string()))?;
        say!(
            "eval      accuracy {}  macro F1 {}  weighted F1 {}  kappa {}",
            pct(&r["accuracy"]),
            pct(&r["macro_f1"]),
            pct(&r["weighted_f1"]),
            pct(&r["kappa"])
        );
        if let Some(rows) = r["confusion_percent"].as_array() {
            say!("confusion (% of true stage)  {}", Stage::ALL.map(Stage::short_name).join(" "));
            for (s, row) in Stage::ALL.iter().zip(rows) {
                let cells: Vec<String> = row
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|v| format!("{:>5.1}", v.as_f64().unwrap_or(0.0)))
                    .collect();
                say!("  {:<4} {}", s.short_name(), cells.join(" "));
            }
        }
    }
    for name in [ABLATION_CSV, INGEST_REPORT, SPLIT_REPORT] {
        let p = dir.join(name);
        if p.exists() {
            say!("--- {name}");
            print!("{}", std::fs::read_to_string(&p)?);
        }
    }
    Ok(())
}
