use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sonarfield::eval::{
    self, AblationCell, DatasetInfo, DistanceReport, EvalConfig, EvalReport, FoldMode, Subdivision,
};
use sonarfield::features::{FeatureConfig, Sensor};
use sonarfield::gbdt::TrainConfig;
use sonarfield::io::{self, Manifest};
use sonarfield::model::GestureModel;
use sonarfield::pipeline::{self, PipelineConfig, ReplayOptions, WindowSet};
use sonarfield::scene_sim::{DatasetPlan, NoiseBand};
use sonarfield::signal::ChannelId;
use sonarfield::{Error, GestureClass, Parallelism};

use crate::exit::{fail, CmdResult, ExitContext, COMPAT, DATA, INPUT};
use crate::{BandArg, EvalArgs, Experiment, FoldModeArg, GenArgs, SensorArgs, StreamArgs, TrainArgs, TrainFlags};

/// Offset between the dataset seed and the seed of held-out distance sessions.
const DISTANCE_TEST_SEED_OFFSET: u64 = 1_000_003;

fn echo<A: Serialize>(command: &str, args: &A, seed: Option<u64>) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "args": args,
    })
}

pub fn gen(a: &GenArgs) -> CmdResult<()> {
    let seed = a.seed.unwrap_or(0);
    let text = fs::read_to_string(&a.plan).or_exit(INPUT, format!("cannot read plan {}", a.plan.display()))?;
    let plan: DatasetPlan =
        serde_json::from_str(&text).or_exit(INPUT, format!("invalid plan {}", a.plan.display()))?;
    plan.validate().or_exit(INPUT, format!("invalid plan {}", a.plan.display()))?;
    fs::create_dir_all(&a.out).or_exit(INPUT, format!("cannot create {}", a.out.display()))?;
    let run = echo("gen", a, Some(seed));
    let path = io::write_dataset(&a.out, &plan, seed, Some(&run)).map_err(|e| {
        let code = if matches!(e, Error::Io(_)) { INPUT } else { DATA };
        crate::exit::Failure { code, error: anyhow::Error::new(e).context(format!("writing {}", a.out.display())) }
    })?;
    eprintln!("wrote {} sessions (seed {seed})", plan.session_count());
    println!("{}", path.display());
    Ok(())
}

fn parse_sensors(a: &SensorArgs) -> CmdResult<Vec<Sensor>> {
    let mut out = match a.sensors.as_deref().map(str::trim) {
        None | Some("full") => vec![Sensor::MicRight, Sensor::MicBand, Sensor::Imu],
        Some("audio") => vec![Sensor::MicRight, Sensor::MicBand],
        Some(list) => {
            let mut v = Vec::new();
            for part in list.split(',').filter(|p| !p.trim().is_empty()) {
                let s = Sensor::parse(part).or_exit(INPUT, "bad --sensors")?;
                if !v.contains(&s) {
                    v.push(s);
                }
            }
            if !v.contains(&Sensor::Imu) {
                v.push(Sensor::Imu);
            }
            v
        }
    };
    if a.no_imu {
        out.retain(|&s| s != Sensor::Imu);
    }
    if out.is_empty() {
        return Err(fail(INPUT, "sensor selection is empty"));
    }
    Ok(out)
}

fn full_features(base: &FeatureConfig) -> FeatureConfig {
    FeatureConfig {
        channels: vec![ChannelId::MicRight, ChannelId::MicBand],
        imu: true,
        ..base.clone()
    }
}

fn train_config(t: &TrainFlags, seed: u64) -> CmdResult<TrainConfig> {
    let cfg = TrainConfig {
        n_rounds: t.rounds,
        learning_rate: t.learning_rate,
        max_depth: t.max_depth,
        min_samples_leaf: t.min_samples_leaf,
        n_bins: t.bins,
        subsample: t.subsample,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate().or_exit(INPUT, "bad training flags")?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> CmdResult<(Manifest, Vec<PathBuf>)> {
    if !path.is_file() {
        return Err(fail(INPUT, format!("manifest {} not found", path.display())));
    }
    let m = Manifest::load(path).or_exit(DATA, "cannot load manifest")?;
    let dirs = m.sessions.iter().map(|e| m.session_dir(path, e)).collect();
    Ok((m, dirs))
}

fn load_model(path: &Path) -> CmdResult<GestureModel> {
    if !path.is_file() {
        return Err(fail(INPUT, format!("model file {} not found", path.display())));
    }
    let bytes = fs::read(path).or_exit(INPUT, format!("cannot read {}", path.display()))?;
    GestureModel::from_bytes(&bytes).or_exit(COMPAT, format!("cannot use model {}", path.display()))
}

fn parse_gestures(list: Option<&str>) -> CmdResult<Option<BTreeSet<GestureClass>>> {
    let Some(list) = list else { return Ok(None) };
    let set = list
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<GestureClass>())
        .collect::<Result<BTreeSet<_>, _>>()
        .or_exit(INPUT, "bad --gestures")?;
    if set.is_empty() {
        return Err(fail(INPUT, "--gestures is empty"));
    }
    Ok(Some(set))
}

/// Featurize the manifest's sessions, optionally only those of `keep`.
/// Every expected gesture must contribute at least one window.
fn extract(
    manifest: &Manifest,
    dirs: &[PathBuf],
    keep: Option<&BTreeSet<GestureClass>>,
    pipeline: &PipelineConfig,
    mode: Parallelism,
) -> CmdResult<WindowSet> {
    let wanted = |g: GestureClass| keep.is_none_or(|k| k.contains(&g));
    let picked: Vec<PathBuf> = manifest
        .sessions
        .iter()
        .zip(dirs)
        .filter(|(e, _)| wanted(e.gesture))
        .map(|(_, d)| d.clone())
        .collect();
    let mut set = pipeline::extract_dirs(&picked, pipeline, mode).or_exit(DATA, "cannot read dataset")?;
    if keep.is_some() {
        set = set.filter(wanted);
    }
    let counts = set.class_counts();
    let expected: BTreeSet<GestureClass> = match keep {
        Some(k) => k.clone(),
        None => manifest.sessions.iter().map(|e| e.gesture).collect(),
    };
    if let Some(g) = expected.iter().find(|g| !counts.contains_key(g)) {
        return Err(fail(DATA, format!("class {g} has no windows in {}", manifest_label(manifest))));
    }
    Ok(set)
}

fn manifest_label(m: &Manifest) -> String {
    format!("the dataset (seed {}, {} sessions)", m.seed, m.sessions.len())
}

fn label_names(set: &WindowSet) -> Vec<&'static str> {
    set.labels.iter().map(|g| g.name()).collect()
}

pub fn train(a: &TrainArgs, mode: Parallelism) -> CmdResult<()> {
    let seed = a.seed.unwrap_or(0);
    let sensors = parse_sensors(&a.sensors)?;
    let features = FeatureConfig::default().with_sensors(&sensors).or_exit(INPUT, "bad --sensors")?;
    let cfg = train_config(&a.train, seed)?;
    let keep = parse_gestures(a.gestures.as_deref())?;
    let (manifest, dirs) = load_manifest(&a.manifest)?;
    let pipeline = PipelineConfig::default().with_features(features.clone());
    let set = extract(&manifest, &dirs, keep.as_ref(), &pipeline, mode)?;
    let counts = set.class_counts();
    if counts.len() < 2 {
        return Err(fail(DATA, "training needs windows from at least two classes"));
    }
    let mut model = GestureModel::train(&set.rows, &label_names(&set), &features, &cfg, mode)
        .or_exit(DATA, "training failed")?;
    let counts_json: serde_json::Map<String, Value> =
        counts.iter().map(|(g, n)| (g.name().to_string(), json!(n))).collect();
    let mut run = echo("train", a, Some(seed));
    run["dataset_seed"] = json!(manifest.seed);
    run["class_counts"] = Value::Object(counts_json);
    model.run = Some(run);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).or_exit(INPUT, format!("cannot create {}", dir.display()))?;
    }
    model.save(&a.out).or_exit(INPUT, format!("cannot write {}", a.out.display()))?;

    let e = &model.ensemble;
    eprintln!(
        "trained {} classes on {} windows, {} features, {} trees",
        e.classes.len(),
        set.len(),
        features.dimension(),
        e.tree_count()
    );
    for (g, n) in &counts {
        eprintln!("  {:<16} {n}", g.name());
    }
    let loss: Vec<String> = e
        .loss_history
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 10 == 0 || *i + 1 == e.loss_history.len())
        .map(|(i, l)| format!("{i}:{l:.4}"))
        .collect();
    eprintln!("loss {}", loss.join(" "));
    println!("{}", a.out.display());
    Ok(())
}

fn companion(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text).or_exit(INPUT, format!("cannot write {}", path.display()))
}

fn safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

fn reference(experiment: &str) -> Option<&'static str> {
    Some(match experiment {
        "kfold" => "human-subject study: 93.7 % accuracy, macro F1 93.6 %, 12 classes, 10-fold",
        "subset:touch_vs_no_touch" => "human-subject study: 99 % (touch vs touchless)",
        "subset:touch5_normal" => "human-subject study: 98 % (touch gestures only)",
        "subset:touchless6_normal" => "human-subject study: 90.8 % (six touchless gestures)",
        "subset:wristup_closetomouth_normal" => "human-subject study: 98.93 %",
        "noise" => "human-subject study: 93.7 % lab, 93.15 / 92.70 / 92.62 % at 34.45 / 51.41 / 65.29 dB",
        "distance" => "human-subject study: ~75 % (Cover, Wrist Up) at 2-5 cm, Block Left < 60 %, ~50 % beyond 5 cm",
        _ => return None,
    })
}

fn annotate(r: EvalReport, info: &DatasetInfo) -> EvalReport {
    let r = r.with_dataset(info.clone());
    match reference(&r.experiment) {
        Some(note) => r.with_reference(note),
        None => r,
    }
}

pub fn eval(a: &EvalArgs, mode: Parallelism) -> CmdResult<()> {
    let seed = a.seed.unwrap_or(0);
    if a.model.is_none() && !a.retrain {
        return Err(fail(INPUT, "pass --model or --retrain"));
    }
    if a.folds < 2 {
        return Err(fail(INPUT, "--folds must be at least 2"));
    }
    let (manifest, dirs) = load_manifest(&a.manifest)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let explicit = a.sensors.sensors.is_some() || a.sensors.no_imu;
    let requested = parse_sensors(&a.sensors)?;
    let base = model.as_ref().map_or_else(FeatureConfig::default, |m| m.features.clone());
    let features = if explicit {
        full_features(&base).with_sensors(&requested).or_exit(INPUT, "bad --sensors")?
    } else {
        base.clone()
    };
    if let (Some(m), true) = (&model, a.experiment != Experiment::Ablate) {
        m.check_layout(&features).or_exit(COMPAT, "model does not match the requested features")?;
    }
    let train = match &model {
        Some(m) => m.ensemble.config.clone(),
        None => train_config(&a.train, seed)?,
    };
    let config = EvalConfig {
        folds: a.folds,
        fold_mode: match a.fold_mode {
            FoldModeArg::Session => FoldMode::Session,
            FoldModeArg::Window => FoldMode::Window,
        },
        seed,
        train,
    };
    let pipeline = PipelineConfig::default().with_features(features.clone());
    let info = DatasetInfo { seed: manifest.seed, plan: Some(manifest.plan.clone()), pipeline: pipeline.clone() };
    let mut run = echo("eval", a, Some(seed));
    run["dataset_seed"] = json!(manifest.seed);
    run["eval_config"] = json!(config);

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).or_exit(INPUT, format!("cannot create {}", dir.display()))?;
    }

    let result: Value = match a.experiment {
        Experiment::Kfold => {
            let set = extract(&manifest, &dirs, None, &pipeline, mode)?;
            let r = eval::kfold_eval(&set, &config, mode).or_exit(DATA, "cross-validation failed")?;
            let mut r = annotate(r, &info);
            r.experiment = "kfold".into();
            write_text(&companion(&a.out, "confusion.csv"), &r.confusion.to_csv())?;
            println!("kfold accuracy {:.4} macro_f1 {:.4} ({} windows)", r.accuracy, r.macro_f1, r.n_samples);
            json!(r)
        }
        Experiment::Subset => {
            let subsets = match &a.subset {
                Some(s) => s
                    .split(';')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| Subdivision::parse(p.trim()))
                    .collect::<Result<Vec<_>, _>>()
                    .or_exit(INPUT, "bad --subset")?,
                None => Subdivision::presets(),
            };
            let set = extract(&manifest, &dirs, None, &pipeline, mode)?;
            let mut reports = Vec::new();
            for sub in &subsets {
                let r = eval::subdivision_eval(&set, sub, &config, mode).or_exit(DATA, format!("subset {}", sub.name))?;
                let r = annotate(r, &info);
                write_text(&companion(&a.out, &format!("{}.confusion.csv", safe(&sub.name))), &r.confusion.to_csv())?;
                println!("{} accuracy {:.4} macro_f1 {:.4}", r.experiment, r.accuracy, r.macro_f1);
                reports.push(r);
            }
            json!(reports)
        }
        Experiment::Ablate => {
            let full = full_features(&base);
            let set = extract(&manifest, &dirs, None, &PipelineConfig::default().with_features(full), mode)?;
            let sets = if explicit { vec![requested.clone()] } else { eval::all_sensor_sets() };
            let cells: Vec<AblationCell> = eval::ablation_eval(&set, &sets, &config, mode)
                .or_exit(DATA, "ablation failed")?
                .into_iter()
                .map(|c| AblationCell { report: c.report.with_dataset(info.clone()), ..c })
                .collect();
            for c in &cells {
                let name = c.sensors.iter().map(|s| s.name()).collect::<Vec<_>>().join("+");
                write_text(&companion(&a.out, &format!("{}.confusion.csv", safe(&name))), &c.report.confusion.to_csv())?;
                println!("{name} ({} features) accuracy {:.4} macro_f1 {:.4}", c.dimension, c.report.accuracy, c.report.macro_f1);
            }
            json!(cells)
        }
        Experiment::Noise => {
            let levels = a.levels.clone().unwrap_or_else(|| eval::NOISE_LEVELS_DB.to_vec());
            let bands = match a.band {
                BandArg::Below16500 => vec![NoiseBand::Below16500],
                BandArg::FullBand => vec![NoiseBand::FullBand],
                BandArg::Both => vec![NoiseBand::Below16500, NoiseBand::FullBand],
            };
            let mut points = Vec::new();
            let mut series = Vec::new();
            for band in bands {
                let pts = eval::noise_sweep(&manifest.plan, manifest.seed, &levels, band, &pipeline, &config, mode)
                    .map_err(|e| {
                        let code = if matches!(e, Error::Parameter(_)) { INPUT } else { DATA };
                        crate::exit::Failure { code, error: anyhow::Error::new(e).context("noise sweep failed") }
                    })?;
                let band_name = serde_json::to_value(band).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                for p in &pts {
                    println!("{band_name} {:.2} dB accuracy {:.4} macro_f1 {:.4}", p.noise_db, p.accuracy, p.macro_f1);
                }
                series.push((band_name, pts.iter().map(|p| (p.noise_db, p.accuracy)).collect()));
                points.extend(pts);
            }
            let svg = eval::svg_line_plot("Accuracy vs noise level", "noise (dB)", "accuracy", &series);
            write_text(&companion(&a.out, "svg"), &svg)?;
            json!({ "points": points, "reference": reference("noise") })
        }
        Experiment::Distance => {
            let distances = a.distances.clone().unwrap_or_else(|| eval::DISTANCES_M.to_vec());
            if distances.iter().any(|d| d.is_nan() || *d < 0.0) {
                return Err(fail(INPUT, "distances must be non-negative"));
            }
            let ensemble = match &model {
                Some(m) => m.ensemble.clone(),
                None => {
                    let set = extract(&manifest, &dirs, None, &pipeline, mode)?;
                    eval::train_full(&set, &config.train, mode).or_exit(DATA, "training failed")?
                }
            };
            let test_seed = manifest.seed.wrapping_add(DISTANCE_TEST_SEED_OFFSET);
            let curves = eval::distance_curves(
                &ensemble,
                &manifest.plan,
                test_seed,
                &eval::DISTANCE_GESTURES,
                &distances,
                a.test_sessions,
                &pipeline,
                mode,
            )
            .or_exit(DATA, "distance sweep failed")?;
            let series: Vec<(String, Vec<(f64, f64)>)> = curves
                .iter()
                .map(|c| (c.gesture.name().to_string(), c.points.iter().map(|p| (p.distance_m * 100.0, p.accuracy)).collect()))
                .collect();
            for (name, pts) in &series {
                let txt: Vec<String> = pts.iter().map(|(d, acc)| format!("{d:.0}cm:{acc:.3}")).collect();
                println!("{name} {}", txt.join(" "));
            }
            let svg = eval::svg_line_plot("Accuracy vs hand distance", "distance (cm)", "accuracy", &series);
            write_text(&companion(&a.out, "svg"), &svg)?;
            let report = DistanceReport {
                curves,
                train_seed: manifest.seed,
                test_seed,
                test_sessions: a.test_sessions,
                plan: manifest.plan.clone(),
                pipeline: pipeline.clone(),
                train: config.train.clone(),
            };
            json!({ "report": report, "reference": reference("distance") })
        }
        Experiment::Latency => {
            let model = match model {
                Some(m) => m,
                None => {
                    let set = extract(&manifest, &dirs, None, &pipeline, mode)?;
                    GestureModel::train(&set.rows, &label_names(&set), &features, &config.train, mode)
                        .or_exit(DATA, "training failed")?
                }
            };
            let sessions = latency_sessions(&manifest, &dirs, a.latency_sessions)?;
            let r = eval::latency_bench(&model, &sessions, &pipeline, a.windows).or_exit(DATA, "latency benchmark failed")?;
            println!(
                "latency p50 {:.2} ms p95 {:.2} ms over {} windows ({} trees)",
                r.overall.p50_ms, r.overall.p95_ms, r.overall.n, r.tree_count
            );
            json!(r)
        }
    };

    let doc = json!({ "run": run, "experiment": a.experiment, "result": result });
    io::write_json(&a.out, &doc).or_exit(INPUT, format!("cannot write {}", a.out.display()))?;
    Ok(())
}

/// Up to `n` sessions, taking gestures round-robin so every class is timed.
fn latency_sessions(
    manifest: &Manifest,
    dirs: &[PathBuf],
    n: usize,
) -> CmdResult<Vec<sonarfield::scene_sim::SessionRecording>> {
    let mut by_class: std::collections::BTreeMap<GestureClass, Vec<&PathBuf>> = Default::default();
    for (e, d) in manifest.sessions.iter().zip(dirs) {
        by_class.entry(e.gesture).or_default().push(d);
    }
    let mut picked = Vec::new();
    let mut round = 0;
    while picked.len() < n {
        let before = picked.len();
        for v in by_class.values() {
            if let Some(d) = v.get(round) {
                if picked.len() < n {
                    picked.push(*d);
                }
            }
        }
        if picked.len() == before {
            break;
        }
        round += 1;
    }
    picked
        .into_iter()
        .map(|d| io::read_session(d).or_exit(DATA, "cannot read session"))
        .collect()
}

pub fn stream(a: &StreamArgs) -> CmdResult<()> {
    let main = load_model(&a.model)?;
    let indirect = a.indirect_model.as_deref().map(load_model).transpose()?;
    if !a.session.is_dir() {
        return Err(fail(INPUT, format!("session directory {} not found", a.session.display())));
    }
    let session = io::read_session(&a.session).or_exit(DATA, "cannot read session")?;
    let pipeline = PipelineConfig::default().with_features(main.features.clone());
    let options = ReplayOptions { realtime: a.realtime, queue_capacity: a.queue.max(1) };
    let r = pipeline::replay(&session, &main, indirect.as_ref(), &pipeline, &options).map_err(|e| {
        let code = if matches!(e, Error::Config(_)) { COMPAT } else { DATA };
        crate::exit::Failure { code, error: anyhow::Error::new(e).context("replay failed") }
    })?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for e in &r.events {
        writeln!(out, "{}", e.to_json_line()).or_exit(INPUT, "cannot write events")?;
    }
    out.flush().or_exit(INPUT, "cannot write events")?;
    let s = &r.stats;
    let summary = json!({
        "session": session.id,
        "seed": session.seed,
        "events": r.events.len(),
        "static_events": s.static_events,
        "dynamic_events": s.dynamic_events,
        "indirect_events": s.indirect_events,
        "suppressed_by_debounce": s.suppressed_by_debounce,
        "suppressed_by_refractory": s.suppressed_by_refractory,
        "windows": s.windows,
        "peaks": s.peaks,
        "wall_ms": r.wall_ms,
        "run": echo("stream", a, None),
    });
    eprintln!("{summary}");
    Ok(())
}
