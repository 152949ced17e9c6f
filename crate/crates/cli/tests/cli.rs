use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_sonarfield");

fn smoke_plan() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans/smoke.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SONARFIELD_SEED").output().expect("spawn sonarfield")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    o
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    data: PathBuf,
    model: PathBuf,
}

impl Fixture {
    fn manifest(&self) -> PathBuf {
        self.data.join("manifest.json")
    }

    fn session(&self, gesture: &str) -> PathBuf {
        let dir = self.data.join("sessions");
        let mut names: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.split_once('_').map(|(_, g)| g) == Some(gesture))
            .collect();
        names.sort();
        dir.join(&names[0])
    }
}

/// Smoke dataset (3 sessions per class, seed 7) and a model trained on it.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = scratch("fixture");
        let data = root.join("data");
        let model = root.join("model.json");
        ok(run(&["gen", "--plan", s(&smoke_plan()), "--seed", "7", "--out", s(&data)]));
        ok(run(&["train", "--manifest", s(&data.join("manifest.json")), "--out", s(&model), "--seed", "1"]));
        Fixture { data, model }
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn events(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn summary(o: &Output) -> Value {
    let line = stderr(o).lines().last().expect("summary line").to_string();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let out = scratch("gen_twice");
    ok(run(&["gen", "--plan", s(&smoke_plan()), "--seed", "3", "--out", s(&out)]));
    let first = snapshot(&out);
    ok(run(&["gen", "--plan", s(&smoke_plan()), "--seed", "3", "--out", s(&out)]));
    let second = snapshot(&out);
    assert_eq!(first.len(), 1 + 36 * 4);
    assert!(first == second, "regenerated files differ");
}

#[test]
fn gen_missing_plan_is_input_error() {
    let out = scratch("gen_missing");
    let o = run(&["gen", "--plan", "/nonexistent/plan.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("plan.json"));
}

#[test]
fn gen_invalid_plan_is_input_error() {
    let out = scratch("gen_invalid");
    let plan = out.join("plan.json");
    fs::write(&plan, r#"{"sessions":[{"gesture":"Juggling","repetitions":2}]}"#).unwrap();
    let o = run(&["gen", "--plan", s(&plan), "--out", s(&out.join("data"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let a = scratch("seed_env");
    let b = scratch("seed_flag");
    let o = Command::new(BIN)
        .args(["gen", "--plan", s(&smoke_plan()), "--out", s(&a)])
        .env("SONARFIELD_SEED", "11")
        .output()
        .unwrap();
    ok(o);
    ok(run(&["gen", "--plan", s(&smoke_plan()), "--seed", "11", "--out", s(&b)]));
    assert_eq!(read_json(&a.join("manifest.json"))["seed"], 11);
    let wav = Path::new("sessions/s0000_Normal/audio.wav");
    assert_eq!(fs::read(a.join(wav)).unwrap(), fs::read(b.join(wav)).unwrap());
}

#[test]
fn manifest_and_model_embed_run_echo() {
    let f = fixture();
    let m = read_json(&f.manifest());
    assert_eq!(m["run"]["command"], "gen");
    assert_eq!(m["run"]["seed"], 7);
    let model = read_json(&f.model);
    assert_eq!(model["run"]["command"], "train");
    assert_eq!(model["run"]["seed"], 1);
    assert_eq!(model["run"]["dataset_seed"], 7);
}

#[test]
fn train_produces_twelve_classes() {
    let model = read_json(&fixture().model);
    assert_eq!(model["classes"].as_array().unwrap().len(), 12);
    assert_eq!(model["n_features"], 218);
}

#[test]
fn train_right_mic_layout_has_119_features() {
    let f = fixture();
    let out = scratch("train_right").join("model.json");
    ok(run(&["train", "--manifest", s(&f.manifest()), "--out", s(&out), "--sensors", "mic_right", "--rounds", "5"]));
    let model = read_json(&out);
    assert_eq!(model["n_features"], 119);
    assert_eq!(model["feature_names"].as_array().unwrap().len(), 119);
}

#[test]
fn train_corrupted_wav_names_file() {
    let f = fixture();
    let root = scratch("corrupt");
    let data = root.join("data");
    ok(run(&["gen", "--plan", s(&smoke_plan()), "--seed", "7", "--out", s(&data)]));
    let victim = data.join("sessions/s0004_WristUp/audio.wav");
    fs::write(&victim, b"RIFF\x00\x00garbage").unwrap();
    let o = run(&["train", "--manifest", s(&data.join("manifest.json")), "--out", s(&root.join("m.json"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("s0004_WristUp/audio.wav"), "{}", stderr(&o));
    assert!(f.model.exists());
}

#[test]
fn train_class_without_windows_is_data_error() {
    let f = fixture();
    let out = scratch("train_missing_class").join("m.json");
    let o = run(&["train", "--manifest", s(&f.manifest()), "--out", s(&out), "--gestures", "Normal,WristUp,Bend"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("Bend"), "{}", stderr(&o));
}

#[test]
fn train_missing_manifest_is_input_error() {
    let out = scratch("train_no_manifest").join("m.json");
    let o = run(&["train", "--manifest", "/nonexistent/manifest.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_kfold_writes_report_and_confusion_csv() {
    let f = fixture();
    let out = scratch("eval_kfold").join("reports/kfold.json");
    ok(run(&[
        "eval", "--manifest", s(&f.manifest()), "--model", s(&f.model), "--experiment", "kfold", "--folds", "3",
        "--out", s(&out),
    ]));
    let doc = read_json(&out);
    assert_eq!(doc["experiment"], "kfold");
    assert_eq!(doc["run"]["command"], "eval");
    let acc = doc["result"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    // Two training sessions per class: well above the 1/12 chance level,
    // far below what the full plan reaches.
    assert!(acc > 0.2, "accuracy {acc}");
    let csv = fs::read_to_string(out.with_file_name("kfold.confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn eval_ablate_imu_only() {
    let f = fixture();
    let out = scratch("eval_ablate").join("ablate.json");
    ok(run(&[
        "eval", "--manifest", s(&f.manifest()), "--retrain", "--experiment", "ablate", "--sensors", "imu",
        "--folds", "3", "--rounds", "20", "--out", s(&out),
    ]));
    let doc = read_json(&out);
    assert_eq!(doc["experiment"], "ablate");
    let text = doc["result"].to_string();
    assert!(text.contains("imu"), "{text}");
}

#[test]
fn eval_layout_mismatch_is_compat_error() {
    let f = fixture();
    let out = scratch("eval_mismatch").join("r.json");
    let o = run(&[
        "eval", "--manifest", s(&f.manifest()), "--model", s(&f.model), "--experiment", "kfold", "--sensors",
        "mic_right", "--folds", "3", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn eval_unreadable_model_is_compat_error() {
    let f = fixture();
    let dir = scratch("eval_bad_model");
    let bad = dir.join("bad.json");
    fs::write(&bad, "{\"version\": 99}").unwrap();
    let o = run(&[
        "eval", "--manifest", s(&f.manifest()), "--model", s(&bad), "--experiment", "kfold", "--out",
        s(&dir.join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn stream_wrist_up_session_emits_one_event() {
    let f = fixture();
    let o = ok(run(&["stream", "--session", s(&f.session("WristUp")), "--model", s(&f.model)]));
    let ev = events(&o);
    assert_eq!(ev.len(), 1, "{ev:?}");
    assert_eq!(ev[0]["gesture"], "WristUp");
    assert_eq!(ev[0]["kind"], "static");
    let sum = summary(&o);
    assert_eq!(sum["events"], 1);
    assert!(sum["suppressed_by_debounce"].is_u64());
}

#[test]
fn stream_normal_session_emits_nothing() {
    let f = fixture();
    let o = ok(run(&["stream", "--session", s(&f.session("Normal")), "--model", s(&f.model)]));
    assert!(events(&o).is_empty());
    assert_eq!(summary(&o)["events"], 0);
}

#[test]
fn stream_missing_model_is_input_error() {
    let f = fixture();
    let o = run(&["stream", "--session", s(&f.session("Normal")), "--model", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn stream_realtime_follows_window_cadence() {
    let f = fixture();
    let o = ok(run(&["stream", "--session", s(&f.session("ClickMic")), "--model", s(&f.model), "--realtime"]));
    let ev = events(&o);
    assert!(ev.len() >= 3, "{ev:?}");
    let wall: Vec<f64> =
        summary(&o)["wall_ms"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(wall.len(), ev.len());
    for i in 1..ev.len() {
        let stream_gap = ev[i]["t_ms"].as_f64().unwrap() - ev[i - 1]["t_ms"].as_f64().unwrap();
        let wall_gap = wall[i] - wall[i - 1];
        assert!(
            (wall_gap - stream_gap).abs() <= 0.1 * stream_gap,
            "event {i}: wall gap {wall_gap:.1} ms vs stream gap {stream_gap:.1} ms"
        );
    }
}
