//! Cross-validation and the experiment runners built on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, Sensor};
use crate::gbdt::{self, TrainConfig, TreeEnsemble};
use crate::gesture::GestureClass;
use crate::model::GestureModel;
use crate::par::{self, Parallelism};
use crate::pipeline::{self, extract_plan, PipelineConfig, WindowSet};
use crate::scene_sim::{rng_for, DatasetPlan, DistanceSpec, NoiseBand, PlanEntry};
use crate::stream;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Whole sessions are assigned to folds.
    #[default]
    Session,
    /// Windows are shuffled independently of their session.
    Window,
}

impl std::str::FromStr for FoldMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "session" => Ok(FoldMode::Session),
            "window" => Ok(FoldMode::Window),
            _ => Err(Error::param(format!("unknown fold mode '{s}' (expected session|window)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    pub fold_mode: FoldMode,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 10,
            fold_mode: FoldMode::Session,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; k]; k] }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// Per-class metrics; an undefined precision or recall counts as 0.
    pub fn per_class(&self) -> Vec<ClassMetrics> {
        let k = self.classes.len();
        (0..k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let support: u64 = self.counts[c].iter().sum();
                let predicted: u64 = (0..k).map(|r| self.counts[r][c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics { class: self.classes[c].clone(), precision, recall, f1, support }
            })
            .collect()
    }

    /// Mean F1 over classes with support.
    pub fn macro_f1(&self) -> f64 {
        let m: Vec<ClassMetrics> = self.per_class().into_iter().filter(|c| c.support > 0).collect();
        if m.is_empty() {
            0.0
        } else {
            m.iter().map(|c| c.f1).sum::<f64>() / m.len() as f64
        }
    }

    pub fn recall_of(&self, class: &str) -> Option<f64> {
        self.per_class().into_iter().find(|m| m.class == class).map(|m| m.recall)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Where the evaluated windows came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub plan: Option<DatasetPlan>,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_fold_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Fold index of every window, in dataset order.
    pub folds: Vec<usize>,
    pub n_samples: usize,
    pub sensors: Vec<Sensor>,
    pub config: EvalConfig,
    pub dataset: Option<DatasetInfo>,
    /// Human-data figure reported for the comparable experiment, for
    /// orientation only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl EvalReport {
    pub fn with_dataset(mut self, info: DatasetInfo) -> Self {
        self.dataset = Some(info);
        self
    }

    pub fn with_reference(mut self, note: impl Into<String>) -> Self {
        self.reference = Some(note.into());
        self
    }
}

// ---------------------------------------------------------------------------
// Folds and cross-validation
// ---------------------------------------------------------------------------

/// Stratified fold index per sample. In session mode whole groups move
/// together and are stratified by their most frequent label.
pub fn assign_folds(labels: &[String], groups: &[usize], k: usize, mode: FoldMode, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Evaluation("need at least 2 folds".into()));
    }
    if labels.len() != groups.len() {
        return Err(Error::Evaluation("labels and groups differ in length".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_insert(0) += 1;
    }
    if let Some((c, n)) = counts.iter().find(|(_, &n)| n < k) {
        return Err(Error::Evaluation(format!("class '{c}' has {n} samples, fewer than {k} folds")));
    }
    let mut rng = rng_for(seed, &[0xF01D]);
    let mut fold = vec![0usize; labels.len()];
    let mut next = 0usize;
    match mode {
        FoldMode::Window => {
            for class in counts.keys() {
                let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *class).collect();
                idx.shuffle(&mut rng);
                for i in idx {
                    fold[i] = next % k;
                    next += 1;
                }
            }
        }
        FoldMode::Session => {
            let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &g) in groups.iter().enumerate() {
                members.entry(g).or_default().push(i);
            }
            if members.len() < k {
                return Err(Error::Evaluation(format!(
                    "{} sessions cannot fill {k} folds; use window fold mode",
                    members.len()
                )));
            }
            let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (&g, idx) in &members {
                let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
                for &i in idx {
                    *tally.entry(labels[i].as_str()).or_insert(0) += 1;
                }
                let top = tally.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap().0;
                by_class.entry(top.to_string()).or_default().push(g);
            }
            for gs in by_class.values_mut() {
                gs.shuffle(&mut rng);
                for &g in gs.iter() {
                    for &i in &members[&g] {
                        fold[i] = next % k;
                    }
                    next += 1;
                }
            }
        }
    }
    Ok(fold)
}

/// k-fold evaluation of string-labeled rows. Classes are the sorted
/// distinct labels; folds train in parallel and are reduced in fold order.
pub fn cross_validate(
    rows: &[Vec<f64>],
    labels: &[String],
    groups: &[usize],
    config: &EvalConfig,
    mode: Parallelism,
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Evaluation("no samples".into()));
    }
    let folds = assign_folds(labels, groups, config.folds, config.fold_mode, config.seed)?;
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let k = config.folds;
    let per_fold = par::map_indexed(mode, k, |f| -> Result<Vec<(usize, usize)>> {
        let train: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..rows.len()).filter(|&i| folds[i] == f).collect();
        if test.is_empty() {
            return Ok(Vec::new());
        }
        let x: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let y: Vec<&str> = train.iter().map(|&i| labels[i].as_str()).collect();
        let model = gbdt::fit_with(&x, &y, &config.train, mode)?;
        test.iter()
            .map(|&i| {
                let truth = classes.binary_search(&labels[i]).expect("known class");
                let p = model.predict_label(&rows[i])?;
                let pred = classes.binary_search_by(|c| c.as_str().cmp(p)).expect("known class");
                Ok((truth, pred))
            })
            .collect()
    });
    let mut confusion = ConfusionMatrix::new(classes);
    let mut fold_accuracies = Vec::with_capacity(k);
    for r in per_fold {
        let pairs = r?;
        if pairs.is_empty() {
            continue;
        }
        let hits = pairs.iter().filter(|(t, p)| t == p).count();
        fold_accuracies.push(hits as f64 / pairs.len() as f64);
        for (t, p) in pairs {
            confusion.add(t, p);
        }
    }
    Ok(EvalReport {
        experiment: "kfold".into(),
        accuracy: confusion.accuracy(),
        macro_f1: confusion.macro_f1(),
        mean_fold_accuracy: fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64,
        fold_accuracies,
        per_class: confusion.per_class(),
        confusion,
        folds,
        n_samples: rows.len(),
        sensors: Vec::new(),
        config: config.clone(),
        dataset: None,
        reference: None,
    })
}

fn names(labels: &[GestureClass]) -> Vec<String> {
    labels.iter().map(|g| g.name().to_string()).collect()
}

pub fn kfold_eval(set: &WindowSet, config: &EvalConfig, mode: Parallelism) -> Result<EvalReport> {
    let mut r = cross_validate(&set.rows, &names(&set.labels), &set.groups, config, mode)?;
    r.sensors = set.features.sensors();
    Ok(r)
}

// ---------------------------------------------------------------------------
// Subdivisions
// ---------------------------------------------------------------------------

/// Named grouping of gestures into evaluation labels. Windows whose gesture
/// is in no group are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdivision {
    pub name: String,
    pub groups: Vec<(String, Vec<GestureClass>)>,
}

impl Subdivision {
    /// Each listed gesture is its own label.
    pub fn of(name: &str, gestures: &[GestureClass]) -> Self {
        Subdivision {
            name: name.into(),
            groups: gestures.iter().map(|g| (g.name().to_string(), vec![*g])).collect(),
        }
    }

    pub fn touch_vs_no_touch() -> Self {
        let no_touch: Vec<GestureClass> = GestureClass::MAIN.iter().copied().filter(|g| !g.is_touch()).collect();
        Subdivision {
            name: "touch_vs_no_touch".into(),
            groups: vec![
                ("touch".into(), GestureClass::TOUCH.to_vec()),
                ("no_touch".into(), no_touch),
            ],
        }
    }

    pub fn touch_and_normal() -> Self {
        let mut g = GestureClass::TOUCH.to_vec();
        g.push(GestureClass::Normal);
        Subdivision::of("touch5_normal", &g)
    }

    pub fn touchless_and_normal() -> Self {
        let mut g = GestureClass::STATIC.to_vec();
        g.push(GestureClass::Normal);
        Subdivision::of("touchless6_normal", &g)
    }

    pub fn wrist_up_mouth_normal() -> Self {
        Subdivision::of(
            "wristup_closetomouth_normal",
            &[GestureClass::WristUp, GestureClass::CloseToMouth, GestureClass::Normal],
        )
    }

    pub fn all() -> Self {
        Subdivision::of("all", &GestureClass::MAIN)
    }

    /// Preset by name, or a comma-separated gesture list.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "touch_vs_no_touch" | "touch" => Ok(Self::touch_vs_no_touch()),
            "touch5_normal" => Ok(Self::touch_and_normal()),
            "touchless6_normal" => Ok(Self::touchless_and_normal()),
            "wristup_closetomouth_normal" => Ok(Self::wrist_up_mouth_normal()),
            "all" => Ok(Self::all()),
            list => {
                let g = list
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| p.trim().parse())
                    .collect::<Result<Vec<GestureClass>>>()?;
                Ok(Subdivision::of("custom", &g))
            }
        }
    }

    pub fn presets() -> Vec<Subdivision> {
        vec![
            Self::touch_vs_no_touch(),
            Self::touch_and_normal(),
            Self::touchless_and_normal(),
            Self::wrist_up_mouth_normal(),
        ]
    }

    pub fn label_of(&self, g: GestureClass) -> Option<&str> {
        self.groups.iter().find(|(_, gs)| gs.contains(&g)).map(|(n, _)| n.as_str())
    }
}

pub fn subdivision_eval(set: &WindowSet, subset: &Subdivision, config: &EvalConfig, mode: Parallelism) -> Result<EvalReport> {
    if subset.groups.is_empty() || subset.groups.iter().all(|(_, g)| g.is_empty()) {
        return Err(Error::Evaluation("empty gesture subset".into()));
    }
    let present: BTreeSet<GestureClass> = set.labels.iter().copied().collect();
    for (_, gs) in &subset.groups {
        if let Some(g) = gs.iter().find(|g| !present.contains(g)) {
            return Err(Error::Evaluation(format!("subset gesture {g} has no windows in the dataset")));
        }
    }
    let idx: Vec<usize> = (0..set.len()).filter(|&i| subset.label_of(set.labels[i]).is_some()).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| set.rows[i].clone()).collect();
    let labels: Vec<String> = idx.iter().map(|&i| subset.label_of(set.labels[i]).unwrap().to_string()).collect();
    let groups: Vec<usize> = idx.iter().map(|&i| set.groups[i]).collect();
    let mut r = cross_validate(&rows, &labels, &groups, config, mode)?;
    r.experiment = format!("subset:{}", subset.name);
    r.sensors = set.features.sensors();
    Ok(r)
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub sensors: Vec<Sensor>,
    pub dimension: usize,
    pub report: EvalReport,
}

/// Every non-empty subset of the three sensors, largest first.
pub fn all_sensor_sets() -> Vec<Vec<Sensor>> {
    use Sensor::*;
    vec![
        vec![MicRight, MicBand, Imu],
        vec![MicRight, MicBand],
        vec![MicRight, Imu],
        vec![MicBand, Imu],
        vec![MicRight],
        vec![MicBand],
        vec![Imu],
    ]
}

pub fn ablation_eval(
    set: &WindowSet,
    sensor_sets: &[Vec<Sensor>],
    config: &EvalConfig,
    mode: Parallelism,
) -> Result<Vec<AblationCell>> {
    sensor_sets
        .iter()
        .map(|s| {
            let sub = set.features.with_sensors(s)?;
            let restricted = set.restrict(&sub)?;
            let mut report = kfold_eval(&restricted, config, mode)?;
            report.experiment = format!(
                "ablate:{}",
                sub.sensors().iter().map(|x| x.name()).collect::<Vec<_>>().join("+")
            );
            Ok(AblationCell { sensors: sub.sensors(), dimension: sub.dimension(), report })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

pub const NOISE_LEVELS_DB: [f64; 4] = [17.44, 34.45, 51.41, 65.29];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub noise_db: f64,
    pub band: NoiseBand,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub report: EvalReport,
}

/// Regenerate `plan` at each level (same seed) and cross-validate.
pub fn noise_sweep(
    plan: &DatasetPlan,
    seed: u64,
    levels: &[f64],
    band: NoiseBand,
    pipeline: &PipelineConfig,
    config: &EvalConfig,
    mode: Parallelism,
) -> Result<Vec<NoisePoint>> {
    levels
        .iter()
        .map(|&db| {
            if !(db >= 0.0) {
                return Err(Error::param(format!("noise level {db} dB must be >= 0")));
            }
            let p = plan.with_noise(db, band);
            let set = extract_plan(&p, seed, pipeline, mode)?;
            let report = kfold_eval(&set, config, mode)?
                .with_dataset(DatasetInfo { seed, plan: Some(p), pipeline: pipeline.clone() });
            Ok(NoisePoint {
                noise_db: db,
                band,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                report: EvalReport { experiment: format!("noise:{db}"), ..report },
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Distance sensitivity
// ---------------------------------------------------------------------------

pub const DISTANCES_M: [f64; 3] = [0.01, 0.03, 0.06];
pub const DISTANCE_GESTURES: [GestureClass; 3] = [GestureClass::WristUp, GestureClass::BlockLeft, GestureClass::CoverScreen];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub distance_m: f64,
    pub accuracy: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    pub gesture: GestureClass,
    pub points: Vec<DistancePoint>,
}

impl DistanceCurve {
    pub fn is_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].accuracy <= w[0].accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub curves: Vec<DistanceCurve>,
    pub train_seed: u64,
    pub test_seed: u64,
    pub test_sessions: usize,
    pub plan: DatasetPlan,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
}

/// Train once on `plan`, then measure per-gesture window accuracy on fresh
/// sessions recorded with the reflector held at each fixed distance.
#[allow(clippy::too_many_arguments)]
pub fn distance_sensitivity(
    plan: &DatasetPlan,
    seed: u64,
    gestures: &[GestureClass],
    distances: &[f64],
    test_sessions: usize,
    pipeline: &PipelineConfig,
    train: &TrainConfig,
    mode: Parallelism,
) -> Result<DistanceReport> {
    let set = extract_plan(plan, seed, pipeline, mode)?;
    distance_sensitivity_on(&set, plan, seed, gestures, distances, test_sessions, pipeline, train, mode)
}

/// As [`distance_sensitivity`], with `set` already extracted from `plan`.
#[allow(clippy::too_many_arguments)]
pub fn distance_sensitivity_on(
    set: &WindowSet,
    plan: &DatasetPlan,
    seed: u64,
    gestures: &[GestureClass],
    distances: &[f64],
    test_sessions: usize,
    pipeline: &PipelineConfig,
    train: &TrainConfig,
    mode: Parallelism,
) -> Result<DistanceReport> {
    let model = gbdt::fit_with(&set.rows, &names(&set.labels), train, mode)?;
    let test_seed = seed.wrapping_add(1_000_003);
    let curves = distance_curves(&model, plan, test_seed, gestures, distances, test_sessions, pipeline, mode)?;
    Ok(DistanceReport {
        curves,
        train_seed: seed,
        test_seed,
        test_sessions,
        plan: plan.clone(),
        pipeline: pipeline.clone(),
        train: train.clone(),
    })
}

/// Per-gesture window accuracy of `model` on `test_sessions` fresh sessions
/// (seed `test_seed`) per fixed reflector distance.
#[allow(clippy::too_many_arguments)]
pub fn distance_curves(
    model: &TreeEnsemble,
    plan: &DatasetPlan,
    test_seed: u64,
    gestures: &[GestureClass],
    distances: &[f64],
    test_sessions: usize,
    pipeline: &PipelineConfig,
    mode: Parallelism,
) -> Result<Vec<DistanceCurve>> {
    gestures
        .iter()
        .map(|&g| {
            let points = distances
                .iter()
                .map(|&d| {
                    let mut entry = PlanEntry::new(g, test_sessions);
                    entry.distance_m = Some(DistanceSpec::Fixed(d));
                    let test_plan = DatasetPlan { sessions: vec![entry], sim: plan.sim.clone() };
                    let test = extract_plan(&test_plan, test_seed, pipeline, mode)?;
                    let hits = test
                        .rows
                        .iter()
                        .map(|r| model.predict_label(r).map(|p| p == g.name()))
                        .collect::<Result<Vec<bool>>>()?;
                    let n = hits.len();
                    Ok(DistancePoint {
                        distance_m: d,
                        accuracy: if n == 0 { 0.0 } else { hits.iter().filter(|&&h| h).count() as f64 / n as f64 },
                        windows: n,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DistanceCurve { gesture: g, points })
        })
        .collect::<Result<Vec<_>>>()
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let q = |p: f64| if n == 0 { 0.0 } else { ms[((p * (n - 1) as f64).round() as usize).min(n - 1)] };
        LatencyStats {
            n,
            mean_ms: if n == 0 { 0.0 } else { ms.iter().sum::<f64>() / n as f64 },
            p50_ms: q(0.5),
            p95_ms: q(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub overall: LatencyStats,
    pub by_gesture: BTreeMap<GestureClass, LatencyStats>,
    pub budget_ms: f64,
    pub hardware: String,
    pub features: FeatureConfig,
    pub tree_count: usize,
}

/// Wall-clock feature extraction plus prediction per window, timed
/// sequentially on up to `n_windows` grid windows of each session.
pub fn latency_bench(
    model: &GestureModel,
    sessions: &[crate::scene_sim::SessionRecording],
    pipeline: &PipelineConfig,
    n_windows: usize,
) -> Result<LatencyReport> {
    model.check_layout(&pipeline.features)?;
    let mut all = Vec::new();
    let mut by: BTreeMap<GestureClass, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        let audio = pipeline::preprocess(&s.audio, pipeline)?;
        let aligned = stream::align(&audio, &s.imu, pipeline.features.chunk_len)?;
        for w in aligned.segment().take(n_windows) {
            let t = Instant::now();
            let row = features::assemble(&w, &model.features)?;
            let p = model.predict_proba(&row)?;
            let ms = t.elapsed().as_secs_f64() * 1000.0;
            std::hint::black_box(p);
            all.push(ms);
            by.entry(s.gesture).or_default().push(ms);
        }
    }
    Ok(LatencyReport {
        overall: LatencyStats::from_samples(all),
        by_gesture: by.into_iter().map(|(g, v)| (g, LatencyStats::from_samples(v))).collect(),
        budget_ms: stream::STEP_MS,
        hardware: hardware_note(),
        features: model.features.clone(),
        tree_count: model.ensemble.tree_count(),
    })
}

pub fn hardware_note() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{} {} ({threads} hardware threads)", std::env::consts::OS, std::env::consts::ARCH)
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

/// Minimal line chart: one polyline with point markers per series.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - y.clamp(0.0, 1.0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, xml(title));
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for i in 0..=4 {
        let y = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y:.2}</text>"#, M - 4.0, sy(y) + 4.0);
    }
    for x in [x0, (x0 + x1) / 2.0, x1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, sx(x), H - M + 16.0, trim(x));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, xml(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        xml(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in p {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, sx(x), sy(y));
        }
        let ly = M + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#, W - M - 100.0, xml(name));
    }
    s.push_str("</svg>\n");
    s
}

fn trim(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Train a model on all windows of `set` (no held-out data).
pub fn train_full(set: &WindowSet, train: &TrainConfig, mode: Parallelism) -> Result<TreeEnsemble> {
    gbdt::fit_with(&set.rows, &names(&set.labels), train, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<String> = (0..100).map(|i| format!("c{}", i % 4)).collect();
        let groups: Vec<usize> = (0..100).map(|i| i / 5).collect();
        for mode in [FoldMode::Window, FoldMode::Session] {
            let f = assign_folds(&labels, &groups, 5, mode, 3).unwrap();
            for k in 0..5 {
                assert!(f.contains(&k));
            }
            if mode == FoldMode::Session {
                for g in 0..20 {
                    let fs: BTreeSet<usize> = (0..100).filter(|&i| groups[i] == g).map(|i| f[i]).collect();
                    assert_eq!(fs.len(), 1);
                }
            }
        }
    }

    #[test]
    fn too_few_samples_names_class() {
        let labels = strings(&["a", "a", "a", "b", "b"]);
        let err = assign_folds(&labels, &[0, 1, 2, 3, 4], 3, FoldMode::Window, 0).unwrap_err();
        assert!(err.to_string().contains("'b'"));
    }

    #[test]
    fn confusion_metrics() {
        let mut c = ConfusionMatrix::new(strings(&["a", "b"]));
        c.add(0, 0);
        c.add(0, 0);
        c.add(0, 1);
        c.add(1, 1);
        assert_eq!(c.accuracy(), 0.75);
        let m = c.per_class();
        assert!((m[0].recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m[1].precision - 0.5).abs() < 1e-12);
        assert!((c.macro_f1() - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(c.to_csv().lines().nth(1), Some("a,2,1"));
    }

    #[test]
    fn separable_and_chance_level() {
        let mut rng = rng_for(11, &[]);
        let n = 300;
        let labels: Vec<String> = (0..n).map(|i| format!("c{}", i % 3)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i % 3) as f64 * 10.0 + rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let groups: Vec<usize> = (0..n).collect();
        let cfg = EvalConfig {
            folds: 5,
            fold_mode: FoldMode::Window,
            train: TrainConfig { n_rounds: 10, ..TrainConfig::default() },
            ..EvalConfig::default()
        };
        let r = cross_validate(&rows, &labels, &groups, &cfg, Parallelism::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion.trace() as f64 / r.confusion.total() as f64, r.accuracy);

        let noise: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let r = cross_validate(&noise, &labels, &groups, &cfg, Parallelism::default()).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() <= 0.1, "chance accuracy {}", r.accuracy);
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_line_plot("a<b", "x", "y", &[("s".into(), vec![(1.0, 0.5), (2.0, 0.9)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
