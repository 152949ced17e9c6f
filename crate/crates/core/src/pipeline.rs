//! Session-level glue: preprocessing, labeled window extraction for
//! training, and replay of a session through the recognizer.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig};
use crate::gesture::{GestureClass, SpanKind};
use crate::model::GestureModel;
use crate::par::{self, Parallelism};
use crate::recognizer::{Prediction, RecognitionEvent, Recognizer, RecognizerStats};
use crate::scene_sim::{generate_session, DatasetPlan, SessionRecording};
use crate::signal::{self, AudioStream};
use crate::stream::{self, detect_peaks, Aligned, PeakPolicy, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    /// High-pass cutoff applied to every microphone channel; 0 disables.
    pub highpass_hz: f64,
    /// Margin dropped at both ends of a static label span (pose transitions).
    pub static_trim_ms: f64,
    pub peaks: PeakPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureConfig::default(),
            highpass_hz: 16_500.0,
            static_trim_ms: 700.0,
            peaks: PeakPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_features(&self, features: FeatureConfig) -> Self {
        PipelineConfig { features, ..self.clone() }
    }
}

pub fn preprocess(audio: &AudioStream, config: &PipelineConfig) -> Result<AudioStream> {
    if config.highpass_hz > 0.0 {
        signal::highpass(audio, config.highpass_hz)
    } else {
        Ok(audio.clone())
    }
}

/// Labeled feature rows from a set of sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub features: FeatureConfig,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<GestureClass>,
    /// Index of the source session (grouping key for session-aware folds).
    pub groups: Vec<usize>,
    pub times_ms: Vec<f64>,
    pub session_ids: Vec<String>,
}

impl WindowSet {
    pub fn empty(features: FeatureConfig) -> Self {
        WindowSet {
            features,
            rows: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
            times_ms: Vec::new(),
            session_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<GestureClass, usize> {
        let mut m = BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    /// Keep only the columns of `sub` (a sensor subset of this layout).
    pub fn restrict(&self, sub: &FeatureConfig) -> Result<WindowSet> {
        let cols = self.features.layout().select(&sub.layout())?;
        Ok(WindowSet {
            features: sub.clone(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            ..self.clone()
        })
    }

    /// Keep only rows whose label satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(GestureClass) -> bool) -> WindowSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        WindowSet {
            features: self.features.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            times_ms: idx.iter().map(|&i| self.times_ms[i]).collect(),
            session_ids: self.session_ids.clone(),
        }
    }

    fn append(&mut self, group: usize, id: String, rows: Vec<LabeledRow>) {
        self.session_ids.push(id);
        for r in rows {
            self.rows.push(r.row);
            self.labels.push(r.label);
            self.groups.push(group);
            self.times_ms.push(r.t_ms);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub row: Vec<f64>,
    pub label: GestureClass,
    /// Window start.
    pub t_ms: f64,
}

/// Training windows of one aligned session. Static spans (and the idle
/// class) contribute every grid window lying inside the trimmed span; an
/// inner span edge is trimmed, a span edge on the session boundary is not.
/// Dynamic spans contribute the three windows around the acceleration
/// maximum inside the span.
pub fn labeled_windows(session: &SessionRecording, config: &PipelineConfig) -> Result<Vec<LabeledRow>> {
    let audio = preprocess(&session.audio, config)?;
    let aligned = stream::align(&audio, &session.imu, config.features.chunk_len)?;
    let session_end = aligned.start_ms + aligned.duration_ms();
    let mut out = Vec::new();
    for span in &session.labels {
        match span.kind {
            SpanKind::Static => {
                let lo = if span.start_ms <= aligned.start_ms + 1e-6 {
                    span.start_ms
                } else {
                    span.start_ms + config.static_trim_ms
                };
                let hi = if span.end_ms >= session_end - 1e-6 {
                    span.end_ms
                } else {
                    span.end_ms - config.static_trim_ms
                };
                for w in aligned.segment() {
                    if w.start_ms >= lo - 1e-6 && w.end_ms() <= hi + 1e-6 {
                        out.push(row_of(&w, span.gesture, config)?);
                    }
                }
            }
            SpanKind::Dynamic => {
                let Some(peak) = span_peak(&aligned, span.start_ms, span.end_ms) else {
                    continue;
                };
                let pw = aligned.windows_around_peak(peak);
                for w in &pw.windows {
                    out.push(row_of(w, span.gesture, config)?);
                }
            }
        }
    }
    Ok(out)
}

fn row_of(w: &Window<'_>, label: GestureClass, config: &PipelineConfig) -> Result<LabeledRow> {
    Ok(LabeledRow {
        row: features::assemble(w, &config.features)?,
        label,
        t_ms: w.start_ms,
    })
}

/// Time of the largest acceleration magnitude within `[lo, hi]`.
fn span_peak(aligned: &Aligned<'_>, lo: f64, hi: f64) -> Option<f64> {
    let imu = aligned.imu;
    let mag = imu.accel_magnitude();
    let mut best: Option<(usize, f64)> = None;
    for (i, &m) in mag.iter().enumerate() {
        let t = imu.time_of(i);
        if t < lo || t > hi {
            continue;
        }
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| imu.time_of(i))
}

pub fn extract_sessions(sessions: &[SessionRecording], config: &PipelineConfig, mode: Parallelism) -> Result<WindowSet> {
    config.features.validate()?;
    let per = par::map_slice(mode, sessions, |s| labeled_windows(s, config));
    let mut set = WindowSet::empty(config.features.clone());
    for (i, (s, rows)) in sessions.iter().zip(per).enumerate() {
        set.append(i, s.id.clone(), rows?);
    }
    Ok(set)
}

/// Read and featurize recorded session directories. Each session is
/// dropped once its rows are extracted.
pub fn extract_dirs(dirs: &[PathBuf], config: &PipelineConfig, mode: Parallelism) -> Result<WindowSet> {
    config.features.validate()?;
    let per = par::map_slice(mode, dirs, |d| {
        let s = crate::io::read_session(d)?;
        Ok::<_, Error>((s.id.clone(), labeled_windows(&s, config)?))
    });
    let mut set = WindowSet::empty(config.features.clone());
    for (i, r) in per.into_iter().enumerate() {
        let (id, rows) = r?;
        set.append(i, id, rows);
    }
    Ok(set)
}

/// Generate and featurize every session of `plan` without keeping the audio.
pub fn extract_plan(plan: &DatasetPlan, seed: u64, config: &PipelineConfig, mode: Parallelism) -> Result<WindowSet> {
    plan.validate()?;
    config.features.validate()?;
    let per = par::map_indexed(mode, plan.session_count(), |i| {
        let s = generate_session(plan, seed, i)?;
        Ok::<_, Error>((s.id.clone(), labeled_windows(&s, config)?))
    });
    let mut set = WindowSet::empty(config.features.clone());
    for (i, r) in per.into_iter().enumerate() {
        let (id, rows) = r?;
        set.append(i, id, rows);
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayOptions {
    /// Pace consumption to the stream clock.
    pub realtime: bool,
    /// Capacity of the window queue between feature extraction and
    /// recognition; a full queue blocks the producer.
    pub queue_capacity: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { realtime: false, queue_capacity: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub events: Vec<RecognitionEvent>,
    pub stats: RecognizerStats,
    /// Wall-clock time (ms since replay start) at which each event was emitted.
    pub wall_ms: Vec<f64>,
}

enum Item {
    Grid { t_ms: f64, main: Vec<f64>, indirect: Option<Vec<f64>> },
    Peak { t_ms: f64, rows: Vec<Vec<f64>> },
}

impl Item {
    fn t_ms(&self) -> f64 {
        match self {
            Item::Grid { t_ms, .. } | Item::Peak { t_ms, .. } => *t_ms,
        }
    }
}

/// Run a recorded session through the recognizer. A producer thread cuts
/// windows and computes features in stream order; the consumer classifies
/// and feeds the state machine.
pub fn replay(
    session: &SessionRecording,
    main: &GestureModel,
    indirect: Option<&GestureModel>,
    config: &PipelineConfig,
    options: &ReplayOptions,
) -> Result<ReplayResult> {
    main.check_layout(&config.features)?;
    main.gesture_classes()?;
    if let Some(m) = indirect {
        m.gesture_classes()?;
    }
    let audio = preprocess(&session.audio, config)?;
    let aligned = stream::align(&audio, &session.imu, config.features.chunk_len)?;
    let peaks = detect_peaks(&session.imu, &config.peaks);

    let (tx, rx) = mpsc::sync_channel::<Result<Item>>(options.queue_capacity.max(1));
    let mut recognizer = Recognizer::default();
    let mut events = Vec::new();
    let mut wall_ms = Vec::new();

    std::thread::scope(|scope| -> Result<()> {
        let aligned = &aligned;
        let peaks = &peaks;
        scope.spawn(move || {
            for item in produce(aligned, peaks, main, indirect) {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        let start = Instant::now();
        let mut t_first = None;
        for item in rx {
            let item = item?;
            let t = item.t_ms();
            if options.realtime {
                let t0 = *t_first.get_or_insert(t);
                let due = Duration::from_secs_f64(((t - t0) / 1000.0).max(0.0));
                let now = start.elapsed();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            let emitted = consume(&mut recognizer, item, main, indirect)?;
            for e in emitted {
                wall_ms.push(start.elapsed().as_secs_f64() * 1000.0);
                events.push(e);
            }
        }
        Ok(())
    })?;

    Ok(ReplayResult { events, stats: recognizer.stats(), wall_ms })
}

/// Window items in order of their emission time (window end); a grid
/// window sorts before a peak group ending at the same time.
fn produce<'a>(
    aligned: &'a Aligned<'a>,
    peaks: &[f64],
    main: &'a GestureModel,
    indirect: Option<&'a GestureModel>,
) -> impl Iterator<Item = Result<Item>> + 'a {
    let mut peak_items: std::collections::VecDeque<Result<Item>> = peaks
        .iter()
        .filter_map(|&p| {
            let pw = aligned.windows_around_peak(p);
            let last = pw.windows.last()?.end_ms();
            Some(
                pw.windows
                    .iter()
                    .map(|w| features::assemble(w, &main.features))
                    .collect::<Result<Vec<_>>>()
                    .map(|rows| Item::Peak { t_ms: last, rows }),
            )
        })
        .collect();
    let mut grid = aligned.segment().peekable();
    std::iter::from_fn(move || {
        let peak_t = peak_items.front().map(|p| p.as_ref().map_or(f64::NEG_INFINITY, Item::t_ms));
        match (grid.peek().map(|w| w.end_ms()), peak_t) {
            (None, None) => None,
            (Some(g), Some(p)) if p < g => peak_items.pop_front(),
            (None, Some(_)) => peak_items.pop_front(),
            (Some(_), _) => {
                let w = grid.next()?;
                Some((|| {
                    Ok(Item::Grid {
                        t_ms: w.end_ms(),
                        main: features::assemble(&w, &main.features)?,
                        indirect: indirect.map(|m| features::assemble(&w, &m.features)).transpose()?,
                    })
                })())
            }
        }
    })
}

fn consume(
    r: &mut Recognizer,
    item: Item,
    main: &GestureModel,
    indirect: Option<&GestureModel>,
) -> Result<Vec<RecognitionEvent>> {
    let mut events = Vec::new();
    match item {
        Item::Grid { t_ms, main: row, indirect: irow } => {
            events.extend(r.observe_main(t_ms, predict_row(main, &row)?));
            if let (true, Some(m), Some(irow)) = (r.wrist_up_active(), indirect, irow) {
                events.extend(r.observe_indirect(t_ms, predict_row(m, &irow)?));
            }
        }
        Item::Peak { t_ms, rows } => {
            let votes = rows.iter().map(|row| predict_row(main, row)).collect::<Result<Vec<_>>>()?;
            events.extend(r.observe_dynamic(t_ms, &votes));
        }
    }
    Ok(events)
}

fn predict_row(model: &GestureModel, row: &[f64]) -> Result<Prediction> {
    let p = model.predict_proba(row)?;
    let i = crate::gbdt::argmax(&p);
    let gesture = model.classes()[i]
        .parse()
        .map_err(|_| Error::Config(format!("model class {:?} is not a gesture", model.classes()[i])))?;
    Ok(Prediction::new(gesture, p[i]))
}
