//! Streaming recognition over a time-ordered sequence of windows.
//!
//! Three paths feed one event stream:
//!
//! * static: every grid window is classified by the main model; a static
//!   gesture is reported once three consecutive windows agree and the agreed
//!   label differs from the last agreed label (holding a pose reports once);
//! * dynamic: each IMU peak contributes its three peak-centred windows; two
//!   of three votes for the same touch gesture report it, with a refractory
//!   period between dynamic events;
//! * indirect: while Wrist Up is active, the window's IMU features go to the
//!   indirect model, debounced like the static path.
//!
//! The state machine itself works on predictions (`observe_*`), so it can be
//! driven and tested without models; `push_window`/`push_dynamic` add the
//! classification step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::{GestureClass, GestureKind};
use crate::model::GestureModel;
use crate::stream::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Static,
    Dynamic,
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionEvent {
    pub t_ms: f64,
    pub gesture: GestureClass,
    pub kind: EventKind,
    pub confidence: f64,
}

impl RecognitionEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "t_ms": self.t_ms,
            "gesture": self.gesture.name(),
            "kind": self.kind,
            "confidence": self.confidence,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub gesture: GestureClass,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(gesture: GestureClass, confidence: f64) -> Self {
        Prediction { gesture, confidence }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    /// Consecutive agreeing windows required for a static/indirect event.
    pub debounce: usize,
    /// Consecutive non-Wrist-Up main predictions that end the active state.
    pub release_after: usize,
    pub refractory_ms: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            debounce: 3,
            release_after: 3,
            refractory_ms: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerStats {
    pub windows: usize,
    pub peaks: usize,
    pub static_events: usize,
    pub dynamic_events: usize,
    pub indirect_events: usize,
    /// Runs of an eventful label that ended before reaching the debounce count.
    pub suppressed_by_debounce: usize,
    /// Dynamic votes dropped by the refractory rule.
    pub suppressed_by_refractory: usize,
}

impl RecognizerStats {
    pub fn events(&self) -> usize {
        self.static_events + self.dynamic_events + self.indirect_events
    }
}

/// Consecutive-agreement filter with hold-to-keep semantics.
#[derive(Debug, Clone, Default)]
struct Debouncer {
    pending: Option<GestureClass>,
    count: usize,
    confidences: Vec<f64>,
    stable: Option<GestureClass>,
}

enum Step {
    Nothing,
    /// The run just reached the debounce count with a new label.
    Settled { gesture: GestureClass, confidence: f64 },
    /// An eventful run ended short.
    Suppressed,
}

impl Debouncer {
    fn observe(&mut self, p: Prediction, need: usize, eventful: impl Fn(GestureClass) -> bool) -> Step {
        let mut step = Step::Nothing;
        if self.pending == Some(p.gesture) {
            self.count = (self.count + 1).min(need);
        } else {
            if let Some(prev) = self.pending {
                if self.count < need && eventful(prev) && self.stable != Some(prev) {
                    step = Step::Suppressed;
                }
            }
            self.pending = Some(p.gesture);
            self.count = 1;
            self.confidences.clear();
        }
        self.confidences.push(p.confidence);
        if self.confidences.len() > need {
            self.confidences.remove(0);
        }
        if self.count == need && self.stable != Some(p.gesture) {
            self.stable = Some(p.gesture);
            let confidence = self.confidences.iter().sum::<f64>() / self.confidences.len() as f64;
            step = Step::Settled { gesture: p.gesture, confidence };
        }
        step
    }

    /// Forget the current run, keeping the settled label.
    fn break_run(&mut self) {
        self.pending = None;
        self.count = 0;
        self.confidences.clear();
    }
}

fn static_eventful(g: GestureClass) -> bool {
    g.kind() == GestureKind::Static
}

fn indirect_eventful(g: GestureClass) -> bool {
    g.kind() == GestureKind::Indirect
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    config: RecognizerConfig,
    main: Debouncer,
    indirect: Debouncer,
    wrist_up_active: bool,
    off_count: usize,
    prev_main: Option<GestureClass>,
    last_event_ms: Option<f64>,
    last_dynamic_ms: Option<f64>,
    stats: RecognizerStats,
}

impl Default for Recognizer {
    fn default() -> Self {
        Recognizer::new(RecognizerConfig::default())
    }
}

impl Recognizer {
    pub fn new(config: RecognizerConfig) -> Self {
        Recognizer {
            config,
            main: Debouncer::default(),
            indirect: Debouncer::default(),
            wrist_up_active: false,
            off_count: 0,
            prev_main: None,
            last_event_ms: None,
            last_dynamic_ms: None,
            stats: RecognizerStats::default(),
        }
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        *self = Recognizer::new(self.config);
    }

    pub fn wrist_up_active(&self) -> bool {
        self.wrist_up_active
    }

    /// Length of the current run on the static path, capped at the debounce count.
    pub fn consecutive(&self) -> usize {
        self.main.count
    }

    pub fn stats(&self) -> RecognizerStats {
        self.stats
    }

    fn stamp(&mut self, t_ms: f64, gesture: GestureClass, kind: EventKind, confidence: f64) -> Option<RecognitionEvent> {
        if self.last_event_ms.is_some_and(|last| t_ms <= last) {
            return None;
        }
        self.last_event_ms = Some(t_ms);
        match kind {
            EventKind::Static => self.stats.static_events += 1,
            EventKind::Dynamic => self.stats.dynamic_events += 1,
            EventKind::Indirect => self.stats.indirect_events += 1,
        }
        Some(RecognitionEvent { t_ms, gesture, kind, confidence: confidence.clamp(0.0, 1.0) })
    }

    /// Main-model prediction for the window ending at `t_ms`.
    pub fn observe_main(&mut self, t_ms: f64, p: Prediction) -> Option<RecognitionEvent> {
        self.stats.windows += 1;
        let need = self.config.debounce;
        let step = self.main.observe(p, need, static_eventful);

        // A lone Wrist Up neither counts as leaving nor resets the count.
        if p.gesture == GestureClass::WristUp {
            if self.prev_main == Some(GestureClass::WristUp) {
                self.off_count = 0;
            }
        } else {
            self.off_count += 1;
        }
        self.prev_main = Some(p.gesture);
        if self.main.pending == Some(GestureClass::WristUp) && self.main.count == need {
            if !self.wrist_up_active {
                self.indirect.break_run();
            }
            self.wrist_up_active = true;
            self.off_count = 0;
        }
        if self.wrist_up_active && self.off_count >= self.config.release_after {
            self.wrist_up_active = false;
            self.indirect.break_run();
        }

        match step {
            Step::Settled { gesture, confidence } if static_eventful(gesture) => {
                self.stamp(t_ms, gesture, EventKind::Static, confidence)
            }
            Step::Suppressed => {
                self.stats.suppressed_by_debounce += 1;
                None
            }
            _ => None,
        }
    }

    /// Indirect-model prediction for the same window; ignored unless Wrist
    /// Up is active.
    pub fn observe_indirect(&mut self, t_ms: f64, p: Prediction) -> Option<RecognitionEvent> {
        if !self.wrist_up_active {
            return None;
        }
        match self.indirect.observe(p, self.config.debounce, indirect_eventful) {
            Step::Settled { gesture, confidence } if indirect_eventful(gesture) => {
                self.stamp(t_ms, gesture, EventKind::Indirect, confidence)
            }
            Step::Suppressed => {
                self.stats.suppressed_by_debounce += 1;
                None
            }
            _ => None,
        }
    }

    /// Votes of the peak-centred windows of one IMU peak; the event time is
    /// `t_ms` (end of the last window).
    pub fn observe_dynamic(&mut self, t_ms: f64, votes: &[Prediction]) -> Option<RecognitionEvent> {
        self.stats.peaks += 1;
        let mut best: Option<(GestureClass, usize, f64)> = None;
        for v in votes {
            if v.gesture.kind() != GestureKind::Dynamic {
                continue;
            }
            let agree: Vec<&Prediction> = votes.iter().filter(|o| o.gesture == v.gesture).collect();
            let conf = agree.iter().map(|o| o.confidence).sum::<f64>() / agree.len() as f64;
            if best.as_ref().is_none_or(|b| agree.len() > b.1) {
                best = Some((v.gesture, agree.len(), conf));
            }
        }
        let (gesture, n, conf) = best?;
        if n < 2 {
            return None;
        }
        if self.last_dynamic_ms.is_some_and(|last| t_ms - last < self.config.refractory_ms) {
            self.stats.suppressed_by_refractory += 1;
            return None;
        }
        let ev = self.stamp(t_ms, gesture, EventKind::Dynamic, conf)?;
        self.last_dynamic_ms = Some(t_ms);
        Some(ev)
    }

    /// Classify one grid window and advance the static and indirect paths.
    pub fn push_window(
        &mut self,
        window: &Window<'_>,
        main: &GestureModel,
        indirect: Option<&GestureModel>,
    ) -> Result<Vec<RecognitionEvent>> {
        let t = window.end_ms();
        let mut events = Vec::new();
        let p = predict(main, window)?;
        events.extend(self.observe_main(t, p));
        if let (true, Some(model)) = (self.wrist_up_active, indirect) {
            let q = predict(model, window)?;
            events.extend(self.observe_indirect(t, q));
        }
        Ok(events)
    }

    /// Classify the three windows around one peak and vote.
    pub fn push_dynamic(&mut self, peak_windows: &[Window<'_>], main: &GestureModel) -> Result<Option<RecognitionEvent>> {
        let Some(last) = peak_windows.last() else {
            return Ok(None);
        };
        let votes = peak_windows.iter().map(|w| predict(main, w)).collect::<Result<Vec<_>>>()?;
        Ok(self.observe_dynamic(last.end_ms(), &votes))
    }
}

fn predict(model: &GestureModel, window: &Window<'_>) -> Result<Prediction> {
    let (i, p) = model.classify(window)?;
    let gesture = model.classes()[i]
        .parse()
        .map_err(|_| Error::Config(format!("model class {:?} is not a gesture", model.classes()[i])))?;
    Ok(Prediction::new(gesture, p[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use GestureClass::*;

    fn feed(r: &mut Recognizer, labels: &[GestureClass]) -> Vec<RecognitionEvent> {
        labels
            .iter()
            .enumerate()
            .filter_map(|(i, &g)| r.observe_main(150.0 * (i + 2) as f64, Prediction::new(g, 0.9)))
            .collect()
    }

    #[test]
    fn three_wrist_up_windows_emit_once() {
        let mut r = Recognizer::default();
        let ev = feed(&mut r, &[WristUp, WristUp, WristUp]);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].gesture, WristUp);
        assert_eq!(ev[0].t_ms, 150.0 * 4.0);
        assert!(r.wrist_up_active());
        assert!(feed(&mut r, &[WristUp; 10]).is_empty());
    }

    #[test]
    fn short_runs_emit_nothing() {
        let mut r = Recognizer::default();
        assert!(feed(&mut r, &[BlockLeft, BlockLeft, Normal]).is_empty());
        assert_eq!(r.stats().suppressed_by_debounce, 1);
    }

    #[test]
    fn indirect_requires_active_wrist_up() {
        let pinch = Prediction::new(Pinch, 0.8);
        let mut r = Recognizer::default();
        let quiet: Vec<_> = (0..3).filter_map(|i| r.observe_indirect(i as f64, pinch)).collect();
        assert!(quiet.is_empty());

        feed(&mut r, &[WristUp; 3]);
        let ev: Vec<_> = (0..3)
            .filter_map(|i| {
                let t = 1000.0 + 150.0 * i as f64;
                r.observe_main(t, Prediction::new(WristUp, 0.9));
                r.observe_indirect(t, pinch)
            })
            .collect();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].gesture, ev[0].kind), (Pinch, EventKind::Indirect));
    }

    #[test]
    fn wrist_up_releases_after_three_others() {
        let mut r = Recognizer::default();
        feed(&mut r, &[WristUp, WristUp, WristUp, Normal, Normal]);
        assert!(r.wrist_up_active());
        r.observe_main(5000.0, Prediction::new(Normal, 0.9));
        assert!(!r.wrist_up_active());
    }

    #[test]
    fn dynamic_majority_and_refractory() {
        let mut r = Recognizer::default();
        let v = |g| Prediction::new(g, 0.7);
        let ev = r.observe_dynamic(1000.0, &[v(ClickMic), v(ClickMic), v(Normal)]).unwrap();
        assert_eq!((ev.gesture, ev.kind), (ClickMic, EventKind::Dynamic));
        assert!(r.observe_dynamic(1100.0, &[v(ClickMic); 3]).is_none());
        assert_eq!(r.stats().suppressed_by_refractory, 1);
        assert!(r.observe_dynamic(2000.0, &[v(ClickMic), v(ClickSpeaker), v(Normal)]).is_none());
        assert!(r.observe_dynamic(3000.0, &[v(WristUp); 3]).is_none());
    }

    #[test]
    fn reset_clears_state() {
        let mut r = Recognizer::default();
        feed(&mut r, &[WristUp; 3]);
        r.reset();
        assert!(!r.wrist_up_active());
        assert!(feed(&mut r, &[CoverScreen, CoverScreen]).is_empty());
        let once = format!("{:?}", {
            r.reset();
            r.clone()
        });
        r.reset();
        assert_eq!(once, format!("{r:?}"));
    }

    #[test]
    fn event_json_shape() {
        let e = RecognitionEvent { t_ms: 450.0, gesture: WristUp, kind: EventKind::Static, confidence: 0.5 };
        let v: serde_json::Value = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(v["gesture"], "WristUp");
        assert_eq!(v["kind"], "static");
        assert_eq!(v["t_ms"], 450.0);
    }
}
