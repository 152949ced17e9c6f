//! Synthetic acoustic field and IMU traces for the gesture catalogue.
//!
//! Each microphone receives delayed, scaled copies of the emitted chirp: one
//! airborne path around the case, one path through the case body and any
//! number of reflections off a hand, face, phone or fabric. A gesture is a
//! timeline of gain changes on those paths plus an IMU template.
//!
//! Material reflection coefficients (skin 0.5, phone glass 0.9, fabric 0.2),
//! the 343 m/s speed of sound, the `1 / (1 + (d/2 cm)^2)` distance law and
//! the 1e-5 full-scale noise reference are simulator conventions, not
//! physical calibrations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::{GestureClass, GestureKind, SpanKind};
use crate::par::{self, Parallelism};
use crate::signal::{chirp_samples, AudioChannel, AudioStream, ChannelId, ChirpSpec};
use crate::stream::ImuStream;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Reflection distance scale `d0` of the attenuation law.
pub const REFERENCE_DISTANCE_M: f64 = 0.02;
/// Full-scale RMS that corresponds to 0 dB noise.
pub const NOISE_REFERENCE_RMS: f64 = 1e-5;
pub const IMU_RATE: f64 = 200.0;
/// Quiet-room noise level used when a plan does not specify one.
pub const LAB_NOISE_DB: f64 = 17.44;

const MIC_CHANNELS: [ChannelId; 2] = [ChannelId::MicRight, ChannelId::MicBand];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    DirectAir,
    SolidInternal,
    Reflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePath {
    pub kind: PathKind,
    /// Propagation delay in samples.
    pub delay: usize,
    /// Nominal gain; the timeline scales it over time.
    pub gain: f64,
    pub target_channel: ChannelId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub reflection_coeff: f64,
}

impl Material {
    pub fn new(name: impl Into<String>, reflection_coeff: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&reflection_coeff) {
            return Err(Error::param(format!(
                "reflection coefficient {reflection_coeff} outside [0, 1]"
            )));
        }
        Ok(Material {
            name: name.into(),
            reflection_coeff,
        })
    }

    pub fn skin() -> Self {
        Material { name: "skin".into(), reflection_coeff: 0.5 }
    }

    pub fn phone_glass() -> Self {
        Material { name: "phone_glass".into(), reflection_coeff: 0.9 }
    }

    pub fn fabric() -> Self {
        Material { name: "fabric".into(), reflection_coeff: 0.2 }
    }
}

/// Round-trip delay in samples for a reflector `distance_m` away.
pub fn distance_to_delay(distance_m: f64, sample_rate: u32) -> Result<usize> {
    if !(distance_m >= 0.0) || !distance_m.is_finite() {
        return Err(Error::param(format!("distance must be >= 0 (got {distance_m})")));
    }
    Ok((2.0 * distance_m / SPEED_OF_SOUND * sample_rate as f64).round() as usize)
}

/// Distance attenuation `1 / (1 + (d/d0)^2)`.
pub fn proximity(distance_m: f64) -> f64 {
    let r = distance_m / REFERENCE_DISTANCE_M;
    1.0 / (1.0 + r * r)
}

pub fn reflection_gain(material: &Material, distance_m: f64) -> f64 {
    material.reflection_coeff * proximity(distance_m)
}

/// Set path `path` to `factor` times its nominal gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMutation {
    pub path: usize,
    pub factor: f64,
}

/// From `start_ms`, the listed paths move linearly to their new factors over
/// `ramp_ms`. Unlisted paths keep their current factor; every path starts at
/// factor 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start_ms: f64,
    pub ramp_ms: f64,
    pub mutations: Vec<PathMutation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose {
    fn plus(self, o: Pose) -> Pose {
        Pose {
            roll: self.roll + o.roll,
            pitch: self.pitch + o.pitch,
            yaw: self.yaw + o.yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuTemplateKind {
    Idle,
    StaticStep,
    DynamicPeak,
    IndirectPeakOnWristUp,
}

/// Move from the rest pose to `pose` at `onset_ms` and back at `release_ms`,
/// each transition taking `transition_ms` and carrying a small acceleration
/// bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseStep {
    pub pose: Pose,
    pub onset_ms: f64,
    pub release_ms: f64,
    pub transition_ms: f64,
    pub transition_peak_g: f64,
}

/// Half-sine bump in acceleration magnitude centred on `t_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEvent {
    pub t_ms: f64,
    pub amplitude_g: f64,
    pub width_ms: f64,
    /// Adds a 10 ms wideband transient at the peak (finger contact).
    pub contact: bool,
}

/// Raised-cosine excursion of the Euler angles centred on `t_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub t_ms: f64,
    pub width_ms: f64,
    pub delta: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    /// Std-dev of the magnitude jitter (truncated at 3 sigma).
    pub accel_sigma_g: f64,
    pub euler_sigma_deg: f64,
    /// Std-dev of slow pose wander.
    pub wander_deg: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            accel_sigma_g: 0.004,
            euler_sigma_deg: 0.2,
            wander_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuTemplate {
    pub kind: ImuTemplateKind,
    pub rest: Pose,
    pub step: Option<PoseStep>,
    pub peaks: Vec<PeakEvent>,
    pub excursions: Vec<Excursion>,
    pub noise: ImuNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start_ms: f64,
    pub end_ms: f64,
    pub gesture: GestureClass,
    pub kind: SpanKind,
}

/// Slow random gain modulation: `tremor_depth` on reflections (hand
/// tremor), `wobble_depth` on the air/solid paths (strap movement).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathModulation {
    pub tremor_depth: f64,
    pub wobble_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScenario {
    pub label: GestureClass,
    pub paths: Vec<ScenePath>,
    pub phase_timeline: Vec<Phase>,
    pub imu_template: ImuTemplate,
    pub duration_ms: f64,
    pub labels: Vec<LabelSpan>,
    pub modulation: PathModulation,
}

/// Knobs of a single scenario. `None` fields take gesture defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub distance_m: Option<f64>,
    pub material: Option<Material>,
    /// Pitch change of the static pose step (degrees).
    pub tilt_deg: Option<f64>,
    /// Extra roll/pitch added to the gesture's pose step.
    pub step_offset: Pose,
    /// Angular factor on reflection gains, in (0, 1].
    pub directivity: f64,
    pub rest: Pose,
    pub duration_ms: Option<f64>,
    pub onset_ms: Option<f64>,
    pub release_ms: Option<f64>,
    pub transition_ms: f64,
    pub transition_peak_g: f64,
    /// Event times of dynamic and indirect gestures.
    pub events_ms: Option<Vec<f64>>,
    pub contact_ms: f64,
    pub contact_ramp_ms: f64,
    pub peak_g: f64,
    pub peak_width_ms: f64,
    /// Multiplicative jitter on the four base-path gains, in path order.
    pub base_gain_jitter: [f64; 4],
    /// Additive jitter on the four base-path delays (samples).
    pub base_delay_jitter: [i32; 4],
    pub modulation: PathModulation,
    pub imu_noise: ImuNoise,
    pub sample_rate: u32,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            distance_m: None,
            material: None,
            tilt_deg: None,
            step_offset: Pose::default(),
            directivity: 1.0,
            rest: Pose::default(),
            duration_ms: None,
            onset_ms: None,
            release_ms: None,
            transition_ms: 400.0,
            transition_peak_g: 0.1,
            events_ms: None,
            contact_ms: 180.0,
            contact_ramp_ms: 50.0,
            peak_g: 0.45,
            peak_width_ms: 90.0,
            base_gain_jitter: [1.0; 4],
            base_delay_jitter: [0; 4],
            modulation: PathModulation::default(),
            imu_noise: ImuNoise::default(),
            sample_rate: 48_000,
        }
    }
}

// Base paths in fixed order: right air, right solid, band air, band solid.
const BASE_PATHS: [(ChannelId, PathKind, usize, f64); 4] = [
    (ChannelId::MicRight, PathKind::DirectAir, 6, 1.0),
    (ChannelId::MicRight, PathKind::SolidInternal, 1, 0.35),
    (ChannelId::MicBand, PathKind::DirectAir, 4, 0.8),
    (ChannelId::MicBand, PathKind::SolidInternal, 2, 0.25),
];
const RIGHT_AIR: usize = 0;
const RIGHT_SOLID: usize = 1;
const BAND_AIR: usize = 2;
const BAND_SOLID: usize = 3;

/// Default reflector distance range (m) that dataset generation samples from.
pub fn default_distance_range(label: GestureClass) -> (f64, f64) {
    match label {
        GestureClass::HandInPocket => (0.005, 0.012),
        GestureClass::PhoneCoverWatch => (0.005, 0.015),
        _ => (0.008, 0.025),
    }
}

fn default_material(label: GestureClass) -> Material {
    match label {
        GestureClass::HandInPocket => Material::fabric(),
        GestureClass::PhoneCoverWatch => Material::phone_glass(),
        _ => Material::skin(),
    }
}

/// (pitch, roll) change of the held pose relative to rest.
fn pose_step(label: GestureClass) -> (f64, f64) {
    use GestureClass::*;
    match label {
        WristUp | Pinch | RotateIn | RotateOut | Bend => (60.0, 0.0),
        CoverScreen => (50.0, 5.0),
        BlockLeft => (55.0, -5.0),
        PhoneCoverWatch => (45.0, 10.0),
        CloseToMouth => (100.0, 30.0),
        HandInPocket => (-70.0, -20.0),
        ClickMic | ClickMicAdd | ClickSpeaker | PinchSides | PinchDiag => (55.0, 0.0),
        Normal => (0.0, 0.0),
    }
}

struct StaticSignature {
    reflections: Vec<ScenePath>,
    occlusion: Vec<(usize, f64)>,
}

/// Acoustic footprint of a held pose. `q` is proximity normalised to 1 at
/// 1 cm, so occlusion fades with distance like the reflections do.
fn static_signature(
    label: GestureClass,
    distance_m: f64,
    material: &Material,
    directivity: f64,
    base: &[ScenePath],
    sample_rate: u32,
) -> Result<StaticSignature> {
    use GestureClass::*;
    let g = reflection_gain(material, distance_m) * directivity;
    let q = proximity(distance_m) / proximity(0.01);
    let dd = distance_to_delay(distance_m, sample_rate)?;
    let right_air = base[RIGHT_AIR].delay;
    let band_air = base[BAND_AIR].delay;
    let refl = |ch: ChannelId, rel_gain: f64, extra: usize| {
        let air = if ch == ChannelId::MicRight { right_air } else { band_air };
        ScenePath {
            kind: PathKind::Reflection,
            delay: air + dd + extra,
            gain: (g * rel_gain).clamp(0.0, 1.0),
            target_channel: ch,
        }
    };
    let occl = |k: f64| (1.0 - k * q).clamp(0.0, 1.0);
    let sig = match label {
        // Raised wrist and hand at the mouth look the same to the speaker.
        WristUp | CloseToMouth | Pinch | RotateIn | RotateOut | Bend => StaticSignature {
            reflections: vec![refl(ChannelId::MicRight, 1.0, 0), refl(ChannelId::MicBand, 0.25, 2)],
            occlusion: vec![(RIGHT_AIR, occl(0.1))],
        },
        CoverScreen => StaticSignature {
            reflections: vec![refl(ChannelId::MicBand, 1.0, 0), refl(ChannelId::MicRight, 0.5, 3)],
            occlusion: vec![(RIGHT_AIR, occl(0.3)), (BAND_AIR, occl(0.3))],
        },
        BlockLeft => StaticSignature {
            reflections: vec![refl(ChannelId::MicRight, 0.6, 3), refl(ChannelId::MicBand, 0.6, 3)],
            occlusion: vec![(RIGHT_AIR, occl(0.45)), (BAND_AIR, occl(0.45))],
        },
        HandInPocket => StaticSignature {
            reflections: vec![
                refl(ChannelId::MicRight, 1.0, 0),
                refl(ChannelId::MicBand, 1.0, 0),
                refl(ChannelId::MicRight, 0.6, 2),
                refl(ChannelId::MicBand, 0.6, 7),
            ],
            occlusion: vec![(RIGHT_AIR, occl(0.65)), (BAND_AIR, occl(0.65))],
        },
        PhoneCoverWatch => StaticSignature {
            reflections: vec![refl(ChannelId::MicRight, 1.0, 1), refl(ChannelId::MicBand, 0.9, 1)],
            occlusion: vec![(RIGHT_AIR, occl(0.2)), (BAND_AIR, occl(0.2))],
        },
        other => {
            return Err(Error::param(format!("{other} has no static signature")));
        }
    };
    Ok(sig)
}

/// Path factors while a finger is in contact.
fn contact_gate(label: GestureClass, base: &[ScenePath]) -> Vec<(usize, f64)> {
    use GestureClass::*;
    let to_gain = |idx: usize, gain: f64| (idx, (gain / base[idx].gain.max(1e-12)).min(1.0));
    match label {
        ClickMic => vec![to_gain(RIGHT_AIR, 0.03), (RIGHT_SOLID, 0.5)],
        ClickMicAdd => vec![to_gain(BAND_AIR, 0.03), (BAND_SOLID, 0.5), (RIGHT_SOLID, 0.7)],
        ClickSpeaker => vec![(RIGHT_AIR, 0.15), (BAND_AIR, 0.15), (RIGHT_SOLID, 0.15), (BAND_SOLID, 0.15)],
        PinchSides => vec![(RIGHT_AIR, 0.3), (BAND_AIR, 0.6), (RIGHT_SOLID, 0.8), (BAND_SOLID, 0.8)],
        PinchDiag => vec![(BAND_AIR, 0.3), (RIGHT_AIR, 0.6), (RIGHT_SOLID, 0.8), (BAND_SOLID, 0.8)],
        _ => Vec::new(),
    }
}

fn indirect_motion(label: GestureClass) -> (Pose, f64, f64) {
    // (Euler excursion, accel bump, excursion width)
    match label {
        GestureClass::Pinch => (Pose { roll: 4.0, pitch: 0.0, yaw: 0.0 }, 0.15, 300.0),
        GestureClass::RotateIn => (Pose { roll: -30.0, pitch: 0.0, yaw: 0.0 }, 0.08, 600.0),
        GestureClass::RotateOut => (Pose { roll: 30.0, pitch: 0.0, yaw: 0.0 }, 0.08, 600.0),
        _ => (Pose { roll: 0.0, pitch: 25.0, yaw: 0.0 }, 0.08, 600.0),
    }
}

pub fn build_scenario(label: GestureClass, params: &ScenarioParams) -> Result<GestureScenario> {
    let kind = label.kind();
    let fs = params.sample_rate;
    if fs == 0 {
        return Err(Error::param("sample rate must be positive"));
    }
    if !(params.directivity > 0.0 && params.directivity <= 1.0) {
        return Err(Error::param("directivity must lie in (0, 1]"));
    }
    let distance = params.distance_m.unwrap_or(0.01);
    let material = params.material.clone().unwrap_or_else(|| default_material(label));
    let duration = params.duration_ms.unwrap_or(match kind {
        GestureKind::Idle => 3_000.0,
        GestureKind::Static => 8_000.0,
        GestureKind::Dynamic => 2_000.0,
        GestureKind::Indirect => 6_000.0,
    });
    if !(duration > 0.0) {
        return Err(Error::param("duration must be positive"));
    }

    let mut paths: Vec<ScenePath> = BASE_PATHS
        .iter()
        .enumerate()
        .map(|(i, &(ch, k, delay, gain))| ScenePath {
            kind: k,
            delay: (delay as i64 + params.base_delay_jitter[i] as i64).max(0) as usize,
            gain: (gain * params.base_gain_jitter[i]).clamp(0.0, 1.0),
            target_channel: ch,
        })
        .collect();
    let mut timeline: Vec<Phase> = Vec::new();
    let mut labels = Vec::new();
    let (d_pitch, d_roll) = pose_step(label);
    let step_pose = Pose {
        roll: d_roll + params.step_offset.roll,
        pitch: params.tilt_deg.unwrap_or(d_pitch) + params.step_offset.pitch,
        yaw: params.step_offset.yaw,
    };
    let onset = params.onset_ms.unwrap_or(1_000.0);
    let release = params.release_ms.unwrap_or(duration - 1_000.0);
    let tr = params.transition_ms;
    let mut imu = ImuTemplate {
        kind: ImuTemplateKind::Idle,
        rest: params.rest,
        step: None,
        peaks: Vec::new(),
        excursions: Vec::new(),
        noise: params.imu_noise,
    };

    match kind {
        GestureKind::Idle => {
            labels.push(LabelSpan {
                start_ms: 0.0,
                end_ms: duration,
                gesture: label,
                kind: SpanKind::Static,
            });
        }
        GestureKind::Static | GestureKind::Indirect => {
            if !(onset >= 0.0 && onset + tr <= release && release + tr <= duration) {
                return Err(Error::param(format!(
                    "pose timing onset {onset} / release {release} / transition {tr} does not fit {duration} ms"
                )));
            }
            let sig = static_signature(label, distance, &material, params.directivity, &paths, fs)?;
            let first = paths.len();
            paths.extend(sig.reflections.iter().copied());
            let refl: Vec<usize> = (first..paths.len()).collect();
            timeline.push(Phase {
                start_ms: 0.0,
                ramp_ms: 0.0,
                mutations: refl.iter().map(|&p| PathMutation { path: p, factor: 0.0 }).collect(),
            });
            let mut engage: Vec<PathMutation> =
                refl.iter().map(|&p| PathMutation { path: p, factor: 1.0 }).collect();
            engage.extend(sig.occlusion.iter().map(|&(p, f)| PathMutation { path: p, factor: f }));
            timeline.push(Phase { start_ms: onset, ramp_ms: tr, mutations: engage });
            let mut disengage: Vec<PathMutation> =
                refl.iter().map(|&p| PathMutation { path: p, factor: 0.0 }).collect();
            disengage.extend(sig.occlusion.iter().map(|&(p, _)| PathMutation { path: p, factor: 1.0 }));
            timeline.push(Phase { start_ms: release, ramp_ms: tr, mutations: disengage });
            imu.step = Some(PoseStep {
                pose: params.rest.plus(step_pose),
                onset_ms: onset,
                release_ms: release,
                transition_ms: tr,
                transition_peak_g: params.transition_peak_g,
            });
            if kind == GestureKind::Static {
                imu.kind = ImuTemplateKind::StaticStep;
                labels.push(LabelSpan {
                    start_ms: onset,
                    end_ms: release + tr,
                    gesture: label,
                    kind: SpanKind::Static,
                });
            } else {
                imu.kind = ImuTemplateKind::IndirectPeakOnWristUp;
                let events = params
                    .events_ms
                    .clone()
                    .unwrap_or_else(|| vec![(onset + tr + release) / 2.0]);
                let (delta, bump, width) = indirect_motion(label);
                for &t in &events {
                    if t - width / 2.0 < onset + tr || t + width / 2.0 > release {
                        return Err(Error::param(format!(
                            "indirect event at {t} ms falls outside the held Wrist Up pose"
                        )));
                    }
                    imu.excursions.push(Excursion { t_ms: t, width_ms: width, delta });
                    imu.peaks.push(PeakEvent {
                        t_ms: t,
                        amplitude_g: bump,
                        width_ms: 120.0,
                        contact: false,
                    });
                    labels.push(LabelSpan {
                        start_ms: t - width / 2.0,
                        end_ms: t + width / 2.0,
                        gesture: label,
                        kind: SpanKind::Dynamic,
                    });
                }
            }
        }
        GestureKind::Dynamic => {
            if params.peak_width_ms > 300.0 || params.peak_width_ms <= 0.0 {
                return Err(Error::param("dynamic peak width must lie in (0, 300] ms"));
            }
            let c = params.contact_ms;
            let r = params.contact_ramp_ms.min(c / 2.0);
            let events = params.events_ms.clone().unwrap_or_else(|| vec![duration / 2.0]);
            let gate = contact_gate(label, &paths);
            imu.kind = ImuTemplateKind::DynamicPeak;
            imu.rest = params.rest.plus(step_pose);
            let mut last_end = f64::NEG_INFINITY;
            for &p in &events {
                let half = (c / 2.0).max(150.0);
                if p - half < 0.0 || p + half > duration || p - half < last_end {
                    return Err(Error::param(format!(
                        "tap at {p} ms does not fit the session or overlaps the previous one"
                    )));
                }
                last_end = p + half;
                timeline.push(Phase {
                    start_ms: p - c / 2.0,
                    ramp_ms: r,
                    mutations: gate.iter().map(|&(path, factor)| PathMutation { path, factor }).collect(),
                });
                timeline.push(Phase {
                    start_ms: p + c / 2.0 - r,
                    ramp_ms: r,
                    mutations: gate.iter().map(|&(path, _)| PathMutation { path, factor: 1.0 }).collect(),
                });
                imu.peaks.push(PeakEvent {
                    t_ms: p,
                    amplitude_g: params.peak_g,
                    width_ms: params.peak_width_ms,
                    contact: true,
                });
                labels.push(LabelSpan {
                    start_ms: p - 150.0,
                    end_ms: p + 150.0,
                    gesture: label,
                    kind: SpanKind::Dynamic,
                });
            }
        }
    }

    let scenario = GestureScenario {
        label,
        paths,
        phase_timeline: timeline,
        imu_template: imu,
        duration_ms: duration,
        labels,
        modulation: params.modulation,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl GestureScenario {
    pub fn validate(&self) -> Result<()> {
        for ch in MIC_CHANNELS {
            for kind in [PathKind::DirectAir, PathKind::SolidInternal] {
                let n = self
                    .paths
                    .iter()
                    .filter(|p| p.target_channel == ch && p.kind == kind)
                    .count();
                if n != 1 {
                    return Err(Error::param(format!(
                        "channel {} needs exactly one {kind:?} path (found {n})",
                        ch.name()
                    )));
                }
            }
        }
        if let Some(p) = self.paths.iter().find(|p| !(0.0..=1.0).contains(&p.gain)) {
            return Err(Error::param(format!("path gain {} outside [0, 1]", p.gain)));
        }
        if self.paths.iter().any(|p| p.target_channel == ChannelId::Speaker) {
            return Err(Error::param("paths must target a microphone channel"));
        }
        let mut prev = 0.0;
        for ph in &self.phase_timeline {
            if ph.start_ms < prev || ph.start_ms > self.duration_ms || ph.ramp_ms < 0.0 {
                return Err(Error::param("phase timeline must be sorted and inside the session"));
            }
            prev = ph.start_ms;
            for m in &ph.mutations {
                if m.path >= self.paths.len() || !(m.factor >= 0.0) {
                    return Err(Error::param("phase mutation refers to a missing path or negative factor"));
                }
            }
        }
        if self.label.kind() == GestureKind::Dynamic {
            if self.imu_template.kind != ImuTemplateKind::DynamicPeak {
                return Err(Error::param("dynamic gestures need a dynamic_peak IMU template"));
            }
            if self.imu_template.peaks.iter().any(|p| p.width_ms > 300.0) {
                return Err(Error::param("dynamic peak width exceeds 300 ms"));
            }
        }
        let mut end = f64::NEG_INFINITY;
        for l in &self.labels {
            if l.start_ms < end || l.end_ms <= l.start_ms {
                return Err(Error::param("label spans must be sorted and non-overlapping"));
            }
            end = l.end_ms;
        }
        Ok(())
    }

    fn envelope(&self, path: usize) -> Envelope {
        let mut points = vec![(0.0, 1.0)];
        let mut current = 1.0;
        for ph in &self.phase_timeline {
            for m in ph.mutations.iter().filter(|m| m.path == path) {
                points.push((ph.start_ms, current));
                points.push((ph.start_ms + ph.ramp_ms, m.factor));
                current = m.factor;
            }
        }
        Envelope { points }
    }
}

/// Piecewise-linear factor over time.
struct Envelope {
    points: Vec<(f64, f64)>,
}

impl Envelope {
    fn sample(&self, n: usize, fs: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut seg = 0;
        for i in 0..n {
            let t = i as f64 * 1000.0 / fs;
            while seg + 1 < self.points.len() && self.points[seg + 1].0 <= t {
                seg += 1;
            }
            let (t0, v0) = self.points[seg];
            let v = match self.points.get(seg + 1) {
                Some(&(t1, v1)) if t1 > t0 && t >= t0 => v0 + (v1 - v0) * (t - t0) / (t1 - t0),
                Some(&(t1, v1)) if t1 <= t0 => v1,
                _ => v0,
            };
            out.push(v);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG for `(seed, tags...)`.
pub(crate) fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix(seed);
    for &t in tags {
        s = splitmix(s ^ splitmix(t.wrapping_add(0x5151)));
    }
    ChaCha8Rng::seed_from_u64(s)
}

const TAG_AUDIO: u64 = 1;
const TAG_IMU: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_PARAMS: u64 = 4;
const TAG_SENSOR: u64 = 5;

// ---------------------------------------------------------------------------
// Audio
// ---------------------------------------------------------------------------

fn channel_index(ch: ChannelId) -> u64 {
    match ch {
        ChannelId::MicRight => 0,
        ChannelId::MicBand => 1,
        ChannelId::Speaker => 2,
    }
}

fn modulation(depth: f64, f_lo: f64, f_hi: f64, rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Option<Vec<f64>> {
    if depth <= 0.0 {
        return None;
    }
    let comps: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(f_lo..f_hi), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    Some(
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                1.0 + depth / 3.0 * comps.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>()
            })
            .collect(),
    )
}

/// Unclipped per-channel path sums (mic_right, mic_band).
pub fn render_paths(scenario: &GestureScenario, spec: &ChirpSpec, seed: u64) -> Result<Vec<(ChannelId, Vec<f64>)>> {
    scenario.validate()?;
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let n = (scenario.duration_ms * fs / 1000.0).round() as usize;
    let max_delay = scenario.paths.iter().map(|p| p.delay).max().unwrap_or(0);
    let lead = spec.chunk_len * max_delay.div_ceil(spec.chunk_len).max(1);
    let emitted = chirp_samples(spec, lead + n);
    let mut out: Vec<(ChannelId, Vec<f64>)> = MIC_CHANNELS.iter().map(|&c| (c, vec![0.0; n])).collect();
    for (pi, path) in scenario.paths.iter().enumerate() {
        let ci = channel_index(path.target_channel) as usize;
        let env = scenario.envelope(pi).sample(n, fs);
        let mut rng = rng_for(seed, &[TAG_AUDIO, ci as u64, pi as u64]);
        let m = match path.kind {
            PathKind::Reflection => modulation(scenario.modulation.tremor_depth, 3.0, 9.0, &mut rng, n, fs),
            _ => modulation(scenario.modulation.wobble_depth, 0.2, 1.5, &mut rng, n, fs),
        };
        let src = &emitted[lead - path.delay..lead - path.delay + n];
        let dst = &mut out[ci].1;
        match m {
            Some(m) => {
                for i in 0..n {
                    dst[i] += path.gain * env[i] * m[i] * src[i];
                }
            }
            None => {
                for i in 0..n {
                    dst[i] += path.gain * env[i] * src[i];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RenderedAudio {
    pub stream: AudioStream,
    /// Samples that had to be clipped to [-1, 1].
    pub clipped: usize,
}

pub fn render_audio(scenario: &GestureScenario, spec: &ChirpSpec, seed: u64) -> Result<RenderedAudio> {
    let raw = render_paths(scenario, spec, seed)?;
    let mut clipped = 0;
    let channels = raw
        .into_iter()
        .map(|(id, samples)| AudioChannel {
            id,
            samples: samples
                .into_iter()
                .map(|x| {
                    if x.abs() > 1.0 {
                        clipped += 1;
                    }
                    x.clamp(-1.0, 1.0)
                })
                .collect(),
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} samples clipped while rendering {}", scenario.label);
    }
    Ok(RenderedAudio {
        stream: AudioStream::new(spec.sample_rate, channels, 0.0)?,
        clipped,
    })
}

// ---------------------------------------------------------------------------
// IMU
// ---------------------------------------------------------------------------

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn half_sine(t: f64, center: f64, width: f64) -> f64 {
    let u = (t - (center - width / 2.0)) / width;
    if (0.0..=1.0).contains(&u) {
        (PI * u).sin()
    } else {
        0.0
    }
}

fn raised_cosine(t: f64, center: f64, width: f64) -> f64 {
    let u = (t - (center - width / 2.0)) / width;
    if (0.0..=1.0).contains(&u) {
        0.5 - 0.5 * (2.0 * PI * u).cos()
    } else {
        0.0
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 3.0 * sigma {
            return v;
        }
    }
}

pub fn render_imu(scenario: &GestureScenario, rate: f64, seed: u64) -> Result<ImuStream> {
    scenario.validate()?;
    if !(rate > 0.0) {
        return Err(Error::param("IMU rate must be positive"));
    }
    let tpl = &scenario.imu_template;
    let period = 1000.0 / rate;
    let n = (scenario.duration_ms / period + 1e-9).floor() as usize + 1;
    let mut rng = rng_for(seed, &[TAG_IMU]);
    let noise = tpl.noise;
    let tau_ms = 800.0;
    let alpha = (-period / tau_ms).exp();
    let wander_step = noise.wander_deg * (1.0 - alpha * alpha).sqrt();
    let mut wander = [0.0f64; 3];
    if noise.wander_deg > 0.0 {
        for w in wander.iter_mut() {
            *w = truncated_normal(&mut rng, noise.wander_deg);
        }
    }
    let contact_noise = Normal::new(0.0, 0.08).expect("valid sigma");

    let mut accel = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut euler = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let t = i as f64 * period;
        let mut pose = tpl.rest;
        let mut mag = 1.0;
        if let Some(step) = &tpl.step {
            let up = smoothstep((t - step.onset_ms) / step.transition_ms.max(1e-9));
            let down = smoothstep((t - step.release_ms) / step.transition_ms.max(1e-9));
            let w = up - down;
            pose.roll += w * (step.pose.roll - tpl.rest.roll);
            pose.pitch += w * (step.pose.pitch - tpl.rest.pitch);
            pose.yaw += w * (step.pose.yaw - tpl.rest.yaw);
            for c in [step.onset_ms, step.release_ms] {
                mag += step.transition_peak_g * half_sine(t, c + step.transition_ms / 2.0, step.transition_ms);
            }
        }
        for ex in &tpl.excursions {
            let k = raised_cosine(t, ex.t_ms, ex.width_ms);
            pose.roll += k * ex.delta.roll;
            pose.pitch += k * ex.delta.pitch;
            pose.yaw += k * ex.delta.yaw;
        }
        for p in &tpl.peaks {
            mag += p.amplitude_g * half_sine(t, p.t_ms, p.width_ms);
            if p.contact && (t - p.t_ms).abs() < 5.0 + 1e-9 && (t - p.t_ms) >= -1e-9 {
                let v: f64 = contact_noise.sample(&mut rng);
                mag += v.abs();
            }
        }
        if noise.wander_deg > 0.0 {
            for w in wander.iter_mut() {
                *w = alpha * *w + wander_step * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let jitter = [
            truncated_normal(&mut rng, noise.euler_sigma_deg),
            truncated_normal(&mut rng, noise.euler_sigma_deg),
            truncated_normal(&mut rng, noise.euler_sigma_deg),
        ];
        let roll = pose.roll + wander[0] + jitter[0];
        let pitch = pose.pitch + wander[1] + jitter[1];
        let yaw = pose.yaw + wander[2] + jitter[2];
        mag += truncated_normal(&mut rng, noise.accel_sigma_g);
        let (r, p) = (roll.to_radians(), pitch.to_radians());
        // Gravity direction in the device frame, nudged off-axis and
        // renormalised so the magnitude stays exactly `mag`.
        let mut dir = [-p.sin(), r.sin() * p.cos(), r.cos() * p.cos()];
        let off = noise.accel_sigma_g * 0.5;
        for d in dir.iter_mut() {
            *d += truncated_normal(&mut rng, off);
        }
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        for (k, d) in dir.iter().enumerate() {
            accel[k].push(d / norm * mag);
        }
        euler[0].push(roll);
        euler[1].push(pitch);
        euler[2].push(yaw);
    }
    ImuStream::new(rate, 0.0, accel, euler)
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseBand {
    /// Ambient noise confined below the sensing band.
    #[default]
    #[serde(rename = "below_16500")]
    Below16500,
    #[serde(rename = "full_band")]
    FullBand,
}

/// Upper edge of `Below16500` noise; kept under the band so chunk FFT
/// leakage into the first sensing bins stays negligible.
const BELOW_BAND_EDGE_HZ: f64 = 16_000.0;

pub fn noise_rms(level_db: f64) -> f64 {
    NOISE_REFERENCE_RMS * 10f64.powf(level_db / 20.0)
}

fn gaussian_noise(len: usize, rms: f64, band: NoiseBand, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if len == 0 || rms == 0.0 {
        return vec![0.0; len];
    }
    let mut x: Vec<f64> = (0..len).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    if band == NoiseBand::Below16500 {
        let mut planner = FftPlanner::new();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        planner.plan_fft_forward(len).process(&mut buf);
        let cut = (BELOW_BAND_EDGE_HZ * len as f64 / fs).floor() as usize;
        for (k, b) in buf.iter_mut().enumerate() {
            let f_bin = k.min(len - k);
            if f_bin > cut {
                *b = Complex::new(0.0, 0.0);
            }
        }
        planner.plan_fft_inverse(len).process(&mut buf);
        x = buf.iter().map(|c| c.re).collect();
    }
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if cur > 0.0 {
        let s = rms / cur;
        x.iter_mut().for_each(|v| *v *= s);
    }
    x
}

/// Add Gaussian noise `level_db` above the 1e-5 full-scale reference to
/// every channel. Independent noise per channel.
pub fn add_noise(stream: &AudioStream, level_db: f64, band: NoiseBand, seed: u64) -> Result<AudioStream> {
    if !(level_db >= 0.0) || !level_db.is_finite() {
        return Err(Error::param(format!("noise level must be >= 0 dB (got {level_db})")));
    }
    let rms = noise_rms(level_db);
    let fs = stream.sample_rate as f64;
    let channels = stream
        .channels
        .iter()
        .map(|c| {
            let mut rng = rng_for(seed, &[TAG_NOISE, channel_index(c.id), band as u64]);
            let noise = gaussian_noise(c.samples.len(), rms, band, fs, &mut rng);
            AudioChannel {
                id: c.id,
                samples: c.samples.iter().zip(&noise).map(|(s, n)| (s + n).clamp(-1.0, 1.0)).collect(),
            }
        })
        .collect();
    AudioStream::new(stream.sample_rate, channels, stream.start_time_ms)
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistanceSpec {
    Fixed(f64),
    Range([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub gesture: GestureClass,
    /// Number of sessions.
    pub repetitions: usize,
    #[serde(default = "lab_noise")]
    pub noise_db: f64,
    #[serde(default)]
    pub noise_band: NoiseBand,
    /// Reflector distance in metres; defaults to the gesture's range.
    #[serde(default)]
    pub distance_m: Option<DistanceSpec>,
}

fn lab_noise() -> f64 {
    LAB_NOISE_DB
}

impl PlanEntry {
    pub fn new(gesture: GestureClass, repetitions: usize) -> Self {
        PlanEntry {
            gesture,
            repetitions,
            noise_db: LAB_NOISE_DB,
            noise_band: NoiseBand::Below16500,
            distance_m: None,
        }
    }
}

/// Per-session variability (re-wearing, tremor, sensor noise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Realism {
    /// Base-path gains are scaled by U(1 - j, 1 + j).
    pub gain_jitter: f64,
    /// Base-path delays move by up to this many samples.
    pub delay_jitter: i32,
    pub tremor_depth: f64,
    pub wobble_depth: f64,
    pub pose_wander_deg: f64,
    pub accel_sigma_g: f64,
    pub euler_sigma_deg: f64,
    /// Full-band microphone self-noise (dB re 1e-5).
    pub sensor_noise_db: f64,
}

impl Default for Realism {
    fn default() -> Self {
        Realism {
            gain_jitter: 0.03,
            delay_jitter: 0,
            tremor_depth: 0.05,
            wobble_depth: 0.02,
            pose_wander_deg: 2.0,
            accel_sigma_g: 0.004,
            euler_sigma_deg: 0.3,
            sensor_noise_db: 26.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub chirp: ChirpSpec,
    pub normal_ms: f64,
    pub static_ms: f64,
    pub taps_per_session: usize,
    pub indirect_ms: f64,
    pub indirect_events: usize,
    pub realism: Realism,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            chirp: ChirpSpec { amplitude: 0.02, ..ChirpSpec::default() },
            normal_ms: 3_000.0,
            static_ms: 5_000.0,
            taps_per_session: 4,
            indirect_ms: 8_000.0,
            indirect_events: 3,
            realism: Realism::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPlan {
    pub sessions: Vec<PlanEntry>,
    #[serde(default)]
    pub sim: SimSettings,
}

impl DatasetPlan {
    pub fn new(sessions: Vec<PlanEntry>) -> Self {
        DatasetPlan { sessions, sim: SimSettings::default() }
    }

    /// `repetitions` sessions of each listed gesture.
    pub fn uniform(gestures: &[GestureClass], repetitions: usize) -> Self {
        DatasetPlan::new(gestures.iter().map(|&g| PlanEntry::new(g, repetitions)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() || self.session_count() == 0 {
            return Err(Error::Config("plan has no sessions".into()));
        }
        self.sim.chirp.validate()?;
        for e in &self.sessions {
            if !(e.noise_db >= 0.0) {
                return Err(Error::Config(format!("{}: noise level must be >= 0 dB", e.gesture)));
            }
            match e.distance_m {
                Some(DistanceSpec::Fixed(d)) if !(d >= 0.0) => {
                    return Err(Error::Config(format!("{}: negative distance", e.gesture)));
                }
                Some(DistanceSpec::Range([a, b])) if !(a >= 0.0 && a <= b) => {
                    return Err(Error::Config(format!("{}: invalid distance range", e.gesture)));
                }
                _ => {}
            }
        }
        if self.sim.normal_ms < 300.0 || self.sim.static_ms < 3_000.0 || self.sim.indirect_ms < 4_000.0 {
            return Err(Error::Config("session durations too short".into()));
        }
        Ok(())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.iter().map(|e| e.repetitions).sum()
    }

    /// Plan entry behind session `index`.
    pub fn entry_for(&self, index: usize) -> Option<&PlanEntry> {
        let mut i = index;
        for e in &self.sessions {
            if i < e.repetitions {
                return Some(e);
            }
            i -= e.repetitions;
        }
        None
    }

    /// Same plan with every entry's noise replaced.
    pub fn with_noise(&self, noise_db: f64, band: NoiseBand) -> Self {
        let mut p = self.clone();
        for e in &mut p.sessions {
            e.noise_db = noise_db;
            e.noise_band = band;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub id: String,
    pub gesture: GestureClass,
    pub audio: AudioStream,
    pub imu: ImuStream,
    pub labels: Vec<LabelSpan>,
    pub seed: u64,
    pub clipped: usize,
}

/// Seed of session `index` under dataset seed `seed`.
pub fn session_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Randomised scenario parameters for one session of `entry`.
pub fn sample_params(entry: &PlanEntry, sim: &SimSettings, seed: u64) -> ScenarioParams {
    let mut rng = rng_for(seed, &[TAG_PARAMS]);
    let re = sim.realism;
    let label = entry.gesture;
    let mut p = ScenarioParams {
        sample_rate: sim.chirp.sample_rate,
        ..ScenarioParams::default()
    };
    // Yaw comes from gyro integration and starts near zero each session.
    p.rest = Pose {
        roll: rng.gen_range(-8.0..8.0),
        pitch: rng.gen_range(-10.0..10.0),
        yaw: rng.gen_range(-5.0..5.0),
    };
    if label == GestureClass::Normal {
        // Everyday activity covers raised-wrist postures too.
        p.rest.pitch = rng.gen_range(-20.0..110.0);
        p.rest.roll = rng.gen_range(-15.0..35.0);
    }
    p.step_offset = Pose {
        roll: rng.gen_range(-8.0..8.0),
        pitch: rng.gen_range(-10.0..10.0),
        yaw: rng.gen_range(-10.0..10.0),
    };
    p.distance_m = Some(match entry.distance_m {
        Some(DistanceSpec::Fixed(d)) => d,
        Some(DistanceSpec::Range([a, b])) => {
            if b > a {
                rng.gen_range(a..b)
            } else {
                a
            }
        }
        None => {
            let (a, b) = default_distance_range(label);
            rng.gen_range(a..b)
        }
    });
    p.directivity = rng.gen_range(0.75..1.0);
    let j = re.gain_jitter.clamp(0.0, 0.99);
    let dj = re.delay_jitter.max(0);
    for i in 0..4 {
        p.base_gain_jitter[i] = if j > 0.0 { rng.gen_range(1.0 - j..1.0 + j) } else { 1.0 };
        p.base_delay_jitter[i] = if dj > 0 { rng.gen_range(-dj..=dj) } else { 0 };
    }
    p.modulation = PathModulation {
        tremor_depth: re.tremor_depth,
        wobble_depth: re.wobble_depth,
    };
    p.imu_noise = ImuNoise {
        accel_sigma_g: re.accel_sigma_g,
        euler_sigma_deg: re.euler_sigma_deg,
        wander_deg: re.pose_wander_deg,
    };
    p.transition_ms = rng.gen_range(300.0..500.0);
    p.transition_peak_g = rng.gen_range(0.06..0.15);
    match label.kind() {
        GestureKind::Idle => p.duration_ms = Some(sim.normal_ms),
        GestureKind::Static => {
            let d = sim.static_ms;
            p.duration_ms = Some(d);
            p.onset_ms = Some(rng.gen_range(800.0..1_200.0));
            p.release_ms = Some(d - p.transition_ms - rng.gen_range(600.0..900.0));
        }
        GestureKind::Indirect => {
            let d = sim.indirect_ms;
            let onset = rng.gen_range(800.0..1_200.0);
            let release = d - p.transition_ms - rng.gen_range(600.0..900.0);
            p.duration_ms = Some(d);
            p.onset_ms = Some(onset);
            p.release_ms = Some(release);
            let lo = onset + p.transition_ms + 400.0;
            let hi = release - 400.0;
            let k = sim.indirect_events.max(1);
            let slot = (hi - lo) / k as f64;
            p.events_ms = Some(
                (0..k)
                    .map(|i| lo + slot * (i as f64 + 0.5) + rng.gen_range(-0.15..0.15) * slot)
                    .collect(),
            );
        }
        GestureKind::Dynamic => {
            let mut t = rng.gen_range(700.0..900.0);
            let mut events = Vec::new();
            for _ in 0..sim.taps_per_session.max(1) {
                events.push(t);
                t += rng.gen_range(900.0..1_200.0);
            }
            p.duration_ms = Some(t - 1_000.0 + rng.gen_range(700.0..900.0));
            p.events_ms = Some(events);
            p.contact_ms = rng.gen_range(220.0..300.0);
            p.contact_ramp_ms = rng.gen_range(30.0..50.0);
            p.peak_g = rng.gen_range(0.3..0.6);
            p.peak_width_ms = rng.gen_range(60.0..120.0);
        }
    }
    p
}

/// Render session `index` of `plan`.
pub fn generate_session(plan: &DatasetPlan, seed: u64, index: usize) -> Result<SessionRecording> {
    let entry = plan
        .entry_for(index)
        .ok_or_else(|| Error::param(format!("session index {index} outside plan")))?;
    let s = session_seed(seed, index);
    let params = sample_params(entry, &plan.sim, s);
    let scenario = build_scenario(entry.gesture, &params)?;
    let rendered = render_audio(&scenario, &plan.sim.chirp, s)?;
    let mut audio = rendered.stream;
    if plan.sim.realism.sensor_noise_db > 0.0 {
        audio = add_noise(&audio, plan.sim.realism.sensor_noise_db, NoiseBand::FullBand, s ^ TAG_SENSOR)?;
    }
    if entry.noise_db > 0.0 {
        audio = add_noise(&audio, entry.noise_db, entry.noise_band, s)?;
    }
    let imu = render_imu(&scenario, IMU_RATE, s)?;
    Ok(SessionRecording {
        id: format!("s{index:04}_{}", entry.gesture),
        gesture: entry.gesture,
        audio,
        imu,
        labels: scenario.labels,
        seed: s,
        clipped: rendered.clipped,
    })
}

/// Render every session of `plan`. Holds all audio in memory; use
/// [`generate_session`] to stream large plans.
pub fn generate_dataset(plan: &DatasetPlan, seed: u64, mode: Parallelism) -> Result<Vec<SessionRecording>> {
    plan.validate()?;
    par::map_indexed(mode, plan.session_count(), |i| generate_session(plan, seed, i))
        .into_iter()
        .collect()
}
