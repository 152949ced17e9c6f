//! Window -> fixed-length feature vector.
//!
//! Layout: `energy[ch][chunk]`, then `bands[ch][chunk][b]`, then
//! `imu[series][stat]` for the series accel magnitude, roll, pitch, yaw and
//! the statistics kurtosis, skewness, mean, variance, max.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{band_features, short_term_energy, spectrum, ChannelId};
use crate::stream::{magnitude, Window, CHUNKS_PER_WINDOW};

pub const IMU_SERIES: [&str; 4] = ["accel_mag", "roll", "pitch", "yaw"];
pub const IMU_STATS: [&str; 5] = ["kurtosis", "skewness", "mean", "variance", "max"];
pub const IMU_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    MicRight,
    MicBand,
    Imu,
}

impl Sensor {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mic_right" => Ok(Sensor::MicRight),
            "mic_band" => Ok(Sensor::MicBand),
            "imu" => Ok(Sensor::Imu),
            other => Err(Error::param(format!("unknown sensor '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::MicRight => "mic_right",
            Sensor::MicBand => "mic_band",
            Sensor::Imu => "imu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub channels: Vec<ChannelId>,
    pub imu: bool,
    pub n_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
    pub chunk_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            channels: vec![ChannelId::MicRight, ChannelId::MicBand],
            imu: true,
            n_bands: 32,
            f_min: 16_500.0,
            f_max: 20_000.0,
            sample_rate: 48_000,
            chunk_len: 4096,
        }
    }
}

impl FeatureConfig {
    /// Config restricted to a sensor subset, channel order preserved.
    pub fn with_sensors(&self, sensors: &[Sensor]) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::param("sensor set must not be empty"));
        }
        let keep = |c: ChannelId| match c {
            ChannelId::MicRight => sensors.contains(&Sensor::MicRight),
            ChannelId::MicBand => sensors.contains(&Sensor::MicBand),
            ChannelId::Speaker => false,
        };
        Ok(FeatureConfig {
            channels: self.channels.iter().copied().filter(|&c| keep(c)).collect(),
            imu: self.imu && sensors.contains(&Sensor::Imu),
            ..self.clone()
        })
    }

    pub fn sensors(&self) -> Vec<Sensor> {
        let mut s: Vec<Sensor> = self
            .channels
            .iter()
            .filter_map(|c| match c {
                ChannelId::MicRight => Some(Sensor::MicRight),
                ChannelId::MicBand => Some(Sensor::MicBand),
                ChannelId::Speaker => None,
            })
            .collect();
        if self.imu {
            s.push(Sensor::Imu);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() && !self.imu {
            return Err(Error::param("feature config selects no sensors"));
        }
        let mut seen = self.channels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.channels.len() {
            return Err(Error::param("duplicate channel in feature config"));
        }
        if self.n_bands == 0 {
            return Err(Error::param("n_bands must be >= 1"));
        }
        if self.chunk_len < 2 || self.sample_rate == 0 {
            return Err(Error::param("invalid chunk length or sample rate"));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::param("band range must satisfy 0 <= f_min < f_max <= Nyquist"));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        let c = self.channels.len();
        c * CHUNKS_PER_WINDOW + c * CHUNKS_PER_WINDOW * self.n_bands + if self.imu { IMU_FEATURES } else { 0 }
    }

    pub fn layout(&self) -> FeatureLayout {
        let mut names = Vec::with_capacity(self.dimension());
        let mut spans = Vec::new();
        for ch in &self.channels {
            let start = names.len();
            for k in 0..CHUNKS_PER_WINDOW {
                names.push(format!("energy.{}.c{k}", ch.name()));
            }
            spans.push(Span { name: format!("energy.{}", ch.name()), start, len: CHUNKS_PER_WINDOW });
        }
        for ch in &self.channels {
            let start = names.len();
            for k in 0..CHUNKS_PER_WINDOW {
                for b in 0..self.n_bands {
                    names.push(format!("band.{}.c{k}.b{b:02}", ch.name()));
                }
            }
            spans.push(Span {
                name: format!("bands.{}", ch.name()),
                start,
                len: CHUNKS_PER_WINDOW * self.n_bands,
            });
        }
        if self.imu {
            for series in IMU_SERIES {
                let start = names.len();
                for stat in IMU_STATS {
                    names.push(format!("imu.{series}.{stat}"));
                }
                spans.push(Span { name: format!("imu.{series}"), start, len: IMU_STATS.len() });
            }
        }
        FeatureLayout { names, spans }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub spans: Vec<Span>,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn span(&self, name: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.name == name)
    }

    /// Column indices in `self` of every feature named in `sub`.
    pub fn select(&self, sub: &FeatureLayout) -> Result<Vec<usize>> {
        sub.names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::Feature(format!("feature '{n}' missing from source layout")))
            })
            .collect()
    }
}

/// Per channel per chunk: short-term energy, then the band log-energies.
/// Returns `(energies, bands)` in layout order.
pub fn audio_features(window: &Window<'_>, config: &FeatureConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut energies = Vec::with_capacity(config.channels.len() * CHUNKS_PER_WINDOW);
    let mut bands = Vec::with_capacity(config.channels.len() * CHUNKS_PER_WINDOW * config.n_bands);
    for &ch in &config.channels {
        let samples = window
            .channel(ch)
            .ok_or_else(|| Error::Feature(format!("window has no {} channel", ch.name())))?;
        if samples.len() != CHUNKS_PER_WINDOW * config.chunk_len {
            return Err(Error::Feature(format!(
                "{} payload has {} samples, expected {}",
                ch.name(),
                samples.len(),
                CHUNKS_PER_WINDOW * config.chunk_len
            )));
        }
        for chunk in samples.chunks_exact(config.chunk_len) {
            energies.push(short_term_energy(chunk)?);
            let sp = spectrum(chunk, config.sample_rate, None)?;
            bands.extend(band_features(&sp, config.f_min, config.f_max, config.n_bands)?);
        }
    }
    Ok((energies, bands))
}

/// Population moments with Fisher (excess) kurtosis. Zero-variance series
/// get skewness and kurtosis 0.
pub fn moments(xs: &[f64]) -> Result<[f64; 5]> {
    if xs.len() < 4 {
        return Err(Error::Feature(format!("need >= 4 samples for moments (got {})", xs.len())));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m2 <= (1e-12 * scale.max(1e-300)).powi(2) {
        return Ok([0.0, 0.0, mean, 0.0, max]);
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    Ok([kurt, skew, mean, m2, max])
}

pub fn imu_features(window: &Window<'_>) -> Result<Vec<f64>> {
    let mag = magnitude(window.accel[0], window.accel[1], window.accel[2]);
    let mut out = Vec::with_capacity(IMU_FEATURES);
    out.extend(moments(&mag)?);
    for series in window.euler {
        out.extend(moments(series)?);
    }
    Ok(out)
}

/// Full feature vector of `window` in `config.layout()` order.
pub fn assemble(window: &Window<'_>, config: &FeatureConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(config.dimension());
    if !config.channels.is_empty() {
        let (e, b) = audio_features(window, config)?;
        out.extend(e);
        out.extend(b);
    }
    if config.imu {
        out.extend(imu_features(window)?);
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Feature(format!("non-finite value at feature {i}")));
    }
    debug_assert_eq!(out.len(), config.dimension());
    Ok(out)
}

/// Write a feature matrix as CSV: one row per window, a `label` column
/// first, then one column per feature.
pub fn write_csv<W: Write>(mut w: W, layout: &FeatureLayout, rows: &[Vec<f64>], labels: &[String]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::param("row and label counts differ"));
    }
    write!(w, "label")?;
    for n in &layout.names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (row, label) in rows.iter().zip(labels) {
        if row.len() != layout.len() {
            return Err(Error::param("row length does not match layout"));
        }
        write!(w, "{label}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{AudioChannel, AudioStream};
    use crate::stream::{align, ImuStream};
    use proptest::prelude::*;

    fn pair(fill: f64, imu_fill: f64) -> (AudioStream, ImuStream) {
        let n = 14_400;
        let a = AudioStream::new(
            48_000,
            vec![
                AudioChannel { id: ChannelId::MicRight, samples: vec![fill; n] },
                AudioChannel { id: ChannelId::MicBand, samples: vec![fill; n] },
            ],
            0.0,
        )
        .unwrap();
        let m = 61;
        let imu = ImuStream::new(
            200.0,
            0.0,
            [vec![0.0; m], vec![0.0; m], vec![imu_fill; m]],
            [vec![1.0; m], vec![2.0; m], vec![3.0; m]],
        )
        .unwrap();
        (a, imu)
    }

    #[test]
    fn dimensions() {
        let c = FeatureConfig::default();
        assert_eq!(c.dimension(), 218);
        assert_eq!(c.layout().len(), 218);
        let single = c.with_sensors(&[Sensor::MicRight, Sensor::Imu]).unwrap();
        assert_eq!(single.dimension(), 119);
        assert_eq!(c.with_sensors(&[Sensor::Imu]).unwrap().dimension(), 20);
        assert!(c.with_sensors(&[]).is_err());
    }

    #[test]
    fn zero_audio_and_constant_imu() {
        let (a, i) = pair(0.0, 1.0);
        let al = align(&a, &i, 4096).unwrap();
        let w = al.segment().next().unwrap();
        let c = FeatureConfig::default();
        let v = assemble(&w, &c).unwrap();
        assert!(v[..198].iter().all(|x| *x == 0.0));
        let imu = &v[198..];
        // accel_mag: kurtosis, skewness, mean, variance, max
        assert_eq!(&imu[..5], &[0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&imu[15..], &[0.0, 0.0, 3.0, 0.0, 3.0]);
        assert_eq!(assemble(&w, &c).unwrap(), v);
    }

    #[test]
    fn symmetric_series_has_zero_skew() {
        let xs: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.1).collect();
        let m = moments(&xs).unwrap();
        assert!(m[1].abs() <= 1e-9);
        assert!(moments(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn moments_match_known_values() {
        // Uniform discrete {1..5}: excess kurtosis -1.3, variance 2.
        let m = moments(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((m[0] + 1.3).abs() < 1e-12);
        assert!((m[3] - 2.0).abs() < 1e-12);
        assert_eq!(m[4], 5.0);
    }

    #[test]
    fn channel_ablation_keeps_values() {
        let (a, i) = pair(0.3, 1.0);
        let al = align(&a, &i, 4096).unwrap();
        let w = al.segment().next().unwrap();
        let full = FeatureConfig::default();
        let sub = full.with_sensors(&[Sensor::MicBand, Sensor::Imu]).unwrap();
        let fv = assemble(&w, &full).unwrap();
        let sv = assemble(&w, &sub).unwrap();
        let idx = full.layout().select(&sub.layout()).unwrap();
        let picked: Vec<f64> = idx.iter().map(|&k| fv[k]).collect();
        assert_eq!(picked, sv);
    }

    #[test]
    fn layout_is_data_independent() {
        let c = FeatureConfig::default();
        let l = c.layout();
        assert_eq!(l.span("energy.mic_band").unwrap().start, 3);
        assert_eq!(l.span("bands.mic_right").unwrap().start, 6);
        assert_eq!(l.span("imu.accel_mag").unwrap().start, 198);
        assert_eq!(l.names[217], "imu.yaw.max");
    }

    #[test]
    fn csv_export() {
        let c = FeatureConfig { channels: vec![], ..FeatureConfig::default() };
        let l = c.layout();
        let mut buf = Vec::new();
        write_csv(&mut buf, &l, &[vec![0.5; 20]], &["Normal".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,imu.accel_mag.kurtosis"));
        assert_eq!(text.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn features_always_finite(xs in prop::collection::vec(-1.0f64..1.0, 64), g in prop::collection::vec(0.5f64..2.0, 61)) {
            let n = 14_400;
            let samples: Vec<f64> = (0..n).map(|i| xs[i % 64]).collect();
            let a = AudioStream::new(48_000, vec![
                AudioChannel { id: ChannelId::MicRight, samples: samples.clone() },
                AudioChannel { id: ChannelId::MicBand, samples },
            ], 0.0).unwrap();
            let i = ImuStream::new(200.0, 0.0, [g.clone(), vec![0.0; 61], vec![0.0; 61]], [g.clone(), g.clone(), g]).unwrap();
            let al = align(&a, &i, 4096).unwrap();
            let w = al.segment().next().unwrap();
            let v = assemble(&w, &FeatureConfig::default()).unwrap();
            prop_assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
