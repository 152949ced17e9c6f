//! DSP core: up/down chirp synthesis, linear-phase FIR filtering, energy,
//! per-chunk spectra, band aggregation and the STFT.
//!
//! Spectra are one-sided and scaled so that the sum of squared magnitudes
//! equals the time-domain energy of the (windowed) input. Band energies and
//! short-term energies are therefore on the same scale.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    /// Microphone on the right side of the case.
    MicRight,
    /// Microphone below the screen, towards the band.
    MicBand,
    /// The emitted speaker signal.
    Speaker,
}

impl ChannelId {
    pub fn name(self) -> &'static str {
        match self {
            ChannelId::MicRight => "mic_right",
            ChannelId::MicBand => "mic_band",
            ChannelId::Speaker => "speaker",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mic_right" => Ok(ChannelId::MicRight),
            "mic_band" => Ok(ChannelId::MicBand),
            "speaker" => Ok(ChannelId::Speaker),
            other => Err(Error::param(format!("unknown channel '{other}'"))),
        }
    }
}

/// Emitted up/down chirp. One chunk sweeps `f_low -> f_high` over its first
/// half and back down over its second half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpSpec {
    pub f_low: f64,
    pub f_high: f64,
    pub sample_rate: u32,
    pub chunk_len: usize,
    pub amplitude: f64,
}

impl Default for ChirpSpec {
    fn default() -> Self {
        ChirpSpec {
            f_low: 16_500.0,
            f_high: 20_000.0,
            sample_rate: 48_000,
            chunk_len: 4096,
            amplitude: 1.0,
        }
    }
}

impl ChirpSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high < nyquist) {
            return Err(Error::param(format!(
                "chirp band must satisfy 0 < f_low < f_high < {nyquist} Hz (got {}..{})",
                self.f_low, self.f_high
            )));
        }
        if self.chunk_len < 2 || !self.chunk_len.is_multiple_of(2) {
            return Err(Error::param(format!(
                "chunk_len must be even and >= 2 (got {})",
                self.chunk_len
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::param(format!(
                "amplitude must lie in (0, 1] (got {})",
                self.amplitude
            )));
        }
        Ok(())
    }

    pub fn chunk_duration_ms(&self) -> f64 {
        self.chunk_len as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn chunks_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.chunk_len as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.chunk_len as f64
    }

    /// Instantaneous frequency (Hz) of sample `n` of the emitted stream.
    pub fn instantaneous_frequency(&self, n: usize) -> f64 {
        let half = self.chunk_len / 2;
        let k = n % self.chunk_len;
        let span = self.f_high - self.f_low;
        if k < half {
            self.f_low + span * k as f64 / half as f64
        } else {
            self.f_high - span * (k - half) as f64 / half as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioChannel {
    pub id: ChannelId,
    pub samples: Vec<f64>,
}

/// Multi-channel audio with a common time base. `start_time_ms` is the
/// stream time of sample 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioStream {
    pub sample_rate: u32,
    pub channels: Vec<AudioChannel>,
    pub start_time_ms: f64,
}

impl AudioStream {
    pub fn new(sample_rate: u32, channels: Vec<AudioChannel>, start_time_ms: f64) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        if let Some(first) = channels.first() {
            let n = first.samples.len();
            if channels.iter().any(|c| c.samples.len() != n) {
                return Err(Error::param("all channels must have equal length"));
            }
        }
        for c in &channels {
            if let Some(bad) = c.samples.iter().find(|x| !(x.abs() <= 1.0)) {
                return Err(Error::param(format!(
                    "sample {bad} on channel {} outside [-1, 1]",
                    c.id.name()
                )));
            }
        }
        Ok(AudioStream {
            sample_rate,
            channels,
            start_time_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_ms(&self) -> f64 {
        self.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn channel(&self, id: ChannelId) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.samples.as_slice())
    }

    pub fn channel_ids(&self) -> Vec<ChannelId> {
        self.channels.iter().map(|c| c.id).collect()
    }
}

/// Emit `n_chunks` chunks of the up/down chirp on a single `Speaker` channel.
///
/// Phase is accumulated over the whole stream, so it is continuous both at
/// the up/down turn and across chunk boundaries.
pub fn make_chirp(spec: &ChirpSpec, n_chunks: usize) -> Result<AudioStream> {
    spec.validate()?;
    if n_chunks == 0 {
        return Err(Error::param("n_chunks must be >= 1"));
    }
    let samples = chirp_samples(spec, n_chunks * spec.chunk_len);
    AudioStream::new(
        spec.sample_rate,
        vec![AudioChannel {
            id: ChannelId::Speaker,
            samples,
        }],
        0.0,
    )
}

/// Raw chirp samples; `spec` must already be valid.
pub(crate) fn chirp_samples(spec: &ChirpSpec, len: usize) -> Vec<f64> {
    let step = 2.0 * PI / spec.sample_rate as f64;
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        out.push(spec.amplitude * phase.sin());
        phase += step * spec.instantaneous_frequency(n);
        if phase >= 2.0 * PI {
            phase -= 2.0 * PI;
        }
    }
    out
}

pub fn short_term_energy(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("short-term energy of an empty sequence"));
    }
    Ok(samples.iter().map(|x| x * x).sum())
}

// ---------------------------------------------------------------------------
// FIR filtering
// ---------------------------------------------------------------------------

/// Symmetric (linear-phase, type I) FIR filter applied in "same" mode, i.e.
/// with its group delay removed so output sample `n` lines up with input
/// sample `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
}

const FIR_ATTENUATION_DB: f64 = 60.0;

impl FirFilter {
    /// Kaiser-window high-pass: stopband edge at 0.8·cutoff, passband edge
    /// at 0.97·cutoff, 60 dB design attenuation.
    pub fn highpass(cutoff: f64, sample_rate: u32) -> Result<Self> {
        let fs = sample_rate as f64;
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::param(format!(
                "cutoff {cutoff} Hz outside (0, {}) Hz",
                fs / 2.0
            )));
        }
        let stop = 0.80 * cutoff;
        let pass = 0.97 * cutoff;
        let lp = kaiser_lowpass((stop + pass) / 2.0, pass - stop, fs);
        let mid = lp.len() / 2;
        let taps = lp
            .iter()
            .enumerate()
            .map(|(i, h)| if i == mid { 1.0 - h } else { -h })
            .collect();
        Ok(FirFilter { taps })
    }

    /// Kaiser-window low-pass with passband edge `pass_edge` and stopband
    /// edge `stop_edge` (Hz).
    pub fn lowpass(pass_edge: f64, stop_edge: f64, sample_rate: u32) -> Result<Self> {
        let fs = sample_rate as f64;
        if !(pass_edge > 0.0 && pass_edge < stop_edge && stop_edge < fs / 2.0) {
            return Err(Error::param(format!(
                "low-pass edges must satisfy 0 < pass < stop < {} Hz",
                fs / 2.0
            )));
        }
        Ok(FirFilter {
            taps: kaiser_lowpass((pass_edge + stop_edge) / 2.0, stop_edge - pass_edge, fs),
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n_taps = self.taps.len();
        let half = n_taps / 2;
        let len = x.len();
        let mut y = vec![0.0; len];
        for (n, out) in y.iter_mut().enumerate() {
            // y[n] = sum_k h[k] x[n + half - k]; taps are symmetric so the
            // interior reduces to a dot product over x[n-half ..= n+half].
            if n >= half && n + half < len {
                let seg = &x[n - half..n + half + 1];
                *out = seg.iter().zip(&self.taps).map(|(a, b)| a * b).sum();
            } else {
                let mut acc = 0.0;
                for (k, h) in self.taps.iter().enumerate() {
                    let idx = n as isize + half as isize - k as isize;
                    if idx >= 0 && (idx as usize) < len {
                        acc += h * x[idx as usize];
                    }
                }
                *out = acc;
            }
        }
        y
    }
}

fn kaiser_lowpass(cutoff: f64, transition: f64, fs: f64) -> Vec<f64> {
    let a = FIR_ATTENUATION_DB;
    let beta = if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    };
    let dw = 2.0 * PI * transition / fs;
    let order = ((a - 8.0) / (2.285 * dw)).ceil() as usize;
    let order = order + order % 2; // odd tap count
    let n_taps = order + 1;
    let mid = order as f64 / 2.0;
    let wc = cutoff / fs; // cycles per sample
    let i0_beta = bessel_i0(beta);
    (0..n_taps)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * wc
            } else {
                (2.0 * PI * wc * t).sin() / (PI * t)
            };
            let r = t / mid;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            sinc * w
        })
        .collect()
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// High-pass every channel of `stream`.
pub fn highpass(stream: &AudioStream, cutoff: f64) -> Result<AudioStream> {
    let filter = FirFilter::highpass(cutoff, stream.sample_rate)?;
    let channels = stream
        .channels
        .iter()
        .map(|c| AudioChannel {
            id: c.id,
            samples: filter.apply(&c.samples).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        })
        .collect();
    Ok(AudioStream {
        sample_rate: stream.sample_rate,
        channels,
        start_time_ms: stream.start_time_ms,
    })
}

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

/// One-sided magnitude spectrum. `magnitudes[k]` is at `k * bin_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_hz: f64,
    pub magnitudes: Vec<f64>,
    pub source_len: usize,
}

impl Spectrum {
    pub fn argmax_bin(&self) -> usize {
        self.magnitudes
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &m)| if m > best.1 { (i, m) } else { best })
            .0
    }

    /// Sum of squared magnitudes over bins whose centre lies in `[lo, hi]` Hz.
    pub fn band_energy(&self, lo: f64, hi: f64) -> f64 {
        self.magnitudes
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 * self.bin_hz;
                f >= lo && f <= hi
            })
            .map(|(_, m)| m * m)
            .sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum()
    }
}

type PlanCache = (FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>);

thread_local! {
    static FFT_PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn fft_plan(len: usize) -> Arc<dyn Fft<f64>> {
    FFT_PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry(len)
            .or_insert_with(|| planner.plan_fft_forward(len))
            .clone()
    })
}

/// Energy-normalised one-sided spectrum of `samples` (optionally windowed).
pub fn spectrum(samples: &[f64], sample_rate: u32, window: Option<&[f64]>) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::param("spectrum needs at least 2 samples"));
    }
    if let Some(w) = window {
        if w.len() != n {
            return Err(Error::param("window length differs from frame length"));
        }
    }
    let mut buf: Vec<Complex<f64>> = match window {
        Some(w) => samples
            .iter()
            .zip(w)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect(),
        None => samples.iter().map(|&x| Complex::new(x, 0.0)).collect(),
    };
    fft_plan(n).process(&mut buf);
    let n_out = n / 2 + 1;
    let inv_n = 1.0 / n as f64;
    let magnitudes = (0..n_out)
        .map(|k| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            let scale = if edge { inv_n } else { 2.0 * inv_n };
            (buf[k].norm_sqr() * scale).sqrt()
        })
        .collect();
    Ok(Spectrum {
        bin_hz: sample_rate as f64 / n as f64,
        magnitudes,
        source_len: n,
    })
}

/// Spectrum of one full chunk (no window), as used for per-chunk features.
pub fn chunk_spectrum(chunk: &[f64], spec: &ChirpSpec) -> Result<Spectrum> {
    if chunk.len() != spec.chunk_len {
        return Err(Error::param(format!(
            "chunk has {} samples, expected {}",
            chunk.len(),
            spec.chunk_len
        )));
    }
    spectrum(chunk, spec.sample_rate, None)
}

/// `n_bands` equal-width bands over `[f_min, f_max]`, each `ln(1 + E)` of
/// the spectral energy of the bins that fall inside it.
pub fn band_features(spec: &Spectrum, f_min: f64, f_max: f64, n_bands: usize) -> Result<Vec<f64>> {
    let nyquist = spec.bin_hz * (spec.source_len as f64) / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist + 1e-9) {
        return Err(Error::param(format!(
            "band range {f_min}..{f_max} Hz invalid for Nyquist {nyquist} Hz"
        )));
    }
    if n_bands == 0 {
        return Err(Error::param("n_bands must be >= 1"));
    }
    let ranges = band_bin_ranges(spec.bin_hz, spec.magnitudes.len(), f_min, f_max, n_bands)?;
    Ok(ranges
        .into_iter()
        .map(|(lo, hi)| {
            let e: f64 = spec.magnitudes[lo..hi].iter().map(|m| m * m).sum();
            e.ln_1p()
        })
        .collect())
}

/// Bin index range `[lo, hi)` for each band. Bin `k` (at `k·bin_hz`) is in
/// band `b` when `f_min + b·w <= f_k < f_min + (b+1)·w`; the last band also
/// includes `f_max`.
pub(crate) fn band_bin_ranges(
    bin_hz: f64,
    n_bins: usize,
    f_min: f64,
    f_max: f64,
    n_bands: usize,
) -> Result<Vec<(usize, usize)>> {
    let width = (f_max - f_min) / n_bands as f64;
    let first_bin = |f: f64| ((f / bin_hz) - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let lo_f = f_min + b as f64 * width;
        let lo = first_bin(lo_f).min(n_bins);
        let hi = if b + 1 == n_bands {
            ((f_max / bin_hz + 1e-9).floor() as usize + 1).min(n_bins)
        } else {
            first_bin(f_min + (b + 1) as f64 * width).min(n_bins)
        };
        if hi <= lo {
            return Err(Error::param(format!(
                "band {b} ({lo_f:.1} Hz, width {width:.1} Hz) contains no bins at {bin_hz:.3} Hz resolution"
            )));
        }
        out.push((lo, hi));
    }
    Ok(out)
}

pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Hann-windowed short-time Fourier transform.
pub fn stft(samples: &[f64], sample_rate: u32, window_len: usize, hop: usize) -> Result<Vec<Spectrum>> {
    if hop == 0 {
        return Err(Error::param("hop must be >= 1"));
    }
    if window_len < 2 || window_len > samples.len() {
        return Err(Error::param(format!(
            "window length {window_len} invalid for a stream of {} samples",
            samples.len()
        )));
    }
    let window = hann(window_len);
    let frames = (samples.len() - window_len) / hop + 1;
    (0..frames)
        .map(|i| spectrum(&samples[i * hop..i * hop + window_len], sample_rate, Some(&window)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, len: usize, fs: f64) -> Vec<f64> {
        (0..len)
            .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / fs).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Naive O(N^2) DFT, energy-normalised like `spectrum`.
    fn dft_energy_in_band(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mut e = 0.0;
        for k in 0..=n / 2 {
            let f = k as f64 * fs / n as f64;
            if f < lo || f > hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * j % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let scale = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            e += scale * (re * re + im * im) / n as f64;
        }
        e
    }

    #[test]
    fn chirp_frequency_endpoints() {
        let spec = ChirpSpec::default();
        assert_eq!(spec.instantaneous_frequency(0), 16_500.0);
        assert_eq!(spec.instantaneous_frequency(2048), 20_000.0);
        assert_eq!(spec.instantaneous_frequency(4096), 16_500.0);
        assert!((spec.chunk_duration_ms() - 85.333).abs() < 1e-3);
        assert!((spec.chunks_per_second() - 11.72).abs() < 0.005);
    }

    #[test]
    fn chirp_length_and_determinism() {
        let spec = ChirpSpec::default();
        let a = make_chirp(&spec, 3).unwrap();
        let b = make_chirp(&spec, 3).unwrap();
        assert_eq!(a.len(), 3 * 4096);
        assert_eq!(a, b);
    }

    #[test]
    fn chirp_phase_is_continuous() {
        // Sample-to-sample differences never exceed what the highest
        // instantaneous frequency allows.
        let spec = ChirpSpec::default();
        let s = make_chirp(&spec, 3).unwrap();
        let x = &s.channels[0].samples;
        let max_step = 2.0 * PI * spec.f_high / spec.sample_rate as f64 * 1.001;
        for w in x.windows(2) {
            assert!((w[1] - w[0]).abs() <= max_step);
        }
    }

    #[test]
    fn invalid_chirp_specs() {
        let bad = [
            ChirpSpec { f_low: 21_000.0, ..ChirpSpec::default() },
            ChirpSpec { f_high: 25_000.0, ..ChirpSpec::default() },
            ChirpSpec { chunk_len: 4095, ..ChirpSpec::default() },
            ChirpSpec { amplitude: 0.0, ..ChirpSpec::default() },
            ChirpSpec { amplitude: 1.5, ..ChirpSpec::default() },
        ];
        for spec in bad {
            assert!(matches!(make_chirp(&spec, 1), Err(Error::Parameter(_))));
        }
        assert!(make_chirp(&ChirpSpec::default(), 0).is_err());
    }

    #[test]
    fn chirp_chunk_energy_matches_summed_sine_squares() {
        let spec = ChirpSpec::default();
        let s = make_chirp(&spec, 1).unwrap();
        let e = short_term_energy(&s.channels[0].samples).unwrap();
        assert!((e - 2048.0).abs() / 2048.0 < 0.02, "energy {e}");
    }

    #[test]
    fn energy_edge_cases() {
        assert_eq!(short_term_energy(&[0.0; 4096]).unwrap(), 0.0);
        assert!(short_term_energy(&[]).is_err());
    }

    #[test]
    fn highpass_stop_and_pass_tones() {
        let fs = 48_000.0;
        let low = tone(8_000.0, 48_000, fs);
        let high = tone(18_000.0, 48_000, fs);
        let f = FirFilter::highpass(16_500.0, 48_000).unwrap();
        // Ignore filter edges.
        let trim = |v: Vec<f64>| v[1000..47_000].to_vec();
        let lo_out = trim(f.apply(&low));
        let hi_out = trim(f.apply(&high));
        assert!(rms(&lo_out) <= 0.01 * rms(&low[1000..47_000]));
        let ratio = rms(&hi_out) / rms(&high[1000..47_000]);
        assert!((ratio - 1.0).abs() <= 0.12, "passband ratio {ratio}");
    }

    #[test]
    fn highpass_frequency_response_contract() {
        // Evaluate H(f) directly from the taps.
        let cutoff = 16_500.0;
        let f = FirFilter::highpass(cutoff, 48_000).unwrap();
        let resp = |freq: f64| {
            let w = 2.0 * PI * freq / 48_000.0;
            let (re, im) = f.taps().iter().enumerate().fold((0.0, 0.0), |(re, im), (k, h)| {
                (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin())
            });
            (re * re + im * im).sqrt()
        };
        assert!(20.0 * resp(cutoff / 2.0).log10() <= -40.0);
        assert!(20.0 * resp(8_000.0).log10() <= -40.0);
        let mut freq = 1.05 * cutoff;
        while freq < 23_900.0 {
            assert!((20.0 * resp(freq).log10()).abs() <= 1.0, "ripple at {freq}");
            freq += 50.0;
        }
    }

    #[test]
    fn highpass_rejects_bad_cutoff() {
        let s = make_chirp(&ChirpSpec::default(), 1).unwrap();
        assert!(highpass(&s, 0.0).is_err());
        assert!(highpass(&s, 24_000.0).is_err());
        assert_eq!(highpass(&s, 16_500.0).unwrap().len(), s.len());
    }

    #[test]
    fn highpass_keeps_chirp_band_energy() {
        let spec = ChirpSpec::default();
        let s = make_chirp(&spec, 3).unwrap();
        let out = highpass(&s, 16_500.0).unwrap();
        // Middle chunk avoids filter edge effects; naive DFT as oracle.
        let mid_in = &s.channels[0].samples[4096..8192];
        let mid_out = &out.channels[0].samples[4096..8192];
        let before = dft_energy_in_band(mid_in, 48_000.0, 16_400.0, 20_100.0);
        let after = dft_energy_in_band(mid_out, 48_000.0, 16_400.0, 20_100.0);
        assert!(after >= 0.95 * before, "retained {}", after / before);
    }

    #[test]
    fn tone_peak_bin() {
        let spec = ChirpSpec::default();
        let x = tone(18_000.0, 4096, 48_000.0);
        let sp = chunk_spectrum(&x, &spec).unwrap();
        assert_eq!(sp.argmax_bin(), 1536);
        assert_eq!(sp.magnitudes.len(), 2049);
        assert!((sp.bin_hz - 11.71875).abs() < 1e-12);
        let zero = chunk_spectrum(&[0.0; 4096], &spec).unwrap();
        assert!(zero.magnitudes.iter().all(|m| *m == 0.0));
        assert!(chunk_spectrum(&[0.0; 100], &spec).is_err());
    }

    #[test]
    fn chirp_spectral_occupancy() {
        let spec = ChirpSpec::default();
        let s = make_chirp(&spec, 2).unwrap();
        let chunk = &s.channels[0].samples[4096..8192];
        let in_band = dft_energy_in_band(chunk, 48_000.0, 16_400.0, 20_100.0);
        let total = short_term_energy(chunk).unwrap();
        assert!(in_band / total >= 0.99, "occupancy {}", in_band / total);
        let sp = chunk_spectrum(chunk, &spec).unwrap();
        assert!(sp.band_energy(16_400.0, 20_100.0) / sp.total_energy() >= 0.99);
    }

    #[test]
    fn band_features_cases() {
        let spec = ChirpSpec::default();
        let zero = chunk_spectrum(&[0.0; 4096], &spec).unwrap();
        assert_eq!(band_features(&zero, 16_500.0, 20_000.0, 32).unwrap(), vec![0.0; 32]);

        let mut one_bin = zero.clone();
        one_bin.magnitudes[1500] = 3.0;
        let b = band_features(&one_bin, 16_500.0, 20_000.0, 32).unwrap();
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 1);

        let s = make_chirp(&spec, 1).unwrap();
        let sp = chunk_spectrum(&s.channels[0].samples, &spec).unwrap();
        let b = band_features(&sp, 16_500.0, 20_000.0, 32).unwrap();
        assert!(b.iter().all(|v| *v > 0.0));

        assert!(band_features(&sp, 16_500.0, 16_510.0, 4).is_err());
        assert!(band_features(&sp, 16_500.0, 30_000.0, 4).is_err());
        assert!(band_features(&sp, 16_500.0, 20_000.0, 0).is_err());
    }

    #[test]
    fn bands_partition_the_range() {
        let r = band_bin_ranges(11.71875, 2049, 16_500.0, 20_000.0, 32).unwrap();
        for w in r.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(r[0].0, (16_500.0f64 / 11.71875).ceil() as usize);
        assert_eq!(r[31].1, (20_000.0f64 / 11.71875).floor() as usize + 1);
    }

    #[test]
    fn stft_counts_and_ridge() {
        let spec = ChirpSpec::default();
        let s = make_chirp(&spec, 1).unwrap();
        let x = &s.channels[0].samples;
        assert_eq!(stft(x, 48_000, 2048, 2048).unwrap().len(), 2);
        assert!(stft(x, 48_000, 8192, 1).is_err());
        assert!(stft(x, 48_000, 2048, 0).is_err());

        let frames = stft(x, 48_000, 2048, 256).unwrap();
        let ridge: Vec<usize> = frames.iter().map(|f| f.argmax_bin()).collect();
        // Frames centred in the first half rise, frames in the second half fall.
        let peak = ridge.iter().enumerate().max_by_key(|(_, v)| **v).unwrap().0;
        assert!(ridge[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(ridge[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert!(ridge[0] < ridge[peak] && ridge[ridge.len() - 1] < ridge[peak]);

        let zeros = stft(&[0.0; 4096], 48_000, 1024, 512).unwrap();
        assert!(zeros.iter().all(|f| f.magnitudes.iter().all(|m| *m == 0.0)));
    }

    proptest! {
        #[test]
        fn energy_is_quadratic(xs in prop::collection::vec(-1.0f64..1.0, 1..256), alpha in -4.0f64..4.0) {
            let e = short_term_energy(&xs).unwrap();
            prop_assert!(e >= 0.0);
            let scaled: Vec<f64> = xs.iter().map(|x| alpha * x).collect();
            let es = short_term_energy(&scaled).unwrap();
            prop_assert!((es - alpha * alpha * e).abs() <= 1e-9 * (alpha * alpha * e).max(1e-300));
        }

        #[test]
        fn parseval_holds(xs in prop::collection::vec(-1.0f64..1.0, 4096)) {
            let sp = chunk_spectrum(&xs, &ChirpSpec::default()).unwrap();
            let t = short_term_energy(&xs).unwrap();
            prop_assert!((sp.total_energy() - t).abs() <= 1e-3 * t);
        }

        #[test]
        fn stft_frame_count(len in 2usize..3000, win in 2usize..600, hop in 1usize..300) {
            prop_assume!(win <= len);
            let x = vec![0.1; len];
            prop_assert_eq!(stft(&x, 48_000, win, hop).unwrap().len(), (len - win) / hop + 1);
        }
    }

    #[test]
    fn highpass_is_idempotent_on_filtered_content() {
        let fs = 48_000.0;
        let x: Vec<f64> = (0..24_000)
            .map(|n| {
                let t = n as f64 / fs;
                0.3 * (2.0 * PI * 5_000.0 * t).sin() + 0.3 * (2.0 * PI * 18_000.0 * t).sin()
            })
            .collect();
        let f = FirFilter::highpass(16_500.0, 48_000).unwrap();
        let once = f.apply(&x);
        let twice = f.apply(&once);
        let below = |v: &[f64]| dft_energy_in_band(&v[8192..12288], fs, 0.0, 16_500.0);
        let (b1, b2) = (below(&once), below(&twice));
        assert!((b2 - b1).abs() <= 0.05 * b1.max(1e-12) || b2 <= b1, "{b1} vs {b2}");
    }
}
