//! Audio/IMU alignment, sliding-window segmentation and acceleration-peak
//! detection.
//!
//! Windows are 300 ms long with a 150 ms step on the IMU time base. The IMU
//! slice covers the full window (both ends inclusive, 61 samples at 200 Hz).
//! The audio payload is the block of three complete chunks, on the chunk grid
//! that starts at the aligned audio origin, whose centre is closest to the
//! window centre.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AudioStream, ChannelId};

pub const WINDOW_MS: f64 = 300.0;
pub const STEP_MS: f64 = 150.0;
pub const CHUNKS_PER_WINDOW: usize = 3;
pub const MAX_SKEW_MS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuStream {
    /// Sample rate in Hz.
    pub rate: f64,
    /// Time of sample 0 in ms.
    pub t0_ms: f64,
    /// x, y, z acceleration in g.
    pub accel: [Vec<f64>; 3],
    /// Roll, pitch, yaw in degrees.
    pub euler: [Vec<f64>; 3],
}

impl ImuStream {
    pub fn new(rate: f64, t0_ms: f64, accel: [Vec<f64>; 3], euler: [Vec<f64>; 3]) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::param(format!("IMU rate must be positive (got {rate})")));
        }
        let n = accel[0].len();
        if accel.iter().chain(euler.iter()).any(|s| s.len() != n) {
            return Err(Error::param("IMU series must have equal length"));
        }
        if accel.iter().chain(euler.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("IMU series contain non-finite values"));
        }
        Ok(ImuStream {
            rate,
            t0_ms,
            accel,
            euler,
        })
    }

    pub fn len(&self) -> usize {
        self.accel[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.rate
    }

    pub fn time_of(&self, i: usize) -> f64 {
        self.t0_ms + i as f64 * self.period_ms()
    }

    /// Time just past the last sample.
    pub fn end_ms(&self) -> f64 {
        self.time_of(self.len())
    }

    pub fn accel_magnitude(&self) -> Vec<f64> {
        magnitude(&self.accel[0], &self.accel[1], &self.accel[2])
    }
}

pub(crate) fn magnitude(x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect()
}

/// An audio/IMU pair restricted to their common time range. Borrowed, not
/// copied.
#[derive(Debug, Clone, Copy)]
pub struct Aligned<'a> {
    pub audio: &'a AudioStream,
    pub imu: &'a ImuStream,
    /// First audio sample of the aligned range.
    pub audio_offset: usize,
    pub audio_len: usize,
    /// First IMU sample of the aligned range.
    pub imu_offset: usize,
    pub imu_len: usize,
    /// Aligned origin on the IMU clock (ms).
    pub start_ms: f64,
    /// Audio time of `audio_offset` minus `start_ms`.
    pub skew_ms: f64,
    pub chunk_len: usize,
}

pub fn align<'a>(audio: &'a AudioStream, imu: &'a ImuStream, chunk_len: usize) -> Result<Aligned<'a>> {
    if audio.is_empty() || imu.is_empty() {
        return Err(Error::Alignment("empty stream".into()));
    }
    if chunk_len == 0 {
        return Err(Error::param("chunk_len must be >= 1"));
    }
    let fs = audio.sample_rate as f64;
    let audio_end = audio.start_time_ms + audio.duration_ms();
    let start = audio.start_time_ms.max(imu.t0_ms);
    let end = audio_end.min(imu.end_ms());
    if end <= start {
        return Err(Error::Alignment(format!(
            "no overlap between audio [{:.1}, {:.1}) ms and IMU [{:.1}, {:.1}) ms",
            audio.start_time_ms,
            audio_end,
            imu.t0_ms,
            imu.end_ms()
        )));
    }
    let imu_offset = (((start - imu.t0_ms) / imu.period_ms()) - 1e-9).ceil().max(0.0) as usize;
    let t_imu = imu.time_of(imu_offset);
    let audio_offset = ((t_imu - audio.start_time_ms) * fs / 1000.0).round().max(0.0) as usize;
    if imu_offset >= imu.len() || audio_offset >= audio.len() {
        return Err(Error::Alignment("overlap shorter than one sample".into()));
    }
    let skew_ms = audio.start_time_ms + audio_offset as f64 * 1000.0 / fs - t_imu;
    if skew_ms.abs() > MAX_SKEW_MS {
        return Err(Error::Alignment(format!(
            "residual skew {skew_ms:.3} ms exceeds {MAX_SKEW_MS} ms"
        )));
    }
    let span_ms = end - t_imu;
    let audio_len = ((span_ms * fs / 1000.0).floor() as usize).min(audio.len() - audio_offset);
    let imu_len = ((span_ms / imu.period_ms()).ceil() as usize).min(imu.len() - imu_offset);
    Ok(Aligned {
        audio,
        imu,
        audio_offset,
        audio_len,
        imu_offset,
        imu_len,
        start_ms: t_imu,
        skew_ms,
        chunk_len,
    })
}

impl<'a> Aligned<'a> {
    fn fs(&self) -> f64 {
        self.audio.sample_rate as f64
    }

    /// Usable length of the pair in ms.
    pub fn duration_ms(&self) -> f64 {
        let audio_ms = self.audio_len as f64 * 1000.0 / self.fs();
        let imu_ms = self.imu_len as f64 * self.imu.period_ms();
        audio_ms.min(imu_ms)
    }

    pub fn window_count(&self) -> usize {
        window_count(self.duration_ms())
    }

    fn n_chunks(&self) -> usize {
        self.audio_len / self.chunk_len
    }

    /// Cut the window starting `rel_start_ms` after the aligned origin.
    /// Returns `None` if it does not fit.
    pub fn window_at(&self, rel_start_ms: f64) -> Option<Window<'a>> {
        let dur = self.duration_ms();
        if rel_start_ms < -1e-9 || rel_start_ms + WINDOW_MS > dur + 1e-9 {
            return None;
        }
        let n_chunks = self.n_chunks();
        if n_chunks < CHUNKS_PER_WINDOW {
            return None;
        }
        let period = self.imu.period_ms();
        let imu_first = (rel_start_ms / period).round() as usize;
        let imu_count = (WINDOW_MS / period).round() as usize + 1;
        let imu_count = imu_count.min(self.imu_len.saturating_sub(imu_first));
        if imu_count < 4 {
            return None;
        }
        let fs = self.fs();
        let center = rel_start_ms + WINDOW_MS / 2.0;
        let center_sample = center * fs / 1000.0;
        let first_chunk = (center_sample / self.chunk_len as f64 - CHUNKS_PER_WINDOW as f64 / 2.0)
            .round()
            .clamp(0.0, (n_chunks - CHUNKS_PER_WINDOW) as f64) as usize;
        let a0 = self.audio_offset + first_chunk * self.chunk_len;
        let a1 = a0 + CHUNKS_PER_WINDOW * self.chunk_len;
        let audio = self
            .audio
            .channels
            .iter()
            .map(|c| (c.id, &c.samples[a0..a1]))
            .collect();
        let i0 = self.imu_offset + imu_first;
        let i1 = i0 + imu_count;
        let audio_window_start = self.skew_ms + (rel_start_ms * fs / 1000.0).round() * 1000.0 / fs;
        let imu_start = imu_first as f64 * period;
        Some(Window {
            start_ms: self.start_ms + rel_start_ms,
            center_ms: self.start_ms + center,
            skew_ms: audio_window_start - imu_start,
            audio,
            audio_start_ms: self.start_ms + self.skew_ms + first_chunk as f64 * self.chunk_len as f64 * 1000.0 / fs,
            imu_start_ms: self.start_ms + imu_start,
            accel: [
                &self.imu.accel[0][i0..i1],
                &self.imu.accel[1][i0..i1],
                &self.imu.accel[2][i0..i1],
            ],
            euler: [
                &self.imu.euler[0][i0..i1],
                &self.imu.euler[1][i0..i1],
                &self.imu.euler[2][i0..i1],
            ],
        })
    }

    /// Sliding 300/150 ms windows over the whole pair.
    pub fn segment(&self) -> Segmenter<'a> {
        let total = self.window_count();
        Segmenter {
            aligned: *self,
            next: 0,
            total,
        }
    }

    /// Accel magnitude over the aligned IMU range.
    pub fn accel_magnitude(&self) -> Vec<f64> {
        let r = self.imu_offset..self.imu_offset + self.imu_len;
        magnitude(
            &self.imu.accel[0][r.clone()],
            &self.imu.accel[1][r.clone()],
            &self.imu.accel[2][r],
        )
    }

    /// Up to three windows around an acceleration peak at absolute time
    /// `peak_ms`: the one centred on the peak and its neighbours one step
    /// before and after.
    pub fn windows_around_peak(&self, peak_ms: f64) -> PeakWindows<'a> {
        let dur = self.duration_ms();
        let rel = peak_ms - self.start_ms;
        if dur < WINDOW_MS || rel < 0.0 || rel > dur {
            return PeakWindows {
                windows: Vec::new(),
                margin_ok: false,
            };
        }
        let period = self.imu.period_ms();
        let ideal = rel - WINDOW_MS / 2.0;
        // Keep window starts on the IMU grid so slices are exact.
        let snap = |t: f64| (t / period).round() * period;
        let center_start = snap(ideal.clamp(0.0, dur - WINDOW_MS)).min(dur - WINDOW_MS).max(0.0);
        let mut windows = Vec::with_capacity(3);
        let mut centred = true;
        if (center_start - ideal).abs() > WINDOW_MS / 4.0 {
            centred = false;
        }
        for start in [center_start - STEP_MS, center_start, center_start + STEP_MS] {
            if let Some(w) = self.window_at(start) {
                windows.push(w);
            }
        }
        let margin_ok = centred && windows.len() == 3;
        PeakWindows { windows, margin_ok }
    }
}

pub fn window_count(duration_ms: f64) -> usize {
    if duration_ms + 1e-9 < WINDOW_MS {
        0
    } else {
        ((duration_ms - WINDOW_MS + 1e-9) / STEP_MS).floor() as usize + 1
    }
}

/// One aligned 300 ms slice. Times are absolute (IMU clock).
#[derive(Debug, Clone)]
pub struct Window<'a> {
    pub start_ms: f64,
    pub center_ms: f64,
    /// Audio clock minus IMU clock at the window start.
    pub skew_ms: f64,
    /// Three complete chunks per channel.
    pub audio: Vec<(ChannelId, &'a [f64])>,
    pub audio_start_ms: f64,
    pub imu_start_ms: f64,
    pub accel: [&'a [f64]; 3],
    pub euler: [&'a [f64]; 3],
}

impl<'a> Window<'a> {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + WINDOW_MS
    }

    pub fn channel(&self, id: ChannelId) -> Option<&'a [f64]> {
        self.audio.iter().find(|(c, _)| *c == id).map(|(_, s)| *s)
    }

    pub fn imu_len(&self) -> usize {
        self.accel[0].len()
    }

    pub fn accel_magnitude(&self) -> Vec<f64> {
        magnitude(self.accel[0], self.accel[1], self.accel[2])
    }
}

/// Pull-based iterator over the sliding windows of an aligned pair.
#[derive(Debug, Clone)]
pub struct Segmenter<'a> {
    aligned: Aligned<'a>,
    next: usize,
    total: usize,
}

impl<'a> Segmenter<'a> {
    /// True when the pair is shorter than one window and nothing will be
    /// produced.
    pub fn too_short(&self) -> bool {
        self.total == 0
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

impl<'a> Iterator for Segmenter<'a> {
    type Item = Window<'a>;

    fn next(&mut self) -> Option<Window<'a>> {
        if self.next >= self.total {
            return None;
        }
        let w = self.aligned.window_at(self.next as f64 * STEP_MS);
        self.next += 1;
        if w.is_none() {
            self.next = self.total;
        }
        w
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.total - self.next;
        (0, Some(rest))
    }
}

#[derive(Debug, Clone)]
pub struct PeakWindows<'a> {
    pub windows: Vec<Window<'a>>,
    /// False when the peak sits too close to a stream edge for the full
    /// three-window set.
    pub margin_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakPolicy {
    /// Threshold is `median + max(k · MAD, floor_g)`.
    pub k: f64,
    pub floor_g: f64,
    pub refractory_ms: f64,
}

impl Default for PeakPolicy {
    fn default() -> Self {
        PeakPolicy {
            k: 6.0,
            floor_g: 0.2,
            refractory_ms: 300.0,
        }
    }
}

/// Times (ms, sorted) of acceleration-magnitude peaks.
pub fn detect_peaks(imu: &ImuStream, policy: &PeakPolicy) -> Vec<f64> {
    let mag = imu.accel_magnitude();
    peak_indices(&mag, imu.period_ms(), policy)
        .into_iter()
        .map(|i| imu.time_of(i))
        .collect()
}

pub(crate) fn peak_indices(mag: &[f64], period_ms: f64, policy: &PeakPolicy) -> Vec<usize> {
    if mag.len() < 3 {
        return Vec::new();
    }
    let med = median(mag);
    let dev: Vec<f64> = mag.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev);
    let threshold = med + (policy.k * mad).max(policy.floor_g);
    let mut candidates: Vec<usize> = (1..mag.len() - 1)
        .filter(|&i| mag[i] > threshold && mag[i] > mag[i - 1] && mag[i] >= mag[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let min_gap = policy.refractory_ms / period_ms;
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| (k as f64 - c as f64).abs() >= min_gap - 1e-9) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::AudioChannel;
    use proptest::prelude::*;

    fn audio(ms: f64, t0: f64) -> AudioStream {
        let n = (ms * 48.0).round() as usize;
        let ramp: Vec<f64> = (0..n).map(|i| (i % 1000) as f64 / 1000.0).collect();
        AudioStream::new(
            48_000,
            vec![
                AudioChannel { id: ChannelId::MicRight, samples: ramp.clone() },
                AudioChannel { id: ChannelId::MicBand, samples: ramp },
            ],
            t0,
        )
        .unwrap()
    }

    fn imu(ms: f64, t0: f64, bumps: &[f64]) -> ImuStream {
        let n = (ms / 5.0).floor() as usize + 1;
        let mut z = vec![1.0; n];
        for &b in bumps {
            let i = ((b - t0) / 5.0).round() as usize;
            if i < n {
                z[i] = 1.6;
                if i > 0 {
                    z[i - 1] = 1.3;
                }
                if i + 1 < n {
                    z[i + 1] = 1.3;
                }
            }
        }
        ImuStream::new(200.0, t0, [vec![0.0; n], vec![0.0; n], z], [vec![0.0; n], vec![0.0; n], vec![0.0; n]])
            .unwrap()
    }

    #[test]
    fn twenty_seconds_gives_132_windows() {
        let a = audio(20_000.0, 0.0);
        let i = imu(20_000.0, 0.0, &[]);
        let al = align(&a, &i, 4096).unwrap();
        let wins: Vec<_> = al.segment().collect();
        assert_eq!(wins.len(), 132);
        for w in &wins {
            assert!(w.skew_ms.abs() <= MAX_SKEW_MS);
            assert!((58..=62).contains(&w.imu_len()));
            for (_, s) in &w.audio {
                assert_eq!(s.len(), 3 * 4096);
            }
        }
    }

    #[test]
    fn short_sessions() {
        let a = audio(300.0, 0.0);
        let i = imu(300.0, 0.0, &[]);
        let al = align(&a, &i, 4096).unwrap();
        assert_eq!(al.segment().count(), 1);

        let a = audio(250.0, 0.0);
        let i = imu(250.0, 0.0, &[]);
        let al = align(&a, &i, 4096).unwrap();
        let seg = al.segment();
        assert!(seg.too_short());
        assert_eq!(seg.count(), 0);
    }

    #[test]
    fn alignment_cases() {
        let a = audio(2_000.0, 0.0);
        let i = imu(2_000.0, 0.0, &[]);
        let al = align(&a, &i, 4096).unwrap();
        assert_eq!((al.audio_offset, al.imu_offset), (0, 0));
        assert_eq!(al.skew_ms, 0.0);

        let i = imu(2_000.0, 7.0, &[]);
        let al = align(&a, &i, 4096).unwrap();
        assert_eq!(al.audio_offset, 336);
        assert!(al.skew_ms.abs() <= MAX_SKEW_MS);
        assert_eq!(al.start_ms, 7.0);

        let i = imu(1_000.0, 5_000.0, &[]);
        assert!(matches!(align(&a, &i, 4096), Err(Error::Alignment(_))));
    }

    #[test]
    fn fractional_offsets_keep_skew_small() {
        let a = audio(3_000.0, 0.013);
        let i = imu(3_000.0, 2.4, &[]);
        let al = align(&a, &i, 4096).unwrap();
        for w in al.segment() {
            assert!(w.skew_ms.abs() <= MAX_SKEW_MS);
        }
    }

    #[test]
    fn peaks_and_refractory() {
        assert!(detect_peaks(&imu(3_000.0, 0.0, &[]), &PeakPolicy::default()).is_empty());
        let p = detect_peaks(&imu(3_000.0, 0.0, &[1_000.0]), &PeakPolicy::default());
        assert_eq!(p, vec![1_000.0]);
        let p = detect_peaks(&imu(3_000.0, 0.0, &[1_000.0, 1_150.0]), &PeakPolicy::default());
        assert_eq!(p.len(), 1);
        let p = detect_peaks(&imu(3_000.0, 0.0, &[1_000.0, 2_000.0]), &PeakPolicy::default());
        assert_eq!(p, vec![1_000.0, 2_000.0]);
    }

    #[test]
    fn windows_around_peak_geometry() {
        let a = audio(2_000.0, 0.0);
        let i = imu(2_000.0, 0.0, &[1_000.0]);
        let al = align(&a, &i, 4096).unwrap();
        let pw = al.windows_around_peak(1_000.0);
        assert!(pw.margin_ok);
        let centres: Vec<f64> = pw.windows.iter().map(|w| w.center_ms).collect();
        assert_eq!(centres, vec![850.0, 1_000.0, 1_150.0]);

        let pw = al.windows_around_peak(100.0);
        assert_eq!(pw.windows.len(), 2);
        assert!(!pw.margin_ok);
    }

    #[test]
    fn peak_windows_contain_argmax() {
        let a = audio(2_000.0, 0.0);
        let i = imu(2_000.0, 0.0, &[1_235.0]);
        let al = align(&a, &i, 4096).unwrap();
        let mag = al.accel_magnitude();
        let argmax = mag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let t = i.time_of(argmax);
        let pw = al.windows_around_peak(t);
        assert_eq!(pw.windows.len(), 3);
        for w in &pw.windows {
            let first = ((w.imu_start_ms - i.t0_ms) / 5.0).round() as usize;
            assert!(first <= argmax && argmax < first + w.imu_len());
        }
        let mid = &pw.windows[1];
        assert!((mid.center_ms - t).abs() <= 75.0);
    }

    proptest! {
        #[test]
        fn window_count_formula(ms in 300u32..12_000) {
            let ms = ms as f64;
            let a = audio(ms, 0.0);
            let i = imu(ms, 0.0, &[]);
            let al = align(&a, &i, 4096).unwrap();
            let expect = ((al.duration_ms() - 300.0) / 150.0 + 1e-9).floor() as usize + 1;
            prop_assert_eq!(al.segment().count(), expect);
        }

        #[test]
        fn translation_consistent(shift_steps in 0usize..20) {
            let shift = shift_steps as f64 * STEP_MS;
            let (a0, i0) = (audio(2_000.0, 0.0), imu(2_000.0, 0.0, &[]));
            let (a1, i1) = (audio(2_000.0, shift), imu(2_000.0, shift, &[]));
            let w0: Vec<_> = align(&a0, &i0, 4096).unwrap().segment().collect();
            let w1: Vec<_> = align(&a1, &i1, 4096).unwrap().segment().collect();
            prop_assert_eq!(w0.len(), w1.len());
            for (x, y) in w0.iter().zip(&w1) {
                prop_assert_eq!(y.center_ms - x.center_ms, shift);
                prop_assert_eq!(x.audio[0].1, y.audio[0].1);
            }
        }
    }
}
