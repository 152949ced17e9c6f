//! On-disk session format.
//!
//! ```text
//! <out>/manifest.json
//! <out>/sessions/<id>/audio.wav     16-bit PCM, ch0 = mic_right, ch1 = mic_band
//! <out>/sessions/<id>/imu.csv       t_ms,ax,ay,az,roll,pitch,yaw
//! <out>/sessions/<id>/labels.jsonl  one LabelSpan per line
//! <out>/sessions/<id>/session.json  timing metadata
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gesture::GestureClass;
use crate::scene_sim::{DatasetPlan, LabelSpan, SessionRecording};
use crate::signal::{AudioChannel, AudioStream, ChannelId};
use crate::stream::ImuStream;

pub const MANIFEST_VERSION: u64 = 1;
pub const WAV_CHANNELS: [ChannelId; 2] = [ChannelId::MicRight, ChannelId::MicBand];
const PCM_SCALE: f64 = 32_767.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub id: String,
    pub gesture: GestureClass,
    pub seed: u64,
    pub sample_rate: u32,
    pub audio_start_ms: f64,
    pub imu_rate: f64,
    pub imu_t0_ms: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub gesture: GestureClass,
    /// Session directory relative to the manifest.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u64,
    pub seed: u64,
    pub plan: DatasetPlan,
    pub sessions: Vec<ManifestEntry>,
    /// Echo of the generating command, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::data(path.display(), e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::data(path.display(), e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::data(
                path.display(),
                format!("manifest version {} (expected {MANIFEST_VERSION})", m.version),
            ));
        }
        Ok(m)
    }

    pub fn session_dir(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.dir)
    }
}

fn to_pcm(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE) as i16
}

pub fn write_wav(path: &Path, audio: &AudioStream) -> Result<()> {
    let spec = hound::WavSpec {
        channels: WAV_CHANNELS.len() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let chans: Vec<&[f64]> = WAV_CHANNELS
        .iter()
        .map(|&id| {
            audio
                .channel(id)
                .ok_or_else(|| Error::data(path.display(), format!("stream lacks channel {}", id.name())))
        })
        .collect::<Result<_>>()?;
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::data(path.display(), e))?;
    for i in 0..audio.len() {
        for c in &chans {
            w.write_sample(to_pcm(c[i])).map_err(|e| Error::data(path.display(), e))?;
        }
    }
    w.finalize().map_err(|e| Error::data(path.display(), e))?;
    Ok(())
}

pub fn read_wav(path: &Path, start_time_ms: f64) -> Result<AudioStream> {
    let bad = |m: String| Error::data(path.display(), m);
    let mut r = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = r.spec();
    if spec.channels as usize != WAV_CHANNELS.len()
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(bad(format!(
            "expected 2-channel 16-bit PCM, found {} channels, {} bits",
            spec.channels, spec.bits_per_sample
        )));
    }
    let mut chans: Vec<Vec<f64>> = (0..2).map(|_| Vec::with_capacity(r.len() as usize / 2)).collect();
    for (i, s) in r.samples::<i16>().enumerate() {
        let s = s.map_err(|e| bad(format!("sample {i}: {e}")))?;
        chans[i % 2].push(s as f64 / PCM_SCALE);
    }
    if chans[0].len() != chans[1].len() {
        return Err(bad("odd number of interleaved samples".into()));
    }
    let channels = WAV_CHANNELS
        .iter()
        .zip(chans)
        .map(|(&id, samples)| AudioChannel { id, samples })
        .collect();
    AudioStream::new(spec.sample_rate, channels, start_time_ms).map_err(|e| bad(e.to_string()))
}

pub fn write_imu_csv(path: &Path, imu: &ImuStream) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t_ms,ax,ay,az,roll,pitch,yaw")?;
    for i in 0..imu.len() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            imu.time_of(i),
            imu.accel[0][i],
            imu.accel[1][i],
            imu.accel[2][i],
            imu.euler[0][i],
            imu.euler[1][i],
            imu.euler[2][i]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu_csv(path: &Path, rate: f64) -> Result<ImuStream> {
    let bad = |m: String| Error::data(path.display(), m);
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("t_ms,ax,ay,az,roll,pitch,yaw") {
        return Err(bad("missing or wrong IMU header".into()));
    }
    let mut t0 = None;
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        if vals.len() != 7 {
            return Err(bad(format!("line {}: expected 7 fields, got {}", n + 2, vals.len())));
        }
        t0.get_or_insert(vals[0]);
        for (c, v) in cols.iter_mut().zip(&vals[1..]) {
            c.push(*v);
        }
    }
    let [ax, ay, az, roll, pitch, yaw] = cols;
    ImuStream::new(rate, t0.unwrap_or(0.0), [ax, ay, az], [roll, pitch, yaw]).map_err(|e| bad(e.to_string()))
}

pub fn write_labels(path: &Path, labels: &[LabelSpan]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut w, l).map_err(|e| Error::data(path.display(), e))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelSpan>> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(path.display(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::data(path.display(), format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::data(path.display(), e))?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Write one session into `dir` (created if needed).
pub fn write_session(dir: &Path, s: &SessionRecording) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_wav(&dir.join("audio.wav"), &s.audio)?;
    write_imu_csv(&dir.join("imu.csv"), &s.imu)?;
    write_labels(&dir.join("labels.jsonl"), &s.labels)?;
    let meta = SessionMeta {
        id: s.id.clone(),
        gesture: s.gesture,
        seed: s.seed,
        sample_rate: s.audio.sample_rate,
        audio_start_ms: s.audio.start_time_ms,
        imu_rate: s.imu.rate,
        imu_t0_ms: s.imu.t0_ms,
        clipped: s.clipped,
    };
    write_json(&dir.join("session.json"), &meta)
}

pub fn read_session(dir: &Path) -> Result<SessionRecording> {
    let meta_path = dir.join("session.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::data(meta_path.display(), e))?;
    let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| Error::data(meta_path.display(), e))?;
    let audio = read_wav(&dir.join("audio.wav"), meta.audio_start_ms)?;
    if audio.sample_rate != meta.sample_rate {
        return Err(Error::data(
            dir.join("audio.wav").display(),
            format!("sample rate {} disagrees with session metadata {}", audio.sample_rate, meta.sample_rate),
        ));
    }
    let imu = read_imu_csv(&dir.join("imu.csv"), meta.imu_rate)?;
    let labels = read_labels(&dir.join("labels.jsonl"))?;
    Ok(SessionRecording {
        id: meta.id,
        gesture: meta.gesture,
        audio,
        imu,
        labels,
        seed: meta.seed,
        clipped: meta.clipped,
    })
}

/// Generate every session of `plan` into `out` and write the manifest.
/// Sessions are rendered and written one at a time.
pub fn write_dataset(out: &Path, plan: &DatasetPlan, seed: u64, run: Option<&serde_json::Value>) -> Result<PathBuf> {
    plan.validate()?;
    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(plan.session_count());
    for i in 0..plan.session_count() {
        let s = crate::scene_sim::generate_session(plan, seed, i)?;
        let dir = format!("sessions/{}", s.id);
        write_session(&out.join(&dir), &s)?;
        entries.push(ManifestEntry { id: s.id, gesture: s.gesture, dir });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        plan: plan.clone(),
        sessions: entries,
        run: run.cloned(),
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{generate_session, DatasetPlan, PlanEntry};

    #[test]
    fn session_round_trip() {
        let plan = DatasetPlan::new(vec![PlanEntry::new(GestureClass::ClickMic, 1)]);
        let s = generate_session(&plan, 5, 0).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_session(tmp.path(), &s).unwrap();
        let back = read_session(tmp.path()).unwrap();
        assert_eq!(back.labels, s.labels);
        assert_eq!(back.imu, s.imu);
        assert_eq!(back.audio.len(), s.audio.len());
        assert_eq!(back.audio.start_time_ms, s.audio.start_time_ms);
        for id in WAV_CHANNELS {
            let (a, b) = (s.audio.channel(id).unwrap(), back.audio.channel(id).unwrap());
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 0.5 / PCM_SCALE + 1e-12));
        }
    }

    #[test]
    fn corrupt_wav_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("audio.wav");
        fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
        let err = read_wav(&p, 0.0).unwrap_err();
        assert!(matches!(&err, Error::Data { path, .. } if path.ends_with("audio.wav")));
    }
}
