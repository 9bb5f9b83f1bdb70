//! Intrusive, audiogram-conditioned scoring: reference construction, the
//! metric backends, and the left/right and eight-stem averaging protocol.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audiology::{listeners_to_json, mean_ear_severity, Audiogram, Listener};
use crate::dsp::{remix_with_gains, write_wav, AudioBuffer, SampleFormat, StemSet};
use crate::error::MetricError;
use crate::prescription::{apply_per_ear, nalr_filter, FirFilter, DEFAULT_NALR_TAPS};
use crate::scene::{scene_stems_at_ears, HrirSet, SceneSpec};

/// Scores a processed mono signal against a reference for one ear.
pub trait MetricBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Score in `[0, 1]`.
    fn score(&self, processed: &[f64], reference: &[f64], audiogram: &Audiogram, fs: u32) -> Result<f64, MetricError>;
}

pub const BAND_COUNT: usize = 32;
pub const BAND_LOW_HZ: f64 = 125.0;
pub const BAND_HIGH_HZ: f64 = 10_000.0;
pub const FRAME_MS: f64 = 32.0;
pub const HOP_MS: f64 = 8.0;
pub const MIN_AUDIBLE_FRAMES: usize = 8;
/// Digital full scale is taken as this many dB SPL, and dB HL as dB SPL.
pub const FULL_SCALE_DB_SPL: f64 = 100.0;
/// Band levels are clamped from below here.
pub const LEVEL_FLOOR_DB_SPL: f64 = -100.0;
const ZERO_VARIANCE: f64 = 1e-12;

/// Per-frame, per-band levels in dB SPL, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLevels {
    pub frames: usize,
    pub band_centres_hz: Vec<f64>,
    pub levels: Vec<f64>,
}

impl BandLevels {
    pub fn bands(&self) -> usize {
        self.band_centres_hz.len()
    }

    pub fn at(&self, frame: usize, band: usize) -> f64 {
        self.levels[frame * self.bands() + band]
    }
}

/// Frame/band analysis plan for one sample rate.
struct Analysis {
    frame: usize,
    hop: usize,
    nfft: usize,
    window: Vec<f64>,
    norm: f64,
    /// Bin ranges per band and the band centre.
    bands: Vec<(std::ops::Range<usize>, f64)>,
    fft: Arc<dyn Fft<f64>>,
}

impl Analysis {
    fn new(fs: u32) -> Result<Self, MetricError> {
        if fs < 8000 {
            return Err(MetricError::SampleRate(fs));
        }
        let frame = (FRAME_MS * 1e-3 * fs as f64).round() as usize;
        let hop = (HOP_MS * 1e-3 * fs as f64).round() as usize;
        let nfft = frame.next_power_of_two();
        let window: Vec<f64> = (0..frame)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
            .collect();
        let norm = 2.0 / (nfft as f64 * window.iter().map(|w| w * w).sum::<f64>());
        let nyquist = fs as f64 / 2.0;
        let bin_hz = fs as f64 / nfft as f64;
        let ratio = (BAND_HIGH_HZ / BAND_LOW_HZ).powf(1.0 / BAND_COUNT as f64);
        let mut bands = Vec::with_capacity(BAND_COUNT);
        for b in 0..BAND_COUNT {
            let lo = BAND_LOW_HZ * ratio.powi(b as i32);
            let hi = lo * ratio;
            if lo >= nyquist {
                break;
            }
            let centre = (lo * hi).sqrt();
            let first = (lo / bin_hz).ceil() as usize;
            let last = ((hi.min(nyquist)) / bin_hz).ceil() as usize;
            let range = if last > first {
                first..last
            } else {
                let k = (centre / bin_hz).round() as usize;
                k..k + 1
            };
            bands.push((range, centre));
        }
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            frame,
            hop,
            nfft,
            window,
            norm,
            bands,
            fft,
        })
    }

    fn frame_count(&self, len: usize) -> usize {
        if len <= self.frame {
            1
        } else {
            1 + (len - self.frame) / self.hop
        }
    }

    fn level(&self, mean_square: f64) -> f64 {
        if mean_square > 0.0 {
            (FULL_SCALE_DB_SPL + 10.0 * mean_square.log10()).max(LEVEL_FLOOR_DB_SPL)
        } else {
            LEVEL_FLOOR_DB_SPL
        }
    }

    /// Band levels of two equal-length signals, sharing one complex FFT per
    /// frame.
    fn levels_pair(&self, a: &[f64], b: &[f64]) -> (BandLevels, BandLevels) {
        let len = a.len().max(b.len());
        let frames = self.frame_count(len);
        let nb = self.bands.len();
        let mut la = Vec::with_capacity(frames * nb);
        let mut lb = Vec::with_capacity(frames * nb);
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut pa = vec![0.0; self.nfft / 2 + 1];
        let mut pb = vec![0.0; self.nfft / 2 + 1];
        let top = self.bands.iter().map(|(r, _)| r.end).max().unwrap_or(0).min(self.nfft / 2 + 1);
        for f in 0..frames {
            let start = f * self.hop;
            let sa = a.get(start..).unwrap_or(&[]);
            let sb = b.get(start..).unwrap_or(&[]);
            if sa.len() >= self.frame && sb.len() >= self.frame {
                for (i, (c, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                    *c = Complex::new(sa[i] * w, sb[i] * w);
                }
                buf[self.frame..].fill(Complex::new(0.0, 0.0));
            } else {
                buf.fill(Complex::new(0.0, 0.0));
                for (c, (s, w)) in buf.iter_mut().zip(sa.iter().zip(&self.window)) {
                    c.re = s * w;
                }
                for (c, (s, w)) in buf.iter_mut().zip(sb.iter().zip(&self.window)) {
                    c.im = s * w;
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..top {
                let z = buf[k];
                let zc = buf[(self.nfft - k) % self.nfft].conj();
                let xa = (z + zc) * 0.5;
                let xb = (z - zc) * Complex::new(0.0, -0.5);
                pa[k] = xa.norm_sqr();
                pb[k] = xb.norm_sqr();
            }
            for (range, _) in &self.bands {
                let sa: f64 = pa[range.clone()].iter().sum();
                let sb: f64 = pb[range.clone()].iter().sum();
                la.push(self.level(sa * self.norm));
                lb.push(self.level(sb * self.norm));
            }
        }
        let centres: Vec<f64> = self.bands.iter().map(|(_, c)| *c).collect();
        (
            BandLevels {
                frames,
                band_centres_hz: centres.clone(),
                levels: la,
            },
            BandLevels {
                frames,
                band_centres_hz: centres,
                levels: lb,
            },
        )
    }
}

/// Band levels of a single signal.
pub fn band_levels(x: &[f64], fs: u32) -> Result<BandLevels, MetricError> {
    if x.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(Analysis::new(fs)?.levels_pair(x, &[]).0)
}

/// Band correlation with the degenerate-variance rules of the built-in
/// metric.
fn band_correlation(p: &[f64], r: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let (mut spr, mut spp, mut srr) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(r) {
        let (dp, dr) = (a - mp, b - mr);
        spr += dp * dr;
        spp += dp * dp;
        srr += dr * dr;
    }
    let (vp, vr) = (spp / n, srr / n);
    let silent = p.iter().all(|&v| v <= LEVEL_FLOOR_DB_SPL);
    match (vp < ZERO_VARIANCE, vr < ZERO_VARIANCE) {
        (true, true) if !silent => 1.0,
        (true, _) | (_, true) => 0.0,
        _ => (spr / (spp * srr).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Per-band diagnostic of the built-in metric.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScore {
    pub centre_hz: f64,
    pub audible_frames: usize,
    pub correlation: Option<f64>,
}

/// Hearing-loss-weighted envelope correlation. Not HAAQI; a fast,
/// deterministic stand-in with the same calling contract.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinMetric;

pub fn builtin_metric() -> BuiltinMetric {
    BuiltinMetric
}

impl BuiltinMetric {
    pub fn band_scores(&self, processed: &[f64], reference: &[f64], audiogram: &Audiogram, fs: u32) -> Result<Vec<BandScore>, MetricError> {
        if processed.is_empty() || reference.is_empty() {
            return Err(MetricError::Empty);
        }
        let analysis = Analysis::new(fs)?;
        let (lp, lr) = analysis.levels_pair(processed, reference);
        let mut out = Vec::with_capacity(lr.bands());
        let mut p = Vec::with_capacity(lr.frames);
        let mut r = Vec::with_capacity(lr.frames);
        for (b, &centre) in lr.band_centres_hz.iter().enumerate() {
            let threshold = audiogram.interpolated_threshold(centre);
            p.clear();
            r.clear();
            for f in 0..lr.frames {
                let level = lr.at(f, b);
                if level > threshold {
                    r.push(level);
                    p.push(lp.at(f, b));
                }
            }
            let correlation = (r.len() >= MIN_AUDIBLE_FRAMES).then(|| band_correlation(&p, &r));
            out.push(BandScore {
                centre_hz: centre,
                audible_frames: r.len(),
                correlation,
            });
        }
        Ok(out)
    }
}

impl MetricBackend for BuiltinMetric {
    fn name(&self) -> &str {
        "builtin"
    }

    fn score(&self, processed: &[f64], reference: &[f64], audiogram: &Audiogram, fs: u32) -> Result<f64, MetricError> {
        let bands = self.band_scores(processed, reference, audiogram, fs)?;
        let included: Vec<f64> = bands.iter().filter_map(|b| b.correlation).collect();
        if included.is_empty() {
            return Ok(0.0);
        }
        Ok((included.iter().sum::<f64>() / included.len() as f64).clamp(0.0, 1.0))
    }
}

/// Counting semaphore bounding concurrent evaluator processes.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(300);

/// Runs an outside evaluator per score. The argv template may use
/// `{processed}`, `{reference}`, `{listener_json}` and `{fs}`; the command
/// must print `{"score": <number>}` and exit 0.
pub struct ExternalMetric {
    argv: Vec<String>,
    timeout: Duration,
    slots: Slots,
}

impl ExternalMetric {
    pub fn new(argv: Vec<String>) -> Result<Self, MetricError> {
        if argv.is_empty() {
            return Err(MetricError::External {
                reason: "empty command template".into(),
                transcript: String::new(),
            });
        }
        Ok(Self {
            argv,
            timeout: DEFAULT_EXTERNAL_TIMEOUT,
            slots: Slots {
                free: Mutex::new(usize::MAX),
                cv: Condvar::new(),
            },
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.slots = Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        };
        self
    }

    fn run(&self, args: &[String]) -> Result<f64, MetricError> {
        let _slot = self.slots.acquire();
        let mut transcript = format!("$ {}\n", args.join(" "));
        let fail = |reason: String, transcript: String| MetricError::External { reason, transcript };
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start `{}`: {e}", args[0]), transcript.clone()))?;
        let mut out_pipe = child.stdout.take().expect("piped stdout");
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = out_pipe.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = err_pipe.read_to_string(&mut s);
            s
        });
        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(fail(format!("wait failed: {e}"), transcript)),
            }
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        transcript.push_str(&format!("--- stdout ---\n{stdout}--- stderr ---\n{stderr}"));
        match status {
            None => Err(fail(format!("timed out after {:.1} s", self.timeout.as_secs_f64()), transcript)),
            Some(s) if !s.success() => Err(fail(format!("exited with {s}"), transcript)),
            Some(_) => parse_score(&stdout).ok_or_else(|| fail("no {\"score\": <number>} on stdout".into(), transcript)),
        }
    }
}

/// Extract the score from the last JSON object line on stdout.
fn parse_score(stdout: &str) -> Option<f64> {
    stdout.lines().rev().find_map(|line| {
        let v: serde_json::Value = serde_json::from_str(line.trim()).ok()?;
        v.get("score")?.as_f64().filter(|s| s.is_finite())
    })
}

impl MetricBackend for ExternalMetric {
    fn name(&self) -> &str {
        "external"
    }

    fn score(&self, processed: &[f64], reference: &[f64], audiogram: &Audiogram, fs: u32) -> Result<f64, MetricError> {
        if processed.is_empty() || reference.is_empty() {
            return Err(MetricError::Empty);
        }
        let dir = tempfile::tempdir()?;
        let processed_path = dir.path().join("processed.wav");
        let reference_path = dir.path().join("reference.wav");
        let listener_path = dir.path().join("listener.json");
        write_wav(&processed_path, &AudioBuffer::mono(fs, processed.to_vec())?, SampleFormat::Float32)?;
        write_wav(&reference_path, &AudioBuffer::mono(fs, reference.to_vec())?, SampleFormat::Float32)?;
        let listener = Listener::new("ear", *audiogram, *audiogram).expect("non-empty id");
        std::fs::write(&listener_path, listeners_to_json(&[listener]))?;
        let fill = |t: &str| {
            t.replace("{processed}", &path_str(&processed_path))
                .replace("{reference}", &path_str(&reference_path))
                .replace("{listener_json}", &path_str(&listener_path))
                .replace("{fs}", &fs.to_string())
        };
        let args: Vec<String> = self.argv.iter().map(|a| fill(a)).collect();
        Ok(self.run(&args)?.clamp(0.0, 1.0))
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Per-listener references: the amplified remix at both ears and the eight
/// amplified stem channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBundle {
    pub remix: AudioBuffer,
    pub stems: StemSet,
}

impl ReferenceBundle {
    pub fn remix_left(&self) -> &[f64] {
        self.remix.channel(0)
    }

    pub fn remix_right(&self) -> &[f64] {
        self.remix.channel(1)
    }

    /// The eight stem signals: V, D, B, O left then V, D, B, O right.
    pub fn stem_channels(&self) -> Vec<&[f64]> {
        (0..2).flat_map(|c| self.stems.iter().map(move |(_, s)| s.channel(c))).collect()
    }
}

/// Remix reference: true stems remixed with the scene gains, rendered at the
/// ears for loudspeaker scenes, then amplified per ear. Stem references are
/// the ungained true stems through the same rendering and amplification.
pub fn build_reference(
    scene: &SceneSpec,
    true_stems: &StemSet,
    listener: &Listener,
    hrirs: &[HrirSet],
    nalr_taps: usize,
) -> Result<ReferenceBundle, MetricError> {
    let at_ears = scene_stems_at_ears(scene, true_stems, hrirs)?;
    build_reference_at_ears(scene, &at_ears, listener, nalr_taps)
}

fn ear_filters(listener: &Listener, nalr_taps: usize, fs: u32) -> Result<(FirFilter, FirFilter), MetricError> {
    Ok((nalr_filter(&listener.left, nalr_taps, fs)?, nalr_filter(&listener.right, nalr_taps, fs)?))
}

/// [`build_reference`] from stems already rendered like the scene mixture,
/// so one rendering serves every listener of a scene.
pub fn build_reference_at_ears(scene: &SceneSpec, at_ears: &StemSet, listener: &Listener, nalr_taps: usize) -> Result<ReferenceBundle, MetricError> {
    let (left, right) = ear_filters(listener, nalr_taps, at_ears.sample_rate())?;
    let remix = apply_per_ear(&remix_with_gains(at_ears, &scene.gains), &left, &right, true)?;
    let stems = at_ears.try_map(|_, s| -> Result<AudioBuffer, MetricError> { Ok(apply_per_ear(s, &left, &right, true)?) })?;
    Ok(ReferenceBundle { remix, stems })
}

/// Only the remix part of [`build_reference_at_ears`].
pub fn build_remix_reference_at_ears(scene: &SceneSpec, at_ears: &StemSet, listener: &Listener, nalr_taps: usize) -> Result<AudioBuffer, MetricError> {
    let (left, right) = ear_filters(listener, nalr_taps, at_ears.sample_rate())?;
    Ok(apply_per_ear(&remix_with_gains(at_ears, &scene.gains), &left, &right, true)?)
}

/// [`build_reference`] with the default prescription filter length.
pub fn build_default_reference(scene: &SceneSpec, true_stems: &StemSet, listener: &Listener, hrirs: &[HrirSet]) -> Result<ReferenceBundle, MetricError> {
    build_reference(scene, true_stems, listener, hrirs, DEFAULT_NALR_TAPS)
}

fn check_stereo(x: &AudioBuffer, reference: &AudioBuffer) -> Result<(), MetricError> {
    x.require_stereo()?;
    x.require_rate(reference.sample_rate())?;
    Ok(())
}

/// Mean of the left-ear and right-ear scores.
pub fn score_remix(processed: &AudioBuffer, reference: &AudioBuffer, listener: &Listener, m: &dyn MetricBackend) -> Result<f64, MetricError> {
    check_stereo(processed, reference)?;
    let fs = processed.sample_rate();
    let l = m.score(processed.channel(0), reference.channel(0), &listener.left, fs)?;
    let r = m.score(processed.channel(1), reference.channel(1), &listener.right, fs)?;
    Ok((l + r) / 2.0)
}

/// Unweighted mean of the eight stem-channel scores.
pub fn score_vdbo(processed: &StemSet, reference: &StemSet, listener: &Listener, m: &dyn MetricBackend) -> Result<f64, MetricError> {
    let fs = processed.sample_rate();
    if fs != reference.sample_rate() {
        return Err(crate::error::DspError::RateMismatch {
            expected: reference.sample_rate(),
            found: fs,
        }
        .into());
    }
    let mut total = 0.0;
    for c in 0..2 {
        let audiogram = if c == 0 { &listener.left } else { &listener.right };
        for ((_, p), (_, r)) in processed.iter().zip(reference.iter()) {
            total += m.score(p.channel(c), r.channel(c), audiogram, fs)?;
        }
    }
    Ok(total / 8.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// One row of the records CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub system_id: String,
    pub scene_id: String,
    pub listener_id: String,
    pub remix_score: Option<f64>,
    pub vdbo_score: Option<f64>,
    pub severity_code: u8,
    pub gain_spread_db: f64,
    pub status: RecordStatus,
}

impl EvaluationRecord {
    pub fn new(system_id: &str, scene: &SceneSpec, listener: &Listener) -> Self {
        Self {
            system_id: system_id.to_string(),
            scene_id: scene.scene_id.clone(),
            listener_id: listener.id.clone(),
            remix_score: None,
            vdbo_score: None,
            severity_code: mean_ear_severity(listener).code(),
            gain_spread_db: scene.gains.spread_db(),
            status: RecordStatus::Failed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}
