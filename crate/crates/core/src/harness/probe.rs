//! Paired-input causality audit.
//!
//! For each probe time `t`, input B equals input A up to `t + Δ` and is
//! louder fresh noise afterwards. A processor whose outputs up to `t` agree
//! for every probe at `Δ = bound` passes. The measured future dependence is
//! the smallest `Δ` for which all probes agree.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiology::{Audiogram, Listener};
use crate::dsp::{peak_normalize, AudioBuffer, GainSet, StemSet};
use crate::enhancer::{run_enhancer, EnhancerConfig, OracleSeparator};
use crate::error::HarnessError;
use crate::scene::SceneSpec;

pub const DEFAULT_BOUND_MS: f64 = 5.0;
pub const DEFAULT_PROBES: usize = 16;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_SIGNAL_S: f64 = 5.0;
/// Dependence beyond this is reported as unbounded.
pub const MAX_MEASURED_MS: f64 = 50.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub bound_ms: f64,
    pub probes: usize,
    pub tolerance: f64,
    pub signal_s: f64,
    pub seed: u64,
    /// Binary-search the dependence instead of only checking the bound.
    pub measure: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            bound_ms: DEFAULT_BOUND_MS,
            probes: DEFAULT_PROBES,
            tolerance: DEFAULT_TOLERANCE,
            signal_s: DEFAULT_SIGNAL_S,
            seed: 0x00ca_05a1,
            measure: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `None` when the dependence exceeds the search range.
    pub measured_dependence_ms: Option<f64>,
    pub pass: bool,
    /// Probe times (s) at which outputs differed with agreement up to the bound.
    pub violations: Vec<f64>,
}

/// A processor under audit. Inputs arrive as stems so that processors
/// needing ground truth (oracles) can be audited; mixture-only processors
/// use the stem sum.
pub type ProbeProcessor<'a> = dyn Fn(&StemSet) -> Result<AudioBuffer, HarnessError> + Sync + 'a;

fn noise_stems(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> [Vec<[f64; 2]>; 4] {
    std::array::from_fn(|_| (0..n).map(|_| [amp * rng.gen_range(-1.0..1.0), amp * rng.gen_range(-1.0..1.0)]).collect())
}

fn to_stems(fs: u32, raw: &[Vec<[f64; 2]>; 4]) -> StemSet {
    let bufs: [AudioBuffer; 4] = std::array::from_fn(|k| {
        let l = raw[k].iter().map(|s| s[0]).collect();
        let r = raw[k].iter().map(|s| s[1]).collect();
        AudioBuffer::stereo(fs, l, r).expect("finite noise")
    });
    StemSet::new(bufs, None).expect("equal shapes")
}

struct Audit<'a> {
    f: &'a ProbeProcessor<'a>,
    fs: u32,
    base: [Vec<[f64; 2]>; 4],
    base_out: AudioBuffer,
    tails: Vec<[Vec<[f64; 2]>; 4]>,
    tolerance: f64,
}

impl Audit<'_> {
    /// Do outputs up to sample `t` agree when inputs agree up to `t + delta`?
    fn agrees(&self, probe: usize, t: usize, delta: usize) -> Result<bool, HarnessError> {
        let n = self.base[0].len();
        let cut = (t + delta + 1).min(n);
        let mut raw = self.base.clone();
        for (stem, tail) in raw.iter_mut().zip(&self.tails[probe]) {
            stem[cut..].copy_from_slice(&tail[cut..]);
        }
        let out = (self.f)(&to_stems(self.fs, &raw))?;
        if out.len() < t + 1 || out.num_channels() != self.base_out.num_channels() {
            return Err(HarnessError::Audit("processor changed the output shape".into()));
        }
        for c in 0..out.num_channels() {
            let (a, b) = (&self.base_out.channel(c)[..=t], &out.channel(c)[..=t]);
            if a.iter().zip(b).any(|(x, y)| (x - y).abs() > self.tolerance) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn causality_probe(f: &ProbeProcessor<'_>, fs: u32, cfg: &ProbeConfig) -> Result<ProbeReport, HarnessError> {
    if cfg.probes == 0 || !(cfg.bound_ms >= 0.0) || !(cfg.signal_s > 0.0) {
        return Err(HarnessError::Config("probe needs at least one probe, a non-negative bound and a positive signal length".into()));
    }
    let n = (cfg.signal_s * fs as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = noise_stems(&mut rng, n, 0.05);
    let tails = (0..cfg.probes).map(|_| noise_stems(&mut rng, n, 0.25)).collect();
    let base_out = f(&to_stems(fs, &base))?;
    let audit = Audit {
        f,
        fs,
        base,
        base_out,
        tails,
        tolerance: cfg.tolerance,
    };
    let ms_to_samples = |ms: f64| (ms * 1e-3 * fs as f64).round() as usize;
    let bound = ms_to_samples(cfg.bound_ms);
    let max_delta = ms_to_samples(MAX_MEASURED_MS);
    let times: Vec<usize> = (0..cfg.probes)
        .map(|i| ((i as f64 + 0.5) / cfg.probes as f64 * (n - max_delta.min(n / 2)) as f64) as usize)
        .collect();
    let mut violations = Vec::new();
    let mut needed = 0usize;
    let mut unbounded = false;
    for (p, &t) in times.iter().enumerate() {
        if !audit.agrees(p, t, bound)? {
            violations.push(t as f64 / fs as f64);
        }
        if !cfg.measure || unbounded {
            continue;
        }
        if !audit.agrees(p, t, max_delta)? {
            unbounded = true;
            continue;
        }
        // smallest delta in [needed, max_delta] that agrees
        if audit.agrees(p, t, needed)? {
            continue;
        }
        let (mut lo, mut hi) = (needed, max_delta);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if audit.agrees(p, t, mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        needed = hi;
    }
    let measured = (cfg.measure && !unbounded).then(|| needed as f64 * 1000.0 / fs as f64);
    Ok(ProbeReport {
        measured_dependence_ms: measured,
        pass: violations.is_empty(),
        violations,
    })
}

/// Mixture-only processors.
pub fn mixture_processor<F>(f: F) -> impl Fn(&StemSet) -> Result<AudioBuffer, HarnessError> + Sync
where
    F: Fn(&AudioBuffer) -> Result<AudioBuffer, HarnessError> + Sync,
{
    move |s: &StemSet| f(&s.sum())
}

/// Strictly causal FIR applied to both channels, no delay compensation.
pub fn causal_fir_fixture(taps: Vec<f64>) -> impl Fn(&AudioBuffer) -> Result<AudioBuffer, HarnessError> + Sync {
    move |x: &AudioBuffer| {
        let chans = x
            .channels()
            .iter()
            .map(|c| {
                let mut y = crate::dsp::convolve_signal(c, &taps);
                y.truncate(c.len());
                y
            })
            .collect();
        Ok(AudioBuffer::new(x.sample_rate(), chans)?)
    }
}

/// Limiter whose gain at sample n depends on the peak over `[n, n + L]`.
pub fn lookahead_limiter_fixture(lookahead_ms: f64, threshold: f64) -> impl Fn(&AudioBuffer) -> Result<AudioBuffer, HarnessError> + Sync {
    move |x: &AudioBuffer| {
        let l = (lookahead_ms * 1e-3 * x.sample_rate() as f64).round() as usize;
        let n = x.len();
        let mut peak = vec![0.0f64; n];
        for c in x.channels() {
            for (p, v) in peak.iter_mut().zip(c) {
                *p = p.max(v.abs());
            }
        }
        // sliding maximum over [i, i + l] with a monotone deque
        let mut ahead = vec![0.0; n];
        let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        let mut next = 0;
        for (i, a) in ahead.iter_mut().enumerate() {
            while next < n && next <= i + l {
                while dq.back().is_some_and(|&j| peak[j] <= peak[next]) {
                    dq.pop_back();
                }
                dq.push_back(next);
                next += 1;
            }
            while dq.front().is_some_and(|&j| j < i) {
                dq.pop_front();
            }
            *a = peak[*dq.front().expect("window is non-empty")];
        }
        let gain: Vec<f64> = ahead.iter().map(|&p| if p > threshold { threshold / p } else { 1.0 }).collect();
        let chans = x.channels().iter().map(|c| c.iter().zip(&gain).map(|(v, g)| v * g).collect()).collect();
        Ok(AudioBuffer::new(x.sample_rate(), chans)?)
    }
}

/// Scales the whole signal to unit peak.
pub fn global_normalizer_fixture() -> impl Fn(&AudioBuffer) -> Result<AudioBuffer, HarnessError> + Sync {
    |x: &AudioBuffer| Ok(peak_normalize(x, 1.0)?.buffer)
}

/// The oracle enhancer pipeline on the probe stems, for a flat listener.
pub fn oracle_pipeline_processor(cfg: EnhancerConfig, hearing_level_db: f64) -> impl Fn(&StemSet) -> Result<AudioBuffer, HarnessError> + Sync {
    let scene = SceneSpec {
        scene_id: "probe".into(),
        track_id: "probe".into(),
        segment_start_s: 0.0,
        segment_dur_s: 10.0,
        hrtf_subject: None,
        angle_left_deg: None,
        angle_right_deg: None,
        gains: GainSet::new(6.0, -3.0, 0.0, 0.0).expect("finite"),
        listener_ids: vec!["probe".into()],
        rng_seed: 0,
    };
    move |stems: &StemSet| {
        let a = Audiogram::flat(hearing_level_db)?;
        let listener = Listener::new("probe", a, a)?;
        let sep = OracleSeparator::new(stems.clone());
        let cfg = EnhancerConfig {
            emit_stems: false,
            ..cfg.clone()
        };
        Ok(run_enhancer(&cfg, &sep, &scene, &stems.sum(), &listener)?.remix)
    }
}

/// Taps of a causal FIR with `n` coefficients, for audits.
pub fn causal_lowpass_taps(n: usize) -> Vec<f64> {
    let w = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos());
    let s: f64 = w.clone().sum();
    w.map(|v| v / s).collect()
}
