//! The music enhancer: a pluggable separator followed by gain, remix,
//! per-ear amplification, normalization and output quantization.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::audiology::Listener;
use crate::dsp::{peak_normalize, quantize, read_wav, remix_with_gains, AudioBuffer, GainSet, SampleFormat, Stem, StemSet};
use crate::error::EnhanceError;
use crate::prescription::{apply_per_ear, nalr_filter, FirFilter, DEFAULT_NALR_TAPS};
use crate::scene::{scene_stems_at_ears, Dataset, SceneSpec};

/// Demixes a scene's input into VDBO stems.
pub trait Separator: Send + Sync {
    fn name(&self) -> &str;

    /// Future input the separator may read, in ms; infinite when non-causal.
    fn lookahead_ms(&self) -> f64;

    fn separate(&self, scene: &SceneSpec, mixture: &AudioBuffer) -> Result<StemSet, EnhanceError>;
}

pub fn declared_lookahead(s: &dyn Separator) -> f64 {
    s.lookahead_ms()
}

fn separator_error(scene: &SceneSpec, reason: impl ToString) -> EnhanceError {
    EnhanceError::Separator {
        scene_id: scene.scene_id.clone(),
        reason: reason.to_string(),
    }
}

fn check_shape(scene: &SceneSpec, stems: &StemSet, mixture: &AudioBuffer) -> Result<(), EnhanceError> {
    if stems.len() != mixture.len() || stems.sample_rate() != mixture.sample_rate() {
        return Err(separator_error(
            scene,
            format!(
                "stems are {} samples at {} Hz, mixture is {} samples at {} Hz",
                stems.len(),
                stems.sample_rate(),
                mixture.len(),
                mixture.sample_rate()
            ),
        ));
    }
    Ok(())
}

enum OracleSource {
    Fixed(StemSet),
    Dataset {
        dataset: Box<Dataset>,
        /// Recently rendered scenes, newest last.
        recent: Mutex<VecDeque<(String, Arc<StemSet>)>>,
    },
}

/// Scenes are processed listener by listener, so only a few rendered scenes
/// per worker need to stay cached.
fn oracle_cache_len() -> usize {
    rayon::current_num_threads() + 1
}

/// Returns the true stems whatever the mixture holds. With a dataset, the
/// stems are rendered at the ears exactly like the scene mixture.
pub struct OracleSeparator {
    source: OracleSource,
}

impl OracleSeparator {
    pub fn new(true_stems: StemSet) -> Self {
        Self {
            source: OracleSource::Fixed(true_stems),
        }
    }

    pub fn from_dataset(dataset: Dataset) -> Self {
        Self {
            source: OracleSource::Dataset {
                dataset: Box::new(dataset),
                recent: Mutex::new(VecDeque::new()),
            },
        }
    }
}

impl Separator for OracleSeparator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn lookahead_ms(&self) -> f64 {
        0.0
    }

    fn separate(&self, scene: &SceneSpec, mixture: &AudioBuffer) -> Result<StemSet, EnhanceError> {
        let stems = match &self.source {
            OracleSource::Fixed(s) => s.clone(),
            OracleSource::Dataset { dataset, recent } => {
                let hit = recent
                    .lock()
                    .expect("cache lock")
                    .iter()
                    .find(|(id, _)| *id == scene.scene_id)
                    .map(|(_, s)| Arc::clone(s));
                match hit {
                    Some(s) => (*s).clone(),
                    None => {
                        let raw = dataset.load_stems(scene).map_err(|e| separator_error(scene, e))?;
                        let at_ears = scene_stems_at_ears(scene, &raw, &dataset.hrirs).map_err(|e| separator_error(scene, e))?;
                        let mut q = recent.lock().expect("cache lock");
                        q.push_back((scene.scene_id.clone(), Arc::new(at_ears.clone())));
                        while q.len() > oracle_cache_len() {
                            q.pop_front();
                        }
                        at_ears
                    }
                }
            }
        };
        check_shape(scene, &stems, mixture)?;
        Ok(stems)
    }
}

/// Reads stems produced by an outside tool from
/// `<dir>/<scene_id>/{vocals,drums,bass,other}.wav`.
pub struct ExternalStemsSeparator {
    dir: PathBuf,
    lookahead_ms: f64,
}

impl ExternalStemsSeparator {
    pub fn new(dir: impl Into<PathBuf>, lookahead_ms: f64) -> Self {
        Self {
            dir: dir.into(),
            lookahead_ms,
        }
    }
}

impl Separator for ExternalStemsSeparator {
    fn name(&self) -> &str {
        "external-stems"
    }

    fn lookahead_ms(&self) -> f64 {
        self.lookahead_ms
    }

    fn separate(&self, scene: &SceneSpec, mixture: &AudioBuffer) -> Result<StemSet, EnhanceError> {
        let sub = self.dir.join(&scene.scene_id);
        let load = |stem: Stem| -> Result<AudioBuffer, EnhanceError> {
            let path = sub.join(format!("{}.wav", stem.name()));
            Ok(read_wav(&path).map_err(|e| separator_error(scene, e))?.buffer)
        };
        let stems = StemSet::from_stems(load(Stem::Vocals)?, load(Stem::Drums)?, load(Stem::Bass)?, load(Stem::Other)?)
            .map_err(|e| separator_error(scene, e))?;
        check_shape(scene, &stems, mixture)?;
        Ok(stems)
    }
}

/// The do-nothing system: output equals input.
pub fn passthrough_system(mixture: &AudioBuffer) -> AudioBuffer {
    mixture.clone()
}

pub const PASSTHROUGH_LOOKAHEAD_MS: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Amplification {
    None,
    Nalr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerConfig {
    pub apply_gains: bool,
    pub amplification: Amplification,
    pub normalize_target: f64,
    pub output_format: SampleFormat,
    pub nalr_taps: usize,
    /// Also produce per-ear amplified stems for stem-level scoring.
    pub emit_stems: bool,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            apply_gains: true,
            amplification: Amplification::Nalr,
            normalize_target: 1.0,
            output_format: SampleFormat::Float32,
            nalr_taps: DEFAULT_NALR_TAPS,
            emit_stems: true,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(self.normalize_target > 0.0 && self.normalize_target <= 1.0) {
            return Err(EnhanceError::Config(format!(
                "normalize_target {} outside (0, 1]",
                self.normalize_target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EnhancedOutput {
    /// Quantized remix.
    pub remix: AudioBuffer,
    /// Quantized amplified stems, left channel for the left ear.
    pub stems: Option<StemSet>,
    pub clipped_samples: usize,
    pub normalize_scale: f64,
}

type EarFilters = Option<(FirFilter, FirFilter)>;

fn ear_filters(cfg: &EnhancerConfig, listener: &Listener, fs: u32) -> Result<EarFilters, EnhanceError> {
    Ok(match cfg.amplification {
        Amplification::None => None,
        Amplification::Nalr => Some((
            nalr_filter(&listener.left, cfg.nalr_taps, fs)?,
            nalr_filter(&listener.right, cfg.nalr_taps, fs)?,
        )),
    })
}

fn amplify(filters: &EarFilters, x: &AudioBuffer) -> Result<AudioBuffer, EnhanceError> {
    match filters {
        None => Ok(x.clone()),
        Some((left, right)) => Ok(apply_per_ear(x, left, right, true)?),
    }
}

/// separate → scene gains → remix → per-ear amplification → peak
/// normalization → quantization.
pub fn run_enhancer(
    cfg: &EnhancerConfig,
    separator: &dyn Separator,
    scene: &SceneSpec,
    input: &AudioBuffer,
    listener: &Listener,
) -> Result<EnhancedOutput, EnhanceError> {
    cfg.validate()?;
    input.require_stereo()?;
    let stems = separator.separate(scene, input)?;
    let gains = if cfg.apply_gains { scene.gains } else { GainSet::zero() };
    let remix = remix_with_gains(&stems, &gains);
    let filters = ear_filters(cfg, listener, input.sample_rate())?;
    let amplified = amplify(&filters, &remix)?;
    let normalized = peak_normalize(&amplified, cfg.normalize_target)?;
    let (out, clipped) = quantize(&normalized.buffer, cfg.output_format);
    let stems = if cfg.emit_stems {
        let fmt = cfg.output_format;
        Some(stems.try_map(|_, s| -> Result<AudioBuffer, EnhanceError> {
            let a = amplify(&filters, s)?;
            let peak = a.max_abs();
            let scaled = if peak > 1.0 { a.scaled(1.0 / peak) } else { a };
            Ok(quantize(&scaled, fmt).0)
        })?)
    } else {
        None
    };
    Ok(EnhancedOutput {
        remix: out,
        stems,
        clipped_samples: clipped,
        normalize_scale: normalized.scale,
    })
}

/// Systems the command line can run over a dataset.
pub enum System {
    Passthrough,
    Pipeline { cfg: EnhancerConfig, separator: Box<dyn Separator> },
}

impl System {
    pub fn lookahead_ms(&self) -> f64 {
        match self {
            System::Passthrough => PASSTHROUGH_LOOKAHEAD_MS,
            System::Pipeline { separator, .. } => separator.lookahead_ms(),
        }
    }

    pub fn output_format(&self) -> SampleFormat {
        match self {
            System::Passthrough => SampleFormat::Float32,
            System::Pipeline { cfg, .. } => cfg.output_format,
        }
    }

    pub fn process(&self, scene: &SceneSpec, input: &AudioBuffer, listener: &Listener) -> Result<EnhancedOutput, EnhanceError> {
        match self {
            System::Passthrough => {
                let (remix, clipped) = quantize(&passthrough_system(input), SampleFormat::Float32);
                Ok(EnhancedOutput {
                    remix,
                    stems: None,
                    clipped_samples: clipped,
                    normalize_scale: 1.0,
                })
            }
            System::Pipeline { cfg, separator } => run_enhancer(cfg, separator.as_ref(), scene, input, listener),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiology::Audiogram;
    use crate::synth::synthetic_track;

    fn scene(gains: GainSet) -> SceneSpec {
        SceneSpec {
            scene_id: "S0".into(),
            track_id: "T".into(),
            segment_start_s: 0.0,
            segment_dur_s: 30.0,
            hrtf_subject: None,
            angle_left_deg: None,
            angle_right_deg: None,
            gains,
            listener_ids: vec!["L".into()],
            rng_seed: 0,
        }
    }

    fn flat(level: f64) -> Listener {
        Listener::new("L", Audiogram::flat(level).unwrap(), Audiogram::flat(level).unwrap()).unwrap()
    }

    #[test]
    fn oracle_returns_true_stems() {
        let t = synthetic_track("T", 16000, 1.0, 1);
        let o = OracleSeparator::new(t.stems.clone());
        let noise = AudioBuffer::silence(16000, 2, t.stems.len()).unwrap();
        let s = o.separate(&scene(GainSet::zero()), &noise).unwrap();
        assert_eq!(s, t.stems);
        assert_eq!(declared_lookahead(&o), 0.0);
        let short = AudioBuffer::silence(16000, 2, 10).unwrap();
        assert!(matches!(o.separate(&scene(GainSet::zero()), &short), Err(EnhanceError::Separator { .. })));
    }

    #[test]
    fn neutral_pipeline_returns_input() {
        let t = synthetic_track("T", 16000, 1.0, 2);
        let mix = t.stems.sum();
        let cfg = EnhancerConfig {
            apply_gains: false,
            amplification: Amplification::None,
            normalize_target: 1.0,
            output_format: SampleFormat::Float32,
            nalr_taps: DEFAULT_NALR_TAPS,
            emit_stems: false,
        };
        let o = OracleSeparator::new(t.stems.clone());
        let out = run_enhancer(&cfg, &o, &scene(GainSet::new(6.0, 0.0, 0.0, 0.0).unwrap()), &mix, &flat(0.0)).unwrap();
        let expect = mix.scaled(out.normalize_scale);
        for c in 0..2 {
            for (a, b) in out.remix.channel(c).iter().zip(expect.channel(c)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert_eq!(passthrough_system(&mix), mix);
    }

    #[test]
    fn sixteen_bit_output_is_bounded() {
        let t = synthetic_track("T", 16000, 1.0, 3);
        let cfg = EnhancerConfig {
            output_format: SampleFormat::Int16,
            ..EnhancerConfig::default()
        };
        let o = OracleSeparator::new(t.stems.clone());
        let out = run_enhancer(&cfg, &o, &scene(GainSet::new(10.0, 0.0, -3.0, 0.0).unwrap()), &t.stems.sum(), &flat(60.0)).unwrap();
        let top = 1.0 - 2f64.powi(-15);
        for c in out.remix.channels() {
            assert!(c.iter().all(|v| (-1.0..=top).contains(v)));
        }
        assert!(out.clipped_samples <= 2);
        let bad = EnhancerConfig {
            normalize_target: 0.0,
            ..EnhancerConfig::default()
        };
        assert!(run_enhancer(&bad, &o, &scene(GainSet::zero()), &t.stems.sum(), &flat(0.0)).is_err());
    }

    #[test]
    fn ears_are_amplified_independently() {
        let t = synthetic_track("T", 16000, 1.0, 4);
        let mono = t.stems.sum().channel(0).to_vec();
        let sym = AudioBuffer::stereo(16000, mono.clone(), mono).unwrap();
        let stems = StemSet::from_stems(
            sym.clone(),
            sym.scaled(0.0),
            sym.scaled(0.0),
            sym.scaled(0.0),
        )
        .unwrap();
        let o = OracleSeparator::new(stems);
        let listener = Listener::new("L", Audiogram::flat(10.0).unwrap(), Audiogram::flat(60.0).unwrap()).unwrap();
        let cfg = EnhancerConfig {
            normalize_target: 0.5,
            emit_stems: false,
            ..EnhancerConfig::default()
        };
        let a = run_enhancer(&cfg, &o, &scene(GainSet::zero()), &sym, &listener).unwrap();
        let b = run_enhancer(&cfg, &o, &scene(GainSet::zero()), &sym, &listener.swapped_ears()).unwrap();
        let swapped = b.remix.swapped_channels();
        for c in 0..2 {
            for (x, y) in a.remix.channel(c).iter().zip(swapped.channel(c)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flat_zero_prescription_only_reshapes() {
        let fs = 16000;
        let n = fs as usize;
        let tone: Vec<f64> = (0..n).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / fs as f64).sin()).collect();
        let x = AudioBuffer::stereo(fs, tone.clone(), tone).unwrap();
        let z = x.scaled(0.0);
        let o = OracleSeparator::new(StemSet::from_stems(x.clone(), z.clone(), z.clone(), z).unwrap());
        let base = EnhancerConfig {
            emit_stems: false,
            ..EnhancerConfig::default()
        };
        let none = EnhancerConfig {
            amplification: Amplification::None,
            ..base.clone()
        };
        let a = run_enhancer(&base, &o, &scene(GainSet::zero()), &x, &flat(0.0)).unwrap();
        let b = run_enhancer(&none, &o, &scene(GainSet::zero()), &x, &flat(0.0)).unwrap();
        // the flat-0 prescription is +1 dB at 1 kHz, so normalization backs off by 1 dB more
        let ratio_db = 20.0 * (b.normalize_scale / a.normalize_scale).log10();
        assert!((ratio_db - 1.0).abs() < 0.05, "{ratio_db}");
    }
}
