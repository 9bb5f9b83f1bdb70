//! Run configuration read from TOML. Every field has a default so partial
//! files are accepted.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::enhancer::EnhancerConfig;
use crate::error::HarnessError;
use crate::harness::ProbeConfig;
use crate::metrics::{builtin_metric, ExternalMetric, MetricBackend, DEFAULT_EXTERNAL_TIMEOUT};
use crate::scene::{DatasetConfig, ListenerPolicy, Mode, DEFAULT_SILENCE_FLOOR_DB};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub data_root: Option<PathBuf>,
    pub scenes: SceneConfig,
    pub enhancer: EnhancerSection,
    pub metric: MetricConfig,
    pub probe: ProbeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub mode: Mode,
    pub scenes: Option<usize>,
    pub listeners_per_scene: Option<usize>,
    pub silence_floor_db: f64,
    pub sample_rate: u32,
    /// Synthetic corpus sizes used when no source directories are given.
    pub synthetic_tracks: usize,
    pub track_seconds: f64,
    pub synthetic_listeners: usize,
    pub synthetic_subjects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Icassp24,
            scenes: None,
            listeners_per_scene: None,
            silence_floor_db: DEFAULT_SILENCE_FLOOR_DB,
            sample_rate: 44_100,
            synthetic_tracks: 4,
            track_seconds: 31.0,
            synthetic_listeners: 5,
            synthetic_subjects: 2,
        }
    }
}

impl SceneConfig {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            mode: self.mode,
            scenes: self.scenes,
            listeners: ListenerPolicy {
                per_scene: self.listeners_per_scene,
            },
            silence_floor_db: self.silence_floor_db,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerSection {
    pub apply_gains: Option<bool>,
    pub amplification: Option<crate::enhancer::Amplification>,
    pub normalize_target: Option<f64>,
    pub output_format: Option<crate::dsp::SampleFormat>,
    pub nalr_taps: Option<usize>,
    pub emit_stems: Option<bool>,
}

impl EnhancerSection {
    pub fn resolve(&self) -> EnhancerConfig {
        let d = EnhancerConfig::default();
        EnhancerConfig {
            apply_gains: self.apply_gains.unwrap_or(d.apply_gains),
            amplification: self.amplification.unwrap_or(d.amplification),
            normalize_target: self.normalize_target.unwrap_or(d.normalize_target),
            output_format: self.output_format.unwrap_or(d.output_format),
            nalr_taps: self.nalr_taps.unwrap_or(d.nalr_taps),
            emit_stems: self.emit_stems.unwrap_or(d.emit_stems),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub backend: MetricKind,
    /// Program and arguments of an external scorer.
    pub command: Vec<String>,
    pub timeout_s: f64,
    pub max_parallel: Option<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            backend: MetricKind::Builtin,
            command: Vec::new(),
            timeout_s: DEFAULT_EXTERNAL_TIMEOUT.as_secs_f64(),
            max_parallel: None,
        }
    }
}

impl MetricConfig {
    pub fn backend(&self) -> Result<Box<dyn MetricBackend>, HarnessError> {
        match self.backend {
            MetricKind::Builtin => Ok(Box::new(builtin_metric())),
            MetricKind::External => {
                if !(self.timeout_s > 0.0) {
                    return Err(HarnessError::Config(format!("metric timeout {} s must be positive", self.timeout_s)));
                }
                let mut m = ExternalMetric::new(self.command.clone())?.with_timeout(Duration::from_secs_f64(self.timeout_s));
                if let Some(n) = self.max_parallel {
                    m = m.with_max_parallel(n);
                }
                Ok(Box::new(m))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub bound_ms: Option<f64>,
    pub probes: Option<usize>,
    pub tolerance: Option<f64>,
    pub signal_s: Option<f64>,
}

impl ProbeSection {
    pub fn resolve(&self, seed: u64) -> ProbeConfig {
        let d = ProbeConfig::default();
        ProbeConfig {
            bound_ms: self.bound_ms.unwrap_or(d.bound_ms),
            probes: self.probes.unwrap_or(d.probes),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            signal_s: self.signal_s.unwrap_or(d.signal_s),
            seed,
            measure: true,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| (path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}
