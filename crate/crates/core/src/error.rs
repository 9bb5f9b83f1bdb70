//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudiologyError {
    #[error("threshold {value} dB HL at {frequency_hz} Hz is out of range")]
    InvalidThreshold { frequency_hz: f64, value: f64 },
    #[error("listener id must not be empty")]
    EmptyId,
    #[error("duplicate listener id `{0}`")]
    DuplicateId(String),
    #[error("listener `{id}`: {reason}")]
    Record { id: String, reason: String },
    #[error("malformed listener manifest: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum DspError {
    #[error("audio buffer must have 1 or 2 channels, got {0}")]
    ChannelCount(usize),
    #[error("channel lengths differ")]
    RaggedChannels,
    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("expected a stereo buffer, got {0} channel(s)")]
    NotStereo(usize),
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("length mismatch: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("impulse response is empty")]
    EmptyImpulseResponse,
    #[error("mixture differs from the stem sum by relative RMS {relative_rms:.3e} (tolerance {tolerance:.1e})")]
    InconsistentMixture { relative_rms: f64, tolerance: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {reason}")]
    Wav { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("tap count must be odd and at least {min}, got {got}")]
    InvalidTapCount { got: usize, min: usize },
    #[error("sample rate must be at least {min} Hz, got {got}")]
    InvalidSampleRate { got: u32, min: u32 },
    #[error("target curve needs strictly increasing positive frequencies")]
    InvalidCurve,
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("track `{track_id}` is {length_s:.3} s long, shorter than the {dur_s} s segment")]
    TrackTooShort { track_id: String, length_s: f64, dur_s: f64 },
    #[error("no eligible segments in track `{0}`")]
    NoEligibleSegments(String),
    #[error("{what} pool is empty")]
    EmptyPool { what: &'static str },
    #[error("not enough eligible segments: {0}")]
    InsufficientSegments(String),
    #[error("requested {requested} listeners per scene but the pool holds {available}")]
    InsufficientListeners { requested: usize, available: usize },
    #[error("HRIR set `{subject}` has no entry for azimuth {azimuth_deg}°; available: {available:?}")]
    MissingAzimuth { subject: String, azimuth_deg: f64, available: Vec<f64> },
    #[error("unknown HRIR subject `{0}`")]
    UnknownSubject(String),
    #[error("invalid HRIR set: {0}")]
    InvalidHrir(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("scene `{scene_id}`: separator failed: {reason}")]
    Separator { scene_id: String, reason: String },
    #[error("invalid enhancer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cannot score zero-length signals")]
    Empty,
    #[error("sample rate {0} Hz too low for the analysis bands")]
    SampleRate(u32),
    #[error("external evaluator failed: {reason}\n--- transcript ---\n{transcript}")]
    External { reason: String, transcript: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input is empty")]
    Empty,
    #[error("NaN at index {0}")]
    NaN(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("at least {needed} groups required, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least {needed} observations required, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("correlation undefined: {0} is constant")]
    ConstantInput(&'static str),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("submission `{0}` failed validation; rerun with force to evaluate anyway")]
    NotValidated(String),
    #[error("missing reference material: {0}")]
    MissingReference(String),
    #[error("causality audit failed: {0}")]
    Audit(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("records file {path}: {reason}")]
    Records { path: String, reason: String },
    #[error(transparent)]
    Audiology(#[from] AudiologyError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<(String, std::io::Error)> for SceneError {
    fn from((path, source): (String, std::io::Error)) -> Self {
        SceneError::Io { path, source }
    }
}

impl From<(String, std::io::Error)> for HarnessError {
    fn from((path, source): (String, std::io::Error)) -> Self {
        HarnessError::Io { path, source }
    }
}
