//! Scene construction: silence-aware segmentation, seeded metadata
//! sampling, HRIR rendering to the hearing-aid microphones, and the
//! on-disk dataset layout shared with evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audiology::{load_listeners, save_listeners, Listener};
use crate::dsp::{amplitude_to_db, convolve_signal, read_wav, write_wav, AudioBuffer, GainSet, SampleFormat, Stem, StemSet};
use crate::error::{DspError, SceneError};

pub const ICASSP24_SEGMENT_S: f64 = 10.0;
pub const CAD1_SEGMENT_S: f64 = 30.0;
pub const DEFAULT_SILENCE_FLOOR_DB: f64 = -60.0;
/// Left-speaker azimuths; the right speaker mirrors them.
pub const SPEAKER_AZIMUTHS_DEG: [f64; 3] = [22.5, 30.0, 37.5];
pub const GAIN_STEPS_DB: [f64; 6] = [-10.0, -6.0, -3.0, 3.0, 6.0, 10.0];
/// Scene audio is stored as 32-bit float so references stay exact.
pub const DATASET_FORMAT: SampleFormat = SampleFormat::Float32;

/// Challenge flavour: headphone listening or loudspeakers via hearing aids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "CAD1")]
    Cad1,
    #[serde(rename = "ICASSP24")]
    Icassp24,
}

impl Mode {
    pub fn segment_dur_s(self) -> f64 {
        match self {
            Mode::Cad1 => CAD1_SEGMENT_S,
            Mode::Icassp24 => ICASSP24_SEGMENT_S,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cad1 => "CAD1",
            Mode::Icassp24 => "ICASSP24",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CAD1" => Ok(Mode::Cad1),
            "ICASSP24" => Ok(Mode::Icassp24),
            other => Err(format!("unknown mode `{other}` (expected CAD1 or ICASSP24)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpeakerSide {
    Left,
    Right,
}

/// Impulse responses from one loudspeaker to the two front microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirPair {
    pub left_mic: Vec<f64>,
    pub right_mic: Vec<f64>,
}

/// Azimuths are keyed in thousandths of a degree.
fn azimuth_key(deg: f64) -> i64 {
    (deg * 1000.0).round() as i64
}

/// HRIRs of one subject. Positive azimuths belong to the left speaker,
/// negative ones to the right speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirSet {
    subject_id: String,
    sample_rate_hz: u32,
    entries: BTreeMap<(SpeakerSide, i64), HrirPair>,
}

impl HrirSet {
    pub fn new(subject_id: impl Into<String>, sample_rate_hz: u32, entries: Vec<(f64, HrirPair)>) -> Result<Self, SceneError> {
        let subject_id = subject_id.into();
        let bad = |msg: String| SceneError::InvalidHrir(format!("subject `{subject_id}`: {msg}"));
        if sample_rate_hz == 0 {
            return Err(bad("sample rate must be positive".into()));
        }
        let mut map = BTreeMap::new();
        for (az, pair) in entries {
            if !az.is_finite() || az == 0.0 {
                return Err(bad(format!("azimuth {az} must be finite and nonzero")));
            }
            if pair.left_mic.is_empty() || pair.right_mic.is_empty() {
                return Err(bad(format!("empty impulse response at {az}°")));
            }
            if pair.left_mic.iter().chain(&pair.right_mic).any(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite impulse response at {az}°")));
            }
            let side = if az > 0.0 { SpeakerSide::Left } else { SpeakerSide::Right };
            if map.insert((side, azimuth_key(az)), pair).is_some() {
                return Err(bad(format!("duplicate azimuth {az}°")));
            }
        }
        if map.is_empty() {
            return Err(bad("no entries".into()));
        }
        for &(side, key) in map.keys() {
            let mirror = match side {
                SpeakerSide::Left => SpeakerSide::Right,
                SpeakerSide::Right => SpeakerSide::Left,
            };
            if !map.contains_key(&(mirror, -key)) {
                return Err(bad(format!("azimuth {}° has no mirrored entry for the other speaker", key as f64 / 1000.0)));
            }
        }
        let lengths: Vec<usize> = map.values().flat_map(|p| [p.left_mic.len(), p.right_mic.len()]).collect();
        let (lo, hi) = (lengths.iter().min().unwrap(), lengths.iter().max().unwrap());
        if *hi > 2 * lo {
            return Err(bad(format!("impulse response lengths {lo}..{hi} differ by more than 2x")));
        }
        Ok(Self {
            subject_id,
            sample_rate_hz,
            entries: map,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate_hz
    }

    /// Signed azimuths in ascending order.
    pub fn azimuths(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries.keys().map(|&(_, k)| k as f64 / 1000.0).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn get(&self, azimuth_deg: f64) -> Result<&HrirPair, SceneError> {
        let side = if azimuth_deg > 0.0 { SpeakerSide::Left } else { SpeakerSide::Right };
        self.entries
            .get(&(side, azimuth_key(azimuth_deg)))
            .ok_or_else(|| SceneError::MissingAzimuth {
                subject: self.subject_id.clone(),
                azimuth_deg,
                available: self.azimuths(),
            })
    }

    fn iter(&self) -> impl Iterator<Item = (f64, &HrirPair)> {
        self.entries.iter().map(|(&(_, k), p)| (k as f64 / 1000.0, p))
    }
}

fn add_into(acc: &mut [f64], y: &[f64]) {
    for (a, b) in acc.iter_mut().zip(y) {
        *a += b;
    }
}

/// Loudspeaker program to the two hearing-aid microphones, trimmed to the
/// program length.
pub fn render_at_ears(program: &AudioBuffer, h: &HrirSet, angle_left_deg: f64, angle_right_deg: f64) -> Result<AudioBuffer, SceneError> {
    program.require_stereo()?;
    program.require_rate(h.sample_rate())?;
    let from_left = h.get(angle_left_deg)?;
    let from_right = h.get(angle_right_deg)?;
    let n = program.len();
    let (l, r) = (program.channel(0), program.channel(1));
    let mut left_mic = vec![0.0; n];
    let mut right_mic = vec![0.0; n];
    add_into(&mut left_mic, &convolve_signal(l, &from_left.left_mic));
    add_into(&mut left_mic, &convolve_signal(r, &from_right.left_mic));
    add_into(&mut right_mic, &convolve_signal(l, &from_left.right_mic));
    add_into(&mut right_mic, &convolve_signal(r, &from_right.right_mic));
    Ok(AudioBuffer::stereo(program.sample_rate(), left_mic, right_mic)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub active_stems: Vec<Stem>,
}

impl Segment {
    pub fn eligible(&self) -> bool {
        self.active_stems.len() == Stem::ALL.len()
    }
}

/// Consecutive fixed-length windows of a track with their active stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentIndex {
    pub track_id: String,
    pub dur_s: f64,
    pub segments: Vec<Segment>,
}

impl SegmentIndex {
    pub fn eligible(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.eligible())
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible().count()
    }
}

/// RMS in dBFS over both channels of `x[start..start+len]`.
fn window_rms_db(x: &AudioBuffer, start: usize, len: usize) -> f64 {
    let energy: f64 = x
        .channels()
        .iter()
        .flat_map(|c| c[start..start + len].iter())
        .map(|v| v * v)
        .sum();
    amplitude_to_db((energy / (len * x.num_channels()) as f64).sqrt())
}

pub fn window_len(dur_s: f64, fs: u32) -> usize {
    (dur_s * fs as f64).round() as usize
}

/// Split a track into consecutive `dur_s` windows from t = 0, dropping the
/// trailing partial window. A stem is active when its window RMS exceeds
/// `silence_floor_db`.
pub fn segment_track(track_id: &str, s: &StemSet, dur_s: f64, silence_floor_db: f64) -> Result<SegmentIndex, SceneError> {
    if !(dur_s > 0.0) {
        return Err(SceneError::InvalidScene(format!("segment duration {dur_s} must be positive")));
    }
    let fs = s.sample_rate();
    let win = window_len(dur_s, fs);
    if win == 0 || s.len() < win {
        return Err(SceneError::TrackTooShort {
            track_id: track_id.to_string(),
            length_s: s.len() as f64 / fs as f64,
            dur_s,
        });
    }
    let segments = (0..s.len() / win)
        .map(|i| {
            let start = i * win;
            let active_stems = s
                .iter()
                .filter(|(_, buf)| window_rms_db(buf, start, win) > silence_floor_db)
                .map(|(stem, _)| stem)
                .collect();
            Segment {
                start_s: start as f64 / fs as f64,
                active_stems,
            }
        })
        .collect();
    Ok(SegmentIndex {
        track_id: track_id.to_string(),
        dur_s,
        segments,
    })
}

/// One evaluable unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub track_id: String,
    pub segment_start_s: f64,
    pub segment_dur_s: f64,
    pub hrtf_subject: Option<String>,
    pub angle_left_deg: Option<f64>,
    pub angle_right_deg: Option<f64>,
    pub gains: GainSet,
    pub listener_ids: Vec<String>,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn mode(&self) -> Mode {
        if self.hrtf_subject.is_some() {
            Mode::Icassp24
        } else {
            Mode::Cad1
        }
    }

    pub fn start_sample(&self, fs: u32) -> usize {
        (self.segment_start_s * fs as f64).round() as usize
    }

    pub fn len_samples(&self, fs: u32) -> usize {
        window_len(self.segment_dur_s, fs)
    }

    /// Checks the sampled-metadata domains.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidScene(format!("{}: {m}", self.scene_id)));
        let expected = self.mode().segment_dur_s();
        if self.segment_dur_s != expected {
            return bad(format!("segment duration {} s, expected {expected} s", self.segment_dur_s));
        }
        match (self.mode(), self.angle_left_deg, self.angle_right_deg) {
            (Mode::Icassp24, Some(l), Some(r)) => {
                if !SPEAKER_AZIMUTHS_DEG.contains(&l) || !SPEAKER_AZIMUTHS_DEG.contains(&-r) {
                    return bad(format!("angle pair ({l}, {r}) outside the grid"));
                }
            }
            (Mode::Cad1, None, None) => {}
            _ => return bad("angles must be present exactly when an HRTF subject is".into()),
        }
        let gains = self.gains.as_array();
        if gains.iter().any(|g| *g != 0.0 && !GAIN_STEPS_DB.contains(g)) {
            return bad(format!("gain values {gains:?} outside the allowed steps"));
        }
        if !(1..=3).contains(&self.gains.nonzero_count()) {
            return bad(format!("{} altered stems, expected 1 to 3", self.gains.nonzero_count()));
        }
        if self.listener_ids.is_empty() {
            return bad("no listeners assigned".into());
        }
        Ok(())
    }
}

/// How many listeners each scene is paired with; `None` pairs all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ListenerPolicy {
    pub per_scene: Option<usize>,
}

/// splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based sub-seed for scene `index`.
pub fn scene_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

struct Metadata {
    hrtf_subject: Option<String>,
    angles: Option<(f64, f64)>,
    gains: GainSet,
    listener_ids: Vec<String>,
}

fn sample_metadata(
    rng: &mut ChaCha8Rng,
    listener_ids: &[String],
    subjects: &[String],
    mode: Mode,
    policy: ListenerPolicy,
) -> Result<Metadata, SceneError> {
    if listener_ids.is_empty() {
        return Err(SceneError::EmptyPool { what: "listener" });
    }
    let (hrtf_subject, angles) = match mode {
        Mode::Icassp24 => {
            if subjects.is_empty() {
                return Err(SceneError::EmptyPool { what: "HRTF subject" });
            }
            let subject = subjects[rng.gen_range(0..subjects.len())].clone();
            let pair = rng.gen_range(0..9);
            let left = SPEAKER_AZIMUTHS_DEG[pair / 3];
            let right = -SPEAKER_AZIMUTHS_DEG[pair % 3];
            (Some(subject), Some((left, right)))
        }
        Mode::Cad1 => (None, None),
    };
    let altered = rng.gen_range(1..=3);
    let mut gains = GainSet::zero();
    let mut chosen = sample_indices(rng, Stem::ALL.len(), altered).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        gains.set(Stem::ALL[i], GAIN_STEPS_DB[rng.gen_range(0..GAIN_STEPS_DB.len())]);
    }
    let listener_ids = match policy.per_scene {
        None => listener_ids.to_vec(),
        Some(k) if k > listener_ids.len() => {
            return Err(SceneError::InsufficientListeners {
                requested: k,
                available: listener_ids.len(),
            })
        }
        Some(k) => {
            let mut idx = sample_indices(rng, listener_ids.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| listener_ids[i].clone()).collect()
        }
    };
    Ok(Metadata {
        hrtf_subject,
        angles,
        gains,
        listener_ids,
    })
}

fn assemble(scene_id: String, track_id: &str, start_s: f64, mode: Mode, seed: u64, m: Metadata) -> SceneSpec {
    SceneSpec {
        scene_id,
        track_id: track_id.to_string(),
        segment_start_s: start_s,
        segment_dur_s: mode.segment_dur_s(),
        hrtf_subject: m.hrtf_subject,
        angle_left_deg: m.angles.map(|a| a.0),
        angle_right_deg: m.angles.map(|a| a.1),
        gains: m.gains,
        listener_ids: m.listener_ids,
        rng_seed: seed,
    }
}

/// Draw one scene from `track`. Every choice comes from a ChaCha8 stream
/// seeded with `seed`, so equal seeds give equal scenes.
pub fn sample_scene(
    scene_id: impl Into<String>,
    seed: u64,
    track: &SegmentIndex,
    listener_ids: &[String],
    subjects: &[String],
    mode: Mode,
    policy: ListenerPolicy,
) -> Result<SceneSpec, SceneError> {
    if track.dur_s != mode.segment_dur_s() {
        return Err(SceneError::InvalidScene(format!(
            "track `{}` is indexed in {} s windows but {mode} scenes last {} s",
            track.track_id,
            track.dur_s,
            mode.segment_dur_s()
        )));
    }
    let eligible: Vec<&Segment> = track.eligible().collect();
    if eligible.is_empty() {
        return Err(SceneError::NoEligibleSegments(track.track_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_s = eligible[rng.gen_range(0..eligible.len())].start_s;
    let m = sample_metadata(&mut rng, listener_ids, subjects, mode, policy)?;
    Ok(assemble(scene_id.into(), &track.track_id, start_s, mode, seed, m))
}

/// A source track: id plus stems (and optionally its mixture).
#[derive(Debug, Clone)]
pub struct Track {
    pub id: String,
    pub stems: StemSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub mode: Mode,
    /// Number of scenes; `None` takes every eligible segment (ICASSP24) or
    /// one scene per track (CAD1).
    pub scenes: Option<usize>,
    #[serde(default)]
    pub listeners: ListenerPolicy,
    pub silence_floor_db: f64,
}

impl DatasetConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            scenes: None,
            listeners: ListenerPolicy::default(),
            silence_floor_db: DEFAULT_SILENCE_FLOOR_DB,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub scenes: Vec<SceneSpec>,
    pub indexes: Vec<SegmentIndex>,
}

impl SceneDataset {
    pub fn pair_count(&self) -> usize {
        self.scenes.iter().map(|s| s.listener_ids.len()).sum()
    }
}

fn diagnostics(indexes: &[SegmentIndex]) -> String {
    indexes
        .iter()
        .map(|ix| format!("{}: {}/{} windows eligible", ix.track_id, ix.eligible_count(), ix.segments.len()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Uniform subset of `0..available` of size `n`, in ascending order.
fn choose_subset(master: u64, available: usize, n: usize) -> Vec<usize> {
    if n == available {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ 0x5ce_4e5e7));
    let mut v = sample_indices(&mut rng, available, n).into_vec();
    v.sort_unstable();
    v
}

/// Plan scene metadata for a collection of tracks. Pure function of the
/// inputs and `master_seed`.
pub fn plan_scenes(
    tracks: &[Track],
    listeners: &[Listener],
    subjects: &[String],
    cfg: &DatasetConfig,
    master_seed: u64,
) -> Result<SceneDataset, SceneError> {
    let dur = cfg.mode.segment_dur_s();
    let indexes = tracks
        .par_iter()
        .map(|t| segment_track(&t.id, &t.stems, dur, cfg.silence_floor_db))
        .collect::<Result<Vec<_>, _>>()?;
    if cfg.scenes == Some(0) {
        return Ok(SceneDataset { scenes: vec![], indexes });
    }
    let ids: Vec<String> = listeners.iter().map(|l| l.id.clone()).collect();
    let mut scenes = Vec::new();
    match cfg.mode {
        Mode::Icassp24 => {
            let candidates: Vec<(&str, f64)> = indexes
                .iter()
                .flat_map(|ix| ix.eligible().map(move |s| (ix.track_id.as_str(), s.start_s)))
                .collect();
            let n = cfg.scenes.unwrap_or(candidates.len());
            if n > candidates.len() || candidates.is_empty() {
                return Err(SceneError::InsufficientSegments(format!(
                    "requested {n} scenes, {} eligible segments ({})",
                    candidates.len(),
                    diagnostics(&indexes)
                )));
            }
            for (i, c) in choose_subset(master_seed, candidates.len(), n).into_iter().enumerate() {
                let (track_id, start_s) = candidates[c];
                let seed = scene_seed(master_seed, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = sample_metadata(&mut rng, &ids, subjects, cfg.mode, cfg.listeners)?;
                scenes.push(assemble(format!("S{i:05}"), track_id, start_s, cfg.mode, seed, m));
            }
        }
        Mode::Cad1 => {
            let usable: Vec<&SegmentIndex> = indexes.iter().filter(|ix| ix.eligible_count() > 0).collect();
            let n = cfg.scenes.unwrap_or(tracks.len());
            if n > usable.len() || usable.is_empty() {
                return Err(SceneError::InsufficientSegments(format!(
                    "requested {n} scenes, {} tracks with an eligible window ({})",
                    usable.len(),
                    diagnostics(&indexes)
                )));
            }
            for (i, c) in choose_subset(master_seed, usable.len(), n).into_iter().enumerate() {
                let seed = scene_seed(master_seed, i as u64);
                scenes.push(sample_scene(format!("S{i:05}"), seed, usable[c], &ids, subjects, cfg.mode, cfg.listeners)?);
            }
        }
    }
    Ok(SceneDataset { scenes, indexes })
}

/// Paths inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn scenes_manifest(&self) -> PathBuf {
        self.root.join("scenes.json")
    }

    pub fn listeners_manifest(&self) -> PathBuf {
        self.root.join("listeners.json")
    }

    pub fn hrir_dir(&self) -> PathBuf {
        self.root.join("hrirs")
    }

    pub fn hrir_index(&self) -> PathBuf {
        self.hrir_dir().join("index.json")
    }

    pub fn scene_dir(&self, scene_id: &str) -> PathBuf {
        self.root.join("scenes").join(scene_id)
    }

    pub fn mixture(&self, scene_id: &str) -> PathBuf {
        self.scene_dir(scene_id).join("mixture.wav")
    }

    pub fn stem(&self, scene_id: &str, stem: Stem) -> PathBuf {
        self.scene_dir(scene_id).join("stems").join(format!("{}.wav", stem.name()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |e| SceneError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn scenes_to_json(scenes: &[SceneSpec]) -> String {
    serde_json::to_string_pretty(scenes).expect("scene specs serialize")
}

pub fn save_scenes(path: impl AsRef<Path>, scenes: &[SceneSpec]) -> Result<(), SceneError> {
    let path = path.as_ref();
    fs::write(path, scenes_to_json(scenes) + "\n").map_err(io_err(path))
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<SceneSpec>, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let scenes: Vec<SceneSpec> = serde_json::from_str(&text).map_err(|e| SceneError::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut seen = std::collections::HashSet::new();
    for s in &scenes {
        if !seen.insert(s.scene_id.as_str()) {
            return Err(SceneError::Manifest {
                path: path.display().to_string(),
                reason: format!("duplicate scene id `{}`", s.scene_id),
            });
        }
    }
    Ok(scenes)
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    left_mic: String,
    right_mic: String,
}

fn mono_ir(path: &Path, fs: &mut Option<u32>) -> Result<Vec<f64>, SceneError> {
    let wav = read_wav(path)?;
    if wav.buffer.num_channels() != 1 {
        return Err(SceneError::InvalidHrir(format!("{}: impulse responses must be mono", path.display())));
    }
    match *fs {
        None => *fs = Some(wav.buffer.sample_rate()),
        Some(r) if r != wav.buffer.sample_rate() => {
            return Err(SceneError::InvalidHrir(format!(
                "{}: rate {} Hz differs from {r} Hz",
                path.display(),
                wav.buffer.sample_rate()
            )))
        }
        _ => {}
    }
    Ok(wav.buffer.into_channels().remove(0))
}

/// Load HRIR sets from a JSON index `subject → azimuth → {left_mic, right_mic}`
/// with WAV paths relative to the index file.
pub fn load_hrir_index(path: impl AsRef<Path>) -> Result<Vec<HrirSet>, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest = |reason: String| SceneError::Manifest {
        path: path.display().to_string(),
        reason,
    };
    let index: BTreeMap<String, BTreeMap<String, IndexEntry>> =
        serde_json::from_str(&text).map_err(|e| manifest(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut sets = Vec::with_capacity(index.len());
    for (subject, angles) in index {
        let mut fs_hz = None;
        let mut entries = Vec::with_capacity(angles.len());
        for (angle, e) in angles {
            let az: f64 = angle
                .parse()
                .map_err(|_| manifest(format!("subject `{subject}`: azimuth `{angle}` is not a number")))?;
            let pair = HrirPair {
                left_mic: mono_ir(&base.join(&e.left_mic), &mut fs_hz)?,
                right_mic: mono_ir(&base.join(&e.right_mic), &mut fs_hz)?,
            };
            entries.push((az, pair));
        }
        let fs_hz = fs_hz.ok_or_else(|| manifest(format!("subject `{subject}` has no entries")))?;
        sets.push(HrirSet::new(subject, fs_hz, entries)?);
    }
    Ok(sets)
}

/// Write HRIR WAVs under `dir/<subject>/` and the JSON index at `dir/index.json`.
pub fn save_hrir_sets(dir: impl AsRef<Path>, sets: &[HrirSet]) -> Result<PathBuf, SceneError> {
    let dir = dir.as_ref();
    let mut index: BTreeMap<String, BTreeMap<String, IndexEntry>> = BTreeMap::new();
    for set in sets {
        let sub = dir.join(&set.subject_id);
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let entries = index.entry(set.subject_id.clone()).or_default();
        for (az, pair) in set.iter() {
            let name = format!("{az:+}");
            let rel = |mic: &str, ir: &[f64]| -> Result<String, SceneError> {
                let file = format!("{name}_{mic}.wav");
                let buf = AudioBuffer::mono(set.sample_rate_hz, ir.to_vec())?;
                write_wav(sub.join(&file), &buf, DATASET_FORMAT)?;
                Ok(format!("{}/{file}", set.subject_id))
            };
            let entry = IndexEntry {
                left_mic: rel("left", &pair.left_mic)?,
                right_mic: rel("right", &pair.right_mic)?,
            };
            entries.insert(name, entry);
        }
    }
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

fn find_subject<'a>(hrirs: &'a [HrirSet], subject: &str) -> Result<&'a HrirSet, SceneError> {
    hrirs
        .iter()
        .find(|h| h.subject_id == subject)
        .ok_or_else(|| SceneError::UnknownSubject(subject.to_string()))
}

/// The signal presented to the enhancer: the segment mixture, rendered at
/// the hearing-aid microphones for loudspeaker scenes.
pub fn scene_mixture(scene: &SceneSpec, stems: &StemSet, hrirs: &[HrirSet]) -> Result<AudioBuffer, SceneError> {
    let mix = stems.mixture_or_sum();
    match (&scene.hrtf_subject, scene.angle_left_deg, scene.angle_right_deg) {
        (Some(subject), Some(l), Some(r)) => render_at_ears(&mix, find_subject(hrirs, subject)?, l, r),
        (None, _, _) => Ok(mix),
        _ => Err(SceneError::InvalidScene(format!("{}: HRTF subject without angles", scene.scene_id))),
    }
}

/// Stems rendered the same way as [`scene_mixture`].
pub fn scene_stems_at_ears(scene: &SceneSpec, stems: &StemSet, hrirs: &[HrirSet]) -> Result<StemSet, SceneError> {
    match (&scene.hrtf_subject, scene.angle_left_deg, scene.angle_right_deg) {
        (Some(subject), Some(l), Some(r)) => {
            let h = find_subject(hrirs, subject)?;
            stems.try_map(|_, s| render_at_ears(s, h, l, r))
        }
        (None, _, _) => Ok(stems.clone()),
        _ => Err(SceneError::InvalidScene(format!("{}: HRTF subject without angles", scene.scene_id))),
    }
}

/// Cut a scene's segment out of its source track.
pub fn scene_segment(scene: &SceneSpec, track: &StemSet) -> Result<StemSet, SceneError> {
    let fs = track.sample_rate();
    Ok(track.slice(scene.start_sample(fs), scene.len_samples(fs))?)
}

/// Plan scenes and, unless no scenes are requested, write the dataset:
/// `scenes.json`, `listeners.json`, `hrirs/` (loudspeaker mode) and per scene
/// `scenes/<id>/mixture.wav` plus the true stems in `scenes/<id>/stems/`.
pub fn build_scene_dataset(
    tracks: &[Track],
    listeners: &[Listener],
    hrirs: &[HrirSet],
    cfg: &DatasetConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<SceneDataset, SceneError> {
    let subjects: Vec<String> = hrirs.iter().map(|h| h.subject_id.clone()).collect();
    let dataset = plan_scenes(tracks, listeners, &subjects, cfg, master_seed)?;
    let layout = DatasetLayout::new(out_dir);
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    save_scenes(layout.scenes_manifest(), &dataset.scenes)?;
    if dataset.scenes.is_empty() {
        return Ok(dataset);
    }
    let listener_path = layout.listeners_manifest();
    save_listeners(&listener_path, listeners).map_err(|e| SceneError::Manifest {
        path: listener_path.display().to_string(),
        reason: e.to_string(),
    })?;
    if cfg.mode == Mode::Icassp24 {
        let dir = layout.hrir_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        save_hrir_sets(&dir, hrirs)?;
    }
    let by_id: BTreeMap<&str, &Track> = tracks.iter().map(|t| (t.id.as_str(), t)).collect();
    dataset.scenes.par_iter().try_for_each(|scene| -> Result<(), SceneError> {
        let track = by_id[scene.track_id.as_str()];
        let seg = scene_segment(scene, &track.stems)?;
        let stem_dir = layout.scene_dir(&scene.scene_id).join("stems");
        fs::create_dir_all(&stem_dir).map_err(io_err(&stem_dir))?;
        for (stem, buf) in seg.iter() {
            write_wav(layout.stem(&scene.scene_id, stem), buf, DATASET_FORMAT)?;
        }
        let mix = scene_mixture(scene, &seg, hrirs)?;
        write_wav(layout.mixture(&scene.scene_id), &mix, DATASET_FORMAT)?;
        Ok(())
    })?;
    log::info!(
        "wrote {} scenes ({} scene/listener pairs) to {}",
        dataset.scenes.len(),
        dataset.pair_count(),
        out_dir.display()
    );
    Ok(dataset)
}

/// A dataset directory opened for enhancement or evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub scenes: Vec<SceneSpec>,
    pub listeners: Vec<Listener>,
    pub hrirs: Vec<HrirSet>,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SceneError> {
        let layout = DatasetLayout::new(root);
        let scenes = load_scenes(layout.scenes_manifest())?;
        let listeners = if scenes.is_empty() && !layout.listeners_manifest().exists() {
            Vec::new()
        } else {
            let path = layout.listeners_manifest();
            load_listeners(&path)
                .map_err(|e| SceneError::Manifest {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?
                .listeners
        };
        let hrirs = if layout.hrir_index().exists() {
            load_hrir_index(layout.hrir_index())?
        } else {
            Vec::new()
        };
        Ok(Self {
            layout,
            scenes,
            listeners,
            hrirs,
        })
    }

    pub fn mode(&self) -> Option<Mode> {
        self.scenes.first().map(SceneSpec::mode)
    }

    pub fn scene(&self, scene_id: &str) -> Option<&SceneSpec> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn listener(&self, id: &str) -> Option<&Listener> {
        self.listeners.iter().find(|l| l.id == id)
    }

    /// `(scene_id, listener_id)` pairs in manifest order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.scenes
            .iter()
            .flat_map(|s| s.listener_ids.iter().map(move |l| (s.scene_id.clone(), l.clone())))
            .collect()
    }

    pub fn load_stems(&self, scene: &SceneSpec) -> Result<StemSet, SceneError> {
        let load = |stem: Stem| -> Result<AudioBuffer, SceneError> {
            let path = self.layout.stem(&scene.scene_id, stem);
            if !path.exists() {
                return Err(SceneError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing reference stem"),
                });
            }
            Ok(read_wav(path)?.buffer)
        };
        Ok(StemSet::from_stems(
            load(Stem::Vocals)?,
            load(Stem::Drums)?,
            load(Stem::Bass)?,
            load(Stem::Other)?,
        )?)
    }

    pub fn load_mixture(&self, scene: &SceneSpec) -> Result<AudioBuffer, SceneError> {
        Ok(read_wav(self.layout.mixture(&scene.scene_id))?.buffer)
    }
}

/// Load source tracks from `dir/<track_id>/{vocals,drums,bass,other}.wav`,
/// with an optional `mixture.wav` checked against the stem sum.
pub fn load_tracks(dir: impl AsRef<Path>) -> Result<Vec<Track>, SceneError> {
    let dir = dir.as_ref();
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let id = p.file_name().unwrap().to_string_lossy().into_owned();
            let read = |name: &str| read_wav(p.join(name)).map(|w| w.buffer);
            let stems = [
                read("vocals.wav")?,
                read("drums.wav")?,
                read("bass.wav")?,
                read("other.wav")?,
            ];
            let mix_path = p.join("mixture.wav");
            let mixture = if mix_path.exists() { Some(read("mixture.wav")?) } else { None };
            let stems = StemSet::new(stems, mixture).map_err(|e: DspError| SceneError::InvalidScene(format!("track `{id}`: {e}")))?;
            Ok(Track { id, stems })
        })
        .collect()
}

pub fn save_track(dir: impl AsRef<Path>, track: &Track) -> Result<(), SceneError> {
    let sub = dir.as_ref().join(&track.id);
    fs::create_dir_all(&sub).map_err(io_err(&sub))?;
    for (stem, buf) in track.stems.iter() {
        write_wav(sub.join(format!("{}.wav", stem.name())), buf, DATASET_FORMAT)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(len: usize, at: usize, gain: f64) -> Vec<f64> {
        let mut v = vec![0.0; len];
        v[at] = gain;
        v
    }

    fn isolated_set(fs: u32) -> HrirSet {
        let entries = SPEAKER_AZIMUTHS_DEG
            .iter()
            .flat_map(|&a| {
                [
                    (a, HrirPair { left_mic: delta(4, 0, 1.0), right_mic: vec![0.0; 4] }),
                    (-a, HrirPair { left_mic: vec![0.0; 4], right_mic: delta(4, 0, 1.0) }),
                ]
            })
            .collect();
        HrirSet::new("iso", fs, entries).unwrap()
    }

    fn tone(fs: u32, n: usize, f: f64, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / fs as f64).sin()).collect()
    }

    fn stems_with_gap(fs: u32, secs: usize, gap: Option<(Stem, usize, usize)>) -> StemSet {
        let n = fs as usize * secs;
        let bufs: Vec<AudioBuffer> = Stem::ALL
            .iter()
            .enumerate()
            .map(|(k, &stem)| {
                let mut x = tone(fs, n, 110.0 * (k + 1) as f64, 0.2);
                if let Some((s, a, b)) = gap {
                    if s == stem {
                        x[a * fs as usize..b * fs as usize].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                AudioBuffer::stereo(fs, x.clone(), x).unwrap()
            })
            .collect();
        StemSet::new(bufs.try_into().unwrap(), None).unwrap()
    }

    #[test]
    fn segmentation_examples() {
        let s = stems_with_gap(1000, 35, None);
        let ix = segment_track("t", &s, 10.0, -60.0).unwrap();
        let starts: Vec<f64> = ix.segments.iter().map(|s| s.start_s).collect();
        assert_eq!(starts, vec![0.0, 10.0, 20.0]);
        assert!(ix.segments.iter().all(Segment::eligible));

        let gated = stems_with_gap(1000, 30, Some((Stem::Bass, 10, 20)));
        let ix = segment_track("t", &gated, 10.0, -60.0).unwrap();
        let flags: Vec<bool> = ix.segments.iter().map(Segment::eligible).collect();
        assert_eq!(flags, vec![true, false, true]);
        assert!(!ix.segments[1].active_stems.contains(&Stem::Bass));

        let short = stems_with_gap(1000, 5, None);
        assert!(matches!(
            segment_track("short", &short, 10.0, -60.0),
            Err(SceneError::TrackTooShort { .. })
        ));
    }

    #[test]
    fn sampling_is_seed_deterministic_and_in_domain() {
        let s = stems_with_gap(1000, 35, None);
        let ix = segment_track("t", &s, 10.0, -60.0).unwrap();
        let ids: Vec<String> = (0..53).map(|i| format!("L{i:03}")).collect();
        let subjects: Vec<String> = (0..16).map(|i| format!("H{i:02}")).collect();
        let policy = ListenerPolicy { per_scene: Some(20) };
        let a = sample_scene("x", 42, &ix, &ids, &subjects, Mode::Icassp24, policy).unwrap();
        let b = sample_scene("x", 42, &ix, &ids, &subjects, Mode::Icassp24, policy).unwrap();
        assert_eq!(a, b);
        for seed in 0..500 {
            let sc = sample_scene("x", seed, &ix, &ids, &subjects, Mode::Icassp24, policy).unwrap();
            sc.validate().unwrap();
            let mut l = sc.listener_ids.clone();
            l.dedup();
            assert_eq!(l.len(), 20);
        }
        assert!(sample_scene("c", 7, &ix, &ids, &subjects, Mode::Cad1, ListenerPolicy::default()).is_err());
        let ix30 = segment_track("t", &s, 30.0, -60.0).unwrap();
        let cad = sample_scene("c", 7, &ix30, &ids, &subjects, Mode::Cad1, ListenerPolicy::default()).unwrap();
        cad.validate().unwrap();
        assert_eq!(cad.listener_ids.len(), 53);
        assert_eq!(cad.hrtf_subject, None);
        let empty = SegmentIndex { track_id: "e".into(), dur_s: 10.0, segments: vec![] };
        assert!(matches!(
            sample_scene("x", 1, &empty, &ids, &subjects, Mode::Icassp24, policy),
            Err(SceneError::NoEligibleSegments(_))
        ));
    }

    #[test]
    fn render_identity_and_crosstalk() {
        let fs = 1000;
        let prog = AudioBuffer::stereo(fs, tone(fs, 300, 13.0, 0.5), tone(fs, 300, 29.0, 0.3)).unwrap();
        let out = render_at_ears(&prog, &isolated_set(fs), 30.0, -30.0).unwrap();
        assert_eq!(out, prog);

        let mut entries = Vec::new();
        for &a in &SPEAKER_AZIMUTHS_DEG {
            entries.push((a, HrirPair { left_mic: delta(32, 0, 1.0), right_mic: vec![0.0; 32] }));
            entries.push((-a, HrirPair { left_mic: delta(32, 20, 0.5), right_mic: delta(32, 0, 1.0) }));
        }
        let h = HrirSet::new("xt", fs, entries).unwrap();
        let out = render_at_ears(&prog, &h, 22.5, -22.5).unwrap();
        for i in 0..300 {
            let expect = prog.channel(0)[i] + if i >= 20 { 0.5 * prog.channel(1)[i - 20] } else { 0.0 };
            assert!((out.channel(0)[i] - expect).abs() < 1e-12);
        }
        match render_at_ears(&prog, &h, 45.0, -22.5) {
            Err(SceneError::MissingAzimuth { available, .. }) => assert_eq!(available.len(), 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_symmetry() {
        let fs = 1000;
        let mut entries = Vec::new();
        for &a in &SPEAKER_AZIMUTHS_DEG {
            let near = vec![0.9, 0.2, -0.1];
            let far = vec![0.0, 0.4, 0.3];
            entries.push((a, HrirPair { left_mic: near.clone(), right_mic: far.clone() }));
            entries.push((-a, HrirPair { left_mic: far, right_mic: near }));
        }
        let h = HrirSet::new("sym", fs, entries).unwrap();
        let x = tone(fs, 200, 17.0, 0.4);
        let prog = AudioBuffer::stereo(fs, x.clone(), x).unwrap();
        let out = render_at_ears(&prog, &h, 37.5, -37.5).unwrap();
        for (a, b) in out.channel(0).iter().zip(out.channel(1)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hrir_set_invariants() {
        let one = |a: f64| (a, HrirPair { left_mic: vec![1.0], right_mic: vec![1.0] });
        assert!(HrirSet::new("x", 1000, vec![one(30.0)]).is_err());
        let long = (-30.0, HrirPair { left_mic: vec![1.0; 5], right_mic: vec![1.0] });
        assert!(HrirSet::new("x", 1000, vec![one(30.0), long]).is_err());
        assert!(HrirSet::new("x", 1000, vec![one(30.0), one(-30.0)]).is_ok());
    }

    #[test]
    fn hrir_index_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = isolated_set(8000);
        let index = save_hrir_sets(dir.path(), std::slice::from_ref(&set)).unwrap();
        let back = load_hrir_index(index).unwrap();
        assert_eq!(back, vec![set]);
    }

    #[test]
    fn split_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| scene_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
    }
}
