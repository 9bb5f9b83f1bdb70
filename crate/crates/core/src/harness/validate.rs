use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, Stem};
use crate::error::HarnessError;
use crate::scene::{window_len, Mode, SceneSpec};

pub const REMIX_SUFFIX: &str = "_remix.wav";
pub const NAMING_PATTERN: &str = "<scene_id>_<listener_id>_remix.wav";
pub const MANIFEST_FILE: &str = "submission.json";

/// Describes a submission directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionManifest {
    pub system_id: String,
    pub mode: Mode,
    pub expected_pairs: usize,
    pub naming_pattern: String,
    /// `None` for non-causal systems.
    pub declared_lookahead_ms: Option<f64>,
}

impl SubmissionManifest {
    pub fn new(system_id: impl Into<String>, mode: Mode, expected_pairs: usize, lookahead_ms: f64) -> Self {
        Self {
            system_id: system_id.into(),
            mode,
            expected_pairs,
            naming_pattern: NAMING_PATTERN.to_string(),
            declared_lookahead_ms: lookahead_ms.is_finite().then_some(lookahead_ms),
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| (path.display().to_string(), e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if m.expected_pairs == 0 {
            return Err(HarnessError::Config(format!("{}: expected_pairs must be positive", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| (path.display().to_string(), e).into())
    }
}

pub fn remix_file_name(scene_id: &str, listener_id: &str) -> String {
    format!("{scene_id}_{listener_id}{REMIX_SUFFIX}")
}

pub fn stems_dir_name(scene_id: &str, listener_id: &str) -> String {
    format!("{scene_id}_{listener_id}")
}

pub fn stem_file(dir: &Path, scene_id: &str, listener_id: &str, stem: Stem) -> PathBuf {
    dir.join(stems_dir_name(scene_id, listener_id)).join(format!("{}.wav", stem.name()))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FormatError {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Expected remix files that are absent.
    pub missing: Vec<String>,
    /// Files that follow the naming pattern but match no expected pair.
    pub extra: Vec<String>,
    pub format_errors: Vec<FormatError>,
    /// Clipped-sample counts per readable file.
    pub clipping: BTreeMap<String, usize>,
    pub pass: bool,
}

impl ValidationReport {
    fn finish(mut self) -> Self {
        self.missing.sort();
        self.extra.sort();
        self.format_errors.sort();
        self.pass = self.missing.is_empty() && self.extra.is_empty() && self.format_errors.is_empty();
        self
    }

    /// Names of every file with a problem, for compact reporting.
    pub fn defects(&self) -> Vec<String> {
        let mut v: Vec<String> = self.missing.iter().chain(&self.extra).cloned().collect();
        v.extend(self.format_errors.iter().map(|e| e.file.clone()));
        v.sort();
        v
    }
}

/// What a single audio file must look like.
#[derive(Debug, Clone, Copy)]
struct Expectation {
    sample_rate: u32,
    samples: usize,
    tolerance: usize,
}

fn expectation(mode: Mode, sample_rate: u32) -> Expectation {
    Expectation {
        sample_rate,
        samples: window_len(mode.segment_dur_s(), sample_rate),
        tolerance: match mode {
            Mode::Icassp24 => 1,
            Mode::Cad1 => 0,
        },
    }
}

/// Decoding fails for encodings other than 16-bit, 24-bit and float32.
fn check_file(path: &Path, exp: Expectation) -> Result<usize, String> {
    let wav = read_wav(path).map_err(|e| match e {
        crate::error::DspError::Wav { reason, .. } => reason,
        other => other.to_string(),
    })?;
    let b = &wav.buffer;
    if b.num_channels() != 2 {
        return Err(format!("{} channel(s), expected 2", b.num_channels()));
    }
    if b.sample_rate() != exp.sample_rate {
        return Err(format!("sample rate {} Hz, expected {} Hz", b.sample_rate(), exp.sample_rate));
    }
    if b.len().abs_diff(exp.samples) > exp.tolerance {
        return Err(format!(
            "duration {:.3} s ({} frames), expected {:.3} s ({} frames, tolerance {})",
            b.duration_s(),
            b.len(),
            exp.samples as f64 / exp.sample_rate as f64,
            exp.samples,
            exp.tolerance
        ));
    }
    Ok(wav.clipped_samples)
}

/// Check a submission directory against the scene manifest. Content
/// problems are reported, never raised.
pub fn validate_submission(dir: &Path, manifest: &SubmissionManifest, scenes: &[SceneSpec], sample_rate: u32) -> ValidationReport {
    let mut report = ValidationReport::default();
    let expected: Vec<(String, String)> = scenes
        .iter()
        .flat_map(|s| s.listener_ids.iter().map(move |l| (s.scene_id.clone(), l.clone())))
        .collect();
    if manifest.expected_pairs != expected.len() {
        report.format_errors.push(FormatError {
            file: MANIFEST_FILE.into(),
            reason: format!(
                "declares {} pairs, scene manifest has {}",
                manifest.expected_pairs,
                expected.len()
            ),
        });
    }
    if let Some(bad) = scenes.iter().find(|s| s.mode() != manifest.mode) {
        report.format_errors.push(FormatError {
            file: MANIFEST_FILE.into(),
            reason: format!("mode {} but scene {} is {}", manifest.mode, bad.scene_id, bad.mode()),
        });
    }
    let exp = expectation(manifest.mode, sample_rate);
    let listing = match fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok()).collect::<Vec<_>>(),
        Err(e) => {
            report.format_errors.push(FormatError {
                file: dir.display().to_string(),
                reason: format!("unreadable directory: {e}"),
            });
            report.missing = expected.iter().map(|(s, l)| remix_file_name(s, l)).collect();
            return report.finish();
        }
    };
    let expected_names: BTreeSet<String> = expected.iter().map(|(s, l)| remix_file_name(s, l)).collect();
    let expected_dirs: BTreeSet<String> = expected.iter().map(|(s, l)| stems_dir_name(s, l)).collect();
    let mut present = BTreeSet::new();
    let mut to_check: Vec<(String, PathBuf)> = Vec::new();
    for entry in listing {
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if path.is_dir() {
            if expected_dirs.contains(&name) {
                for stem in Stem::ALL {
                    let f = path.join(format!("{}.wav", stem.name()));
                    let label = format!("{name}/{}.wav", stem.name());
                    if f.exists() {
                        to_check.push((label, f));
                    } else {
                        report.format_errors.push(FormatError {
                            file: label,
                            reason: "stem directory is incomplete".into(),
                        });
                    }
                }
            } else {
                report.extra.push(format!("{name}/"));
            }
            continue;
        }
        if !name.to_ascii_lowercase().ends_with(".wav") {
            continue;
        }
        if !name.ends_with(REMIX_SUFFIX) || name.len() <= REMIX_SUFFIX.len() + 2 || !name[..name.len() - REMIX_SUFFIX.len()].contains('_') {
            report.format_errors.push(FormatError {
                file: name,
                reason: format!("does not match {NAMING_PATTERN}"),
            });
            continue;
        }
        if expected_names.contains(&name) {
            present.insert(name.clone());
            to_check.push((name, path));
        } else {
            report.extra.push(name);
        }
    }
    report.missing = expected_names.difference(&present).cloned().collect();
    let checked: Vec<(String, Result<usize, String>)> = to_check
        .into_par_iter()
        .map(|(label, path)| {
            let r = check_file(&path, exp);
            (label, r)
        })
        .collect();
    for (label, r) in checked {
        match r {
            Ok(clipped) => {
                report.clipping.insert(label, clipped);
            }
            Err(reason) => report.format_errors.push(FormatError { file: label, reason }),
        }
    }
    report.finish()
}
