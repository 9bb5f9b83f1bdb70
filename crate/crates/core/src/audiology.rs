//! Audiograms, hearing-loss severity grading and listener manifests.
//!
//! Thresholds are pure-tone levels in dB HL at the eight standard
//! audiometric frequencies. Severity grading uses the 4-frequency average
//! (500, 1000, 2000 and 4000 Hz) with half-open bands whose lower edge
//! belongs to the band.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::AudiologyError;

/// Standard audiometric frequencies in Hz.
pub const AUDIOGRAM_FREQUENCIES_HZ: [f64; 8] =
    [250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0];

/// Thresholds above this are clamped on ingestion.
pub const MAX_THRESHOLD_DB_HL: f64 = 80.0;

/// Indices of 500, 1000, 2000 and 4000 Hz in [`AUDIOGRAM_FREQUENCIES_HZ`].
const FOUR_FREQUENCY_INDICES: [usize; 4] = [1, 2, 3, 5];

/// Pure-tone thresholds for one ear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audiogram {
    thresholds_db_hl: [f64; 8],
}

impl Audiogram {
    /// Builds an audiogram, rejecting non-finite values and values outside
    /// `[0, 80]`. Use [`Audiogram::clamped`] for ingestion-style clamping.
    pub fn new(thresholds_db_hl: [f64; 8]) -> Result<Self, AudiologyError> {
        for (i, &t) in thresholds_db_hl.iter().enumerate() {
            if !t.is_finite() || !(0.0..=MAX_THRESHOLD_DB_HL).contains(&t) {
                return Err(AudiologyError::InvalidThreshold {
                    frequency_hz: AUDIOGRAM_FREQUENCIES_HZ[i],
                    value: t,
                });
            }
        }
        Ok(Self { thresholds_db_hl })
    }

    /// Builds an audiogram, clamping each threshold into `[0, 80]`.
    ///
    /// Returns the audiogram and the number of thresholds that were clamped
    /// from above. Non-finite values are still rejected.
    pub fn clamped(thresholds_db_hl: [f64; 8]) -> Result<(Self, usize), AudiologyError> {
        let mut out = thresholds_db_hl;
        let mut clamped_high = 0;
        for (i, t) in out.iter_mut().enumerate() {
            if !t.is_finite() {
                return Err(AudiologyError::InvalidThreshold {
                    frequency_hz: AUDIOGRAM_FREQUENCIES_HZ[i],
                    value: *t,
                });
            }
            if *t > MAX_THRESHOLD_DB_HL {
                *t = MAX_THRESHOLD_DB_HL;
                clamped_high += 1;
            } else if *t < 0.0 {
                *t = 0.0;
            }
        }
        Ok((Self { thresholds_db_hl: out }, clamped_high))
    }

    /// Same threshold at every frequency.
    pub fn flat(level_db_hl: f64) -> Result<Self, AudiologyError> {
        Self::new([level_db_hl; 8])
    }

    pub fn thresholds(&self) -> &[f64; 8] {
        &self.thresholds_db_hl
    }

    pub fn frequencies(&self) -> &'static [f64; 8] {
        &AUDIOGRAM_FREQUENCIES_HZ
    }

    /// Threshold at an audiometric frequency, if `frequency_hz` is one.
    pub fn threshold_at(&self, frequency_hz: f64) -> Option<f64> {
        AUDIOGRAM_FREQUENCIES_HZ
            .iter()
            .position(|&f| f == frequency_hz)
            .map(|i| self.thresholds_db_hl[i])
    }

    /// Threshold interpolated linearly on a log-frequency axis, held
    /// constant outside 250..8000 Hz.
    pub fn interpolated_threshold(&self, frequency_hz: f64) -> f64 {
        interpolate_log_frequency(&AUDIOGRAM_FREQUENCIES_HZ, &self.thresholds_db_hl, frequency_hz)
    }

    /// Per-frequency mean of two audiograms.
    pub fn average(&self, other: &Audiogram) -> Audiogram {
        let mut t = [0.0; 8];
        for (i, v) in t.iter_mut().enumerate() {
            *v = 0.5 * (self.thresholds_db_hl[i] + other.thresholds_db_hl[i]);
        }
        Audiogram { thresholds_db_hl: t }
    }
}

/// Piecewise-linear interpolation of `values` over `log(frequencies)`,
/// holding the end values outside the covered range.
pub(crate) fn interpolate_log_frequency(frequencies: &[f64], values: &[f64], f: f64) -> f64 {
    debug_assert_eq!(frequencies.len(), values.len());
    let n = frequencies.len();
    if f <= frequencies[0] {
        return values[0];
    }
    if f >= frequencies[n - 1] {
        return values[n - 1];
    }
    let i = frequencies.partition_point(|&x| x <= f).max(1) - 1;
    let (f0, f1) = (frequencies[i], frequencies[i + 1]);
    let t = (f.ln() - f0.ln()) / (f1.ln() - f0.ln());
    values[i] + t * (values[i + 1] - values[i])
}

/// A listener: an id and a bilateral audiogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Listener {
    pub id: String,
    pub left: Audiogram,
    pub right: Audiogram,
}

impl Listener {
    pub fn new(id: impl Into<String>, left: Audiogram, right: Audiogram) -> Result<Self, AudiologyError> {
        let id = id.into();
        if id.is_empty() {
            return Err(AudiologyError::EmptyId);
        }
        Ok(Self { id, left, right })
    }

    /// Same listener with the left and right ears exchanged.
    pub fn swapped_ears(&self) -> Listener {
        Listener {
            id: self.id.clone(),
            left: self.right,
            right: self.left,
        }
    }
}

/// WHO-style hearing-loss grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityGrade {
    NoImpairment,
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
    Profound,
}

impl SeverityGrade {
    pub const ALL: [SeverityGrade; 6] = [
        SeverityGrade::NoImpairment,
        SeverityGrade::Mild,
        SeverityGrade::Moderate,
        SeverityGrade::ModeratelySevere,
        SeverityGrade::Severe,
        SeverityGrade::Profound,
    ];

    /// Ordinal code 0..=5 used as correlation input.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SeverityGrade::NoImpairment => "no impairment",
            SeverityGrade::Mild => "mild",
            SeverityGrade::Moderate => "moderate",
            SeverityGrade::ModeratelySevere => "moderately severe",
            SeverityGrade::Severe => "severe",
            SeverityGrade::Profound => "profound",
        }
    }
}

impl fmt::Display for SeverityGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Mean threshold at 500, 1000, 2000 and 4000 Hz.
pub fn four_frequency_average(a: &Audiogram) -> f64 {
    FOUR_FREQUENCY_INDICES
        .iter()
        .map(|&i| a.thresholds_db_hl[i])
        .sum::<f64>()
        / 4.0
}

/// Grade a 4-frequency average. Band edges 20/35/50/65/80 dB belong to the
/// upper band; negative input is treated as 0.
pub fn classify_severity(fa_db: f64) -> SeverityGrade {
    let fa = fa_db.max(0.0);
    if fa < 20.0 {
        SeverityGrade::NoImpairment
    } else if fa < 35.0 {
        SeverityGrade::Mild
    } else if fa < 50.0 {
        SeverityGrade::Moderate
    } else if fa < 65.0 {
        SeverityGrade::ModeratelySevere
    } else if fa < 80.0 {
        SeverityGrade::Severe
    } else {
        SeverityGrade::Profound
    }
}

/// Grade of the ear with the lower 4-frequency average.
pub fn better_ear_severity(l: &Listener) -> SeverityGrade {
    classify_severity(four_frequency_average(&l.left).min(four_frequency_average(&l.right)))
}

/// Grade of the per-frequency average of both ears.
pub fn mean_ear_severity(l: &Listener) -> SeverityGrade {
    classify_severity(four_frequency_average(&l.left.average(&l.right)))
}

/// Result of reading a listener manifest.
#[derive(Debug, Clone, Default)]
pub struct LoadedListeners {
    pub listeners: Vec<Listener>,
    /// One message per listener ear that had thresholds clamped to 80 dB.
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ListenerRecord {
    audiogram_cfs: Vec<f64>,
    levels_l: Vec<f64>,
    levels_r: Vec<f64>,
}

/// Ordered `(id, value)` entries of a JSON object, keeping duplicates so
/// they can be reported instead of silently overwritten.
struct OrderedEntries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object keyed by listener id")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push((k, v));
                }
                Ok(OrderedEntries(entries))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

fn to_array(id: &str, field: &str, v: &[f64]) -> Result<[f64; 8], AudiologyError> {
    v.try_into().map_err(|_| AudiologyError::Record {
        id: id.to_string(),
        reason: format!("`{field}` must hold 8 values, found {}", v.len()),
    })
}

/// Parse a listener manifest from a JSON string.
pub fn parse_listeners(text: &str) -> Result<LoadedListeners, AudiologyError> {
    if text.trim().is_empty() {
        return Ok(LoadedListeners::default());
    }
    let OrderedEntries(entries) =
        serde_json::from_str(text).map_err(|e| AudiologyError::Parse(e.to_string()))?;
    let mut loaded = LoadedListeners::default();
    let mut seen = std::collections::HashSet::new();
    for (id, value) in entries {
        if !seen.insert(id.clone()) {
            return Err(AudiologyError::DuplicateId(id));
        }
        let record: ListenerRecord =
            serde_json::from_value(value).map_err(|e| AudiologyError::Record {
                id: id.clone(),
                reason: e.to_string(),
            })?;
        if record.audiogram_cfs != AUDIOGRAM_FREQUENCIES_HZ {
            return Err(AudiologyError::Record {
                id,
                reason: format!(
                    "audiogram_cfs must be {:?}, found {:?}",
                    AUDIOGRAM_FREQUENCIES_HZ, record.audiogram_cfs
                ),
            });
        }
        let wrap = |e: AudiologyError| AudiologyError::Record {
            id: id.clone(),
            reason: e.to_string(),
        };
        let (left, nl) = Audiogram::clamped(to_array(&id, "levels_l", &record.levels_l)?).map_err(wrap)?;
        let (right, nr) = Audiogram::clamped(to_array(&id, "levels_r", &record.levels_r)?).map_err(wrap)?;
        if nl > 0 {
            loaded
                .warnings
                .push(format!("listener {id}: {nl} left-ear threshold(s) above 80 dB clamped to 80 dB"));
        }
        if nr > 0 {
            loaded
                .warnings
                .push(format!("listener {id}: {nr} right-ear threshold(s) above 80 dB clamped to 80 dB"));
        }
        loaded.listeners.push(Listener::new(id.clone(), left, right).map_err(wrap)?);
    }
    Ok(loaded)
}

/// Read a listener manifest file. Clamping warnings are also logged.
pub fn load_listeners(path: impl AsRef<Path>) -> Result<LoadedListeners, AudiologyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AudiologyError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let loaded = parse_listeners(&text)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded)
}

struct ManifestRef<'a>(&'a [Listener]);

impl Serialize for ManifestRef<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for l in self.0 {
            map.serialize_entry(
                &l.id,
                &ListenerRecord {
                    audiogram_cfs: AUDIOGRAM_FREQUENCIES_HZ.to_vec(),
                    levels_l: l.left.thresholds().to_vec(),
                    levels_r: l.right.thresholds().to_vec(),
                },
            )?;
        }
        map.end()
    }
}

/// Render listeners in manifest format, preserving order.
pub fn listeners_to_json(listeners: &[Listener]) -> String {
    serde_json::to_string_pretty(&ManifestRef(listeners)).expect("listener manifest serializes")
}

pub fn save_listeners(path: impl AsRef<Path>, listeners: &[Listener]) -> Result<(), AudiologyError> {
    let path = path.as_ref();
    fs::write(path, listeners_to_json(listeners)).map_err(|e| AudiologyError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
