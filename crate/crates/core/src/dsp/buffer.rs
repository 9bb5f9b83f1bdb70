use serde::{Deserialize, Serialize};

use crate::error::DspError;

/// Multichannel floating-point audio. Samples are nominally in `[-1, 1]`
/// but are never clipped implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(DspError::ChannelCount(channels.len()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(DspError::RaggedChannels);
        }
        for (ci, c) in channels.iter().enumerate() {
            if let Some(index) = c.iter().position(|v| !v.is_finite()) {
                return Err(DspError::NonFinite { channel: ci, index });
            }
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self, DspError> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn stereo(sample_rate: u32, left: Vec<f64>, right: Vec<f64>) -> Result<Self, DspError> {
        Self::new(sample_rate, vec![left, right])
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Result<Self, DspError> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Frames per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn is_stereo(&self) -> bool {
        self.channels.len() == 2
    }

    pub fn require_stereo(&self) -> Result<(), DspError> {
        if self.is_stereo() {
            Ok(())
        } else {
            Err(DspError::NotStereo(self.channels.len()))
        }
    }

    pub fn require_rate(&self, expected: u32) -> Result<(), DspError> {
        if self.sample_rate == expected {
            Ok(())
        } else {
            Err(DspError::RateMismatch {
                expected,
                found: self.sample_rate,
            })
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// RMS over all channels.
    pub fn rms(&self) -> f64 {
        let n = self.len() * self.num_channels();
        if n == 0 {
            return 0.0;
        }
        let ss: f64 = self.channels.iter().flat_map(|c| c.iter()).map(|v| v * v).sum();
        (ss / n as f64).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> AudioBuffer {
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// Frames `[start, start + len)`; errors if out of range.
    pub fn slice(&self, start: usize, len: usize) -> Result<AudioBuffer, DspError> {
        if start + len > self.len() {
            return Err(DspError::LengthMismatch {
                expected: start + len,
                found: self.len(),
            });
        }
        Ok(AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
        })
    }

    /// Elementwise sum; shapes and rates must match.
    pub fn add(&self, other: &AudioBuffer) -> Result<AudioBuffer, DspError> {
        self.require_same_shape(other)?;
        Ok(AudioBuffer {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .zip(&other.channels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    pub fn require_same_shape(&self, other: &AudioBuffer) -> Result<(), DspError> {
        other.require_rate(self.sample_rate)?;
        if other.num_channels() != self.num_channels() {
            return Err(DspError::ChannelCount(other.num_channels()));
        }
        if other.len() != self.len() {
            return Err(DspError::LengthMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// Same channels in reverse order.
    pub fn swapped_channels(&self) -> AudioBuffer {
        let mut channels = self.channels.clone();
        channels.reverse();
        AudioBuffer {
            sample_rate: self.sample_rate,
            channels,
        }
    }
}

/// One of the four VDBO stems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    Vocals,
    Drums,
    Bass,
    Other,
}

impl Stem {
    pub const ALL: [Stem; 4] = [Stem::Vocals, Stem::Drums, Stem::Bass, Stem::Other];

    pub fn name(self) -> &'static str {
        match self {
            Stem::Vocals => "vocals",
            Stem::Drums => "drums",
            Stem::Bass => "bass",
            Stem::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Relative RMS tolerance between a supplied mixture and the stem sum.
pub const STEM_SUM_TOLERANCE: f64 = 1e-3;

/// Stereo VDBO stems with an optional mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    stems: [AudioBuffer; 4],
    mixture: Option<AudioBuffer>,
    mixture_residual: Option<f64>,
}

impl StemSet {
    pub fn new(stems: [AudioBuffer; 4], mixture: Option<AudioBuffer>) -> Result<Self, DspError> {
        stems[0].require_stereo()?;
        for s in &stems[1..] {
            s.require_stereo()?;
            stems[0].require_same_shape(s)?;
        }
        let mut set = Self {
            stems,
            mixture: None,
            mixture_residual: None,
        };
        if let Some(mix) = mixture {
            mix.require_stereo()?;
            set.stems[0].require_same_shape(&mix)?;
            let sum = set.sum();
            let diff: f64 = sum
                .channels()
                .iter()
                .zip(mix.channels())
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
                .sum();
            let energy: f64 = mix.channels().iter().flat_map(|c| c.iter()).map(|v| v * v).sum();
            let relative_rms = if energy > 0.0 {
                (diff / energy).sqrt()
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if relative_rms > STEM_SUM_TOLERANCE {
                return Err(DspError::InconsistentMixture {
                    relative_rms,
                    tolerance: STEM_SUM_TOLERANCE,
                });
            }
            set.mixture = Some(mix);
            set.mixture_residual = Some(relative_rms);
        }
        Ok(set)
    }

    pub fn from_stems(vocals: AudioBuffer, drums: AudioBuffer, bass: AudioBuffer, other: AudioBuffer) -> Result<Self, DspError> {
        Self::new([vocals, drums, bass, other], None)
    }

    pub fn get(&self, stem: Stem) -> &AudioBuffer {
        &self.stems[stem.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stem, &AudioBuffer)> {
        Stem::ALL.into_iter().zip(self.stems.iter())
    }

    pub fn mixture(&self) -> Option<&AudioBuffer> {
        self.mixture.as_ref()
    }

    /// Relative RMS difference between the supplied mixture and the stem sum.
    pub fn mixture_residual(&self) -> Option<f64> {
        self.mixture_residual
    }

    /// The supplied mixture, or the stem sum when none was given.
    pub fn mixture_or_sum(&self) -> AudioBuffer {
        self.mixture.clone().unwrap_or_else(|| self.sum())
    }

    pub fn sum(&self) -> AudioBuffer {
        let mut acc = self.stems[0].clone();
        for s in &self.stems[1..] {
            acc = acc.add(s).expect("stems share shape");
        }
        acc
    }

    pub fn sample_rate(&self) -> u32 {
        self.stems[0].sample_rate()
    }

    pub fn len(&self) -> usize {
        self.stems[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames `[start, start + len)` of every stem (and the mixture).
    pub fn slice(&self, start: usize, len: usize) -> Result<StemSet, DspError> {
        let stems = [
            self.stems[0].slice(start, len)?,
            self.stems[1].slice(start, len)?,
            self.stems[2].slice(start, len)?,
            self.stems[3].slice(start, len)?,
        ];
        let mixture = self.mixture.as_ref().map(|m| m.slice(start, len)).transpose()?;
        Ok(StemSet {
            stems,
            mixture,
            mixture_residual: self.mixture_residual,
        })
    }

    /// Apply a shape-preserving transform to each stem; the mixture is
    /// dropped since it is no longer guaranteed consistent.
    pub fn try_map<E>(&self, mut f: impl FnMut(Stem, &AudioBuffer) -> Result<AudioBuffer, E>) -> Result<StemSet, E>
    where
        E: From<DspError>,
    {
        let stems = [
            f(Stem::Vocals, &self.stems[0])?,
            f(Stem::Drums, &self.stems[1])?,
            f(Stem::Bass, &self.stems[2])?,
            f(Stem::Other, &self.stems[3])?,
        ];
        Ok(StemSet::new(stems, None)?)
    }
}

/// Per-stem gains in dB applied before remixing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GainSet {
    pub vocals_db: f64,
    pub drums_db: f64,
    pub bass_db: f64,
    pub other_db: f64,
}

impl GainSet {
    pub fn new(vocals_db: f64, drums_db: f64, bass_db: f64, other_db: f64) -> Result<Self, DspError> {
        let g = Self {
            vocals_db,
            drums_db,
            bass_db,
            other_db,
        };
        if g.as_array().iter().any(|v| !v.is_finite()) {
            return Err(DspError::InvalidParameter("gains must be finite".into()));
        }
        Ok(g)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, stem: Stem) -> f64 {
        self.as_array()[stem.index()]
    }

    pub fn set(&mut self, stem: Stem, db: f64) {
        match stem {
            Stem::Vocals => self.vocals_db = db,
            Stem::Drums => self.drums_db = db,
            Stem::Bass => self.bass_db = db,
            Stem::Other => self.other_db = db,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.vocals_db, self.drums_db, self.bass_db, self.other_db]
    }

    /// Linear amplitude factor `10^(g/20)`.
    pub fn amplitude(&self, stem: Stem) -> f64 {
        db_to_amplitude(self.get(stem))
    }

    pub fn nonzero_count(&self) -> usize {
        self.as_array().iter().filter(|&&g| g != 0.0).count()
    }

    /// Population standard deviation of the four gains.
    pub fn spread_db(&self) -> f64 {
        let g = self.as_array();
        let mean = g.iter().sum::<f64>() / 4.0;
        (g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt()
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.log10()
}
