//! WAV input/output (PCM 16/24-bit and 32-bit float).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::DspError;

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Int16,
    Int24,
    Float32,
}

impl SampleFormat {
    pub fn bits(self) -> u16 {
        match self {
            SampleFormat::Int16 => 16,
            SampleFormat::Int24 => 24,
            SampleFormat::Float32 => 32,
        }
    }

    fn int_scale(self) -> Option<f64> {
        match self {
            SampleFormat::Int16 => Some(32768.0),
            SampleFormat::Int24 => Some(8_388_608.0),
            SampleFormat::Float32 => None,
        }
    }

    /// Value a sample takes after writing in this format and reading back,
    /// and whether it clipped. Float samples are never clipped; a float
    /// sample counts as clipped when its magnitude exceeds 1.
    pub fn quantize(self, x: f64) -> (f64, bool) {
        match self.int_scale() {
            Some(scale) => {
                let q = (x * scale).round();
                let lo = -scale;
                let hi = scale - 1.0;
                if q > hi {
                    (hi / scale, true)
                } else if q < lo {
                    (lo / scale, true)
                } else {
                    (q / scale, false)
                }
            }
            None => {
                let v = x as f32 as f64;
                (v, v.abs() > 1.0)
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "16" | "int16" => Some(SampleFormat::Int16),
            "24" | "int24" => Some(SampleFormat::Int24),
            "32" | "float" | "float32" => Some(SampleFormat::Float32),
            _ => None,
        }
    }
}

/// Quantize every sample; returns the buffer and the clipped-sample count.
pub fn quantize(x: &AudioBuffer, format: SampleFormat) -> (AudioBuffer, usize) {
    let mut clipped = 0;
    let channels = x
        .channels()
        .iter()
        .map(|c| {
            c.iter()
                .map(|&v| {
                    let (q, c) = format.quantize(v);
                    clipped += c as usize;
                    q
                })
                .collect()
        })
        .collect();
    (
        AudioBuffer::new(x.sample_rate(), channels).expect("quantized samples are finite"),
        clipped,
    )
}

/// A decoded WAV file.
#[derive(Debug, Clone)]
pub struct WavAudio {
    pub buffer: AudioBuffer,
    pub format: SampleFormat,
    /// Samples at the integer format's extremes (or beyond ±1 for float).
    pub clipped_samples: usize,
}

fn wav_err(path: &Path, reason: impl ToString) -> DspError {
    DspError::Wav {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Read the data chunk of a 16-bit or float32 file in one pass and
/// deinterleave it. `decode` maps one little-endian sample to (value, clipped).
fn read_packed<const W: usize>(
    path: &Path,
    reader: hound::WavReader<BufReader<File>>,
    decode: impl Fn([u8; W]) -> (f64, bool),
) -> Result<(Vec<Vec<f64>>, usize), DspError> {
    let channels = reader.spec().channels as usize;
    let total = reader.len() as usize;
    let mut bytes = vec![0u8; total * W];
    reader.into_inner().read_exact(&mut bytes).map_err(|e| wav_err(path, e))?;
    let frames = total / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    let mut clipped = 0;
    for (c, ch) in out.iter_mut().enumerate() {
        ch.extend(bytes.chunks_exact(W * channels).map(|frame| {
            let (v, clip) = decode(frame[c * W..(c + 1) * W].try_into().expect("exact chunk"));
            clipped += clip as usize;
            v
        }));
    }
    Ok((out, clipped))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavAudio, DspError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| wav_err(path, e))?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(wav_err(path, format!("unsupported channel count {channels}")));
    }
    let (format, out, clipped) = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let (out, clipped) = read_packed(path, reader, |b: [u8; 2]| {
                let v = i16::from_le_bytes(b);
                (v as f64 / 32768.0, v == i16::MIN || v == i16::MAX)
            })?;
            (SampleFormat::Int16, out, clipped)
        }
        (hound::SampleFormat::Int, 24) => {
            let raw: Vec<i32> = reader
                .into_samples::<i32>()
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?;
            let clipped = raw.iter().filter(|&&v| v == -8_388_608 || v == 8_388_607).count();
            let mut out = vec![Vec::with_capacity(raw.len() / channels); channels];
            for (i, v) in raw.into_iter().enumerate() {
                out[i % channels].push(v as f64 / 8_388_608.0);
            }
            (SampleFormat::Int24, out, clipped)
        }
        (hound::SampleFormat::Float, 32) => {
            let (out, clipped) = read_packed(path, reader, |b: [u8; 4]| {
                let v = f32::from_le_bytes(b);
                (v as f64, v.abs() > 1.0)
            })?;
            (SampleFormat::Float32, out, clipped)
        }
        (f, b) => return Err(wav_err(path, format!("unsupported sample format {f:?} at {b} bits"))),
    };
    let buffer = AudioBuffer::new(spec.sample_rate, out).map_err(|e| wav_err(path, e))?;
    Ok(WavAudio {
        buffer,
        format,
        clipped_samples: clipped,
    })
}

/// Read a WAV and check its rate and channel count.
pub fn read_wav_expect(path: impl AsRef<Path>, sample_rate: u32, channels: usize) -> Result<AudioBuffer, DspError> {
    let path = path.as_ref();
    let wav = read_wav(path)?;
    if wav.buffer.sample_rate() != sample_rate {
        return Err(wav_err(
            path,
            format!("sample rate {} Hz, expected {sample_rate} Hz", wav.buffer.sample_rate()),
        ));
    }
    if wav.buffer.num_channels() != channels {
        return Err(wav_err(
            path,
            format!("{} channel(s), expected {channels}", wav.buffer.num_channels()),
        ));
    }
    Ok(wav.buffer)
}

/// Write a WAV; returns how many samples clipped during encoding.
pub fn write_wav(path: impl AsRef<Path>, x: &AudioBuffer, format: SampleFormat) -> Result<usize, DspError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: x.num_channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: format.bits(),
        sample_format: match format {
            SampleFormat::Float32 => hound::SampleFormat::Float,
            _ => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    let mut clipped = 0;
    for i in 0..x.len() {
        for c in x.channels() {
            let (q, clip) = format.quantize(c[i]);
            clipped += clip as usize;
            let res = match format {
                SampleFormat::Int16 => writer.write_sample((q * 32768.0) as i16),
                SampleFormat::Int24 => writer.write_sample((q * 8_388_608.0) as i32),
                SampleFormat::Float32 => writer.write_sample(q as f32),
            };
            res.map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))?;
    Ok(clipped)
}
