//! Audio buffers and the signal operations shared by every pipeline stage.

mod buffer;
mod convolve;
pub mod wav;

pub use buffer::{amplitude_to_db, db_to_amplitude, AudioBuffer, GainSet, Stem, StemSet, STEM_SUM_TOLERANCE};
pub use convolve::{convolve, convolve_direct, convolve_overlap_add, convolve_signal, DIRECT_MAX_TAPS};
pub use wav::{quantize, read_wav, read_wav_expect, write_wav, SampleFormat, WavAudio};

use crate::error::{DspError, FilterError};
use crate::prescription::{design_from_curve, FirFilter, TargetCurve};

/// Sum of gained stems: `Σ 10^(g/20) · stem`, no normalization.
pub fn remix_with_gains(s: &StemSet, g: &GainSet) -> AudioBuffer {
    let n = s.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for (stem, buf) in s.iter() {
        let a = g.amplitude(stem);
        for (o, v) in left.iter_mut().zip(buf.channel(0)) {
            *o += a * v;
        }
        for (o, v) in right.iter_mut().zip(buf.channel(1)) {
            *o += a * v;
        }
    }
    AudioBuffer::stereo(s.sample_rate(), left, right).expect("stems are finite")
}

/// `M = (L+R)/2`, `S = (L-R)/2`.
pub fn mid_side_split(x: &AudioBuffer) -> Result<(Vec<f64>, Vec<f64>), DspError> {
    x.require_stereo()?;
    let (l, r) = (x.channel(0), x.channel(1));
    let mid = l.iter().zip(r).map(|(a, b)| (a + b) / 2.0).collect();
    let side = l.iter().zip(r).map(|(a, b)| (a - b) / 2.0).collect();
    Ok((mid, side))
}

/// `L' = G(M) + H(S)`, `R' = G(M) - H(S)`, both filters delay-compensated.
pub fn mid_side_eq(x: &AudioBuffer, g: &FirFilter, h: &FirFilter) -> Result<AudioBuffer, FilterError> {
    x.require_rate(g.sample_rate())?;
    x.require_rate(h.sample_rate())?;
    let (mid, side) = mid_side_split(x)?;
    let gm = g.apply_signal(&mid, true);
    let hs = h.apply_signal(&side, true);
    let left = gm.iter().zip(&hs).map(|(a, b)| a + b).collect();
    let right = gm.iter().zip(&hs).map(|(a, b)| a - b).collect();
    Ok(AudioBuffer::stereo(x.sample_rate(), left, right)?)
}

pub const E17_TAPS: usize = 511;

/// Mid filter: -2 dB below 2 kHz, 0 dB from 2.52 kHz (one third of an
/// octave) upward.
pub fn e17_mid_curve() -> TargetCurve {
    TargetCurve::new(&[(2000.0, -2.0), (2000.0 * third_octave(), 0.0)]).expect("static curve")
}

/// Side filter: +3 dB over 2..6 kHz with one-third-octave skirts outside
/// the band.
pub fn e17_side_curve() -> TargetCurve {
    let t = third_octave();
    TargetCurve::new(&[(2000.0 / t, 0.0), (2000.0, 3.0), (6000.0, 3.0), (6000.0 * t, 0.0)]).expect("static curve")
}

fn third_octave() -> f64 {
    2f64.powf(1.0 / 3.0)
}

/// The mid (G) and side (H) equalizers of the E17 mid-side system.
pub fn default_e17_filters(fs: u32) -> Result<(FirFilter, FirFilter), FilterError> {
    let g = design_from_curve(&e17_mid_curve(), E17_TAPS, fs, &[])?;
    let h = design_from_curve(&e17_side_curve(), E17_TAPS, fs, &[])?;
    Ok((g, h))
}

/// Output of [`peak_normalize`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub buffer: AudioBuffer,
    pub scale: f64,
}

/// Broadband scale so that the peak magnitude equals `target`. Silent
/// input passes through with scale 1.
pub fn peak_normalize(x: &AudioBuffer, target: f64) -> Result<Normalized, DspError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(DspError::InvalidParameter(format!("normalize target {target} outside (0, 1]")));
    }
    let peak = x.max_abs();
    if peak == 0.0 {
        return Ok(Normalized {
            buffer: x.clone(),
            scale: 1.0,
        });
    }
    let scale = target / peak;
    Ok(Normalized {
        buffer: x.scaled(scale),
        scale,
    })
}
