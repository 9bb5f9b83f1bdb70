//! Linear convolution: direct form for short kernels, FFT overlap-add for
//! long ones.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AudioBuffer;
use crate::error::DspError;

/// Kernels at most this long use the direct form.
pub const DIRECT_MAX_TAPS: usize = 16;

/// Full linear convolution of every channel of `x` with `ir`.
/// Output length is `len(x) + len(ir) - 1`.
pub fn convolve(x: &AudioBuffer, ir: &[f64]) -> Result<AudioBuffer, DspError> {
    if ir.is_empty() {
        return Err(DspError::EmptyImpulseResponse);
    }
    let channels = x.channels().iter().map(|c| convolve_signal(c, ir)).collect();
    AudioBuffer::new(x.sample_rate(), channels)
}

/// Full linear convolution of two sequences, choosing the cheaper method.
pub fn convolve_signal(x: &[f64], ir: &[f64]) -> Vec<f64> {
    if x.is_empty() || ir.is_empty() {
        return Vec::new();
    }
    let (long, short) = if x.len() >= ir.len() { (x, ir) } else { (ir, x) };
    if short.len() <= DIRECT_MAX_TAPS {
        convolve_direct(long, short)
    } else {
        convolve_overlap_add(long, short)
    }
}

pub fn convolve_direct(x: &[f64], ir: &[f64]) -> Vec<f64> {
    if x.is_empty() || ir.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + ir.len() - 1];
    for (j, &h) in ir.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        for (o, &xi) in out[j..j + x.len()].iter_mut().zip(x) {
            *o += h * xi;
        }
    }
    out
}

/// Overlap-add convolution. The kernel spectrum is computed once and each
/// block of `x` is filtered in the frequency domain.
pub fn convolve_overlap_add(x: &[f64], ir: &[f64]) -> Vec<f64> {
    if x.is_empty() || ir.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + ir.len() - 1;
    let fft_size = (4 * ir.len()).next_power_of_two().max(256);
    let block = fft_size - ir.len() + 1;

    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(fft_size);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(fft_size);
    let mut scratch = vec![Complex::new(0.0, 0.0); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];

    let mut kernel = vec![Complex::new(0.0, 0.0); fft_size];
    for (k, &h) in kernel.iter_mut().zip(ir) {
        k.re = h;
    }
    forward.process_with_scratch(&mut kernel, &mut scratch);

    let scale = 1.0 / fft_size as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    // Two real blocks share one complex transform: block A in the real
    // part, block B in the imaginary part. The kernel is real, so the
    // filtered outputs separate the same way.
    let mut start = 0;
    while start < x.len() {
        let a_end = (start + block).min(x.len());
        let b_start = a_end;
        let b_end = (b_start + block).min(x.len());
        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for (v, &s) in buf.iter_mut().zip(&x[start..a_end]) {
            v.re = s;
        }
        for (v, &s) in buf.iter_mut().zip(&x[b_start..b_end]) {
            v.im = s;
        }
        forward.process_with_scratch(&mut buf, &mut scratch);
        for (v, k) in buf.iter_mut().zip(&kernel) {
            *v *= k;
        }
        inverse.process_with_scratch(&mut buf, &mut scratch);
        let a_valid = (a_end - start + ir.len() - 1).min(out_len - start);
        for (o, v) in out[start..start + a_valid].iter_mut().zip(&buf) {
            *o += v.re * scale;
        }
        if b_end > b_start {
            let b_valid = (b_end - b_start + ir.len() - 1).min(out_len - b_start);
            for (o, v) in out[b_start..b_start + b_valid].iter_mut().zip(&buf) {
                *o += v.im * scale;
            }
        }
        start = b_end;
    }
    out
}
