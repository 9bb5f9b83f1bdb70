//! Synthetic fixtures standing in for music corpora, HRIR databases and
//! audiogram collections. All generators are seeded.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audiology::{Audiogram, Listener, AUDIOGRAM_FREQUENCIES_HZ, MAX_THRESHOLD_DB_HL};
use crate::dsp::{AudioBuffer, StemSet};
use crate::scene::{splitmix64, HrirPair, HrirSet, Track, SPEAKER_AZIMUTHS_DEG};

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn pan(x: Vec<f64>, position: f64, fs: u32) -> AudioBuffer {
    // constant-power pan, position in [-1, 1]
    let theta = (position + 1.0) * PI / 4.0;
    let (gl, gr) = (theta.cos(), theta.sin());
    let left = x.iter().map(|v| v * gl).collect();
    let right = x.iter().map(|v| v * gr).collect();
    AudioBuffer::stereo(fs, left, right).expect("finite synthetic audio")
}

/// Four-stem track: a vibrato voice with harmonics, decaying noise hits, a
/// walking bass and a chord pad over a soft noise bed.
pub fn synthetic_track(id: &str, fs: u32, len_s: f64, seed: u64) -> Track {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (len_s * fs as f64).round() as usize;
    let t = |i: usize| i as f64 / fs as f64;

    let f0 = rng.gen_range(180.0..320.0);
    let mut phase = 0.0;
    let vocals: Vec<f64> = (0..n)
        .map(|i| {
            let f = f0 * (1.0 + 0.01 * (2.0 * PI * 5.0 * t(i)).sin());
            phase += 2.0 * PI * f / fs as f64;
            let env = 0.6 + 0.4 * (2.0 * PI * 0.7 * t(i)).sin().abs();
            env * 0.12 * (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.3 * (3.0 * phase).sin() + 0.15 * (5.0 * phase).sin())
        })
        .collect();

    let beat = rng.gen_range(0.4..0.6);
    let hits = noise(&mut rng, n);
    let drums: Vec<f64> = (0..n)
        .map(|i| {
            let since = t(i) % beat;
            0.25 * hits[i] * (-since * 18.0).exp()
        })
        .collect();

    let roots = [55.0, 65.4, 73.4, 49.0];
    let bar = 4.0 * beat;
    let bass: Vec<f64> = (0..n)
        .map(|i| {
            let f = roots[((t(i) / bar) as usize) % roots.len()];
            0.18 * ((2.0 * PI * f * t(i)).sin() + 0.4 * (4.0 * PI * f * t(i)).sin())
        })
        .collect();

    let chord: [f64; 3] = [rng.gen_range(500.0..600.0), rng.gen_range(700.0..800.0), rng.gen_range(1500.0..1700.0)];
    let bed = noise(&mut rng, n);
    let other: Vec<f64> = (0..n)
        .map(|i| {
            let pad: f64 = chord.iter().map(|f| (2.0 * PI * f * t(i)).sin()).sum();
            0.05 * pad + 0.03 * bed[i]
        })
        .collect();

    let stems = StemSet::from_stems(pan(vocals, 0.0, fs), pan(drums, -0.3, fs), pan(bass, 0.1, fs), pan(other, 0.5, fs))
        .expect("equal-length stereo stems");
    Track { id: id.to_string(), stems }
}

/// `count` tracks named `T000`, `T001`, ...
pub fn synthetic_tracks(count: usize, fs: u32, len_s: f64, seed: u64) -> Vec<Track> {
    (0..count)
        .map(|i| synthetic_track(&format!("T{i:03}"), fs, len_s, splitmix64(seed.wrapping_add(i as u64))))
        .collect()
}

/// Spherical-head-like HRIRs: a direct path to the near microphone and a
/// delayed, smoothed, attenuated path to the far one.
pub fn synthetic_hrir_set(subject_id: &str, fs: u32, seed: u64) -> HrirSet {
    const LEN: usize = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_radius_m = rng.gen_range(0.080..0.095);
    let shadow = rng.gen_range(0.35..0.6);
    let mut entries = Vec::new();
    for &az in &SPEAKER_AZIMUTHS_DEG {
        let itd = head_radius_m / 343.0 * (az.to_radians() + az.to_radians().sin());
        let lag = 2 + (itd * fs as f64).round() as usize;
        let mut near = vec![0.0; LEN];
        near[2] = 1.0;
        near[9] = 0.08;
        let mut far = vec![0.0; LEN];
        for (k, w) in [0.25, 0.5, 0.25].iter().enumerate() {
            far[lag + k] += shadow * w;
        }
        entries.push((az, HrirPair { left_mic: near.clone(), right_mic: far.clone() }));
        entries.push((-az, HrirPair { left_mic: far, right_mic: near }));
    }
    HrirSet::new(subject_id, fs, entries).expect("synthetic HRIRs satisfy the set invariants")
}

/// `count` subjects named `H00`, `H01`, ...
pub fn synthetic_hrir_sets(count: usize, fs: u32, seed: u64) -> Vec<HrirSet> {
    (0..count)
        .map(|i| synthetic_hrir_set(&format!("H{i:02}"), fs, splitmix64(seed ^ (i as u64 + 1))))
        .collect()
}

/// Sloping audiogram: `base + slope · log2(f / 250)` clamped to the valid
/// range. Its four-frequency average is `base + 2.5 · slope`.
pub fn sloping_audiogram(base_db: f64, slope_db_per_octave: f64) -> Audiogram {
    let t = AUDIOGRAM_FREQUENCIES_HZ.map(|f| (base_db + slope_db_per_octave * (f / 250.0).log2()).clamp(0.0, MAX_THRESHOLD_DB_HL));
    Audiogram::new(t).expect("clamped thresholds")
}

/// Four-frequency averages at the centre of each of the first four grades.
const GRADE_CENTRES_DB: [f64; 4] = [10.0, 27.0, 42.0, 57.0];

/// Listeners cycling through no impairment, mild, moderate and moderately
/// severe loss. Ears differ by a few dB.
pub fn synthetic_listeners(count: usize) -> Vec<Listener> {
    (0..count)
        .map(|i| {
            let centre = GRADE_CENTRES_DB[i % GRADE_CENTRES_DB.len()] + (i / GRADE_CENTRES_DB.len()) as f64;
            let slope = 5.0;
            let base = centre - 2.5 * slope;
            Listener::new(
                format!("L{i:04}"),
                sloping_audiogram(base - 2.0, slope),
                sloping_audiogram(base + 2.0, slope),
            )
            .expect("non-empty id")
        })
        .collect()
}

/// Audiograms with random level and slope; used to populate larger panels.
pub fn random_listeners(count: usize, seed: u64) -> Vec<Listener> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let base = rng.gen_range(0.0..60.0);
            let slope = rng.gen_range(0.0..12.0);
            let asym = rng.gen_range(-5.0..5.0);
            Listener::new(
                format!("L{i:04}"),
                sloping_audiogram(base + asym, slope),
                sloping_audiogram(base - asym, slope),
            )
            .expect("non-empty id")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiology::{mean_ear_severity, SeverityGrade};
    use crate::scene::segment_track;

    #[test]
    fn listeners_span_grades() {
        let grades: Vec<SeverityGrade> = synthetic_listeners(5).iter().map(mean_ear_severity).collect();
        assert_eq!(
            grades,
            vec![
                SeverityGrade::NoImpairment,
                SeverityGrade::Mild,
                SeverityGrade::Moderate,
                SeverityGrade::ModeratelySevere,
                SeverityGrade::NoImpairment
            ]
        );
    }

    #[test]
    fn tracks_are_fully_active_and_bounded() {
        let t = synthetic_track("t", 16000, 21.0, 3);
        let ix = segment_track("t", &t.stems, 10.0, -60.0).unwrap();
        assert_eq!(ix.eligible_count(), 2);
        assert!(t.stems.sum().max_abs() < 1.0);
        assert_eq!(synthetic_track("t", 16000, 2.0, 3).stems, synthetic_track("t", 16000, 2.0, 3).stems);
    }

    #[test]
    fn hrirs_cover_the_grid() {
        let h = synthetic_hrir_set("H", 44100, 1);
        assert_eq!(h.azimuths(), vec![-37.5, -30.0, -22.5, 22.5, 30.0, 37.5]);
    }
}
