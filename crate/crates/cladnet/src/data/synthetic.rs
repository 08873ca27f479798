use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{window_stride, DatasetConfig, RawStream};
use crate::error::{Error, Result};

/// Per-class signal template shared by all subjects.
struct ClassTemplate {
    freq: f64,
    /// `[parts × channels_per_part]` amplitudes and phases.
    amp: Vec<f64>,
    phase: Vec<f64>,
}

/// Emits one raw stream per synthetic subject.
///
/// Each class is a sinusoid at its own frequency with a fixed per-channel
/// amplitude/phase signature. Subjects differ by a rotation that mixes the
/// channels within each body part, a tempo change and an affine channel
/// shift, so decision boundaries learned on one subject transfer only
/// partially to the next. The stream length is chosen so windowing with
/// the configured length and overlap yields exactly `windows_per_subject`
/// windows.
pub fn generate_synthetic(cfg: &DatasetConfig) -> Result<Vec<RawStream>> {
    let s = &cfg.synthetic;
    if s.subjects == 0 || s.classes == 0 || s.parts == 0 || s.channels_per_part == 0 {
        return Err(Error::Config("synthetic sizes must be positive".into()));
    }
    let rate = cfg.sampling_rate();
    let window_len = cfg.window_len()?;
    let stride = window_stride(window_len, cfg.overlap);
    let n = if s.windows_per_subject == 0 {
        0
    } else {
        (s.windows_per_subject - 1) * stride + window_len
    };
    let block = (s.block_windows.max(1) * stride).max(1);
    let d = s.parts * s.channels_per_part;
    let names: Vec<String> = cfg.channels().into_iter().map(|c| c.name).collect();

    let mut shared = ChaCha8Rng::seed_from_u64(s.seed);
    let templates: Vec<ClassTemplate> = (0..s.classes)
        .map(|c| ClassTemplate {
            freq: s.class_frequencies[c % s.class_frequencies.len()],
            amp: (0..d).map(|_| shared.random_range(0.3..1.0)).collect(),
            phase: (0..d).map(|_| shared.random_range(0.0..std::f64::consts::TAU)).collect(),
        })
        .collect();
    let noise = Normal::new(0.0, s.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut streams = Vec::with_capacity(s.subjects);
    for subj in 0..s.subjects {
        let id = subj as u32 + 1;
        if !cfg.subjects.is_empty() && !cfg.subjects.contains(&id) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(1 + subj as u64));
        rng.set_stream(subj as u64 + 1);
        let mixing: Vec<Vec<f64>> = (0..s.parts)
            .map(|_| random_rotation(s.channels_per_part, s.rotation, &mut rng))
            .collect();
        let tempo = 1.0 + rng.random_range(-s.tempo..=s.tempo);
        let gain: Vec<f64> = (0..d).map(|_| rng.random_range(-s.offset..=s.offset).exp()).collect();
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-s.offset..=s.offset)).collect();

        let mut stream = RawStream::new(id, names.clone());
        let mut order: Vec<usize> = Vec::new();
        let mut clean = vec![0.0; d];
        let mut row = vec![0.0; d];
        let mut t0 = 0;
        while t0 < n {
            if order.is_empty() {
                order = (0..s.classes).collect();
                order.shuffle(&mut rng);
            }
            let class = order.pop().expect("non-empty");
            let tpl = &templates[class];
            let start_phase = rng.random_range(0.0..std::f64::consts::TAU);
            for t in t0..(t0 + block).min(n) {
                let time = (t - t0) as f64 / rate;
                let arg = std::f64::consts::TAU * tpl.freq * tempo * time + start_phase;
                for (j, v) in clean.iter_mut().enumerate() {
                    *v = s.amplitude * tpl.amp[j] * (arg + tpl.phase[j]).sin();
                }
                for p in 0..s.parts {
                    let k = s.channels_per_part;
                    let m = &mixing[p];
                    for i in 0..k {
                        let mixed: f64 = (0..k).map(|j| m[i * k + j] * clean[p * k + j]).sum();
                        let ch = p * k + i;
                        row[ch] = gain[ch] * mixed + shift[ch] + noise.sample(&mut rng);
                    }
                }
                stream.push(&row, Some(class));
            }
            t0 += block;
        }
        streams.push(stream);
    }
    Ok(streams)
}

/// Row-major `k × k` orthogonal matrix built from Givens rotations with
/// angles drawn from `[-max_angle, max_angle]`.
fn random_rotation(k: usize, max_angle: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        m[i * k + i] = 1.0;
    }
    for a in 0..k {
        for b in a + 1..k {
            let theta = if max_angle > 0.0 {
                rng.random_range(-max_angle..=max_angle)
            } else {
                0.0
            };
            let (sin, cos) = theta.sin_cos();
            for r in 0..k {
                let (x, y) = (m[r * k + a], m[r * k + b]);
                m[r * k + a] = cos * x - sin * y;
                m[r * k + b] = sin * x + cos * y;
            }
        }
    }
    m
}
