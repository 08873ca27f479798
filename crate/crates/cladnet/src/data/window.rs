use std::collections::BTreeMap;

use cladnet_core::Tensor64;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ChannelStats, RawStream, SensorWindow, SubjectData};
use crate::error::{Error, Result};

/// Hop between window starts: `round(len × (1 − overlap))`, at least 1.
pub fn window_stride(window_len: usize, overlap: f64) -> usize {
    ((window_len as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Cuts a stream into overlapping windows.
///
/// A window's label is the most frequent label among its samples (ties go
/// to the smaller class id); windows without any labeled sample are
/// unlabeled.
pub fn segment_windows(stream: &RawStream, window_len: usize, overlap: f64) -> Vec<SensorWindow> {
    let n = stream.len();
    let d = stream.channels();
    if window_len == 0 || n < window_len {
        return Vec::new();
    }
    let stride = window_stride(window_len, overlap);
    let count = (n - window_len) / stride + 1;
    (0..count)
        .map(|w| {
            let start = w * stride;
            let data = stream.samples[start * d..(start + window_len) * d].to_vec();
            SensorWindow {
                data: Tensor64::new([window_len, d], data).expect("window shape"),
                subject: stream.subject,
                label: majority(&stream.labels[start..start + window_len]),
            }
        })
        .collect()
}

fn majority(labels: &[Option<usize>]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(*l).or_default() += 1;
    }
    counts
        .into_iter()
        .fold(None, |best: Option<(usize, usize)>, (label, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((label, c)),
        })
        .map(|(label, _)| label)
}

fn subject_rng(seed: u64, subject: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (subject as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Random per-subject split; both sides keep the original window order.
pub fn split_train_test(
    windows: Vec<SensorWindow>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SensorWindow>, Vec<SensorWindow>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
    }
    let n = windows.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} window(s) into train and test")));
    }
    let subject = windows[0].subject;
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut subject_rng(seed, subject));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (w, keep) in windows.into_iter().zip(in_train) {
        if keep {
            train.push(w);
        } else {
            test.push(w);
        }
    }
    Ok((train, test))
}

/// Per-channel population mean and standard deviation over all samples of
/// `windows`.
pub fn fit_channel_stats(windows: &[SensorWindow]) -> ChannelStats {
    let d = windows.first().map_or(0, SensorWindow::channels);
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for w in windows {
        for row in w.data.data().chunks(d) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; d];
    for w in windows {
        for row in w.data.data().chunks(d) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    ChannelStats {
        std: sq.iter().map(|s| (s / n).sqrt()).collect(),
        mean,
    }
}

fn apply_stats(stats: &ChannelStats, windows: &mut [SensorWindow]) {
    for w in windows {
        let d = w.channels();
        for row in w.data.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = if *s > 1e-12 { (*v - m) / s } else { 0.0 };
            }
        }
    }
}

/// Standardizes train and test windows with statistics fitted on the
/// training windows only. Zero-variance channels become all zeros.
pub fn standardize_subject(subject: &mut SubjectData) {
    let stats = fit_channel_stats(&subject.train);
    apply_stats(&stats, &mut subject.train);
    apply_stats(&stats, &mut subject.test);
    subject.stats = Some(stats);
}

/// Keeps labels on `round(phi × labeled)` windows per subject, spread over
/// classes in proportion to their size with at least one labeled window for
/// every class present.
pub fn mask_labels(windows: &[SensorWindow], phi: f64, seed: u64) -> Vec<SensorWindow> {
    let mut out = windows.to_vec();
    if phi >= 1.0 {
        return out;
    }
    let mut by_subject: BTreeMap<u32, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        if let Some(label) = w.label {
            by_subject.entry(w.subject).or_default().entry(label).or_default().push(i);
        }
    }
    for (subject, classes) in by_subject {
        let total: usize = classes.values().map(Vec::len).sum();
        let target = (phi * total as f64).round() as usize;
        let quotas = class_quotas(&classes.values().map(Vec::len).collect::<Vec<_>>(), phi, target);
        let mut rng = subject_rng(seed, subject);
        for (members, quota) in classes.values().zip(quotas) {
            let mut keep = vec![false; members.len()];
            for k in index::sample(&mut rng, members.len(), quota) {
                keep[k] = true;
            }
            for (&i, kept) in members.iter().zip(keep) {
                if !kept {
                    out[i].label = None;
                }
            }
        }
    }
    out
}

/// Largest-remainder allocation of `target` labeled windows over classes of
/// the given sizes, with a floor of one per class.
fn class_quotas(sizes: &[usize], phi: f64, target: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| phi * n as f64).collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&q, &n)| (q.floor() as usize).max(1).min(n))
        .collect();
    let mut by_remainder: Vec<usize> = (0..sizes.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let before = assigned;
        for &c in &by_remainder {
            if assigned < target && quota[c] < sizes[c] {
                quota[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    while assigned > target {
        let before = assigned;
        for &c in by_remainder.iter().rev() {
            if assigned > target && quota[c] > 1 {
                quota[c] -= 1;
                assigned -= 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    quota
}
