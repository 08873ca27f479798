//! View generation for self-supervised training.
//!
//! Every augmentation maps an `[l × d]` window to a new `[l × d]` window and
//! is a pure function of its input and the supplied generator.

use cladnet_core::{Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Noise,
    ZeroMask,
    TimeWarp,
    #[default]
    CropResize,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [Self::Noise, Self::ZeroMask, Self::TimeWarp, Self::CropResize];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::ZeroMask => "zero_mask",
            Self::TimeWarp => "time_warp",
            Self::CropResize => "crop_resize",
        }
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    pub noise_sigma: f64,
    pub mask_fraction: f64,
    pub warp_knots: usize,
    pub warp_strength: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            kind: AugmentKind::CropResize,
            noise_sigma: 0.1,
            mask_fraction: 0.25,
            warp_knots: 4,
            warp_strength: 0.2,
        }
    }
}

impl AugmentSpec {
    pub fn with_kind(kind: AugmentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("augment.noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config("augment.mask_fraction must lie in [0, 1)".into()));
        }
        if self.warp_knots == 0 {
            return Err(Error::Config("augment.warp_knots must be >= 1".into()));
        }
        if !(self.warp_strength > 0.0) {
            return Err(Error::Config("augment.warp_strength must be > 0".into()));
        }
        Ok(())
    }

    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, x: &Tensor<T>, rng: &mut R) -> Tensor<T> {
        match self.kind {
            AugmentKind::Noise => random_noise(x, self.noise_sigma, rng),
            AugmentKind::ZeroMask => zero_masking(x, self.mask_fraction, rng),
            AugmentKind::TimeWarp => time_warp(x, self.warp_knots, self.warp_strength, rng),
            AugmentKind::CropResize => crop_and_resize(x, rng),
        }
    }
}

fn dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize) {
    match x.shape() {
        [l, d] => (*l, *d),
        [l] => (*l, 1),
        other => panic!("augmentations expect [l x d] windows, got {other:?}"),
    }
}

/// Adds independent `N(0, sigma²)` noise to every element.
pub fn random_noise<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, sigma: f64, rng: &mut R) -> Tensor<T> {
    if sigma == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let data = x.data().iter().map(|&v| v + T::lit(normal.sample(rng))).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape unchanged")
}

/// Zeroes one contiguous span of `round(fraction · l)` time steps across
/// all channels.
pub fn zero_masking<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, fraction: f64, rng: &mut R) -> Tensor<T> {
    let (l, d) = dims(x);
    let span = ((fraction * l as f64).round() as usize).min(l);
    if span == 0 {
        return x.clone();
    }
    let start = rng.random_range(0..=l - span);
    let mut out = x.clone();
    out.data_mut()[start * d..(start + span) * d].fill(T::zero());
    out
}

/// Piecewise-linear, strictly increasing map from output time to source
/// time with both endpoints fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpMap {
    /// Knot positions on the output axis, from 0 to `l − 1`.
    pub out_knots: Vec<f64>,
    /// Matching positions on the source axis, from 0 to `l − 1`.
    pub src_knots: Vec<f64>,
}

impl WarpMap {
    /// Draws `knots` segment weights `exp(strength · z)` with standard
    /// normal `z`; segment `k` covers an equal share of the output axis
    /// and a weight-proportional share of the source axis.
    pub fn sample<R: Rng + ?Sized>(len: usize, knots: usize, strength: f64, rng: &mut R) -> Self {
        let knots = knots.max(1);
        let span = len.saturating_sub(1) as f64;
        let weights: Vec<f64> = (0..knots)
            .map(|_| {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                (strength * z).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let out_knots = (0..=knots).map(|k| span * k as f64 / knots as f64).collect();
        let mut src_knots = Vec::with_capacity(knots + 1);
        let mut acc = 0.0;
        src_knots.push(0.0);
        for w in &weights[..knots - 1] {
            acc += w;
            src_knots.push(span * acc / total);
        }
        src_knots.push(span);
        Self { out_knots, src_knots }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.out_knots.len() - 1;
        let seg = self.out_knots[1..k].partition_point(|&u| u <= t);
        let (u0, u1) = (self.out_knots[seg], self.out_knots[seg + 1]);
        let (s0, s1) = (self.src_knots[seg], self.src_knots[seg + 1]);
        if u1 == u0 {
            s0
        } else {
            s0 + (s1 - s0) * (t - u0) / (u1 - u0)
        }
    }
}

/// Linearly interpolates every channel of `x` at fractional source
/// positions.
pub fn resample<T: Scalar>(x: &Tensor<T>, positions: &[f64]) -> Tensor<T> {
    let (l, d) = dims(x);
    let src = x.data();
    let mut out = Vec::with_capacity(positions.len() * d);
    for &p in positions {
        let p = p.clamp(0.0, (l - 1) as f64);
        let i0 = (p.floor() as usize).min(l - 1);
        let i1 = (i0 + 1).min(l - 1);
        let frac = T::lit(p - i0 as f64);
        for c in 0..d {
            let a = src[i0 * d + c];
            let b = src[i1 * d + c];
            out.push(a + (b - a) * frac);
        }
    }
    let shape = if x.rank() == 1 {
        vec![positions.len()]
    } else {
        vec![positions.len(), d]
    };
    Tensor::new(shape, out).expect("resample preserves the channel count")
}

pub fn time_warp_with<T: Scalar>(x: &Tensor<T>, map: &WarpMap) -> Tensor<T> {
    let (l, _) = dims(x);
    let positions: Vec<f64> = (0..l).map(|t| map.eval(t as f64)).collect();
    resample(x, &positions)
}

/// Resamples `x` along a random smooth monotone time remapping.
pub fn time_warp<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, knots: usize, strength: f64, rng: &mut R) -> Tensor<T> {
    let (l, _) = dims(x);
    if l < 2 {
        return x.clone();
    }
    time_warp_with(x, &WarpMap::sample(l, knots, strength, rng))
}

/// Length of the cropped span for a window of length `len`.
pub fn crop_len(len: usize) -> usize {
    (len / 2).max(1)
}

/// Stretches `x[start .. start + crop_len(l)]` back to length `l`.
pub fn crop_and_resize_at<T: Scalar>(x: &Tensor<T>, start: usize) -> Tensor<T> {
    let (l, _) = dims(x);
    let crop = crop_len(l);
    assert!(start + crop <= l, "crop start {start} out of range for length {l}");
    if l < 2 {
        return x.clone();
    }
    let step = (crop - 1) as f64 / (l - 1) as f64;
    let positions: Vec<f64> = (0..l).map(|i| start as f64 + i as f64 * step).collect();
    resample(x, &positions)
}

/// Crops a random contiguous half of the window (shared by all channels)
/// and linearly resizes it to the original length.
pub fn crop_and_resize<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, rng: &mut R) -> Tensor<T> {
    let (l, _) = dims(x);
    let start = rng.random_range(0..=l - crop_len(l).min(l));
    crop_and_resize_at(x, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cladnet_core::Tensor64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(l: usize) -> Tensor64 {
        Tensor64::from_fn([l, 1], |i| i as f64)
    }

    #[test]
    fn zero_fraction_and_sigma_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor64::from_fn([10, 3], |i| i as f64);
        assert_eq!(random_noise(&x, 0.0, &mut rng), x);
        assert_eq!(zero_masking(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn half_mask_zeroes_five_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor64::ones([10, 2]);
        let y = zero_masking(&x, 0.5, &mut rng);
        let zero_rows: Vec<usize> = (0..10).filter(|&r| y.row(r).iter().all(|&v| v == 0.0)).collect();
        assert_eq!(zero_rows.len(), 5);
        assert_eq!(zero_rows[4] - zero_rows[0], 4);
    }

    #[test]
    fn crop_of_ramp() {
        let y = crop_and_resize_at(&ramp(10), 0);
        for i in 0..10 {
            assert!((y.data()[i] - i as f64 * 4.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_map_is_monotone_with_fixed_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = WarpMap::sample(20, 4, 0.5, &mut rng);
        assert_eq!(m.eval(0.0), 0.0);
        assert!((m.eval(19.0) - 19.0).abs() < 1e-12);
        for t in 0..19 {
            assert!(m.eval(t as f64 + 1.0) > m.eval(t as f64));
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AugmentKind::ALL {
            assert_eq!(k.as_str().parse::<AugmentKind>().unwrap(), k);
        }
        assert!("mixup".parse::<AugmentKind>().is_err());
    }
}
