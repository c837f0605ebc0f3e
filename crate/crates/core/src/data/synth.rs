//! Class-conditional texture images standing in for face identities.
//!
//! Each class owns two oriented sinusoidal gratings and a Gaussian blob,
//! each with its own colour. A sample draws every grating with a uniform
//! random phase, places the blob at a uniform random position with a random
//! sign, and adds pixel noise. Every class therefore has a zero mean image,
//! which leaves a linear classifier near chance, while local filters
//! followed by rectification and pooling separate the classes easily.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::{RawDataset, SplitDataset, SplitRatios};
use crate::error::{Error, Result};
use crate::util::stream_rng;

const CHANNELS: usize = 3;

/// Generator knobs.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthParams {
    /// Grating frequency range, cycles per image edge.
    pub freq: (f64, f64),
    /// Blob standard deviation range as a fraction of the image edge.
    pub blob_sigma: (f64, f64),
    pub blob_gain: f64,
    /// Per-sample amplitude jitter range.
    pub amplitude: (f64, f64),
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            freq: (2.0, 6.0),
            blob_sigma: (0.06, 0.14),
            blob_gain: 1.5,
            amplitude: (0.6, 1.4),
            noise: 2.5,
        }
    }
}

struct Grating {
    freq: f64,
    angle: f64,
    color: [f64; 3],
}

struct Prototype {
    gratings: [Grating; 2],
    blob_sigma: f64,
    blob_color: [f64; 3],
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    UnitSphere.sample(rng)
}

fn prototype(rng: &mut ChaCha8Rng, p: &SynthParams) -> Prototype {
    let grating = |rng: &mut ChaCha8Rng| Grating {
        freq: rng.random_range(p.freq.0..p.freq.1),
        angle: rng.random_range(0.0..PI),
        color: color(rng),
    };
    Prototype {
        gratings: [grating(rng), grating(rng)],
        blob_sigma: rng.random_range(p.blob_sigma.0..p.blob_sigma.1),
        blob_color: color(rng),
    }
}

fn render(proto: &Prototype, size: usize, p: &SynthParams, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    let plane = size * size;
    let mut img = vec![0.0f64; CHANNELS * plane];
    let s = size as f64;
    for g in &proto.gratings {
        let amp = rng.random_range(p.amplitude.0..p.amplitude.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (kx, ky) = (2.0 * PI * g.freq * g.angle.cos() / s, 2.0 * PI * g.freq * g.angle.sin() / s);
        for y in 0..size {
            for x in 0..size {
                let v = amp * (kx * x as f64 + ky * y as f64 + phase).cos();
                for c in 0..CHANNELS {
                    img[c * plane + y * size + x] += v * g.color[c];
                }
            }
        }
    }
    let amp = p.blob_gain * rng.random_range(p.amplitude.0..p.amplitude.1);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let inv = 1.0 / (2.0 * (proto.blob_sigma * s).powi(2));
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let v = sign * amp * (-d2 * inv).exp();
            for c in 0..CHANNELS {
                img[c * plane + y * size + x] += v * proto.blob_color[c];
            }
        }
    }
    let noise = Normal::new(0.0, p.noise).unwrap();
    out.extend(img.into_iter().map(|v| (v + noise.sample(rng)) as f32));
}

/// `n_classes × per_class` images of `3×size×size`, class-major, generated
/// with explicit knobs.
pub fn synth_with(n_classes: usize, per_class: usize, size: usize, seed: u64, p: &SynthParams) -> Result<RawDataset> {
    if n_classes == 0 || per_class == 0 || size == 0 {
        return Err(Error::config("data", "synthetic dataset needs positive counts and size"));
    }
    let mut class_rng = stream_rng(seed, &[0x5359_4e54, 0]);
    let protos: Vec<Prototype> = (0..n_classes).map(|_| prototype(&mut class_rng, p)).collect();
    let mut pixels = Vec::with_capacity(n_classes * per_class * CHANNELS * size * size);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, proto) in protos.iter().enumerate() {
        let mut rng = stream_rng(seed, &[0x5359_4e54, 1, c as u64]);
        for _ in 0..per_class {
            render(proto, size, p, &mut rng, &mut pixels);
            labels.push(c);
        }
    }
    Ok(RawDataset {
        channels: CHANNELS,
        height: size,
        width: size,
        n_classes,
        labels,
        pixels,
    })
}

pub fn synth_identity_raw(n_classes: usize, per_class: usize, size: usize, seed: u64) -> Result<RawDataset> {
    synth_with(n_classes, per_class, size, seed, &SynthParams::default())
}

/// Synthetic identities split 8:1:1 with the same seed.
pub fn synth_identity_dataset(n_classes: usize, per_class: usize, size: usize, seed: u64) -> Result<SplitDataset> {
    SplitDataset::from_raw(
        &synth_identity_raw(n_classes, per_class, size, seed)?,
        SplitRatios::default(),
        seed,
    )
}
