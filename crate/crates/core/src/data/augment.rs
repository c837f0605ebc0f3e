use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flip, pad-and-crop and cutout, applied in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub flip_prob: f64,
    pub crop: bool,
    pub pad_pixels: usize,
    pub crop_size: usize,
    pub cutout: bool,
    pub cutout_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            flip_prob: 0.5,
            crop: true,
            pad_pixels: 4,
            crop_size: 32,
            cutout: true,
            cutout_size: 4,
        }
    }
}

impl AugmentConfig {
    /// Everything switched off.
    pub fn none() -> Self {
        Self {
            flip: false,
            crop: false,
            cutout: false,
            ..Self::default()
        }
    }

    /// Output edge length for a square input of `size`.
    pub fn output_size(&self, size: usize) -> usize {
        if self.crop {
            self.crop_size
        } else {
            size
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("augment.flip_prob", "must be in [0, 1]"));
        }
        if self.crop && (self.crop_size == 0 || self.crop_size > height.min(width) + 2 * self.pad_pixels) {
            return Err(Error::config("augment.crop_size", "must be between 1 and the padded size"));
        }
        let out = if self.crop { self.crop_size } else { height.min(width) };
        if self.cutout && self.cutout_size > out {
            return Err(Error::config("augment.cutout_size", "must not exceed the crop size"));
        }
        Ok(())
    }
}

pub fn flip_horizontal(img: &[f64], [c, h, w]: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * h * w);
    for row in img.chunks_exact(w) {
        out.extend(row.iter().rev());
    }
    out
}

/// Zero padding of `p` pixels on every side.
pub fn pad(img: &[f64], [c, h, w]: [usize; 3], p: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &img[(ch * h + y) * w..][..w];
            out[(ch * ph + y + p) * pw + p..][..w].copy_from_slice(src);
        }
    }
    out
}

/// The `size × size` window whose top-left corner is `(top, left)`.
pub fn crop_at(img: &[f64], [c, h, w]: [usize; 3], top: usize, left: usize, size: usize) -> Vec<f64> {
    assert!(top + size <= h && left + size <= w, "crop window outside the image");
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            out.extend_from_slice(&img[(ch * h + y) * w + left..][..size]);
        }
    }
    out
}

/// Zeroes a `size × size` square centred on `(cy, cx)`, clipped at the
/// borders, in every channel.
pub fn cutout_at(img: &mut [f64], [c, h, w]: [usize; 3], cy: usize, cx: usize, size: usize) {
    let y0 = cy.saturating_sub(size / 2);
    let x0 = cx.saturating_sub(size / 2);
    let y1 = (cy + size - size / 2).min(h);
    let x1 = (cx + size - size / 2).min(w);
    for ch in 0..c {
        for y in y0..y1 {
            img[(ch * h + y) * w + x0..(ch * h + y) * w + x1].fill(0.0);
        }
    }
}

pub fn augment<R: Rng + ?Sized>(img: &[f64], shape: [usize; 3], cfg: &AugmentConfig, rng: &mut R) -> Result<Vec<f64>> {
    let [c, h, w] = shape;
    if img.len() != c * h * w {
        return Err(Error::Dimension(format!("image of {} values is not {c}×{h}×{w}", img.len())));
    }
    let mut cur = if cfg.flip && rng.random_bool(cfg.flip_prob) {
        flip_horizontal(img, shape)
    } else {
        img.to_vec()
    };
    let mut dims = shape;
    if cfg.crop {
        let p = cfg.pad_pixels;
        let padded = [c, h + 2 * p, w + 2 * p];
        let s = cfg.crop_size;
        if s > padded[1].min(padded[2]) {
            return Err(Error::config("augment.crop_size", "larger than the padded image"));
        }
        let top = rng.random_range(0..=padded[1] - s);
        let left = rng.random_range(0..=padded[2] - s);
        cur = crop_at(&pad(&cur, shape, p), padded, top, left, s);
        dims = [c, s, s];
    }
    if cfg.cutout && cfg.cutout_size > 0 {
        let cy = rng.random_range(0..dims[1]);
        let cx = rng.random_range(0..dims[2]);
        cutout_at(&mut cur, dims, cy, cx, cfg.cutout_size);
    }
    Ok(cur)
}
