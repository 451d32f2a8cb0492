//! Individual degradation operators on `[0, 1]` rasters.
//!
//! Blurs are written as `x_c + Σ w_k (x_k − x_c)` around the centre sample
//! `x_c`. With normalised weights this equals `Σ w_k x_k`, and it returns a
//! constant image bit-for-bit unchanged.

use crate::degrade::rng::KeyedStream;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Mirror an out-of-range coordinate back into `0..n` (edge sample not repeated).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

pub fn gaussian_noise(img: &Raster, sigma: f64, stream: &mut KeyedStream) -> Raster {
    let mut out = img.clone();
    let s = sigma.max(0.0);
    for v in &mut out.data {
        let z = stream.normal();
        *v = (*v as f64 + s * z).clamp(0.0, 1.0) as f32;
    }
    out
}

/// `clamp(gain · v^gamma)` applied to every channel.
pub fn adjust_lighting(img: &Raster, gain: f64, gamma: f64) -> Raster {
    let mut out = img.clone();
    for v in &mut out.data {
        let base = *v as f64;
        let curved = if gamma == 1.0 { base } else { base.powf(gamma) };
        *v = (gain * curved).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Normalised 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size.is_multiple_of(2) {
        return Err(Error::Config(format!("blur kernel size must be odd, got {size}")));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let half = (size / 2) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Kernel size used when only sigma is given: `2·ceil(3σ) + 1`.
pub fn default_kernel_size(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil().max(0.0) as usize + 1
}

fn convolve_axis(img: &Raster, taps: &[f32], horizontal: bool) -> Raster {
    let half = (taps.len() / 2) as isize;
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                let centre = img.get(x, y, c);
                let mut acc = 0.0f32;
                for (k, &w) in taps.iter().enumerate() {
                    let off = k as isize - half;
                    let v = if horizontal {
                        img.get(reflect(x as isize + off, img.width), y, c)
                    } else {
                        img.get(x, reflect(y as isize + off, img.height), c)
                    };
                    acc += w * (v - centre);
                }
                out.set(x, y, c, (centre + acc).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Raster, sigma: f64, kernel_size: usize) -> Result<Raster> {
    if kernel_size == 1 {
        return Ok(img.clone());
    }
    let taps: Vec<f32> = gaussian_kernel(sigma, kernel_size)?
        .into_iter()
        .map(|w| w as f32)
        .collect();
    let h = convolve_axis(img, &taps, true);
    Ok(convolve_axis(&h, &taps, false))
}

/// Tap offsets `(dx, dy)` and weights of a normalised line kernel.
pub fn motion_kernel(length: u32, angle_deg: f64) -> Vec<((isize, isize), f32)> {
    let length = length.max(1);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut taps: Vec<((isize, isize), f32)> = Vec::new();
    let w = 1.0 / length as f32;
    for j in 0..length {
        let t = j as f64 - (length as f64 - 1.0) / 2.0;
        // image rows grow downwards, so a positive angle tilts upwards
        let off = ((t * c).round() as isize, (-t * s).round() as isize);
        match taps.iter_mut().find(|(o, _)| *o == off) {
            Some((_, acc)) => *acc += w,
            None => taps.push((off, w)),
        }
    }
    taps
}

/// Convolution with a normalised line kernel, reflect-padded.
pub fn motion_blur(img: &Raster, length: u32, angle_deg: f64) -> Raster {
    if length <= 1 {
        return img.clone();
    }
    let taps = motion_kernel(length, angle_deg);
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                let centre = img.get(x, y, c);
                let mut acc = 0.0f32;
                for &((dx, dy), w) in &taps {
                    let sx = reflect(x as isize + dx, img.width);
                    let sy = reflect(y as isize + dy, img.height);
                    acc += w * (img.get(sx, sy, c) - centre);
                }
                out.set(x, y, c, (centre + acc).clamp(0.0, 1.0));
            }
        }
    }
    out
}
