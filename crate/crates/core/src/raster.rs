//! Interleaved floating-point images in `[0, 1]` and their PNG/tensor forms.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved samples.
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}×{height}×{channels} raster needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.idx(x, y, c)]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Bitwise sample equality.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.same_dims(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Decode {
                path: path.to_owned(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::from_vec(w as usize, h as usize, 3, data)
    }

    /// 8-bit RGB encoding; samples are clamped then rounded.
    pub fn to_rgb8(&self) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "PNG export needs 3 channels, raster has {}",
                self.channels
            )));
        }
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Shape("raster size overflow".into()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(Error::from)
    }

    /// Round-trip through 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self {
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }

    /// Planar `[C, H, W]` samples mapped to `[−1, 1]` via `v·2 − 1`.
    pub fn to_model_range<T: Real>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.data.len()];
        let plane = self.width * self.height;
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = T::lit(v as f64 * 2.0 - 1.0);
            }
        }
        out
    }

    /// Inverse of [`Raster::to_model_range`] for one sample of a tensor.
    pub fn from_model_range<T: Real>(t: &Tensor4<T>, n: usize) -> Self {
        let [_, c, h, w] = t.shape();
        let plane = h * w;
        let s = t.sample(n);
        let mut data = vec![0.0f32; s.len()];
        for ch in 0..c {
            for p in 0..plane {
                let v = (s[ch * plane + p].as_f64() + 1.0) / 2.0;
                data[p * c + ch] = v.clamp(0.0, 1.0) as f32;
            }
        }
        Self {
            width: w,
            height: h,
            channels: c,
            data,
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stack rasters into a `[m, C, H, W]` tensor in model range.
pub fn rasters_to_tensor<T: Real>(images: &[&Raster]) -> Result<Tensor4<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to stack".into()))?;
    let planar: Vec<Vec<T>> = images
        .iter()
        .map(|r| {
            if !r.same_dims(first) {
                return Err(Error::Shape(format!(
                    "cannot stack {}×{} with {}×{} image",
                    r.width, r.height, first.width, first.height
                )));
            }
            Ok(r.to_model_range())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[T]> = planar.iter().map(|v| v.as_slice()).collect();
    Tensor4::stack([first.channels, first.height, first.width], &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_range_endpoints() {
        let r = Raster::from_vec(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.to_model_range::<f32>(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn tensor_round_trip_and_png_round_trip() {
        let data: Vec<f32> = (0..48).map(|i| i as f32 / 47.0).collect();
        let r = Raster::from_vec(4, 4, 3, data).unwrap().quantized();
        let t = rasters_to_tensor::<f64>(&[&r]).unwrap();
        assert_eq!(t.shape(), [1, 3, 4, 4]);
        let back = Raster::from_model_range(&t, 0);
        for (a, b) in back.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-6);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        r.save_png(&path).unwrap();
        assert!(Raster::load_png(&path).unwrap().bit_eq(&r));
    }

    #[test]
    fn decode_failure_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = Raster::load_png(&path).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }
}
