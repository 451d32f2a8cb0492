//! Seeded stochastic degradation of clean images.
//!
//! Each image draws from keyed streams: op index 0 picks the operator count,
//! kinds and parameters; op index `k + 1` feeds the noise of the k-th applied
//! operator. Results therefore depend only on `(seed, image_index)`.

pub mod ops;
pub mod rng;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
pub use ops::{adjust_lighting, default_kernel_size, gaussian_blur, gaussian_noise, motion_blur};
pub use rng::KeyedStream;

/// Operator families with their sampling ranges (`[lo, hi]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    GaussianNoise { sigma: [f64; 2] },
    Lighting { gain: [f64; 2], gamma: [f64; 2] },
    GaussianBlur { sigma: [f64; 2] },
    MotionBlur { length: [u32; 2], angle: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedOp {
    pub weight: f64,
    pub op: OpSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub ops: Vec<WeightedOp>,
    /// Inclusive bounds on the number of operators applied per image.
    pub ops_per_image: [u32; 2],
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        let w = |op| WeightedOp { weight: 1.0, op };
        Self {
            ops: vec![
                w(OpSpec::GaussianNoise { sigma: [0.02, 0.15] }),
                w(OpSpec::Lighting {
                    gain: [0.4, 1.8],
                    gamma: [0.5, 2.2],
                }),
                w(OpSpec::GaussianBlur { sigma: [0.5, 2.5] }),
                w(OpSpec::MotionBlur {
                    length: [3, 9],
                    angle: [0.0, 180.0],
                }),
            ],
            ops_per_image: [1, 2],
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], allow_zero: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
        return Err(Error::Config(format!("{name} range {r:?} is empty")));
    }
    let ok = if allow_zero { r[0] >= 0.0 } else { r[0] > 0.0 };
    if !ok {
        return Err(Error::Config(format!("{name} range {r:?} must be positive")));
    }
    Ok(())
}

impl OpSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            // zero noise is a legitimate degenerate setting
            OpSpec::GaussianNoise { sigma } => check_range("noise sigma", sigma, true),
            OpSpec::Lighting { gain, gamma } => {
                check_range("gain", gain, false)?;
                check_range("gamma", gamma, false)
            }
            OpSpec::GaussianBlur { sigma } => check_range("blur sigma", sigma, false),
            OpSpec::MotionBlur { length, angle } => {
                if length[0] == 0 || length[0] > length[1] {
                    return Err(Error::Config(format!("motion length range {length:?} invalid")));
                }
                if !(angle[0].is_finite() && angle[1].is_finite()) || angle[0] > angle[1] {
                    return Err(Error::Config(format!("motion angle range {angle:?} is empty")));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, s: &mut KeyedStream) -> AppliedOp {
        match *self {
            OpSpec::GaussianNoise { sigma } => AppliedOp::GaussianNoise {
                sigma: s.uniform_in(sigma[0], sigma[1]),
            },
            OpSpec::Lighting { gain, gamma } => AppliedOp::Lighting {
                gain: s.uniform_in(gain[0], gain[1]),
                gamma: s.uniform_in(gamma[0], gamma[1]),
            },
            OpSpec::GaussianBlur { sigma } => {
                let sigma = s.uniform_in(sigma[0], sigma[1]);
                AppliedOp::GaussianBlur {
                    sigma,
                    kernel_size: default_kernel_size(sigma),
                }
            }
            OpSpec::MotionBlur { length, angle } => AppliedOp::MotionBlur {
                length: s.int_in(length[0], length[1]),
                angle: s.uniform_in(angle[0], angle[1]),
            },
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::Config("degradation spec lists no operators".into()));
        }
        for w in &self.ops {
            if !(w.weight > 0.0 && w.weight.is_finite()) {
                return Err(Error::Config(format!("operator weight {} must be positive", w.weight)));
            }
            w.op.validate()?;
        }
        let [lo, hi] = self.ops_per_image;
        if lo > hi {
            return Err(Error::Config(format!("ops_per_image range [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One operator as it was applied, with its sampled parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppliedOp {
    GaussianNoise { sigma: f64 },
    Lighting { gain: f64, gamma: f64 },
    GaussianBlur { sigma: f64, kernel_size: usize },
    MotionBlur { length: u32, angle: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppliedRecord {
    pub seed: u64,
    pub image_index: u64,
    pub ops: Vec<AppliedOp>,
}

fn apply_op(img: &Raster, op: &AppliedOp, stream: &mut KeyedStream) -> Result<Raster> {
    Ok(match *op {
        AppliedOp::GaussianNoise { sigma } => gaussian_noise(img, sigma, stream),
        AppliedOp::Lighting { gain, gamma } => adjust_lighting(img, gain, gamma),
        AppliedOp::GaussianBlur { sigma, kernel_size } => gaussian_blur(img, sigma, kernel_size)?,
        AppliedOp::MotionBlur { length, angle } => motion_blur(img, length, angle),
    })
}

/// Apply a record's operators in order. Bit-identical to the original call.
pub fn replay(img: &Raster, record: &AppliedRecord) -> Result<Raster> {
    let mut out = img.clone();
    for (k, op) in record.ops.iter().enumerate() {
        let mut stream = KeyedStream::new(record.seed, record.image_index, k as u64 + 1);
        out = apply_op(&out, op, &mut stream)?;
    }
    Ok(out)
}

pub fn sample_record(spec: &DegradationSpec, image_index: u64) -> AppliedRecord {
    let mut s = KeyedStream::new(spec.seed, image_index, 0);
    let count = s.int_in(spec.ops_per_image[0], spec.ops_per_image[1]);
    let weights: Vec<f64> = spec.ops.iter().map(|w| w.weight).collect();
    let ops = (0..count)
        .map(|_| {
            let i = s.weighted(&weights);
            spec.ops[i].op.sample(&mut s)
        })
        .collect();
    AppliedRecord {
        seed: spec.seed,
        image_index,
        ops,
    }
}

pub fn degrade_random(
    img: &Raster,
    spec: &DegradationSpec,
    image_index: u64,
) -> Result<(Raster, AppliedRecord)> {
    spec.validate()?;
    let record = sample_record(spec, image_index);
    let out = replay(img, &record)?;
    Ok((out, record))
}

/// Sidecar location for the record of a degraded image.
pub fn record_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.record.json"))
}

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Degrade every PNG in `input` into `output`, writing a record beside each.
/// The image index is the file's position in sorted name order.
pub fn degrade_dir(input: &Path, output: &Path, spec: &DegradationSpec) -> Result<usize> {
    spec.validate()?;
    let files = list_pngs(input)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG files in {}", input.display())));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for (index, path) in files.iter().enumerate() {
        let clean = Raster::load_png(path)?;
        let (degraded, record) = degrade_random(&clean, spec, index as u64)?;
        let dst = output.join(path.file_name().expect("listed files have names"));
        degraded.save_png(&dst)?;
        let rec = record_path(&dst);
        fs::write(&rec, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&rec, e))?;
    }
    Ok(files.len())
}

pub fn load_record(path: &Path) -> Result<AppliedRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(seed: u64) -> Raster {
        let mut s = KeyedStream::new(seed, 99, 99);
        let data = (0..16 * 16 * 3).map(|_| s.uniform() as f32).collect();
        Raster::from_vec(16, 16, 3, data).unwrap()
    }

    #[test]
    fn default_spec_is_valid_and_round_trips() {
        let spec = DegradationSpec::default();
        spec.validate().unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(DegradationSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = DegradationSpec::default();
        spec.ops[0].weight = 0.0;
        assert!(spec.validate().is_err());
        let spec = DegradationSpec {
            ops_per_image: [3, 1],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let mut spec = DegradationSpec::default();
        spec.ops[1].op = OpSpec::Lighting {
            gain: [0.0, 1.0],
            gamma: [1.0, 1.0],
        };
        assert!(spec.validate().is_err());
        let mut spec = DegradationSpec::default();
        spec.ops[2].op = OpSpec::GaussianBlur { sigma: [2.0, 1.0] };
        assert!(spec.validate().is_err());
        assert!(DegradationSpec::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn degenerate_noise_is_identity() {
        let spec = DegradationSpec {
            ops: vec![WeightedOp {
                weight: 1.0,
                op: OpSpec::GaussianNoise { sigma: [0.0, 0.0] },
            }],
            ops_per_image: [1, 2],
            seed: 3,
        };
        let img = texture(1);
        for i in 0..5 {
            let (out, rec) = degrade_random(&img, &spec, i).unwrap();
            assert!(out.bit_eq(&img));
            assert!(!rec.ops.is_empty());
        }
    }

    #[test]
    fn record_json_replays_exactly() {
        let spec = DegradationSpec {
            seed: 17,
            ..Default::default()
        };
        let img = texture(2);
        for i in 0..20 {
            let (out, rec) = degrade_random(&img, &spec, i).unwrap();
            let back: AppliedRecord =
                serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
            assert_eq!(back, rec);
            assert!(replay(&img, &back).unwrap().bit_eq(&out));
        }
    }

    #[test]
    fn all_kinds_get_sampled() {
        let spec = DegradationSpec::default();
        let mut seen = [false; 4];
        for i in 0..200 {
            for op in sample_record(&spec, i).ops {
                let k = match op {
                    AppliedOp::GaussianNoise { .. } => 0,
                    AppliedOp::Lighting { .. } => 1,
                    AppliedOp::GaussianBlur { .. } => 2,
                    AppliedOp::MotionBlur { .. } => 3,
                };
                seen[k] = true;
            }
        }
        assert_eq!(seen, [true; 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn deterministic_and_order_independent(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
            let spec = DegradationSpec { seed, ..Default::default() };
            let img = texture(seed ^ 1);
            let (xa, ra) = degrade_random(&img, &spec, a).unwrap();
            let _ = degrade_random(&img, &spec, b).unwrap();
            let (xa2, ra2) = degrade_random(&img, &spec, a).unwrap();
            prop_assert!(xa.bit_eq(&xa2));
            prop_assert_eq!(ra, ra2);
        }

        #[test]
        fn sampled_params_within_ranges(seed in any::<u64>(), index in any::<u64>()) {
            let spec = DegradationSpec { seed, ..Default::default() };
            let rec = sample_record(&spec, index);
            prop_assert!((1..=2).contains(&rec.ops.len()));
            for op in rec.ops {
                match op {
                    AppliedOp::GaussianNoise { sigma } => prop_assert!((0.02..=0.15).contains(&sigma)),
                    AppliedOp::Lighting { gain, gamma } => {
                        prop_assert!((0.4..=1.8).contains(&gain));
                        prop_assert!((0.5..=2.2).contains(&gamma));
                    }
                    AppliedOp::GaussianBlur { sigma, kernel_size } => {
                        prop_assert!((0.5..=2.5).contains(&sigma));
                        prop_assert_eq!(kernel_size, default_kernel_size(sigma));
                    }
                    AppliedOp::MotionBlur { length, angle } => {
                        prop_assert!((3..=9).contains(&length));
                        prop_assert!((0.0..180.0).contains(&angle));
                    }
                }
            }
        }
    }
}
