//! Generator evaluation on held-out pairs.

use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fid::{extract_features, frechet_distance, gaussian_stats, ExtractorKind, FeatureExtractorSpec, GaussianStats};
use crate::models::{generate, GeneratorConfig};
use crate::nn::{load_checkpoint, ParamSet, Tensor4};

/// Fixed evaluation inputs with the statistics of their clean targets precomputed.
#[derive(Clone, Debug)]
pub struct FidProbe {
    pub spec: FeatureExtractorSpec,
    inputs: Tensor4<f32>,
    targets: Tensor4<f32>,
    real: GaussianStats,
}

impl FidProbe {
    /// Uses the first `count` validation pairs in manifest order.
    pub fn new(data: &Dataset, count: usize, spec: FeatureExtractorSpec) -> Result<Self> {
        if matches!(spec.kind, ExtractorKind::ExternalFile { .. }) {
            return Err(Error::Config("generator evaluation needs an image feature extractor".into()));
        }
        let val = data.manifest.indices(Split::Val);
        if count < 2 || val.len() < count {
            return Err(Error::Config(format!(
                "FID needs at least 2 validation pairs; asked for {count}, have {}",
                val.len()
            )));
        }
        let batch = data.gather::<f32>(&val[..count])?;
        let real = gaussian_stats(&extract_features(&batch.y.cast(), &spec)?)?;
        Ok(Self {
            spec,
            inputs: batch.x,
            targets: batch.y,
            real,
        })
    }

    pub fn samples(&self) -> usize {
        self.inputs.batch()
    }

    pub fn generate(&self, gen: &ParamSet<f32>, cfg: &GeneratorConfig) -> Result<Tensor4<f32>> {
        generate(gen, cfg, &self.inputs)
    }

    pub fn score_outputs(&self, outputs: &Tensor4<f32>) -> Result<f64> {
        let fake = gaussian_stats(&extract_features(&outputs.cast(), &self.spec)?)?;
        frechet_distance(&self.real, &fake)
    }

    pub fn score(&self, gen: &ParamSet<f32>, cfg: &GeneratorConfig) -> Result<f64> {
        self.score_outputs(&self.generate(gen, cfg)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub fid: f64,
    /// Mean absolute error per pixel on the `[0, 1]` image scale.
    pub l1_mean: f64,
    pub l1_per_image: Vec<f64>,
    pub samples: usize,
    pub extractor: String,
    /// Fewer samples than feature dimensions: the covariance is rank deficient.
    pub undersampled: bool,
}

/// Score a saved generator on up to `limit` validation pairs (all when `None`).
pub fn evaluate(
    checkpoint: &Path,
    data: &Dataset,
    spec: &FeatureExtractorSpec,
    limit: Option<usize>,
) -> Result<EvalReport> {
    let gen = load_checkpoint(checkpoint)?;
    let [w, h] = data.manifest.image_size;
    if w != h {
        return Err(Error::Config(format!("generator needs square images, dataset has {w}×{h}")));
    }
    let cfg = GeneratorConfig::infer(&gen, w)?;
    let available = data.split_len(Split::Val);
    let count = limit.map_or(available, |l| l.min(available));
    let probe = FidProbe::new(data, count, spec.clone())?;
    let out = probe.generate(&gen, &cfg)?;
    let fid = probe.score_outputs(&out)?;
    let l1_per_image: Vec<f64> = (0..count)
        .map(|i| {
            let (a, b) = (out.sample(i), probe.targets.sample(i));
            // model range spans 2, so halve to report on the [0, 1] scale
            a.iter().zip(b).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / (2.0 * a.len() as f64)
        })
        .collect();
    let l1_mean = l1_per_image.iter().sum::<f64>() / count as f64;
    Ok(EvalReport {
        fid,
        l1_mean,
        l1_per_image,
        samples: count,
        extractor: spec.label(),
        undersampled: count < spec.dim.max(1) && spec.kind == ExtractorKind::ProxyConvnet,
    })
}
