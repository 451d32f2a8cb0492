//! Feature extractors and feature-matrix I/O.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv2d, Activation, Tensor4};

/// `n × d` row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{rows}×{dim} feature matrix needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature ({}, {}) is {}",
                i / dim,
                i % dim,
                data[i]
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "row {bad} has {} features, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Stack the rows of `parts` (all of equal dimension).
    pub fn vstack(parts: &[FeatureMatrix]) -> Result<Self> {
        let dim = parts
            .first()
            .ok_or_else(|| Error::Empty("no feature matrices to stack".into()))?
            .dim;
        if parts.iter().any(|p| p.dim != dim) {
            return Err(Error::Shape("feature dimensions differ".into()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Self::new(data.len() / dim, dim, data)
    }

    /// CSV with a `f0,…,f{D−1}` header. Values use shortest round-trip formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record((0..self.dim).map(|j| format!("f{j}")))?;
        for i in 0..self.rows {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let header = r.headers()?.clone();
        for (j, h) in header.iter().enumerate() {
            if h.trim() != format!("f{j}") {
                return Err(Error::Data(format!(
                    "{}: column {j} is named {h:?}, expected \"f{j}\"",
                    path.display()
                )));
            }
        }
        let dim = header.len();
        let mut data = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim {
                return Err(Error::Data(format!(
                    "{}: row {i} has {} values, expected {dim}",
                    path.display(),
                    rec.len()
                )));
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: row {i}: {field:?} is not a number", path.display()))
                })?;
                data.push(v);
            }
        }
        Self::new(data.len() / dim.max(1), dim, data)
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExtractorKind {
    ProxyConvnet,
    DownsampleFlatten,
    /// Features are read from CSV files rather than computed from images.
    ExternalFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    pub seed: u64,
    /// Output width of the proxy network. Other kinds derive their width from the input.
    pub dim: usize,
}

pub const PROXY_DIM: usize = 64;
const PROXY_WIDTHS: [usize; 2] = [32, 48];
const PROXY_SLOPE: f64 = 0.2;
/// Images per forward chunk, bounding im2col memory.
const CHUNK: usize = 64;
pub const FLATTEN_MAX_SIDE: usize = 8;

impl FeatureExtractorSpec {
    pub fn proxy(seed: u64) -> Self {
        Self {
            kind: ExtractorKind::ProxyConvnet,
            seed,
            dim: PROXY_DIM,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: ExtractorKind::DownsampleFlatten,
            seed: 0,
            dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ExtractorKind::ProxyConvnet && self.dim == 0 {
            return Err(Error::Config("proxy feature dimension must be at least 1".into()));
        }
        Ok(())
    }

    /// Short identifier used to flag incomparable runs.
    pub fn label(&self) -> String {
        match &self.kind {
            ExtractorKind::ProxyConvnet => format!("proxy(seed={}, d={})", self.seed, self.dim),
            ExtractorKind::DownsampleFlatten => "flatten".into(),
            ExtractorKind::ExternalFile { path } => format!("file({})", path.display()),
        }
    }
}

/// Fixed random convnet: three 3×3 stride-2 convolutions with leaky ReLU,
/// then global average pooling.
#[derive(Clone, Debug)]
pub struct ProxyNet {
    layers: Vec<(Tensor4<f64>, Vec<f64>)>,
}

impl ProxyNet {
    pub fn new(seed: u64, in_channels: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [in_channels, PROXY_WIDTHS[0], PROXY_WIDTHS[1], dim];
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(layer, w)| {
                let (cin, cout) = (w[0], w[1]);
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let mut weights: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                if layer == 0 {
                    // zero-mean input kernels: features follow local structure
                    // (edges, texture, noise) rather than absolute brightness
                    for k in weights.chunks_mut(9) {
                        let mean = k.iter().sum::<f64>() / 9.0;
                        k.iter_mut().for_each(|v| *v -= mean);
                    }
                }
                // biases break positive homogeneity so scaled inputs stay distinguishable
                let bias_dist = Normal::new(0.0, 0.1).expect("positive std");
                let bias: Vec<f64> = (0..cout).map(|_| bias_dist.sample(&mut rng)).collect();
                let weights = Tensor4::from_vec([cout, cin, 3, 3], weights).expect("sized above");
                (weights, bias)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, images: &Tensor4<f64>) -> Result<FeatureMatrix> {
        let act = Activation::LeakyRelu { slope: PROXY_SLOPE };
        let n = images.batch();
        let dim = self.layers.last().map_or(0, |(w, _)| w.batch());
        let mut out = Vec::with_capacity(n * dim);
        let indices: Vec<usize> = (0..n).collect();
        for chunk in indices.chunks(CHUNK) {
            let mut x = images.select(chunk);
            for (w, b) in &self.layers {
                x = conv2d(&x, w, 2, 1)?;
                let [_, c, h, wd] = x.shape();
                for (k, plane) in x.data_mut().chunks_mut(h * wd).enumerate() {
                    let bias = b[k % c];
                    for v in plane {
                        *v = act.apply_scalar(*v + bias);
                    }
                }
            }
            let [bn, c, h, wd] = x.shape();
            let plane = (h * wd) as f64;
            for s in 0..bn {
                for ch in 0..c {
                    let off = (s * c + ch) * h * wd;
                    out.push(x.data()[off..off + h * wd].iter().sum::<f64>() / plane);
                }
            }
        }
        FeatureMatrix::new(n, dim, out)
    }
}

/// Block-average each image until both sides are at most [`FLATTEN_MAX_SIDE`],
/// then flatten in channel, row, column order.
pub fn downsample_flatten(images: &Tensor4<f64>) -> Result<FeatureMatrix> {
    let [n, c, h, w] = images.shape();
    let factor = h.max(w).div_ceil(FLATTEN_MAX_SIDE).max(1);
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for s in 0..n {
        for ch in 0..c {
            for by in 0..oh {
                for bx in 0..ow {
                    let (y0, y1) = (by * factor, ((by + 1) * factor).min(h));
                    let (x0, x1) = (bx * factor, ((bx + 1) * factor).min(w));
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += images.at(s, ch, y, x);
                        }
                    }
                    data.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    FeatureMatrix::new(n, c * oh * ow, data)
}

pub fn extract_features(images: &Tensor4<f64>, spec: &FeatureExtractorSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    match &spec.kind {
        ExtractorKind::ProxyConvnet => ProxyNet::new(spec.seed, images.channels(), spec.dim).forward(images),
        ExtractorKind::DownsampleFlatten => downsample_flatten(images),
        ExtractorKind::ExternalFile { path } => FeatureMatrix::read_csv(path),
    }
}
