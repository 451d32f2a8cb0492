//! U-Net generator and PatchGAN discriminator.
//!
//! Every layer is a 4×4 convolution (or transposed convolution) with stride 2
//! and padding 1, so each level halves or doubles the spatial extent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::conv_output_extent;
use crate::nn::{Activation, GaussianInit, ParamSet, Real, Tape, Tensor4, Var};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
const LEAK: Activation = Activation::LeakyRelu { slope: 0.2 };
pub const DEFAULT_INIT_STD: f64 = 0.02;

fn level_channels(base: usize, level: usize) -> usize {
    base * (1usize << (level - 1).min(3))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            depth: 3,
            base_channels: 16,
            in_channels: 3,
            out_channels: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("generator depth must be at least 1".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if !self.input_size.is_power_of_two() || self.input_size < (1 << self.depth) {
            return Err(Error::Config(format!(
                "generator input size {} must be a power of two no smaller than 2^{}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    fn encoder_channels(&self, level: usize) -> usize {
        level_channels(self.base_channels, level)
    }

    /// `(in, out)` channels of decoder level `j` in `1..=depth`.
    fn decoder_channels(&self, j: usize) -> (usize, usize) {
        let d = self.depth;
        let input = if j == 1 {
            self.encoder_channels(d)
        } else {
            2 * self.encoder_channels(d - j + 1)
        };
        let output = if j == d {
            self.out_channels
        } else {
            self.encoder_channels(d - j)
        };
        (input, output)
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let k2 = KERNEL * KERNEL;
        let mut total = 0;
        let mut prev = self.in_channels;
        for l in 1..=self.depth {
            let c = self.encoder_channels(l);
            total += c * prev * k2 + c;
            prev = c;
        }
        for j in 1..=self.depth {
            let (i, o) = self.decoder_channels(j);
            total += i * o * k2 + o;
        }
        total
    }

    /// Recover the architecture from parameter shapes (image size is not stored).
    pub fn infer<T: Real>(params: &ParamSet<T>, input_size: usize) -> Result<Self> {
        let mut depth = 0;
        while params.get(&format!("gen.enc{}.weight", depth + 1)).is_some() {
            depth += 1;
        }
        let bad = || Error::Checkpoint("parameters do not describe a generator".into());
        let first = params.get("gen.enc1.weight").ok_or_else(bad)?;
        let last = params.get(&format!("gen.dec{depth}.weight")).ok_or_else(bad)?;
        if first.shape.len() != 4 || last.shape.len() != 4 {
            return Err(bad());
        }
        let cfg = Self {
            input_size,
            depth,
            base_channels: first.shape[0],
            in_channels: first.shape[1],
            out_channels: last.shape[1],
        };
        cfg.validate()?;
        if cfg.parameter_count() != params.scalar_count() {
            return Err(Error::Checkpoint(format!(
                "generator parameter count {} does not match inferred architecture ({})",
                params.scalar_count(),
                cfg.parameter_count()
            )));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub layers: usize,
    pub base_channels: usize,
    /// Channels of one image; the network sees condition and candidate stacked.
    pub image_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            base_channels: 16,
            image_channels: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_channels == 0 || self.image_channels == 0 {
            return Err(Error::Config(
                "discriminator layers and channel counts must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        2 * self.image_channels
    }

    fn layer_channels(&self, l: usize) -> (usize, usize) {
        let input = if l == 1 {
            self.in_channels()
        } else {
            level_channels(self.base_channels, l - 1)
        };
        let output = if l == self.layers {
            1
        } else {
            level_channels(self.base_channels, l)
        };
        (input, output)
    }

    pub fn parameter_count(&self) -> usize {
        (1..=self.layers)
            .map(|l| {
                let (i, o) = self.layer_channels(l);
                i * o * KERNEL * KERNEL + o
            })
            .sum()
    }

    /// Patch grid `(Hp, Wp)` produced for `h×w` inputs.
    pub fn patch_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let mut hw = (h, w);
        for l in 0..self.layers {
            let next = conv_output_extent(hw.0, KERNEL, STRIDE, PAD)
                .zip(conv_output_extent(hw.1, KERNEL, STRIDE, PAD));
            hw = next.ok_or_else(|| {
                Error::Shape(format!(
                    "{h}×{w} input is too small for discriminator layer {}",
                    l + 1
                ))
            })?;
        }
        Ok(hw)
    }

    /// Number of patches `P = Hp·Wp`.
    pub fn patch_count(&self, h: usize, w: usize) -> Result<usize> {
        self.patch_grid(h, w).map(|(a, b)| a * b)
    }
}

/// Discriminator output: one probability per patch, shape `[m, 1, Hp, Wp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMap<T>(Tensor4<T>);

impl<T: Real> PatchMap<T> {
    pub fn new(t: Tensor4<T>) -> Result<Self> {
        Self::check_shape(t.shape())?;
        Ok(Self(t))
    }

    pub fn check_shape(shape: [usize; 4]) -> Result<()> {
        if shape[1] != 1 {
            return Err(Error::Shape(format!(
                "patch map must have one channel, got shape {shape:?}"
            )));
        }
        if shape[0] == 0 || shape[2] * shape[3] == 0 {
            return Err(Error::Empty(format!("patch map of shape {shape:?}")));
        }
        Ok(())
    }

    pub fn tensor(&self) -> &Tensor4<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor4<T> {
        self.0
    }

    pub fn patches(&self) -> usize {
        self.0.height() * self.0.width()
    }

    pub fn batch(&self) -> usize {
        self.0.batch()
    }
}

/// Initialise generator and discriminator parameters with the default std.
pub fn build_models<T: Real>(
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    seed: u64,
) -> Result<(ParamSet<T>, ParamSet<T>)> {
    build_models_with(gcfg, dcfg, DEFAULT_INIT_STD, seed)
}

pub fn build_models_with<T: Real>(
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    std: f64,
    seed: u64,
) -> Result<(ParamSet<T>, ParamSet<T>)> {
    gcfg.validate()?;
    dcfg.validate()?;
    dcfg.patch_grid(gcfg.input_size, gcfg.input_size)?;
    if dcfg.image_channels != gcfg.out_channels || gcfg.in_channels != gcfg.out_channels {
        return Err(Error::Config(format!(
            "discriminator expects {}-channel images, generator maps {} → {} channels",
            dcfg.image_channels, gcfg.in_channels, gcfg.out_channels
        )));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("invalid init std {std}")));
    }
    let k2 = KERNEL * KERNEL;

    let init = GaussianInit { std, seed };
    let mut rng = init.rng();
    let mut gen = ParamSet::new();
    let mut prev = gcfg.in_channels;
    for l in 1..=gcfg.depth {
        let c = gcfg.encoder_channels(l);
        gen.add(&format!("gen.enc{l}.weight"), vec![c, prev, KERNEL, KERNEL], init.sample(&mut rng, c * prev * k2))?;
        gen.add(&format!("gen.enc{l}.bias"), vec![c], vec![T::zero(); c])?;
        prev = c;
    }
    for j in 1..=gcfg.depth {
        let (i, o) = gcfg.decoder_channels(j);
        gen.add(&format!("gen.dec{j}.weight"), vec![i, o, KERNEL, KERNEL], init.sample(&mut rng, i * o * k2))?;
        gen.add(&format!("gen.dec{j}.bias"), vec![o], vec![T::zero(); o])?;
    }

    let dinit = GaussianInit {
        std,
        seed: seed ^ 0x5DEE_CE66_D1CE_4E5B,
    };
    let mut rng = dinit.rng();
    let mut disc = ParamSet::new();
    for l in 1..=dcfg.layers {
        let (i, o) = dcfg.layer_channels(l);
        disc.add(&format!("disc.conv{l}.weight"), vec![o, i, KERNEL, KERNEL], dinit.sample(&mut rng, o * i * k2))?;
        disc.add(&format!("disc.conv{l}.bias"), vec![o], vec![T::zero(); o])?;
    }
    debug_assert_eq!(gen.scalar_count(), gcfg.parameter_count());
    debug_assert_eq!(disc.scalar_count(), dcfg.parameter_count());
    Ok((gen, disc))
}

/// Record the generator on `tape`. Input and output lie in `[−1, 1]`.
pub fn generator_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    params: &ParamSet<T>,
    cfg: &GeneratorConfig,
) -> Result<Var> {
    let [_, c, h, w] = tape.value(x).shape();
    if h != cfg.input_size || w != cfg.input_size || c != cfg.in_channels {
        return Err(Error::Shape(format!(
            "generator expects {}×{}×{} inputs, got {c}×{h}×{w}",
            cfg.in_channels, cfg.input_size, cfg.input_size
        )));
    }
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = x;
    for l in 1..=cfg.depth {
        let wv = tape.param(params, &format!("gen.enc{l}.weight"))?;
        let bv = tape.param(params, &format!("gen.enc{l}.bias"))?;
        let y = tape.conv2d(cur, wv, STRIDE, PAD)?;
        let y = tape.add_bias(y, bv)?;
        cur = tape.activation(y, LEAK)?;
        skips.push(cur);
    }
    for j in 1..=cfg.depth {
        if j > 1 {
            // decoder level j−1 joins encoder level depth−j+1
            cur = tape.concat_channels(cur, skips[cfg.depth - j])?;
        }
        let wv = tape.param(params, &format!("gen.dec{j}.weight"))?;
        let bv = tape.param(params, &format!("gen.dec{j}.bias"))?;
        let y = tape.transposed_conv2d(cur, wv, STRIDE, PAD)?;
        let y = tape.add_bias(y, bv)?;
        let act = if j == cfg.depth { Activation::Tanh } else { Activation::Relu };
        cur = tape.activation(y, act)?;
    }
    Ok(cur)
}

/// Record the discriminator on `tape`; the output is a `[m, 1, Hp, Wp]` map.
pub fn discriminator_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    candidate: Var,
    params: &ParamSet<T>,
    cfg: &DiscriminatorConfig,
) -> Result<Var> {
    let xs = tape.value(x).shape();
    let cs = tape.value(candidate).shape();
    if xs != cs {
        return Err(Error::Shape(format!(
            "discriminator condition {xs:?} and candidate {cs:?} differ"
        )));
    }
    if xs[1] != cfg.image_channels {
        return Err(Error::Shape(format!(
            "discriminator expects {}-channel images, got {}",
            cfg.image_channels, xs[1]
        )));
    }
    let mut cur = tape.concat_channels(x, candidate)?;
    for l in 1..=cfg.layers {
        let wv = tape.param(params, &format!("disc.conv{l}.weight"))?;
        let bv = tape.param(params, &format!("disc.conv{l}.bias"))?;
        let y = tape.conv2d(cur, wv, STRIDE, PAD)?;
        let y = tape.add_bias(y, bv)?;
        let act = if l == cfg.layers { Activation::Sigmoid } else { LEAK };
        cur = tape.activation(y, act)?;
    }
    Ok(cur)
}

/// Inference-only generator pass.
pub fn generate<T: Real>(params: &ParamSet<T>, cfg: &GeneratorConfig, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = generator_forward(&mut tape, xv, params, cfg)?;
    Ok(tape.value(out).clone())
}

/// Inference-only discriminator pass.
pub fn discriminate<T: Real>(
    params: &ParamSet<T>,
    cfg: &DiscriminatorConfig,
    x: &Tensor4<T>,
    candidate: &Tensor4<T>,
) -> Result<PatchMap<T>> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let cv = tape.input(candidate.clone());
    let out = discriminator_forward(&mut tape, xv, cv, params, cfg)?;
    PatchMap::new(tape.value(out).clone())
}

/// Architecture description echoed into run directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub generator_parameters: usize,
    pub discriminator_parameters: usize,
    pub patch_grid: [usize; 2],
    pub patch_count: usize,
}

impl ModelSummary {
    pub fn new(g: &GeneratorConfig, d: &DiscriminatorConfig) -> Result<Self> {
        let (hp, wp) = d.patch_grid(g.input_size, g.input_size)?;
        Ok(Self {
            generator: *g,
            discriminator: *d,
            generator_parameters: g.parameter_count(),
            discriminator_parameters: d.parameter_count(),
            patch_grid: [hp, wp],
            patch_count: hp * wp,
        })
    }
}
