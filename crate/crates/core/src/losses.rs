//! Adversarial and reconstruction losses, all in minimisation form.
//!
//! Every probability is clamped to `[δ, 1 − δ]` before a logarithm is taken;
//! the clamp has zero derivative outside that interval. Patch losses sum over
//! the patches of each sample and average over the batch only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PatchMap;
use crate::nn::{Real, Tape, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// `(1/m) Σ_i ‖y_i − ŷ_i‖₁`
    SumPerImage,
    /// As above, further divided by the per-image element count.
    MeanPerPixel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_g: f64,
    pub l1_mode: L1Mode,
    pub delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_g: 100.0,
            l1_mode: L1Mode::MeanPerPixel,
            delta: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config(format!(
                "probability clamp must lie in (0, 0.5), got {}",
                self.delta
            )));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_g must be a non-negative finite number, got {}",
                self.lambda_g
            )));
        }
        Ok(())
    }
}

/// Generator objective split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenLoss<T> {
    pub total: T,
    pub adversarial: T,
    pub l1: T,
}

struct Clamp<T> {
    lo: T,
    hi: T,
}

impl<T: Real> Clamp<T> {
    fn new(cfg: &LossConfig) -> Self {
        Self {
            lo: T::lit(cfg.delta),
            hi: T::one() - T::lit(cfg.delta),
        }
    }

    /// `(log c, d log c / dp)` with `c = clamp(p)`.
    fn log(&self, p: T) -> (T, T) {
        let c = p.max(self.lo).min(self.hi);
        let d = if p > self.lo && p < self.hi { c.recip() } else { T::zero() };
        (c.ln(), d)
    }

    /// `(log(1 − c), d log(1 − c) / dp)` with `c = clamp(p)`.
    fn log1m(&self, p: T) -> (T, T) {
        let c = p.max(self.lo).min(self.hi);
        let q = T::one() - c;
        let d = if p > self.lo && p < self.hi { -q.recip() } else { T::zero() };
        (q.ln(), d)
    }
}

fn batch_of(shape: [usize; 4], what: &str) -> Result<usize> {
    let m = shape[0];
    if m == 0 || shape.iter().product::<usize>() == 0 {
        return Err(Error::Empty(format!("{what}: empty batch")));
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// value + gradient kernels

/// Vanilla discriminator loss, negated so that it is minimised.
/// Returns `(value, ∂/∂d_real, ∂/∂d_fake)`.
pub fn vanilla_disc_loss_grad<T: Real>(
    d_real: &[T],
    d_fake: &[T],
    cfg: &LossConfig,
) -> Result<(T, Vec<T>, Vec<T>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Empty("vanilla discriminator loss: empty batch".into()));
    }
    if d_real.len() != d_fake.len() {
        return Err(Error::Shape(format!(
            "vanilla discriminator loss: {} real vs {} fake scores",
            d_real.len(),
            d_fake.len()
        )));
    }
    let clamp = Clamp::new(cfg);
    let inv_m = T::one() / T::from_usize(d_real.len()).expect("batch size");
    let mut acc = T::zero();
    let mut gr = Vec::with_capacity(d_real.len());
    let mut gf = Vec::with_capacity(d_fake.len());
    for (&r, &f) in d_real.iter().zip(d_fake) {
        let (lr, dr) = clamp.log(r);
        let (lf, df) = clamp.log1m(f);
        acc += lr + lf;
        gr.push(-inv_m * dr);
        gf.push(-inv_m * df);
    }
    Ok((-inv_m * acc, gr, gf))
}

pub fn vanilla_disc_loss<T: Real>(d_real: &[T], d_fake: &[T], cfg: &LossConfig) -> Result<T> {
    vanilla_disc_loss_grad(d_real, d_fake, cfg).map(|(v, _, _)| v)
}

/// Vanilla generator loss `(1/m) Σ log(1 − D(G(z)))`. Returns `(value, ∂/∂d_fake)`.
pub fn vanilla_gen_loss_grad<T: Real>(d_fake: &[T], cfg: &LossConfig) -> Result<(T, Vec<T>)> {
    if d_fake.is_empty() {
        return Err(Error::Empty("vanilla generator loss: empty batch".into()));
    }
    let clamp = Clamp::new(cfg);
    let inv_m = T::one() / T::from_usize(d_fake.len()).expect("batch size");
    let mut acc = T::zero();
    let mut g = Vec::with_capacity(d_fake.len());
    for &f in d_fake {
        let (lf, df) = clamp.log1m(f);
        acc += lf;
        g.push(inv_m * df);
    }
    Ok((inv_m * acc, g))
}

pub fn vanilla_gen_loss<T: Real>(d_fake: &[T], cfg: &LossConfig) -> Result<T> {
    vanilla_gen_loss_grad(d_fake, cfg).map(|(v, _)| v)
}

/// PatchGAN discriminator loss. Returns `(value, ∂/∂real_map, ∂/∂fake_map)`.
pub fn patch_disc_loss_grad<T: Real>(
    real: &Tensor4<T>,
    fake: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<(T, Tensor4<T>, Tensor4<T>)> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "patch discriminator loss: real map {:?} vs fake map {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let m = batch_of(real.shape(), "patch discriminator loss")?;
    let clamp = Clamp::new(cfg);
    let inv_m = T::one() / T::from_usize(m).expect("batch size");
    let mut acc = T::zero();
    let mut gr = Tensor4::zeros(real.shape());
    let mut gf = Tensor4::zeros(fake.shape());
    for (i, (&r, &f)) in real.data().iter().zip(fake.data()).enumerate() {
        let (lr, dr) = clamp.log(r);
        let (lf, df) = clamp.log1m(f);
        acc += lr + lf;
        gr.data_mut()[i] = -inv_m * dr;
        gf.data_mut()[i] = -inv_m * df;
    }
    Ok((-inv_m * acc, gr, gf))
}

pub fn patch_disc_loss<T: Real>(real: &PatchMap<T>, fake: &PatchMap<T>, cfg: &LossConfig) -> Result<T> {
    patch_disc_loss_grad(real.tensor(), fake.tensor(), cfg).map(|(v, _, _)| v)
}

/// Adversarial term of the generator objective. Returns `(value, ∂/∂fake_map)`.
pub fn gen_adv_loss_grad<T: Real>(fake: &Tensor4<T>, cfg: &LossConfig) -> Result<(T, Tensor4<T>)> {
    let m = batch_of(fake.shape(), "generator adversarial loss")?;
    let clamp = Clamp::new(cfg);
    let inv_m = T::one() / T::from_usize(m).expect("batch size");
    let mut acc = T::zero();
    let mut g = Tensor4::zeros(fake.shape());
    for (gv, &f) in g.data_mut().iter_mut().zip(fake.data()) {
        let (lf, df) = clamp.log(f);
        acc += lf;
        *gv = -inv_m * df;
    }
    Ok((-inv_m * acc, g))
}

pub fn gen_adv_loss<T: Real>(fake: &PatchMap<T>, cfg: &LossConfig) -> Result<T> {
    gen_adv_loss_grad(fake.tensor(), cfg).map(|(v, _)| v)
}

/// L1 reconstruction loss. Returns `(value, ∂/∂generated)`.
pub fn l1_loss_grad<T: Real>(
    generated: &Tensor4<T>,
    target: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<(T, Tensor4<T>)> {
    if generated.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "l1 loss: generated {:?} vs target {:?}",
            generated.shape(),
            target.shape()
        )));
    }
    let m = batch_of(generated.shape(), "l1 loss")?;
    let mut denom = T::from_usize(m).expect("batch size");
    if cfg.l1_mode == L1Mode::MeanPerPixel {
        denom *= T::from_usize(generated.sample_len()).expect("sample size");
    }
    let scale = denom.recip();
    let mut acc = T::zero();
    let mut g = Tensor4::zeros(generated.shape());
    for ((gv, &a), &b) in g.data_mut().iter_mut().zip(generated.data()).zip(target.data()) {
        let d = a - b;
        acc += d.abs();
        *gv = if d > T::zero() {
            scale
        } else if d < T::zero() {
            -scale
        } else {
            T::zero()
        };
    }
    Ok((acc * scale, g))
}

pub fn l1_loss<T: Real>(generated: &Tensor4<T>, target: &Tensor4<T>, cfg: &LossConfig) -> Result<T> {
    l1_loss_grad(generated, target, cfg).map(|(v, _)| v)
}

pub fn gen_total_loss<T: Real>(
    fake: &PatchMap<T>,
    generated: &Tensor4<T>,
    target: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<GenLoss<T>> {
    let adversarial = gen_adv_loss(fake, cfg)?;
    let l1 = l1_loss(generated, target, cfg)?;
    Ok(GenLoss {
        total: adversarial + T::lit(cfg.lambda_g) * l1,
        adversarial,
        l1,
    })
}

// ---------------------------------------------------------------------------
// tape-recorded forms

fn patch_value<T: Real>(tape: &Tape<T>, v: Var) -> Result<&Tensor4<T>> {
    let t = tape.value(v);
    PatchMap::<T>::check_shape(t.shape())?;
    Ok(t)
}

pub fn record_patch_disc_loss<T: Real>(
    tape: &mut Tape<T>,
    real: Var,
    fake: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let (value, gr, gf) = patch_disc_loss_grad(patch_value(tape, real)?, patch_value(tape, fake)?, cfg)?;
    tape.scalar_fn(value, vec![(real, gr), (fake, gf)])
}

pub fn record_gen_adv_loss<T: Real>(tape: &mut Tape<T>, fake: Var, cfg: &LossConfig) -> Result<Var> {
    let (value, g) = gen_adv_loss_grad(patch_value(tape, fake)?, cfg)?;
    tape.scalar_fn(value, vec![(fake, g)])
}

pub fn record_l1_loss<T: Real>(
    tape: &mut Tape<T>,
    generated: Var,
    target: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let (value, g) = l1_loss_grad(tape.value(generated), target, cfg)?;
    tape.scalar_fn(value, vec![(generated, g)])
}

/// Records the combined generator objective as one scalar node and returns
/// it with the separately evaluated terms.
pub fn record_gen_total_loss<T: Real>(
    tape: &mut Tape<T>,
    fake: Var,
    generated: Var,
    target: &Tensor4<T>,
    cfg: &LossConfig,
) -> Result<(Var, GenLoss<T>)> {
    let (adversarial, g_adv) = gen_adv_loss_grad(patch_value(tape, fake)?, cfg)?;
    let (l1, mut g_l1) = l1_loss_grad(tape.value(generated), target, cfg)?;
    let lambda = T::lit(cfg.lambda_g);
    g_l1.scale(lambda);
    let total = adversarial + lambda * l1;
    let var = tape.scalar_fn(total, vec![(fake, g_adv), (generated, g_l1)])?;
    Ok((
        var,
        GenLoss {
            total,
            adversarial,
            l1,
        },
    ))
}

pub fn record_vanilla_disc_loss<T: Real>(
    tape: &mut Tape<T>,
    d_real: Var,
    d_fake: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let rs = tape.value(d_real).shape();
    let fs = tape.value(d_fake).shape();
    let (value, gr, gf) = vanilla_disc_loss_grad(tape.value(d_real).data(), tape.value(d_fake).data(), cfg)?;
    tape.scalar_fn(
        value,
        vec![(d_real, Tensor4::from_vec(rs, gr)?), (d_fake, Tensor4::from_vec(fs, gf)?)],
    )
}

pub fn record_vanilla_gen_loss<T: Real>(tape: &mut Tape<T>, d_fake: Var, cfg: &LossConfig) -> Result<Var> {
    let fs = tape.value(d_fake).shape();
    let (value, g) = vanilla_gen_loss_grad(tape.value(d_fake).data(), cfg)?;
    tape.scalar_fn(value, vec![(d_fake, Tensor4::from_vec(fs, g)?)])
}
