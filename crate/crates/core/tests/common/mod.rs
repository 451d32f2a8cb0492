//! Oracles and fixtures shared by the integration and acceptance targets.
//! Everything here is written independently of the library code it checks.
#![allow(dead_code)]

use std::path::Path;

use pairgan::data::{build_root_manifest, synth_dataset, Dataset, CLEAN_DIR, DEGRADED_DIR};
use pairgan::degrade::{degrade_dir, DegradationSpec};
use pairgan::losses::{
    gen_adv_loss, gen_total_loss, l1_loss, patch_disc_loss, record_gen_adv_loss, record_gen_total_loss,
    record_l1_loss, record_patch_disc_loss, record_vanilla_disc_loss, record_vanilla_gen_loss, vanilla_disc_loss,
    vanilla_gen_loss, L1Mode, LossConfig,
};
use pairgan::models::{
    build_models_with, discriminate, discriminator_forward, generate, generator_forward, DiscriminatorConfig,
    GeneratorConfig, PatchMap,
};
use pairgan::nalgebra::DMatrix;
use pairgan::nn::{ParamSet, Tape, Tensor4, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-6;
/// Every ReLU-family input and every L1 residual must sit at least this far
/// from its kink, a hundred steps away.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub coords: usize,
    /// `‖analytic‖₂`
    pub norm: f64,
    pub rel_err: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = p[i];
            let (hi, lo) = (x0 + FD_STEP, x0 - FD_STEP);
            p[i] = hi;
            let up = f(&p);
            p[i] = lo;
            let down = f(&p);
            p[i] = x0;
            (up - down) / (hi - lo)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn tensor(shape: [usize; 4], data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, data.to_vec()).unwrap()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn flat_values(ps: &ParamSet<f64>) -> Vec<f64> {
    ps.iter().flat_map(|p| p.value.iter().copied()).collect()
}

fn flat_grads(ps: &ParamSet<f64>) -> Vec<f64> {
    ps.iter().flat_map(|p| p.grad.iter().copied()).collect()
}

fn with_values(ps: &ParamSet<f64>, values: &[f64]) -> ParamSet<f64> {
    let mut out = ps.clone();
    let mut at = 0;
    for p in out.iter_mut() {
        let n = p.value.len();
        p.value.copy_from_slice(&values[at..at + n]);
        at += n;
    }
    out
}

fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &Tensor4<f64>) -> Var {
    let value = tape.value(out).dot(weights).unwrap();
    tape.scalar_fn(value, vec![(out, weights.clone())]).unwrap()
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> GradCheck {
    GradCheck {
        name: name.to_string(),
        coords: analytic.len(),
        norm: norm(analytic),
        rel_err: rel_err(analytic, numeric),
    }
}

fn probabilities(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
    uniform(rng, shape, 0.05, 0.95)
}

fn loss_checks(rng: &mut ChaCha8Rng, out: &mut Vec<GradCheck>) -> Result<(), String> {
    let cfg = LossConfig::default();

    // vanilla discriminator
    let (r, f) = (probabilities(rng, [6, 1, 1, 1]), probabilities(rng, [6, 1, 1, 1]));
    let mut tape = Tape::new();
    let (rv, fv) = (tape.input(r.clone()), tape.input(f.clone()));
    let loss = record_vanilla_disc_loss(&mut tape, rv, fv, &cfg).map_err(|e| e.to_string())?;
    let analytic = cat(&[
        tape.gradient_wrt(loss, rv).unwrap().data(),
        tape.gradient_wrt(loss, fv).unwrap().data(),
    ]);
    let numeric = central_diff(&cat(&[r.data(), f.data()]), |z| {
        vanilla_disc_loss(&z[..6], &z[6..], &cfg).unwrap()
    });
    out.push(check("vanilla discriminator loss", &analytic, &numeric));

    // vanilla generator
    let mut tape = Tape::new();
    let fv = tape.input(f.clone());
    let loss = record_vanilla_gen_loss(&mut tape, fv, &cfg).map_err(|e| e.to_string())?;
    let analytic = tape.gradient_wrt(loss, fv).unwrap().into_data();
    let numeric = central_diff(f.data(), |z| vanilla_gen_loss(z, &cfg).unwrap());
    out.push(check("vanilla generator loss", &analytic, &numeric));

    // patch discriminator
    let shape = [3, 1, 3, 3];
    let (r, f) = (probabilities(rng, shape), probabilities(rng, shape));
    let mut tape = Tape::new();
    let (rv, fv) = (tape.input(r.clone()), tape.input(f.clone()));
    let loss = record_patch_disc_loss(&mut tape, rv, fv, &cfg).map_err(|e| e.to_string())?;
    let analytic = cat(&[
        tape.gradient_wrt(loss, rv).unwrap().data(),
        tape.gradient_wrt(loss, fv).unwrap().data(),
    ]);
    let n = r.len();
    let numeric = central_diff(&cat(&[r.data(), f.data()]), |z| {
        let real = PatchMap::new(tensor(shape, &z[..n])).unwrap();
        let fake = PatchMap::new(tensor(shape, &z[n..])).unwrap();
        patch_disc_loss(&real, &fake, &cfg).unwrap()
    });
    out.push(check("patch discriminator loss", &analytic, &numeric));

    // generator adversarial term
    let mut tape = Tape::new();
    let fv = tape.input(f.clone());
    let loss = record_gen_adv_loss(&mut tape, fv, &cfg).map_err(|e| e.to_string())?;
    let analytic = tape.gradient_wrt(loss, fv).unwrap().into_data();
    let numeric = central_diff(f.data(), |z| {
        gen_adv_loss(&PatchMap::new(tensor(shape, z)).unwrap(), &cfg).unwrap()
    });
    out.push(check("generator adversarial loss", &analytic, &numeric));

    // L1 in both normalisations
    let img = [2, 3, 4, 4];
    let (generated, target) = (uniform(rng, img, -1.0, 1.0), uniform(rng, img, -1.0, 1.0));
    let closest = generated
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .fold(f64::INFINITY, f64::min);
    if closest < KINK_MARGIN {
        return Err(format!("L1 residual {closest:e} too close to zero"));
    }
    for mode in [L1Mode::MeanPerPixel, L1Mode::SumPerImage] {
        let cfg = LossConfig { l1_mode: mode, ..cfg };
        let mut tape = Tape::new();
        let gv = tape.input(generated.clone());
        let loss = record_l1_loss(&mut tape, gv, &target, &cfg).map_err(|e| e.to_string())?;
        let analytic = tape.gradient_wrt(loss, gv).unwrap().into_data();
        let numeric = central_diff(generated.data(), |z| l1_loss(&tensor(img, z), &target, &cfg).unwrap());
        out.push(check(&format!("L1 loss ({mode:?})"), &analytic, &numeric));
    }

    // combined generator objective
    let fake = probabilities(rng, [2, 1, 2, 2]);
    let mut tape = Tape::new();
    let (fv, gv) = (tape.input(fake.clone()), tape.input(generated.clone()));
    let (loss, _) = record_gen_total_loss(&mut tape, fv, gv, &target, &cfg).map_err(|e| e.to_string())?;
    let analytic = cat(&[
        tape.gradient_wrt(loss, fv).unwrap().data(),
        tape.gradient_wrt(loss, gv).unwrap().data(),
    ]);
    let k = fake.len();
    let numeric = central_diff(&cat(&[fake.data(), generated.data()]), |z| {
        let map = PatchMap::new(tensor([2, 1, 2, 2], &z[..k])).unwrap();
        gen_total_loss(&map, &tensor(img, &z[k..]), &target, &cfg).unwrap().total
    });
    out.push(check("generator total loss", &analytic, &numeric));
    Ok(())
}

pub fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        input_size: 8,
        depth: 2,
        base_channels: 3,
        ..Default::default()
    }
}

pub fn small_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        layers: 2,
        base_channels: 4,
        image_channels: 3,
    }
}

fn randomise_biases(ps: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for p in ps.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        for v in p.value.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = 0.1 * z;
        }
    }
}

fn require_margin(tape: &Tape<f64>, what: &str) -> Result<(), String> {
    match tape.min_kink_distance() {
        Some(m) if m < KINK_MARGIN => Err(format!("{what}: activation input {m:e} too close to a kink")),
        _ => Ok(()),
    }
}

fn network_checks(rng: &mut ChaCha8Rng, seed: u64, out: &mut Vec<GradCheck>) -> Result<(), String> {
    let (gcfg, dcfg) = (small_generator(), small_discriminator());
    let (mut gen, mut disc) = build_models_with::<f64>(&gcfg, &dcfg, 0.3, seed).map_err(|e| e.to_string())?;
    randomise_biases(&mut gen, rng);
    randomise_biases(&mut disc, rng);
    let img = [2, 3, 8, 8];
    let (x, y) = (uniform(rng, img, -1.0, 1.0), uniform(rng, img, -1.0, 1.0));
    let loss_cfg = LossConfig::default();

    // generator under a random linear read-out
    let weights = uniform(rng, img, -1.0, 1.0);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let gout = generator_forward(&mut tape, xv, &gen, &gcfg).map_err(|e| e.to_string())?;
    require_margin(&tape, "generator")?;
    let loss = weighted_sum(&mut tape, gout, &weights);
    tape.backward(loss, &mut gen).map_err(|e| e.to_string())?;
    let analytic = flat_grads(&gen);
    let numeric = central_diff(&flat_values(&gen), |v| {
        generate(&with_values(&gen, v), &gcfg, &x).unwrap().dot(&weights).unwrap()
    });
    out.push(check("generator parameters", &analytic, &numeric));
    let analytic = tape.gradient_wrt(loss, xv).unwrap().into_data();
    let numeric = central_diff(x.data(), |v| generate(&gen, &gcfg, &tensor(img, v)).unwrap().dot(&weights).unwrap());
    out.push(check("generator input", &analytic, &numeric));

    // discriminator under a random linear read-out
    let (gp, gw) = dcfg.patch_grid(8, 8).map_err(|e| e.to_string())?;
    let weights = uniform(rng, [2, 1, gp, gw], -1.0, 1.0);
    let mut tape = Tape::new();
    let (xv, yv) = (tape.input(x.clone()), tape.input(y.clone()));
    let dout = discriminator_forward(&mut tape, xv, yv, &disc, &dcfg).map_err(|e| e.to_string())?;
    require_margin(&tape, "discriminator")?;
    let loss = weighted_sum(&mut tape, dout, &weights);
    tape.backward(loss, &mut disc).map_err(|e| e.to_string())?;
    let read = |d: &ParamSet<f64>, a: &Tensor4<f64>, b: &Tensor4<f64>| {
        discriminate(d, &dcfg, a, b).unwrap().tensor().dot(&weights).unwrap()
    };
    let analytic = flat_grads(&disc);
    let numeric = central_diff(&flat_values(&disc), |v| read(&with_values(&disc, v), &x, &y));
    out.push(check("discriminator parameters", &analytic, &numeric));
    let analytic = cat(&[
        tape.gradient_wrt(loss, xv).unwrap().data(),
        tape.gradient_wrt(loss, yv).unwrap().data(),
    ]);
    let n = x.len();
    let numeric = central_diff(&cat(&[x.data(), y.data()]), |v| {
        read(&disc, &tensor(img, &v[..n]), &tensor(img, &v[n..]))
    });
    out.push(check("discriminator inputs", &analytic, &numeric));

    // generator objective through both networks
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let gout = generator_forward(&mut tape, xv, &gen, &gcfg).map_err(|e| e.to_string())?;
    let fake = discriminator_forward(&mut tape, xv, gout, &disc, &dcfg).map_err(|e| e.to_string())?;
    require_margin(&tape, "generator objective")?;
    let (loss, _) = record_gen_total_loss(&mut tape, fake, gout, &y, &loss_cfg).map_err(|e| e.to_string())?;
    tape.backward(loss, &mut gen).map_err(|e| e.to_string())?;
    let residual = tape
        .value(gout)
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(f64::INFINITY, f64::min);
    if residual < KINK_MARGIN {
        return Err(format!("generator output within {residual:e} of its target"));
    }
    let analytic = flat_grads(&gen);
    let numeric = central_diff(&flat_values(&gen), |v| {
        let g = with_values(&gen, v);
        let out = generate(&g, &gcfg, &x).unwrap();
        let map = discriminate(&disc, &dcfg, &x, &out).unwrap();
        gen_total_loss(&map, &out, &y, &loss_cfg).unwrap().total
    });
    out.push(check("generator objective wrt generator", &analytic, &numeric));

    // discriminator objective with the generator output held fixed
    let produced = generate(&gen, &gcfg, &x).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let (xv, yv, fv) = (tape.input(x.clone()), tape.input(y.clone()), tape.input(produced.clone()));
    let real = discriminator_forward(&mut tape, xv, yv, &disc, &dcfg).map_err(|e| e.to_string())?;
    let fake = discriminator_forward(&mut tape, xv, fv, &disc, &dcfg).map_err(|e| e.to_string())?;
    require_margin(&tape, "discriminator objective")?;
    let loss = record_patch_disc_loss(&mut tape, real, fake, &loss_cfg).map_err(|e| e.to_string())?;
    tape.backward(loss, &mut disc).map_err(|e| e.to_string())?;
    let analytic = flat_grads(&disc);
    let numeric = central_diff(&flat_values(&disc), |v| {
        let d = with_values(&disc, v);
        let real = discriminate(&d, &dcfg, &x, &y).unwrap();
        let fake = discriminate(&d, &dcfg, &x, &produced).unwrap();
        patch_disc_loss(&real, &fake, &loss_cfg).unwrap()
    });
    out.push(check("discriminator objective wrt discriminator", &analytic, &numeric));
    Ok(())
}

/// Every loss and both networks on random instances drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheck>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    loss_checks(&mut rng, &mut out)?;
    network_checks(&mut rng, seed, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// scheduler oracles

/// Window sum over the last `min(ν, N)` losses divided by `w · max`.
pub fn rps_oracle(losses: &[f64], nu: usize) -> f64 {
    let n = losses.len();
    let w = if nu < n { nu } else { n };
    let mut max = losses[0];
    for &l in losses {
        if l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for &l in &losses[n - w..] {
        sum += l;
    }
    sum / (w as f64 * max)
}

/// Decision on a grid of multiples of `1/UNIT`, in integer arithmetic.
/// `kappa = kn / kd`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridDecision {
    /// 0 none, 1 generator, 2 discriminator
    pub target: u8,
    pub extra: u32,
}

pub const UNIT: i64 = 64;

pub fn decide_oracle(g: i64, d: i64, eps: i64, kn: i64, kd: i64, k_max: u32, higher: bool) -> GridDecision {
    let gap = (g - d).abs();
    if gap <= eps {
        return GridDecision { target: 0, extra: 0 };
    }
    let g_is_higher = g > d;
    let target = if g_is_higher == higher { 1 } else { 2 };
    let num = kn * (gap - eps);
    let den = kd * eps;
    let raw = (num + den - 1) / den;
    GridDecision {
        target,
        extra: (raw as u32).min(k_max),
    }
}

// ---------------------------------------------------------------------------
// linear algebra oracle

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off < 1e-30 * (1.0 + a.norm_squared()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vp, vq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vp - s * vq;
                    v[(k, q)] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

pub fn jacobi_sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, v) = jacobi_eigen(m);
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * vals[k].max(0.0).sqrt() * v[(j, k)]).sum())
}

pub fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, rank, |_, _| StandardNormal.sample(rng));
    &g * g.transpose()
}

// ---------------------------------------------------------------------------
// fixtures

/// Synthesise, degrade and split a paired dataset under `root`.
pub fn paired_dataset(root: &Path, n: usize, size: usize, synth_seed: u64, degrade_seed: u64) -> Dataset {
    synth_dataset(n, size, synth_seed, root).unwrap();
    let spec = DegradationSpec {
        seed: degrade_seed,
        ..Default::default()
    };
    degrade_dir(&root.join(CLEAN_DIR), &root.join(DEGRADED_DIR), &spec).unwrap();
    let manifest = build_root_manifest(root, 0.1, 0).unwrap();
    Dataset::open(manifest).unwrap()
}
