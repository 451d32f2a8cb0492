//! Training loop with per-epoch batch reallocation, plus evaluation,
//! reporting and run comparison.

pub mod compare;
pub mod eval;
pub mod metrics;
pub mod report;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset, Split};
use crate::error::{Error, Result};
use crate::fid::FeatureExtractorSpec;
use crate::losses::{record_gen_total_loss, record_patch_disc_loss, LossConfig};
use crate::models::{
    build_models, discriminator_forward, generate, generator_forward, DiscriminatorConfig, GeneratorConfig,
    ModelSummary,
};
use crate::nn::{adam_step, save_checkpoint, AdamConfig, AdamState, ParamSet, Tape};
use crate::scheduler::{LossHistory, ScheduleDecision, Scheduler, SchedulerConfig, Target};
pub use eval::{evaluate, EvalReport, FidProbe};
pub use metrics::{read_metrics, EpochRow, RowStatus};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOCK_FILE: &str = ".lock";
pub const GEN_FINAL: &str = "generator.gbck";
pub const DISC_FINAL: &str = "discriminator.gbck";
pub const GEN_BEST: &str = "generator_best.gbck";
pub const DISC_BEST: &str = "discriminator_best.gbck";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Strict one-D/one-G alternation.
    Baseline,
    Adaptive,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::Config(format!("mode must be baseline or adaptive, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub model: u64,
    pub data: u64,
    pub degrade: u64,
    pub fid: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub scheduler: SchedulerConfig,
    /// FID is evaluated every this many epochs and after the last one.
    pub fid_cadence: usize,
    /// Validation pairs used for FID; 0 disables it.
    pub eval_samples: usize,
    pub seeds: Seeds,
    pub mode: Mode,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Used only when a manifest has to be built for the dataset.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            scheduler: SchedulerConfig::default(),
            fid_cadence: 2,
            eval_samples: 20,
            seeds: Seeds::default(),
            mode: Mode::Adaptive,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            val_fraction: crate::data::DEFAULT_VAL_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.fid_cadence == 0 {
            return Err(Error::Config("epochs, batch_size and fid_cadence must be at least 1".into()));
        }
        if self.eval_samples == 1 {
            return Err(Error::Config("eval_samples must be 0 or at least 2".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.scheduler.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.discriminator.image_channels != self.generator.out_channels {
            return Err(Error::Config("discriminator and generator channel counts differ".into()));
        }
        Ok(())
    }

    /// Scheduler settings in force: baseline mode always disables reallocation.
    pub fn effective_scheduler(&self) -> SchedulerConfig {
        SchedulerConfig {
            enabled: self.scheduler.enabled && self.mode == Mode::Adaptive,
            ..self.scheduler
        }
    }

    pub fn fid_spec(&self) -> FeatureExtractorSpec {
        FeatureExtractorSpec::proxy(self.seeds.fid)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub config: TrainConfig,
    pub checkpoints: Vec<PathBuf>,
    pub best_fid: Option<(usize, f64)>,
}

/// Running sums for one epoch's regular steps.
#[derive(Default)]
struct EpochSums {
    d: f64,
    g: f64,
    g_adv: f64,
    g_l1: f64,
    acc: f64,
    n: usize,
}

impl EpochSums {
    fn mean(&self, v: f64) -> f64 {
        v / self.n.max(1) as f64
    }
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    data: &'a Dataset,
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    gen_opt: AdamState<f32>,
    disc_opt: AdamState<f32>,
    pub scheduler: Scheduler,
    /// Decision carried into the next epoch.
    pending: ScheduleDecision,
    probe: Option<FidProbe>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let [w, h] = data.manifest.image_size;
        if w != h || w != config.generator.input_size {
            return Err(Error::Config(format!(
                "dataset images are {w}×{h} but the generator expects {0}×{0}",
                config.generator.input_size
            )));
        }
        let (generator, discriminator) = build_models(&config.generator, &config.discriminator, config.seeds.model)?;
        let available = data.split_len(Split::Val).min(config.eval_samples);
        let probe = if available >= 2 {
            Some(FidProbe::new(data, available, config.fid_spec())?)
        } else {
            None
        };
        Ok(Self {
            gen_opt: AdamState::new(&generator, config.optimizer),
            disc_opt: AdamState::new(&discriminator, config.optimizer),
            scheduler: Scheduler::new(config.effective_scheduler()),
            pending: ScheduleDecision::none(f64::NAN, f64::NAN),
            generator,
            discriminator,
            probe,
            epoch: 0,
            config,
            data,
        })
    }

    /// Seed both loss histories as if earlier epochs had produced them; the
    /// decision they imply is applied to the next epoch.
    pub fn inject_histories(&mut self, generator: &[f64], discriminator: &[f64]) -> Result<ScheduleDecision> {
        if generator.len() != discriminator.len() {
            return Err(Error::Config("injected histories differ in length".into()));
        }
        self.scheduler.generator = LossHistory::from_losses(generator)?;
        self.scheduler.discriminator = LossHistory::from_losses(discriminator)?;
        self.pending = self.scheduler.decide()?;
        Ok(self.pending)
    }

    pub fn pending(&self) -> ScheduleDecision {
        self.pending
    }

    pub fn has_fid(&self) -> bool {
        self.probe.is_some()
    }

    /// One discriminator update; returns (loss, patch accuracy).
    fn d_step(&mut self, batch: &Batch<f32>) -> Result<(f64, f64)> {
        let fake = generate(&self.generator, &self.config.generator, &batch.x)?;
        let mut tape = Tape::new();
        let x = tape.input(batch.x.clone());
        let y = tape.input(batch.y.clone());
        let f = tape.input(fake);
        let real = discriminator_forward(&mut tape, x, y, &self.discriminator, &self.config.discriminator)?;
        let fake = discriminator_forward(&mut tape, x, f, &self.discriminator, &self.config.discriminator)?;
        let loss = record_patch_disc_loss(&mut tape, real, fake, &self.config.loss)?;
        let value = tape.value(loss).data()[0] as f64;
        let correct = tape.value(real).data().iter().filter(|&&p| p > 0.5).count()
            + tape.value(fake).data().iter().filter(|&&p| p < 0.5).count();
        let acc = correct as f64 / (2 * tape.value(real).len()) as f64;
        if value.is_finite() {
            tape.backward(loss, &mut self.discriminator)?;
            adam_step(&mut self.discriminator, &mut self.disc_opt)?;
        }
        Ok((value, acc))
    }

    /// One generator update; returns (total, adversarial, L1).
    fn g_step(&mut self, batch: &Batch<f32>) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let x = tape.input(batch.x.clone());
        let out = generator_forward(&mut tape, x, &self.generator, &self.config.generator)?;
        let fake = discriminator_forward(&mut tape, x, out, &self.discriminator, &self.config.discriminator)?;
        let (loss, parts) = record_gen_total_loss(&mut tape, fake, out, &batch.y, &self.config.loss)?;
        if parts.total.is_finite() {
            tape.backward(loss, &mut self.generator)?;
            adam_step(&mut self.generator, &mut self.gen_opt)?;
        }
        Ok((parts.total as f64, parts.adversarial as f64, parts.l1 as f64))
    }

    fn abort_row(&self, sums: &EpochSums, applied: u32, d_steps: usize, g_steps: usize) -> EpochRow {
        EpochRow {
            epoch: self.epoch,
            loss_d: sums.mean(sums.d),
            loss_g: sums.mean(sums.g),
            loss_g_adv: sums.mean(sums.g_adv),
            loss_g_l1: sums.mean(sums.g_l1),
            rps_g: f64::NAN,
            rps_d: f64::NAN,
            delta: f64::NAN,
            target: Target::None,
            extra_batches: 0,
            applied_extra: applied,
            d_steps,
            g_steps,
            acc_d: sums.mean(sums.acc),
            fid: None,
            status: RowStatus::Abort,
        }
    }

    /// Run the next epoch. A non-finite loss ends the epoch early with an
    /// `Abort` row; parameters are never updated with non-finite gradients.
    pub fn run_epoch(&mut self) -> Result<EpochRow> {
        self.epoch += 1;
        let epoch = self.epoch;
        let m = self.config.batch_size;
        let len = self.data.epoch_len(Split::Train, m);
        let (mut d_steps, mut g_steps) = (0, 0);
        let mut sums = EpochSums::default();

        let carried = self.pending;
        let applied = if carried.target == Target::None { 0 } else { carried.extra_batches };
        for k in 0..applied as usize {
            let batch = self.data.load_batch(Split::Train, epoch as u64, k % len, m)?;
            let value = match carried.target {
                Target::Generator => {
                    g_steps += 1;
                    self.g_step(&batch)?.0
                }
                _ => {
                    d_steps += 1;
                    self.d_step(&batch)?.0
                }
            };
            if !value.is_finite() {
                return Ok(self.abort_row(&sums, applied, d_steps, g_steps));
            }
        }

        for b in 0..len {
            let batch = self.data.load_batch(Split::Train, epoch as u64, b, m)?;
            let (ld, acc) = self.d_step(&batch)?;
            d_steps += 1;
            sums.d += ld;
            sums.acc += acc;
            sums.n += 1;
            if !ld.is_finite() {
                sums.g = f64::NAN;
                return Ok(self.abort_row(&sums, applied, d_steps, g_steps));
            }
            let (lg, adv, l1) = self.g_step(&batch)?;
            g_steps += 1;
            sums.g += lg;
            sums.g_adv += adv;
            sums.g_l1 += l1;
            if !lg.is_finite() {
                return Ok(self.abort_row(&sums, applied, d_steps, g_steps));
            }
        }

        let (loss_d, loss_g) = (sums.mean(sums.d), sums.mean(sums.g));
        self.scheduler.record(loss_g, loss_d)?;
        self.pending = self.scheduler.decide()?;
        let fid = if self.probe.is_some() && (epoch.is_multiple_of(self.config.fid_cadence) || epoch == self.config.epochs) {
            Some(self.fid()?)
        } else {
            None
        };
        Ok(EpochRow {
            epoch,
            loss_d,
            loss_g,
            loss_g_adv: sums.mean(sums.g_adv),
            loss_g_l1: sums.mean(sums.g_l1),
            rps_g: self.pending.rps_g,
            rps_d: self.pending.rps_d,
            delta: self.pending.delta,
            target: self.pending.target,
            extra_batches: self.pending.extra_batches,
            applied_extra: applied,
            d_steps,
            g_steps,
            acc_d: sums.mean(sums.acc),
            fid,
            status: RowStatus::Ok,
        })
    }

    /// Proxy FID of the current generator on the evaluation pairs.
    pub fn fid(&self) -> Result<f64> {
        let probe = self
            .probe
            .as_ref()
            .ok_or_else(|| Error::Config("no validation pairs available for FID".into()))?;
        probe.score(&self.generator, &self.config.generator)
    }
}

/// Exclusive claim on a run directory, released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Config(format!(
                    "{} is locked by another trainer (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                )),
                _ => Error::io(&path, e),
            })?;
        Ok(Self(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Options for [`train`] beyond the config itself.
#[derive(Default)]
pub struct RunOptions<'f> {
    /// Allow replacing the metrics of an earlier run in the same directory.
    pub overwrite: bool,
    pub inject: Option<(Vec<f64>, Vec<f64>)>,
    pub on_epoch: Option<&'f mut dyn FnMut(&EpochRow)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Train into `out_dir`, persisting metrics after every epoch.
pub fn train(config: &TrainConfig, data: &Dataset, out_dir: &Path, mut opts: RunOptions) -> Result<RunRecord> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _lock = RunLock::acquire(out_dir)?;
    if !opts.overwrite && out_dir.join(metrics::METRICS_FILE).exists() {
        return Err(Error::Config(format!("{} already holds a run", out_dir.display())));
    }
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write_json(&out_dir.join(CONFIG_FILE), config)?;
    write_json(
        &out_dir.join(MODEL_FILE),
        &ModelSummary::new(&config.generator, &config.discriminator)?,
    )?;

    let mut data = data.clone();
    data.shuffle_seed = config.seeds.data;
    let mut trainer = Trainer::new(config.clone(), &data)?;
    if let Some((g, d)) = &opts.inject {
        trainer.inject_histories(g, d)?;
    }
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut timings = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut checkpoints = Vec::new();
    for _ in 0..config.epochs {
        let started = Instant::now();
        let row = trainer.run_epoch()?;
        rows.push(row.clone());
        timings.push((row.epoch, started.elapsed().as_millis()));
        metrics::write_metrics(out_dir, &rows)?;
        metrics::write_timings(out_dir, &timings)?;
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&row);
        }
        if row.status == RowStatus::Abort {
            return Err(Error::NonFinite(format!(
                "non-finite loss in epoch {} (loss_d = {}, loss_g = {}); rows up to this epoch are in {}",
                row.epoch,
                row.loss_d,
                row.loss_g,
                out_dir.join(metrics::METRICS_FILE).display()
            )));
        }
        if let Some(f) = row.fid {
            if best.is_none_or(|(_, b)| f < b) {
                best = Some((row.epoch, f));
                for (params, name) in [(&trainer.generator, GEN_BEST), (&trainer.discriminator, DISC_BEST)] {
                    save_checkpoint(params, &ckpt_dir.join(name))?;
                }
            }
        }
    }
    for (params, name) in [(&trainer.generator, GEN_FINAL), (&trainer.discriminator, DISC_FINAL)] {
        save_checkpoint(params, &ckpt_dir.join(name))?;
        checkpoints.push(ckpt_dir.join(name));
    }
    if best.is_some() {
        checkpoints.extend([ckpt_dir.join(GEN_BEST), ckpt_dir.join(DISC_BEST)]);
    }
    Ok(RunRecord {
        rows,
        config: config.clone(),
        checkpoints,
        best_fid: best,
    })
}
