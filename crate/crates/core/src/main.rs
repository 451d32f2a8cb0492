use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pairgan::data::{self, Dataset, MANIFEST_FILE};
use pairgan::degrade::{self, DegradationSpec};
use pairgan::fid::{self, ExtractorKind, FeatureExtractorSpec, FeatureMatrix};
use pairgan::raster::{rasters_to_tensor, Raster};
use pairgan::train::{self, compare, report, EpochRow, Mode, RunOptions, TrainConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "pairgan", version, about = "Paired image-restoration GAN training with adaptive batch allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural clean images into DIR/clean.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade every PNG in a directory, writing a replay record beside each output.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        /// JSON degradation spec; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Pair DIR/clean with DIR/degraded and write DIR/manifest.json.
    Manifest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = data::DEFAULT_VAL_FRACTION)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a generator/discriminator pair.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Replace the metrics of an earlier run in OUT.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluation commands.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Render plots and a summary for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare two runs; comma-separated lists compare medians of run groups.
    Compare {
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        runs: Vec<String>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Fréchet distance between two image directories (or two feature CSVs with `--extractor file`).
    Fid(FidArgs),
    /// Score a generator checkpoint on the validation split of a dataset.
    Model {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of validation pairs; all when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Args)]
struct FidArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fake: PathBuf,
    #[arg(long, value_enum, default_value_t = ExtractorArg::Proxy)]
    extractor: ExtractorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the extracted features as real.csv and fake.csv here.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Adaptive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExtractorArg {
    Proxy,
    Flatten,
    File,
}

fn load_dir_tensor(dir: &Path) -> anyhow::Result<pairgan::nn::Tensor4<f64>> {
    let files = degrade::list_pngs(dir)?;
    if files.is_empty() {
        bail!("no PNG files in {}", dir.display());
    }
    let images = files.iter().map(|p| Raster::load_png(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Raster> = images.iter().collect();
    Ok(rasters_to_tensor(&refs)?)
}

fn eval_fid(args: &FidArgs) -> anyhow::Result<()> {
    let (real, fake) = if args.extractor == ExtractorArg::File {
        (FeatureMatrix::read_csv(&args.real)?, FeatureMatrix::read_csv(&args.fake)?)
    } else {
        let spec = match args.extractor {
            ExtractorArg::Proxy => FeatureExtractorSpec::proxy(args.seed),
            _ => FeatureExtractorSpec::flatten(),
        };
        debug_assert!(!matches!(spec.kind, ExtractorKind::ExternalFile { .. }));
        (
            fid::extract_features(&load_dir_tensor(&args.real)?, &spec)?,
            fid::extract_features(&load_dir_tensor(&args.fake)?, &spec)?,
        )
    };
    if let Some(dir) = &args.export {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        real.write_csv(&dir.join("real.csv"))?;
        fake.write_csv(&dir.join("fake.csv"))?;
    }
    let (a, b) = (fid::gaussian_stats(&real)?, fid::gaussian_stats(&fake)?);
    for (name, s) in [("real", &a), ("fake", &b)] {
        if s.undersampled() {
            eprintln!(
                "note: {name} set has {} samples for {} features; covariance is rank deficient",
                s.samples,
                s.dim()
            );
        }
    }
    println!("fid: {}", fid::frechet_distance(&a, &b)?);
    Ok(())
}

fn print_row(r: &EpochRow) {
    let fid = r.fid.map_or_else(String::new, |f| format!(" fid {f:.4}"));
    eprintln!(
        "epoch {:>3}  loss_d {:.4}  loss_g {:.4}  rps {:.3}/{:.3}  next {} +{}  steps {}/{}{fid}",
        r.epoch,
        r.loss_d,
        r.loss_g,
        r.rps_g,
        r.rps_d,
        r.target.as_str(),
        r.extra_batches,
        r.d_steps,
        r.g_steps
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { n, size, seed, out } => {
            let files = data::synth_dataset(n, size, seed, &out)?;
            println!("wrote {} images to {}", files.len(), out.join(data::CLEAN_DIR).display());
        }
        Command::Degrade {
            input,
            output,
            seed,
            spec,
        } => {
            let mut spec = match spec {
                Some(p) => DegradationSpec::load(&p)?,
                None => DegradationSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let n = degrade::degrade_dir(&input, &output, &spec)?;
            println!("degraded {n} images into {}", output.display());
        }
        Command::Manifest {
            data,
            val_fraction,
            seed,
        } => {
            let m = data::build_root_manifest(&data, val_fraction, seed)?;
            println!(
                "{}: {} train, {} val",
                data.join(MANIFEST_FILE).display(),
                m.indices(data::Split::Train).len(),
                m.indices(data::Split::Val).len()
            );
        }
        Command::Train {
            data,
            config,
            mode,
            out,
            epochs,
            force,
            quiet,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Baseline => Mode::Baseline,
                    ModeArg::Adaptive => Mode::Adaptive,
                };
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            if !data.join(MANIFEST_FILE).exists() {
                data::build_root_manifest(&data, cfg.val_fraction, cfg.seeds.data)?;
            }
            let ds = Dataset::open_root(&data)?;
            let mut cb = |r: &EpochRow| {
                if !quiet {
                    print_row(r)
                }
            };
            let opts = RunOptions {
                overwrite: force,
                inject: None,
                on_epoch: Some(&mut cb),
            };
            let record = train::train(&cfg, &ds, &out, opts)?;
            match record.best_fid {
                Some((e, f)) => println!("trained {} epochs; best fid {f:.6} at epoch {e}", record.rows.len()),
                None => println!("trained {} epochs", record.rows.len()),
            }
        }
        Command::Eval { what } => match what {
            EvalCommand::Fid(args) => eval_fid(&args)?,
            EvalCommand::Model {
                checkpoint,
                data,
                seed,
                samples,
            } => {
                let ds = Dataset::open_root(&data)?;
                let rep = train::evaluate(&checkpoint, &ds, &FeatureExtractorSpec::proxy(seed), samples)?;
                println!("{}", serde_json::to_string_pretty(&rep)?);
            }
        },
        Command::Report { run } => {
            let out = report::report(&run)?;
            for p in &out.plots {
                println!("wrote {}", p.display());
            }
            print!("{}", out.summary);
        }
        Command::Compare { runs } => {
            let group = |s: &str| -> Vec<PathBuf> {
                s.split(',').filter(|p| !p.is_empty()).map(PathBuf::from).collect()
            };
            let c = compare::compare(&group(&runs[0]), &group(&runs[1]))?;
            for w in &c.warnings {
                println!("{w}");
            }
            print!("{}", c.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
