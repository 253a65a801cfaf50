//! `eeg-infill`: preprocessing, interpolation, toy training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eeg_infill::eval::{self, n_dropped, read_zeeg, run_sweep, write_zeeg, SweepSpec, SynthSpec, ToyConfig};
use eeg_infill::model::load_checkpoint;
use eeg_infill::sampler::{reconstruct, SamplerConfig};
use eeg_infill::signal::{preprocess, Epoch, PipelineConfig, EPOCH_LEN, TARGET_SFREQ};
use eeg_infill::spline::{self, SplineConfig};
use eeg_infill::train::{DropoutPlan, KeyValues};
use eeg_infill::{Error, Recording};

#[derive(Parser)]
#[command(name = "eeg-infill", version, about = "Reconstruct missing EEG channels at arbitrary scalp positions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpMethod {
    Spline,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Run the preprocessing pipeline and write one ZEEG file per epoch plus a QC report.
    Preprocess { input: PathBuf, out_dir: PathBuf },
    /// Reconstruct dropped channels of a recording.
    Interpolate {
        #[arg(long, value_enum)]
        method: InterpMethod,
        /// Comma-separated channel labels, or a dropout fraction in (0, 1).
        #[arg(long)]
        drop: String,
        /// Model checkpoint (required for --method model).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Seed for random channel selection and the sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Euler steps of the flow sampler.
        #[arg(long, default_value_t = 50)]
        steps: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train the desk-scale model on a synthetic corpus.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (defaults to the checkpoint path with a .loss.csv suffix).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep dropout rates on the held-out synthetic corpus, model versus spline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.75,0.9")]
        rates: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Toy configuration describing the corpus (defaults when absent).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic corpus as ZEEG files.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failures split by exit code: bad invocation (1) or bad data (2).
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Preprocess { input, out_dir } => cmd_preprocess(&input, &out_dir),
        Command::Interpolate { method, drop, ckpt, seed, steps, input, output } => {
            cmd_interpolate(method, &drop, ckpt.as_deref(), seed, steps, &input, &output)
        }
        Command::TrainToy { config, out, trace } => {
            let cfg = ToyConfig::parse(&read_text(&config)?)?;
            let trace = trace.unwrap_or_else(|| out.with_extension("loss.csv"));
            let (outcome, _) = eval::train_toy(&cfg, Some(&out), Some(&trace))?;
            let last = outcome.trace.last().map(|r| r.flow_loss).unwrap_or(f64::NAN);
            log::info!("wrote {} (final flow loss {last:.4}) and {}", out.display(), trace.display());
            Ok(())
        }
        Command::Eval { ckpt, rates, out, config, seeds, steps, seed } => {
            let cfg = match config {
                Some(p) => ToyConfig::parse(&read_text(&p)?)?,
                None => ToyConfig::default(),
            };
            let ck = load_checkpoint(&ckpt)?;
            let (_, holdout) = eval::build_corpora(&ToyConfig { train_epochs: 0, ..cfg })?;
            let spec = SweepSpec {
                rates,
                n_seeds: seeds,
                seed,
                sampler: SamplerConfig { n_steps: steps, seed, ..SamplerConfig::default() },
                ..SweepSpec::default()
            };
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let result = run_sweep(&holdout, Some(&ck.model), &spec)?;
            let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            result.write_csv(file)?;
            log::info!("wrote {}", out.display());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let mut kv = KeyValues::parse(&read_text(&spec)?)?;
            let spec = SynthSpec::from_kv(&mut kv.section(""), &SynthSpec::default())?;
            kv.finish()?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for (i, rec) in eval::synth_generate(&spec)?.iter().enumerate() {
                write_zeeg(&out.join(format!("recording_{i:04}.zeeg")), rec, 1.0)?;
            }
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn cmd_preprocess(input: &Path, out_dir: &Path) -> CliResult {
    let rec = read_zeeg(input)?;
    let result = preprocess(&rec, &PipelineConfig::default())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, e) in result.epochs.iter().enumerate() {
        let epoch = Recording::new(e.samples.clone(), TARGET_SFREQ, e.geometry.clone())?;
        write_zeeg(&out_dir.join(format!("epoch_{i:04}.zeeg")), &epoch, 1.0)?;
    }
    let report = out_dir.join("qc_report.txt");
    fs::write(&report, result.report.to_string()).map_err(|e| Error::io(&report, e))?;
    log::info!("{} epochs written to {}", result.epochs.len(), out_dir.display());
    Ok(())
}

fn parse_drop(drop: &str, rec: &Recording, rng: &mut ChaCha8Rng) -> CliResult<DropoutPlan> {
    let c = rec.n_channels();
    if let Ok(rate) = drop.parse::<f64>() {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Failure::Usage(format!("dropout rate {rate} outside (0, 1)")));
        }
        return Ok(DropoutPlan::random_subset(c, n_dropped(rate, c), rng)?);
    }
    let mut mask = vec![false; c];
    for label in drop.split(',').map(str::trim).filter(|l| !l.is_empty()) {
        let i = rec
            .geometry
            .index_of(label)
            .ok_or_else(|| Failure::Data(Error::invalid(format!("no channel labelled {label}"))))?;
        mask[i] = true;
    }
    if !mask.iter().any(|m| *m) {
        return Err(Failure::Usage("--drop names no channels".into()));
    }
    Ok(DropoutPlan::from_mask(mask)?)
}

fn cmd_interpolate(
    method: InterpMethod, drop: &str, ckpt: Option<&Path>, seed: u64, steps: usize, input: &Path, output: &Path,
) -> CliResult {
    let rec = read_zeeg(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = parse_drop(drop, &rec, &mut rng)?;
    let labels: Vec<&str> = plan.dropped().iter().map(|&c| rec.geometry.labels()[c].as_str()).collect();
    log::info!("reconstructing {}", labels.join(","));
    let samples = match method {
        InterpMethod::Spline => spline::reconstruct(rec.geometry.positions(), &rec.samples, &plan.mask, &SplineConfig::default())?,
        InterpMethod::Model => {
            let ckpt = ckpt.ok_or_else(|| Failure::Usage("--method model requires --ckpt".into()))?;
            if steps == 0 {
                return Err(Failure::Usage("--steps must be at least 1".into()));
            }
            let model = load_checkpoint(ckpt)?.model;
            reconstruct_recording(&model, &rec, &plan, &SamplerConfig { n_steps: steps, seed, ..SamplerConfig::default() })?
        }
    };
    write_zeeg(output, &Recording::new(samples, rec.sfreq, rec.geometry.clone())?, 1.0)?;
    Ok(())
}

/// Model reconstruction over consecutive 5 s epochs of a preprocessed recording.
fn reconstruct_recording(
    model: &eeg_infill::model::Model<f32>, rec: &Recording, plan: &DropoutPlan, cfg: &SamplerConfig,
) -> Result<Vec<Vec<f64>>, Error> {
    if rec.sfreq != TARGET_SFREQ || rec.n_samples() == 0 || rec.n_samples() % EPOCH_LEN != 0 {
        return Err(Error::invalid(format!(
            "the model expects preprocessed input at {TARGET_SFREQ} Hz in whole {EPOCH_LEN}-sample epochs"
        )));
    }
    let mut out = rec.samples.clone();
    for (k, start) in (0..rec.n_samples()).step_by(EPOCH_LEN).enumerate() {
        let epoch = Epoch {
            samples: rec.samples.iter().map(|r| r[start..start + EPOCH_LEN].to_vec()).collect(),
            geometry: rec.geometry.clone(),
            bad_channels: vec![false; rec.n_channels()],
            source_offset: start,
        };
        let sampler = SamplerConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
        let recon = reconstruct(model, &epoch, plan, &sampler)?;
        for c in plan.dropped() {
            out[c][start..start + EPOCH_LEN].copy_from_slice(&recon.samples[c]);
        }
    }
    Ok(out)
}
