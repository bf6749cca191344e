use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dmn_core::bench::bench_recurrent;
use dmn_core::data::{generate_dataset, load_dataset, write_dataset, SceneSpec};
use dmn_core::metrics::{calibrate_threshold, evaluate};
use dmn_core::pnm::{read_ppm, write_heatmap};
use dmn_core::train::{build_vocab, train, EpochLog};
use dmn_core::{Checkpoint, Dmn, DmnConfig, DmnError, Result, Stage};

#[derive(Parser)]
#[command(name = "dmn", version, about = "Language-guided segmentation with a dynamic multimodal network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a preset configuration as JSON.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Tiny)]
        preset: Preset,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Image size as HxW, e.g. 32x32.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Checkpoint to continue from; required for the high stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Decoder depth: `n-1` (default), `log2`, or an explicit count.
        #[arg(long, value_parser = parse_stages)]
        stages: Option<StagesArg>,
        /// Validation set for the plateau schedule.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// A value in [0, 1], or `auto` for the threshold calibrated at training time.
        #[arg(long, value_parser = parse_threshold, default_value = "auto")]
        threshold: ThresholdArg,
    },
    /// Write the probability heatmap for one image and query.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time SRU against LSTM scans.
    Bench {
        #[arg(long, default_value_t = 256)]
        d: usize,
        #[arg(long = "T", default_value_t = 64)]
        t: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Tiny,
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Low,
    High,
}

#[derive(Clone, Copy)]
enum StagesArg {
    AllButOne,
    Log2,
    Count(usize),
}

#[derive(Clone, Copy)]
enum ThresholdArg {
    Auto,
    Value(f64),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

fn parse_stages(s: &str) -> Result<StagesArg, String> {
    match s {
        "n-1" | "N-1" => Ok(StagesArg::AllButOne),
        "log2" => Ok(StagesArg::Log2),
        _ => s
            .parse()
            .map(StagesArg::Count)
            .map_err(|_| format!("expected n-1, log2 or a count, got {s:?}")),
    }
}

fn parse_threshold(s: &str) -> Result<ThresholdArg, String> {
    if s == "auto" {
        return Ok(ThresholdArg::Auto);
    }
    let v: f64 = s.parse().map_err(|_| format!("expected a number or auto, got {s:?}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("threshold {v} is outside [0, 1]"));
    }
    Ok(ThresholdArg::Value(v))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DmnError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DmnError::io(path, e))
}

fn log_epoch(log: &EpochLog) {
    match log.val_loss {
        Some(v) => eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  lr {:.1e}",
            log.epoch, log.train_loss, v, log.lr
        ),
        None => eprintln!("epoch {:>3}  train {:.5}  lr {:.1e}", log.epoch, log.train_loss, log.lr),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    config: &Path,
    data: &Path,
    stage: StageArg,
    resume: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    stages: Option<StagesArg>,
    val: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut cfg = DmnConfig::from_json(&read_text(config)?)?;
    cfg.stage = match stage {
        StageArg::Low => Stage::LowRes,
        StageArg::High => Stage::HighRes,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    match stages {
        Some(StagesArg::AllButOne) => cfg.um_stages = None,
        Some(StagesArg::Log2) => cfg.um_stages = Some(cfg.log2_stages()),
        Some(StagesArg::Count(n)) => cfg.um_stages = Some(n),
        None => {}
    }
    cfg.validate()?;
    let train_set = load_dataset(data)?;
    let val_set = match val {
        Some(dir) => load_dataset(dir)?,
        None => Vec::new(),
    };
    let mut model = match (resume, cfg.stage) {
        (Some(ckpt), _) => Dmn::from_checkpoint_with(&Checkpoint::load(ckpt)?, cfg)?,
        (None, Stage::LowRes) => Dmn::new(cfg, build_vocab(&train_set))?,
        (None, Stage::HighRes) => {
            return Err(DmnError::Contract(
                "the high stage starts from a low-stage checkpoint; pass --resume".into(),
            ))
        }
    };
    let report = train(&mut model, &train_set, &val_set, log_epoch)?;
    let theta = calibrate_threshold(&model, &train_set)?;
    model.set_threshold(Some(theta));
    model.to_checkpoint().save(out)?;
    let last = report.epochs.last().map_or(f64::NAN, |e| e.train_loss);
    println!(
        "trained {:?} stage for {} epochs, final train loss {last:.5}, threshold {theta:.2}, saved {}",
        report.stage,
        report.epochs.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { preset, out } => {
            let cfg = match preset {
                Preset::Tiny => DmnConfig::tiny(),
                Preset::Desk => DmnConfig::default(),
                Preset::Full => DmnConfig::full_scale(),
            };
            let json = cfg.to_json();
            match out {
                Some(path) => write_text(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::GenData { out, count, size, seed } => {
            let spec = SceneSpec::for_size(size.0, size.1);
            let examples = generate_dataset(seed, count, &spec)?;
            write_dataset(&examples, &out)?;
            println!("wrote {count} examples of {}x{} to {}", size.0, size.1, out.display());
        }
        Command::Train {
            config,
            data,
            stage,
            resume,
            seed,
            epochs,
            stages,
            val,
            out,
        } => run_train(&config, &data, stage, resume.as_deref(), seed, epochs, stages, val.as_deref(), &out)?,
        Command::Eval { ckpt, data, threshold } => {
            let model = Dmn::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
            let theta = match threshold {
                ThresholdArg::Value(v) => v,
                ThresholdArg::Auto => model.threshold().ok_or_else(|| {
                    DmnError::Contract(format!(
                        "{} carries no calibrated threshold; pass --threshold explicitly",
                        ckpt.display()
                    ))
                })?,
            };
            let examples = load_dataset(&data)?;
            print!("{}", evaluate(&model, &examples, theta)?.to_text());
        }
        Command::Predict { ckpt, image, query, out } => {
            let model = Dmn::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
            let img = read_ppm(&image)?;
            let hm = model.heatmap(&img.to_tensor(), &query, model.config().stage)?;
            write_heatmap(&out, &hm)?;
            let s = hm.shape();
            println!("wrote {}x{} heatmap to {}", s[1], s[2], out.display());
        }
        Command::Bench { d, t, reps, out } => {
            let report = bench_recurrent(d, t, reps)?;
            print!("{}", report.to_text());
            if let Some(path) = out {
                write_text(&path, &report.to_csv())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
