use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};

use cloudless::data::{load_split, read_manifest, write_dataset, Role};
use cloudless::gradcheck::suite::{self, SUITE_TOL};
use cloudless::io::{read_tensor, write_tensor};
use cloudless::metrics::COVERAGE_BINS;
use cloudless::model::{load_params, Model};
use cloudless::run::RunConfig;
use cloudless::train::{ablation_tsv, evaluate, run_ablation, Trainer};

#[derive(Parser)]
#[command(name = "cloudless", version, about = "Radar-guided cloud removal")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset with an 80/20 train/test manifest.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        patch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training split, checkpointing after every epoch.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the checkpoint directory if it holds one.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split and write the metrics report.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the configured checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score every module and input ablation.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict a cloud-free image from a cloudy image and its radar pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Radar tensor; required unless the model is optical-only.
        #[arg(long)]
        sar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks, one line per operator.
    Gradcheck {
        #[arg(long, value_parser = PossibleValuesParser::new(suite::names()))]
        op: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Clip gradients to this global norm.
    #[arg(long)]
    grad_clip: Option<f64>,
}

impl RunArgs {
    fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig, Failure> {
        let mut cfg = match (&self.config, fallback) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(p)) if p.is_file() => RunConfig::load(p)?,
            _ => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if self.steps.is_some() {
            cfg.steps = self.steps;
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.checkpoint_dir {
            cfg.checkpoint_dir = v.clone();
        }
        if let Some(v) = &self.report {
            cfg.report = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if self.grad_clip.is_some() {
            cfg.grad_clip = self.grad_clip;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Failure with a machine-readable category.
enum Failure {
    Core(cloudless::Error),
    Gradcheck(String),
}

impl From<cloudless::Error> for Failure {
    fn from(e: cloudless::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn line(&self) -> String {
        match self {
            Failure::Core(e) => format!("error: {}: {e}", e.category()),
            Failure::Gradcheck(m) => format!("error: gradcheck: {m}"),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| cloudless::Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| cloudless::Error::io(path, e).into())
}

fn gen_data(seed: u64, count: usize, patch: usize, out: &Path) -> Result<(), Failure> {
    let records = write_dataset(out, seed, count, patch)?;
    let check = read_manifest(out)?;
    println!("bin\ttrain\ttest");
    for (b, name) in COVERAGE_BINS.iter().enumerate() {
        let n = |role| check.iter().filter(|r| r.coverage_bin == b && r.role == role).count();
        println!("{name}\t{}\t{}", n(Role::Train), n(Role::Test));
    }
    println!("samples={} out={}", records.len(), out.display());
    Ok(())
}

fn train(run: &RunArgs, resume: bool) -> Result<(), Failure> {
    let cfg = run.resolve(None)?;
    let data = load_split(&cfg.data_dir, Role::Train)?;
    let dir = cfg.checkpoint_dir.clone();
    let mut trainer = if resume && Trainer::has_checkpoint(&dir) {
        let t = Trainer::resume(cfg.clone(), &dir)?;
        println!("resumed step={}", t.step);
        t
    } else {
        Trainer::new(cfg.clone())?
    };
    let total = cfg.total_steps(data.len());
    trainer.run(&data, total, Some(&dir), &mut |line| println!("{line}"))?;
    trainer.save(&dir)?;
    println!("done step={} checkpoint={}", trainer.step, dir.display());
    Ok(())
}

fn eval(run: &RunArgs, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let probe = run.resolve(None)?;
    let dir = checkpoint.map_or(probe.checkpoint_dir.clone(), Path::to_path_buf);
    let cfg = run.resolve(Some(&dir.join("config.toml")))?;
    let (model, mut store) = Model::build(cfg.model_config(), cfg.seed)?;
    load_params(dir.join("params"), &mut store)?;
    let test = load_split(&cfg.data_dir, Role::Test)?;
    let report = evaluate(&model, &store, &test, cfg.sar_input, cfg.threads)?;
    write_text(&cfg.report, &report.to_tsv())?;
    if let Some(m) = report.overall() {
        println!(
            "samples={} psnr={:.4} ssim={:.6} cc={:.6} sam={:.4} masked_l1={:.6}",
            report.len(),
            m.psnr,
            m.ssim,
            m.cc,
            m.sam,
            m.masked_l1
        );
    }
    println!("report={}", cfg.report.display());
    Ok(())
}

fn ablate(run: &RunArgs) -> Result<(), Failure> {
    let cfg = run.resolve(None)?;
    let train = load_split(&cfg.data_dir, Role::Train)?;
    let test = load_split(&cfg.data_dir, Role::Test)?;
    let rows = run_ablation(&cfg, &train, &test, cfg.threads)?;
    let text = ablation_tsv(&rows);
    write_text(&cfg.report, &text)?;
    print!("{text}");
    Ok(())
}

fn infer(checkpoint: &Path, input: &Path, sar: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(checkpoint.join("config.toml"))?;
    let (model, mut store) = Model::build(cfg.model_config(), cfg.seed)?;
    load_params(checkpoint.join("params"), &mut store)?;
    let cloudy = read_tensor(input)?;
    let sar = sar.map(read_tensor).transpose()?;
    let pred = model.predict(&mut store, &cloudy, sar.as_ref())?;
    write_tensor(out, &pred)?;
    println!("shape={} out={}", pred.shape(), out.display());
    Ok(())
}

fn gradcheck(op: Option<&str>, seed: u64) -> Result<(), Failure> {
    let names: Vec<&str> = match op {
        Some(n) => vec![n],
        None => suite::names(),
    };
    let mut failed = Vec::new();
    println!("op\tmax_rel_err\tchecked\tskipped\tstatus");
    for name in names {
        let r = suite::run(name, seed)?;
        let ok = r.passes(SUITE_TOL);
        println!(
            "{}\t{:.3e}\t{}\t{}\t{}",
            r.name,
            r.max_rel_err,
            r.checked,
            r.skipped,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!("exceeds {SUITE_TOL:e}: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::GenData { seed, count, patch, out } => gen_data(*seed, *count, *patch, out),
        Cmd::Train { run, resume } => train(run, *resume),
        Cmd::Eval { run, checkpoint } => eval(run, checkpoint.as_deref()),
        Cmd::Ablate { run } => ablate(run),
        Cmd::Infer { checkpoint, input, sar, out } => infer(checkpoint, input, sar.as_deref(), out),
        Cmd::Gradcheck { op, seed } => gradcheck(op.as_deref(), *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::FAILURE
        }
    }
}
