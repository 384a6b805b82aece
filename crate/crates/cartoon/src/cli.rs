//! Command-line dispatcher. Exit codes: 0 success, 1 usage error,
//! 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cartoon_core::gradsuite::{run_suite, GRAD_TOLERANCE};
use cartoon_core::imageops::{edge_smooth, find_duplicates, perceptual_hash, EdgeSmoothParams};
use clap::{Args, Parser, Subcommand};

use crate::config::TrainConfig;
use crate::error::{io_at, Error};
use crate::io::{read_dir_images, read_image, write_png};
use crate::survey::{read_log, ReportPayload, SurveyService};
use crate::trainer::{load_sets, read_checkpoint, write_checkpoint, EpochStats, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cartoon", version, about = "Photo-to-cartoon GAN workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Dataset preparation
    #[command(subcommand)]
    Prep(PrepCmd),
    /// Train a generator/discriminator pair
    Train(TrainArgs),
    /// Apply a trained generator to one image
    Stylize(StylizeArgs),
    /// Finite-difference gradient checks of every differentiable layer
    Gradcheck(GradArgs),
    /// Ranking survey service
    #[command(subcommand)]
    Survey(SurveyCmd),
}

#[derive(Debug, Subcommand)]
enum PrepCmd {
    /// Blur the edge regions of every cartoon in a directory
    Smooth(SmoothArgs),
    /// List near-duplicate image pairs
    Dedup(DedupArgs),
}

#[derive(Debug, Args)]
struct SmoothArgs {
    /// Input directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory (created if missing); files are written as PNG
    #[arg(long)]
    out: PathBuf,
    /// Lower hysteresis threshold on the Sobel magnitude
    #[arg(long, default_value_t = 150.0)]
    low: f32,
    /// Upper hysteresis threshold on the Sobel magnitude
    #[arg(long, default_value_t = 500.0)]
    high: f32,
    /// Odd Gaussian kernel side
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Gaussian sigma in pixels; 0 derives it from the kernel size
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Dilation radius of the edge mask
    #[arg(long, default_value_t = 1)]
    dilation: usize,
}

#[derive(Debug, Args)]
struct DedupArgs {
    /// Input directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Maximum Hamming distance between hashes of duplicates
    #[arg(long, default_value_t = cartoon_core::imageops::DEFAULT_DUP_THRESHOLD)]
    threshold: u32,
    /// Write the pair list here instead of standard output
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML training configuration
    #[arg(long)]
    config: PathBuf,
    /// Directory for checkpoint.cgwt and stats.csv
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from OUT/checkpoint.cgwt
    #[arg(long)]
    resume: bool,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Stop (and checkpoint) after this many global steps
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Debug, Args)]
struct StylizeArgs {
    /// Checkpoint holding a generator
    #[arg(long)]
    ckpt: PathBuf,
    /// Input image (PNG or JPEG)
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradArgs {
    /// First seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of consecutive seeds
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Debug, Subcommand)]
enum SurveyCmd {
    /// Serve the survey over HTTP
    Serve(ServeArgs),
    /// Print the mean-rank table of a response log
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Survey definition (JSON)
    #[arg(long)]
    def: PathBuf,
    /// Append-only response log
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Base seed of the session shuffles
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Print JSON instead of the table
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Prep(PrepCmd::Smooth(a)) => smooth(a, out),
        Cmd::Prep(PrepCmd::Dedup(a)) => dedup(a, out),
        Cmd::Train(a) => train(a, out),
        Cmd::Stylize(a) => stylize(a),
        Cmd::Gradcheck(a) => gradcheck(a, out),
        Cmd::Survey(SurveyCmd::Serve(a)) => serve(a, out),
        Cmd::Survey(SurveyCmd::Report(a)) => report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn emit(out: &mut dyn Write, line: &str) -> Outcome {
    writeln!(out, "{line}").map_err(|e| Failure::Runtime(io_at("<stdout>")(e)))
}

fn smooth(a: SmoothArgs, out: &mut dyn Write) -> Outcome {
    let p = EdgeSmoothParams {
        canny_low: a.low,
        canny_high: a.high,
        dilation_radius: a.dilation,
        blur_kernel: a.kernel,
        blur_sigma: a.sigma,
    };
    p.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(io_at(&a.out)(e)))?;
    let (images, skipped) = read_dir_images(&a.input)?;
    for (path, img) in &images {
        let stem = path.file_stem().unwrap_or_default();
        let target = a.out.join(Path::new(stem).with_extension("png"));
        write_png(&target, &edge_smooth(img, &p).map_err(Error::from)?)?;
    }
    emit(out, &format!("smoothed {} image(s), skipped {}", images.len(), skipped.len()))
}

fn dedup(a: DedupArgs, out: &mut dyn Write) -> Outcome {
    let (images, skipped) = read_dir_images(&a.input)?;
    let hashes: Vec<u64> = images.iter().map(|(_, img)| perceptual_hash(img)).collect();
    let name = |i: usize| images[i].0.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut text = String::new();
    for p in find_duplicates(&hashes, a.threshold) {
        text.push_str(&format!("{} {} {}\n", name(p.first), name(p.second), p.distance));
    }
    match &a.report {
        Some(path) => std::fs::write(path, &text).map_err(|e| Failure::Runtime(io_at(path)(e)))?,
        None => out.write_all(text.as_bytes()).map_err(|e| Failure::Runtime(io_at("<stdout>")(e)))?,
    }
    if !skipped.is_empty() {
        log::warn!("skipped {} undecodable file(s)", skipped.len());
    }
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = TrainConfig::load(&a.config).map_err(|e| match e {
        Error::Config(m) => Failure::Usage(m),
        e => Failure::Runtime(e),
    })?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(io_at(&a.out)(e)))?;
    let ck_path = a.out.join("checkpoint.cgwt");
    let stats_path = a.out.join("stats.csv");
    let (photos, cartoons, smoothed) = load_sets(&cfg)?;
    let mut trainer = if a.resume {
        let ck = read_checkpoint(&ck_path)?;
        let t = Trainer::resume(&ck, photos, cartoons, smoothed)?;
        if *t.config() != cfg {
            return Err(Failure::Usage("configuration differs from the one stored in the checkpoint".into()));
        }
        t
    } else {
        Trainer::new(cfg, photos, cartoons, smoothed)?
    };
    let mut stats = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&stats_path)
        .map_err(|e| Failure::Runtime(io_at(&stats_path)(e)))?;
    let fresh = stats.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut log_line = |line: &str| -> Outcome {
        writeln!(stats, "{line}").map_err(|e| Failure::Runtime(io_at(&stats_path)(e)))?;
        emit(out, line)
    };
    if fresh {
        log_line(EpochStats::CSV_HEADER)?;
    }
    let every = trainer.config().checkpoint_every;
    let stop = a.max_steps.unwrap_or(u64::MAX).min(trainer.total_steps());
    while trainer.step_index() < stop {
        let outcome = trainer.step()?;
        if let Some(e) = outcome.epoch {
            log_line(&e.to_csv())?;
        }
        if every > 0 && trainer.step_index() % every == 0 {
            write_checkpoint(&ck_path, &trainer.checkpoint()?)?;
        }
    }
    write_checkpoint(&ck_path, &trainer.checkpoint()?)?;
    Ok(())
}

fn stylize(a: StylizeArgs) -> Outcome {
    let ck = read_checkpoint(&a.ckpt)?;
    let img = read_image(&a.input)?;
    write_png(&a.out, &crate::stylize::stylize(&ck, &img)?)?;
    Ok(())
}

fn gradcheck(a: GradArgs, out: &mut dyn Write) -> Outcome {
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let checks = run_suite(&seeds).map_err(Error::from)?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!c.passed());
        emit(out, &format!("{:<28} seed {:>4}  max rel err {:.3e}  probes {:>4}  {verdict}", c.name, c.seed, c.max_rel_error, c.probes))?;
    }
    emit(out, &format!("{} checks, {failed} above {GRAD_TOLERANCE:e}", checks.len()))?;
    if failed > 0 {
        return Err(Failure::Runtime(Error::Config(format!("{failed} gradient check(s) failed"))));
    }
    Ok(())
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Outcome {
    let svc = Arc::new(SurveyService::open_files(&a.def, &a.store, a.seed)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(io_at("<runtime>")(e)))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| Failure::Runtime(io_at(&a.bind)(e)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Runtime(io_at(&a.bind)(e)))?;
        emit(out, &format!("listening on http://{addr}"))?;
        out.flush().ok();
        crate::survey::serve(listener, svc)
            .await
            .map_err(|e| Failure::Runtime(io_at(&a.bind)(e)))
    })
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Outcome {
    let state = read_log(&a.store)?;
    let effective = state.effective();
    let report = cartoon_core::survey::mean_rank_report(&effective);
    if a.json {
        let payload = ReportPayload::new(effective.len(), &report);
        let text = serde_json::to_string_pretty(&payload).map_err(|e| Failure::Runtime(Error::Config(e.to_string())))?;
        emit(out, &text)
    } else {
        emit(out, &format!("{} effective record(s)", effective.len()))?;
        out.write_all(report.render().as_bytes()).map_err(|e| Failure::Runtime(io_at("<stdout>")(e)))
    }
}
