use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gaborsplat::init::build_initial_scene;
use gaborsplat::io::{self as gio, RunConfig};
use gaborsplat::kernel::PrimitiveKind;
use gaborsplat::motion::SplineKind;
use gaborsplat::pipeline::{self, Variant, DEFAULT_PRIMITIVES};
use gaborsplat::render;
use gaborsplat::synth::Preset;
use gaborsplat::trainer::{write_metrics, MetricsRecord};

/// Dynamic scene reconstruction with Gabor-modulated Gaussian splats.
#[derive(Debug, Parser)]
#[command(name = "gaborsplat", version, about)]
struct Cli {
    /// TOML file overriding configuration defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Build the initial scene from a dataset.
    Init(InitArgs),
    /// Fit a scene to a dataset.
    Fit(FitArgs),
    /// Render a scene at one time.
    Render(RenderArgs),
    /// Render in-between frames at fractional times.
    Interpolate(InterpolateArgs),
    /// Score a scene against a dataset.
    Eval(EvalArgs),
    /// Fit a primitive or spline variant and report its scores.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    TwoPatches,
    HighFrequency,
    NonlinearMotion,
    LinearEllipse,
    Static,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::TwoPatches => Preset::TwoPatches,
            PresetArg::HighFrequency => Preset::HighFrequency,
            PresetArg::NonlinearMotion => Preset::NonlinearMotion,
            PresetArg::LinearEllipse => Preset::LinearEllipse,
            PresetArg::Static => Preset::Static,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrimitiveArg {
    Gaussian,
    Gabor0,
    Onepluss,
    Adaptive,
}

impl From<PrimitiveArg> for PrimitiveKind {
    fn from(p: PrimitiveArg) -> Self {
        match p {
            PrimitiveArg::Gaussian => PrimitiveKind::Gaussian,
            PrimitiveArg::Gabor0 => PrimitiveKind::Gabor0,
            PrimitiveArg::Onepluss => PrimitiveKind::OnePlusS,
            PrimitiveArg::Adaptive => PrimitiveKind::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplineArg {
    Bspline,
    Cubic,
    Hermite,
}

impl From<SplineArg> for SplineKind {
    fn from(s: SplineArg) -> Self {
        match s {
            SplineArg::Bspline => SplineKind::BSpline,
            SplineArg::Cubic => SplineKind::Cubic,
            SplineArg::Hermite => SplineKind::Hermite,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "two-patches")]
    preset: PresetArg,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    /// Primitive budget.
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Main-stage iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.primitives.is_some() {
            cfg.primitives = self.primitives;
        }
        if let Some(w) = self.warmup {
            cfg.train.warmup_iters = w;
        }
        if let Some(i) = self.iters {
            cfg.train.main_iters = i;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.init.seed = s;
        }
    }
}

#[derive(Debug, Args)]
struct InitArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Scene file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start from this scene instead of initializing from the data.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Normalized time in [0, 1].
    #[arg(long)]
    time: f64,
    /// Output PNG; depth goes next to it with a .pfm extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Subdivisions per input interval; writes factor - 1 frames per interval.
    #[arg(long)]
    factor: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV file to write; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "adaptive")]
    primitive: PrimitiveArg,
    #[arg(long, value_enum, default_value = "hermite")]
    spline: SplineArg,
    /// Scene file to write for the fitted variant.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("AGSV_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("AGSV_THREADS must be a positive integer, got {value:?}"))?;
    if n == 0 {
        bail!("AGSV_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the render thread pool")?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn log_record(r: &MetricsRecord) {
    eprintln!(
        "iter {:>6}  rgb {:.5}  flow {:.5}  depth {:.5}  curv {:.5}  total {:.5}  psnr {:.2}",
        r.iter, r.l_rgb, r.l_flow, r.l_depth, r.l_curv, r.total, r.psnr
    );
}

fn depth_path(png: &Path) -> PathBuf {
    png.with_extension("pfm")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            let recipe = Preset::from(a.preset).recipe(a.width, a.height, a.frames, a.seed);
            let frames = recipe.generate()?;
            let manifest = gio::save_dataset(&a.out, &frames)?;
            println!("{}", manifest.display());
        }
        Command::Init(a) => {
            if let Some(s) = a.seed {
                cfg.init.seed = s;
            }
            let frames = gio::load_dataset(&a.data)?;
            let count = a.primitives.or(cfg.primitives).unwrap_or(DEFAULT_PRIMITIVES);
            let scene = build_initial_scene(&frames, count, &cfg.scene, &cfg.init)?;
            gio::save_scene(&a.out, &scene)?;
            println!("{} primitives -> {}", scene.primitives.len(), a.out.display());
        }
        Command::Fit(a) => {
            a.train.apply(&mut cfg);
            let frames = gio::load_dataset(&a.data)?;
            let res = match &a.scene {
                Some(p) => pipeline::fit_scene(gio::load_scene(p)?, &frames, &cfg, log_record)?,
                None => pipeline::fit(&frames, &cfg, log_record)?,
            };
            gio::save_scene(&a.out, &res.scene)?;
            if let Some(m) = &a.metrics {
                let f = File::create(m).with_context(|| format!("creating {}", m.display()))?;
                write_metrics(&res.log, BufWriter::new(f))?;
            }
            println!(
                "psnr {:.3}  ssim {:.4}  curvature {:.5} -> {:.5}",
                res.eval.mean_psnr, res.eval.mean_ssim, res.initial_curvature, res.final_curvature
            );
        }
        Command::Render(a) => {
            if !(0.0..=1.0).contains(&a.time) {
                bail!("--time must lie in [0, 1], got {}", a.time);
            }
            let scene = gio::load_scene(&a.scene)?;
            let out = render::render(&scene, a.time, scene.width, scene.height)?;
            gio::write_png(&a.out, &out.rgb)?;
            gio::write_pfm(&depth_path(&a.out), &out.depth)?;
        }
        Command::Interpolate(a) => {
            let scene = gio::load_scene(&a.scene)?;
            let frames = pipeline::interpolate(&scene, a.factor)?;
            std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            let per = a.factor.saturating_sub(1);
            for (i, f) in frames.iter().enumerate() {
                let name = format!("interp_{:04}_{:02}.png", i / per, i % per + 1);
                let path = a.out.join(name);
                gio::write_png(&path, &f.target.rgb)?;
                println!("{:.6} {}", f.t, path.display());
            }
        }
        Command::Eval(a) => {
            let scene = gio::load_scene(&a.scene)?;
            let frames = gio::load_dataset(&a.data)?;
            let report = pipeline::evaluate(&scene, &frames)?;
            match &a.out {
                Some(p) => {
                    let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    pipeline::write_eval(&report, BufWriter::new(f))?;
                }
                None => pipeline::write_eval(&report, io::stdout().lock())?,
            }
        }
        Command::Ablate(a) => {
            a.train.apply(&mut cfg);
            cfg.scene.primitive = a.primitive.into();
            cfg.scene.spline = a.spline.into();
            let frames = gio::load_dataset(&a.data)?;
            let res = pipeline::fit(&frames, &cfg, |_| {})?;
            if let Some(p) = &a.out {
                gio::save_scene(p, &res.scene)?;
            }
            let variant = Variant {
                primitive: cfg.scene.primitive,
                spline: cfg.scene.spline,
            };
            let mut out = io::stdout().lock();
            writeln!(out, "primitive,spline,psnr,ssim")?;
            writeln!(
                out,
                "{},{},{},{}",
                primitive_name(variant.primitive),
                spline_name(variant.spline),
                res.eval.mean_psnr,
                res.eval.mean_ssim
            )?;
        }
    }
    Ok(())
}

fn primitive_name(k: PrimitiveKind) -> &'static str {
    match k {
        PrimitiveKind::Gaussian => "gaussian",
        PrimitiveKind::Gabor0 => "gabor0",
        PrimitiveKind::OnePlusS => "onepluss",
        PrimitiveKind::Adaptive => "adaptive",
    }
}

fn spline_name(k: SplineKind) -> &'static str {
    match k {
        SplineKind::BSpline => "bspline",
        SplineKind::Cubic => "cubic",
        SplineKind::Hermite => "hermite",
    }
}

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli));
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
