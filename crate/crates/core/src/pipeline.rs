//! End-to-end workflows: fitting a dataset, evaluating a scene, rendering
//! in-between frames and running variant comparisons.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::build_initial_scene;
use crate::io::RunConfig;
use crate::kernel::PrimitiveKind;
use crate::losses::{self, FrameBundle};
use crate::motion::{curvature_loss, SplineKind};
use crate::render::{self, RenderTarget};
use crate::scene::SceneModel;
use crate::trainer::{self, MetricsRecord};

/// Primitive budget used when the configuration does not name one.
pub const DEFAULT_PRIMITIVES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Scores a scene against every frame of a dataset.
pub fn evaluate(scene: &SceneModel, bundles: &[FrameBundle]) -> Result<EvalReport> {
    if bundles.is_empty() {
        return Err(Error::invalid("evaluation needs at least one frame"));
    }
    let mut frames = Vec::with_capacity(bundles.len());
    for b in bundles {
        let out = render::render(scene, scene.frame_time(b.frame), b.width(), b.height())?;
        frames.push(FrameScore {
            frame: b.frame,
            psnr: losses::psnr(&out.rgb, &b.rgb)?,
            ssim: losses::ssim(&out.rgb, &b.rgb)?,
        });
    }
    frames.sort_by_key(|f| f.frame);
    let n = frames.len() as f64;
    Ok(EvalReport {
        mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
    })
}

/// Writes an evaluation table as CSV with a trailing `mean` row.
pub fn write_eval<W: std::io::Write>(report: &EvalReport, writer: W) -> Result<()> {
    let err = |e: csv::Error| Error::invalid(format!("writing evaluation: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["frame", "psnr", "ssim"]).map_err(err)?;
    for f in &report.frames {
        w.write_record([f.frame.to_string(), f.psnr.to_string(), f.ssim.to_string()])
            .map_err(err)?;
    }
    w.write_record([
        "mean".to_string(),
        report.mean_psnr.to_string(),
        report.mean_ssim.to_string(),
    ])
    .map_err(err)?;
    w.flush().map_err(|e| Error::invalid(format!("writing evaluation: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub initial: SceneModel,
    pub scene: SceneModel,
    pub log: Vec<MetricsRecord>,
    pub initial_curvature: f64,
    pub final_curvature: f64,
    pub eval: EvalReport,
}

/// Initializes a scene from the data and optimizes it.
pub fn fit<F>(bundles: &[FrameBundle], cfg: &RunConfig, observe: F) -> Result<FitResult>
where
    F: FnMut(&MetricsRecord),
{
    cfg.validate()?;
    let count = cfg.primitives.unwrap_or(DEFAULT_PRIMITIVES);
    let initial = build_initial_scene(bundles, count, &cfg.scene, &cfg.init)?;
    fit_scene(initial, bundles, cfg, observe)
}

/// Optimizes an existing scene.
pub fn fit_scene<F>(initial: SceneModel, bundles: &[FrameBundle], cfg: &RunConfig, observe: F) -> Result<FitResult>
where
    F: FnMut(&MetricsRecord),
{
    let out = trainer::train_with(initial.clone(), bundles, &cfg.train, observe)?;
    let eval = evaluate(&out.scene, bundles)?;
    Ok(FitResult {
        initial_curvature: curvature_loss(&initial.tracks).value,
        final_curvature: curvature_loss(&out.scene.tracks).value,
        initial,
        scene: out.scene,
        log: out.log,
        eval,
    })
}

/// One rendered frame at a fractional time.
#[derive(Debug, Clone)]
pub struct TimedFrame {
    pub t: f64,
    pub target: RenderTarget,
}

/// Renders `factor - 1` evenly spaced in-between frames for each interval
/// between consecutive input frames.
pub fn interpolate(scene: &SceneModel, factor: usize) -> Result<Vec<TimedFrame>> {
    if factor < 1 {
        return Err(Error::invalid("interpolation factor must be at least 1"));
    }
    let mut out = Vec::new();
    for i in 0..scene.frame_count.saturating_sub(1) {
        let (a, b) = (scene.frame_time(i), scene.frame_time(i + 1));
        for k in 1..factor {
            let t = a + (b - a) * k as f64 / factor as f64;
            out.push(TimedFrame {
                t,
                target: render::render(scene, t, scene.width, scene.height)?,
            });
        }
    }
    Ok(out)
}

/// A primitive/spline combination to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub primitive: PrimitiveKind,
    pub spline: SplineKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Fits the same data with the same budget and seed under one variant.
pub fn run_variant(bundles: &[FrameBundle], base: &RunConfig, variant: Variant) -> Result<VariantScore> {
    let mut cfg = base.clone();
    cfg.scene.primitive = variant.primitive;
    cfg.scene.spline = variant.spline;
    let res = fit(bundles, &cfg, |_| {})?;
    Ok(VariantScore {
        variant,
        mean_psnr: res.eval.mean_psnr,
        mean_ssim: res.eval.mean_ssim,
    })
}
