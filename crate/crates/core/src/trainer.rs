//! Two-stage optimization of a scene against a frame set.
//!
//! The warm-up stage fits appearance only with the photometric loss while all
//! motion parameters stay frozen. The main stage optimizes the full weighted
//! objective; spline control points receive accumulated gradients and are
//! stepped every `control_update_every` iterations.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, FrameBundle, LossParts, LossWeights, TrackPoint};
use crate::motion;
use crate::optim::{adam_step, AdamConfig, Moments};
use crate::render::{self, Upstream};
use crate::scene::{GradBuffer, ParamGroup, SceneModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate at the end of the main stage, relative to `position`.
    pub position_final_factor: f64,
    /// End-of-stage factor shared by every other group.
    pub final_factor: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub opacity: f64,
    pub omega: f64,
    pub control: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-3,
            position_final_factor: 0.1,
            final_factor: 1.0,
            scale: 5e-3,
            rotation: 5e-3,
            color: 2.5e-2,
            opacity: 2.5e-2,
            omega: 1e-2,
            control: 1e-3,
        }
    }
}

impl LearningRates {
    /// Rate for `group` at main-stage progress `progress ∈ [0, 1]`.
    pub fn rate(&self, group: ParamGroup, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        if group == ParamGroup::Position {
            return self.position * self.position_final_factor.powf(p);
        }
        let base = match group {
            ParamGroup::Position => self.position,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Color => self.color,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Omega => self.omega,
            ParamGroup::TranslationControl | ParamGroup::RotationControl => self.control,
        };
        base * self.final_factor.powf(p)
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.position_final_factor,
            self.final_factor,
            self.scale,
            self.rotation,
            self.color,
            self.opacity,
            self.omega,
            self.control,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("learning rates and decay factors must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub warmup_iters: usize,
    pub main_iters: usize,
    pub control_update_every: usize,
    pub log_every: usize,
    /// Pixels whose rendered alpha exceeds this take part in the depth loss.
    pub depth_alpha_threshold: f64,
    pub seed: u64,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_iters: 500,
            main_iters: 10_000,
            control_update_every: 100,
            log_every: 50,
            depth_alpha_threshold: 0.5,
            seed: 0,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_update_every == 0 {
            return Err(Error::invalid("control_update_every must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be positive"));
        }
        self.lr.validate()?;
        self.weights.validate()
    }

    pub fn total_iters(&self) -> usize {
        self.warmup_iters + self.main_iters
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub l_rgb: f64,
    pub l_flow: f64,
    pub l_depth: f64,
    pub l_curv: f64,
    pub total: f64,
    pub psnr: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["iter", "l_rgb", "l_flow", "l_depth", "l_curv", "total", "psnr"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub scene: SceneModel,
    pub log: Vec<MetricsRecord>,
}

/// Frame visited at 1-based iteration `iter`.
pub fn frame_for_iteration(seed: u64, iter: usize, frame_count: usize) -> usize {
    let mix = seed ^ (iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mix).random_range(0..frame_count)
}

/// Loss terms and their combined gradient at one frame.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub parts: LossParts,
    pub total: f64,
    pub psnr: f64,
    pub grad: GradBuffer,
}

/// Evaluates every loss term on `bundle`; only terms with `active` set
/// contribute to the gradient, scaled by their weight.
pub fn evaluate_frame(
    scene: &SceneModel,
    bundle: &FrameBundle,
    binding: &HashMap<u64, usize>,
    cfg: &TrainConfig,
    photometric_only: bool,
) -> Result<FrameEval> {
    let w = &cfg.weights;
    let (width, height) = (bundle.width(), bundle.height());
    let t = scene.frame_time(bundle.frame);
    let (out, ctx) = render::render_with_context(scene, t, width, height)?;

    let rgb = losses::loss_rgb(&out.rgb, &bundle.rgb, w.lambda_ssim)?;
    let psnr = losses::psnr(&out.rgb, &bundle.rgb)?;

    let valid: Vec<bool> = out
        .alpha
        .data
        .iter()
        .zip(&bundle.depth.data)
        .map(|(a, d)| *a > cfg.depth_alpha_threshold && d.is_finite())
        .collect();
    let depth = losses::loss_depth(&out.depth, &bundle.depth, &valid)?;

    let supervised: Vec<TrackPoint> = bundle
        .tracks
        .iter()
        .filter(|tp| binding.contains_key(&tp.point_id))
        .copied()
        .collect();
    let centers: Vec<[f64; 2]> = ctx.splats.iter().map(|s| s.center).collect();
    let flow = losses::loss_flow(&supervised, |id| binding.get(&id).copied(), &centers)?;

    let curv = motion::curvature_loss(&scene.tracks);

    let parts = LossParts {
        rgb: rgb.value,
        flow: flow.value,
        depth: depth.value,
        curv: curv.value,
    };

    let mut up = Upstream::zeros(width, height);
    up.rgb = rgb.grad;
    up.rgb.data.iter_mut().for_each(|g| *g *= w.lambda_rgb);
    if !photometric_only {
        up.depth = depth.grad;
        up.depth.data.iter_mut().for_each(|g| *g *= w.lambda_depth);
    }
    let mut grad = render::backward(scene, &ctx, &up)?;
    if !photometric_only {
        for (prim, g) in &flow.grads {
            let g = [w.lambda_flow * g[0], w.lambda_flow * g[1]];
            render::accumulate_center_grad(scene, &ctx, *prim, g, &mut grad);
        }
        for (tg, cg) in grad.tracks.iter_mut().zip(&curv.grad_y) {
            for (y, c) in tg.y.iter_mut().zip(cg) {
                for k in 0..3 {
                    y[k] += w.lambda_curv * c[k];
                }
            }
        }
    }

    Ok(FrameEval {
        total: losses::loss_total(&parts, w),
        parts,
        psnr,
        grad,
    })
}

fn check_frames(scene: &SceneModel, bundles: &[FrameBundle]) -> Result<Vec<FrameBundle>> {
    if bundles.is_empty() {
        return Err(Error::invalid("training needs at least one frame"));
    }
    let mut sorted = bundles.to_vec();
    sorted.sort_by_key(|b| b.frame);
    for (i, b) in sorted.iter().enumerate() {
        if b.frame != i {
            return Err(Error::invalid(format!(
                "frames must be numbered 0..{} without gaps, found frame {}",
                sorted.len(),
                b.frame
            )));
        }
        if b.width() != scene.width || b.height() != scene.height {
            return Err(Error::ShapeMismatch(format!(
                "frame {} is {}x{}, scene is {}x{}",
                b.frame,
                b.width(),
                b.height(),
                scene.width,
                scene.height
            )));
        }
    }
    if sorted.len() != scene.frame_count {
        return Err(Error::invalid(format!(
            "scene expects {} frames, got {}",
            scene.frame_count,
            sorted.len()
        )));
    }
    Ok(sorted)
}

fn first_bad_group(values: &[f64], groups: &[ParamGroup]) -> Option<ParamGroup> {
    values
        .iter()
        .zip(groups)
        .find(|(v, _)| !v.is_finite())
        .map(|(_, g)| *g)
}

/// Runs both stages, calling `observe` with each logged record.
pub fn train_with<F>(scene: SceneModel, bundles: &[FrameBundle], cfg: &TrainConfig, mut observe: F) -> Result<TrainOutput>
where
    F: FnMut(&MetricsRecord),
{
    cfg.validate()?;
    scene.validate()?;
    let frames = check_frames(&scene, bundles)?;
    let binding: HashMap<u64, usize> = scene.bindings.iter().map(|b| (b.point_id, b.primitive)).collect();

    let groups = scene.param_groups();
    let mut slots: Vec<Vec<usize>> = vec![Vec::new(); ParamGroup::ALL.len()];
    for (i, g) in groups.iter().enumerate() {
        slots[g.index()].push(i);
    }
    let mut moments: Vec<Moments> = slots.iter().map(|s| Moments::zeros(s.len())).collect();
    let mut control_acc = vec![0.0; groups.len()];
    let mut control_count = 0usize;

    let mut scene = scene;
    let mut log = Vec::new();
    let total_iters = cfg.total_iters();
    let mut buf_p = Vec::new();
    let mut buf_g = Vec::new();

    for iter in 1..=total_iters {
        let warmup = iter <= cfg.warmup_iters;
        let frame = frame_for_iteration(cfg.seed, iter, frames.len());
        let eval = evaluate_frame(&scene, &frames[frame], &binding, cfg, warmup)?;

        let mut params = scene.flatten();
        let grads = eval.grad.flatten();
        if !eval.total.is_finite() {
            let group = first_bad_group(&params, &groups)
                .or_else(|| first_bad_group(&grads, &groups))
                .map(|g| g.to_string())
                .unwrap_or_else(|| "loss".to_string());
            return Err(Error::NonFinite {
                iteration: iter,
                group,
                what: format!("loss {:?}", eval.parts),
            });
        }
        if let Some(g) = first_bad_group(&grads, &groups) {
            return Err(Error::NonFinite {
                iteration: iter,
                group: g.to_string(),
                what: "gradient".into(),
            });
        }

        let progress = if warmup || cfg.main_iters == 0 {
            0.0
        } else {
            (iter - cfg.warmup_iters) as f64 / cfg.main_iters as f64
        };
        if !warmup {
            for (acc, (g, grp)) in control_acc.iter_mut().zip(grads.iter().zip(&groups)) {
                if grp.is_control() {
                    *acc += g;
                }
            }
            control_count += 1;
        }
        let control_due = !warmup && iter % cfg.control_update_every == 0;

        for group in ParamGroup::ALL {
            if warmup && group.is_motion() {
                continue;
            }
            if group.is_control() && !control_due {
                continue;
            }
            let idx = &slots[group.index()];
            if idx.is_empty() {
                continue;
            }
            buf_p.clear();
            buf_g.clear();
            buf_p.extend(idx.iter().map(|&i| params[i]));
            if group.is_control() {
                let n = control_count.max(1) as f64;
                buf_g.extend(idx.iter().map(|&i| control_acc[i] / n));
            } else {
                buf_g.extend(idx.iter().map(|&i| grads[i]));
            }
            let lr = cfg.lr.rate(group, progress);
            adam_step(&mut buf_p, &buf_g, &mut moments[group.index()], lr, &cfg.adam).map_err(|_| Error::NonFinite {
                iteration: iter,
                group: group.to_string(),
                what: "update".into(),
            })?;
            for (&i, v) in idx.iter().zip(&buf_p) {
                params[i] = *v;
            }
        }
        if control_due {
            control_acc.iter_mut().for_each(|a| *a = 0.0);
            control_count = 0;
        }

        scene.unflatten(&params)?;
        scene.project_constraints();
        if let Some(g) = first_bad_group(&scene.flatten(), &groups) {
            return Err(Error::NonFinite {
                iteration: iter,
                group: g.to_string(),
                what: "parameter".into(),
            });
        }

        if iter % cfg.log_every == 0 {
            let rec = MetricsRecord {
                iter,
                l_rgb: eval.parts.rgb,
                l_flow: eval.parts.flow,
                l_depth: eval.parts.depth,
                l_curv: eval.parts.curv,
                total: eval.total,
                psnr: eval.psnr,
            };
            observe(&rec);
            log.push(rec);
        }
    }

    Ok(TrainOutput { scene, log })
}

pub fn train(scene: SceneModel, bundles: &[FrameBundle], cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(scene, bundles, cfg, |_| {})
}

/// Writes the training log as CSV.
pub fn write_metrics<W: std::io::Write>(log: &[MetricsRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::invalid(format!("writing metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(io_err)?;
    for r in log {
        w.write_record([
            r.iter.to_string(),
            r.l_rgb.to_string(),
            r.l_flow.to_string(),
            r.l_depth.to_string(),
            r.l_curv.to_string(),
            r.total.to_string(),
            r.psnr.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("writing metrics: {e}")))?;
    Ok(())
}
