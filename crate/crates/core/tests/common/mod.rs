#![allow(dead_code)]

use std::f64::consts::PI;

use gaborsplat::kernel::{sigmoid, GaborPrimitive, PrimitiveKind, SceneConfig};
use gaborsplat::motion::{self, MotionTrack, SplineKind, SplineSampler};
use gaborsplat::raster::Raster;
use gaborsplat::scene::SceneModel;
use gaborsplat::so3::{self, Quat};
use rand::Rng;

pub struct SceneRecipe {
    pub primitives: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub kind: PrimitiveKind,
    pub spline: SplineKind,
    pub motion: bool,
    pub omega_range: (f64, f64),
}

impl Default for SceneRecipe {
    fn default() -> Self {
        SceneRecipe {
            primitives: 20,
            width: 32,
            height: 32,
            frames: 8,
            kind: PrimitiveKind::Adaptive,
            spline: SplineKind::Hermite,
            motion: true,
            omega_range: (-1.5, 1.5),
        }
    }
}

pub fn random_scene(rng: &mut impl Rng, r: &SceneRecipe) -> SceneModel {
    let config = SceneConfig {
        primitive: r.kind,
        spline: r.spline,
        ..SceneConfig::default()
    };
    let mut scene = SceneModel::empty(config, r.width, r.height, r.frames);
    let keys = scene.keyframes.clone();
    for _ in 0..r.primitives {
        let prim = GaborPrimitive {
            mu_base: [
                rng.random_range(0.0..r.width as f64),
                rng.random_range(0.0..r.height as f64),
                rng.random_range(1.0..10.0),
            ],
            log_scale: [
                rng.random_range(0.3f64..1.6),
                rng.random_range(0.3f64..1.6),
                rng.random_range(-0.5f64..1.0),
            ],
            rotation_base: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            opacity_raw: rng.random_range(-2.0..2.0),
            color: [rng.random(), rng.random(), rng.random()],
            omega_raw: (0..2)
                .map(|_| rng.random_range(r.omega_range.0..r.omega_range.1))
                .collect(),
            track: 0,
        };
        let mut track = MotionTrack::zero(&keys);
        if r.motion {
            for k in 0..keys.len() {
                track.y[k] = [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-0.5..0.5),
                ];
                track.r[k] = [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ];
            }
        }
        scene.add_primitive(prim, track);
    }
    scene
}

/// Rotates `v` by `q` through `q v q*`.
fn rotate(q: &Quat, v: [f64; 3]) -> [f64; 3] {
    let p = so3::mul(&so3::mul(q, &[0.0, v[0], v[1], v[2]]), &[q[0], -q[1], -q[2], -q[3]]);
    [p[1], p[2], p[3]]
}

fn interpolate(scene: &SceneModel, values: &[[f64; 3]], t: f64) -> [f64; 3] {
    match scene.config.spline {
        SplineKind::Hermite => motion::hermite_eval(&scene.keyframes, values, scene.config.beta, t).unwrap(),
        kind => SplineSampler::new(kind, scene.config.beta, &scene.keyframes, t)
            .unwrap()
            .eval(values),
    }
}

struct DenseSplat {
    center: [f64; 2],
    depth: f64,
    cov: [[f64; 2]; 2],
    axes: [[f64; 3]; 3],
    scale: [f64; 3],
    opacity: f64,
    omega: Vec<f64>,
    color: [f64; 3],
}

fn dense_splat(scene: &SceneModel, p: &GaborPrimitive, t: f64) -> DenseSplat {
    let track = &scene.tracks[p.track];
    let d = interpolate(scene, &track.y, t);
    let v = interpolate(scene, &track.r, t);
    let q = motion::compose_rotation(&p.rotation_base, &v);
    let s = [p.log_scale[0].exp(), p.log_scale[1].exp(), p.log_scale[2].exp()];
    let mut axes = [[0.0; 3]; 3];
    for (j, a) in axes.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        *a = rotate(&q, e);
    }
    let mut cov = [[0.0; 2]; 2];
    for j in 0..3 {
        for r in 0..2 {
            for k in 0..2 {
                cov[r][k] += s[j] * s[j] * axes[j][r] * axes[j][k];
            }
        }
    }
    DenseSplat {
        center: [p.mu_base[0] + d[0], p.mu_base[1] + d[1]],
        depth: p.mu_base[2] + d[2],
        cov,
        axes,
        scale: s,
        opacity: sigmoid(p.opacity_raw),
        omega: p
            .omega_raw
            .iter()
            .map(|w| ((w + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect(),
        color: p.color,
    }
}

/// Opacity contribution straight from the defining formulas, `None` outside the 3σ support.
fn dense_alpha(s: &DenseSplat, px: [f64; 2], cfg: &SceneConfig) -> Option<f64> {
    let det = s.cov[0][0] * s.cov[1][1] - s.cov[0][1] * s.cov[1][0];
    if !(det > 1e-16) {
        return None;
    }
    let d = [px[0] - s.center[0], px[1] - s.center[1]];
    let m2 = (s.cov[1][1] * d[0] * d[0] - 2.0 * s.cov[0][1] * d[0] * d[1] + s.cov[0][0] * d[1] * d[1]) / det;
    if m2 > 9.0 {
        return None;
    }
    let local = [
        PI * (s.axes[0][0] * d[0] + s.axes[0][1] * d[1]) / s.scale[0],
        PI * (s.axes[1][0] * d[0] + s.axes[1][1] * d[1]) / s.scale[1],
    ];
    let n = s.omega.len() as f64;
    let sum: f64 = s
        .omega
        .iter()
        .enumerate()
        .map(|(i, w)| w * (cfg.freqs[i] * local[i % 2]).cos())
        .sum();
    let mean_w = s.omega.iter().sum::<f64>() / n;
    let m = match cfg.primitive {
        PrimitiveKind::Gaussian => 1.0,
        PrimitiveKind::Gabor0 => sum / n,
        PrimitiveKind::OnePlusS => 1.0 + sum,
        PrimitiveKind::Adaptive => cfg.gamma + (1.0 - cfg.gamma) * (1.0 - mean_w) + sum / n,
    };
    Some((s.opacity * (-0.5 * m2).exp() * m).clamp(0.0, 0.999))
}

pub struct DenseImage {
    pub rgb: Raster,
    pub depth: Raster,
    pub alpha: Raster,
}

/// Naive per-pixel compositor over every primitive.
pub fn dense_render(scene: &SceneModel, t: f64, width: usize, height: usize) -> DenseImage {
    let splats: Vec<DenseSplat> = scene.primitives.iter().map(|p| dense_splat(scene, p, t)).collect();
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.partial_cmp(&splats[b].depth).unwrap().then(a.cmp(&b)));
    let mut out = DenseImage {
        rgb: Raster::zeros(width, height, 3),
        depth: Raster::zeros(width, height, 1),
        alpha: Raster::zeros(width, height, 1),
    };
    for y in 0..height {
        for x in 0..width {
            let px = [x as f64 + 0.5, y as f64 + 0.5];
            let mut trans = 1.0;
            let mut rgb = [0.0; 3];
            let mut dnum = 0.0;
            let mut mass = 0.0;
            for &i in &order {
                let s = &splats[i];
                let Some(a) = dense_alpha(s, px, &scene.config) else {
                    continue;
                };
                if a <= 0.0 {
                    continue;
                }
                for c in 0..3 {
                    rgb[c] += trans * a * s.color[c];
                }
                dnum += trans * a * s.depth;
                mass += trans * a;
                trans *= 1.0 - a;
                if trans < 1e-4 {
                    break;
                }
            }
            let alpha = 1.0 - trans;
            for c in 0..3 {
                out.rgb.set(x, y, c, rgb[c]);
            }
            out.alpha.set(x, y, 0, alpha);
            out.depth.set(x, y, 0, if mass > 0.0 { dnum / mass.max(1e-8) } else { 0.0 });
        }
    }
    out
}

use gaborsplat::kernel::hard_sigmoid_ste;
use gaborsplat::render::{self, Upstream};
use gaborsplat::scene::ParamGroup;

/// Random linear functional of every render output.
pub struct LinearLoss {
    pub up: Upstream,
}

impl LinearLoss {
    pub fn random(rng: &mut impl Rng, width: usize, height: usize) -> Self {
        let mut up = Upstream::zeros(width, height);
        for v in up.rgb.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in up.depth.data.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        for v in up.alpha.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        LinearLoss { up }
    }

    pub fn eval(&self, scene: &SceneModel, t: f64) -> f64 {
        let out = render::render(scene, t, self.up.rgb.width, self.up.rgb.height).unwrap();
        let dot = |a: &Raster, b: &Raster| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
        dot(&out.rgb, &self.up.rgb) + dot(&out.depth, &self.up.depth) + dot(&out.alpha, &self.up.alpha)
    }
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub compared: usize,
    pub passed: usize,
    pub excluded: usize,
    /// Compared scalars whose derivative is not negligibly small.
    pub nonzero: usize,
    pub failures: Vec<String>,
}

impl GradCheck {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.compared.max(1) as f64
    }
}

/// Compares backward against central differences on `samples` random scalars.
///
/// A scalar is excluded when the step-`h` and step-`h/2` estimates disagree,
/// which flags a kink (support cutoff, clamp, gate flip or sort swap) inside
/// the stencil. Wave weights are compared on the true derivative of the hard
/// clip, recovered from the surrogate by the ratio of the two slopes.
pub fn gradient_check(
    rng: &mut impl Rng,
    scene: &SceneModel,
    t: f64,
    samples: usize,
    tol: f64,
    report: &mut GradCheck,
) {
    let (w, h) = (scene.width, scene.height);
    let loss = LinearLoss::random(rng, w, h);
    let (_, ctx) = render::render_with_context(scene, t, w, h).unwrap();
    let analytic = render::backward(scene, &ctx, &loss.up).unwrap().flatten();
    let flat = scene.flatten();
    let groups = scene.param_groups();
    let step = 1e-5;
    let mut probe = scene.clone();
    let mut central = |i: usize, h: f64| {
        let mut x = flat.clone();
        x[i] = flat[i] + h;
        probe.unflatten(&x).unwrap();
        let lp = loss.eval(&probe, t);
        x[i] = flat[i] - h;
        probe.unflatten(&x).unwrap();
        let lm = loss.eval(&probe, t);
        (lp - lm) / (2.0 * h)
    };
    for _ in 0..samples {
        let i = rng.random_range(0..flat.len());
        let f1 = central(i, step);
        let f2 = central(i, step / 2.0);
        if (f1 - f2).abs() > 1e-4 * f1.abs().max(f2.abs()) + 1e-8 {
            report.excluded += 1;
            continue;
        }
        let fd = (4.0 * f2 - f1) / 3.0;
        let mut a = analytic[i];
        if groups[i] == ParamGroup::Omega {
            let raw = flat[i];
            let true_slope = if raw > -1.0 && raw < 1.0 { 0.5 } else { 0.0 };
            a = a / hard_sigmoid_ste(raw).backward_scale * true_slope;
        }
        report.compared += 1;
        if a.abs().max(fd.abs()) > 1e-6 {
            report.nonzero += 1;
        }
        let err = (a - fd).abs();
        if err <= tol * a.abs().max(fd.abs()) || err < 1e-7 {
            report.passed += 1;
        } else {
            report.failures.push(format!("{} #{i}: analytic {a:e} fd {fd:e}", groups[i]));
        }
    }
}
