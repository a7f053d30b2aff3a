//! Tile-based orthographic splatting: forward compositing and its adjoint.
//!
//! Primitives are projected at time `t`, sorted once per frame by depth and
//! binned into 16×16 tiles by a conservative 3σ box. Each pixel composites
//! front to back and stops once transmittance drops below [`T_MIN`]. The
//! backward pass replays the same per-pixel sequence and sweeps it in reverse.
//! Tiles run in parallel; per-tile gradients are merged in tile order, so
//! results are bitwise reproducible regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{hard_sigmoid_ste, project_backward, Splat, SplatGrad, Waves, MAX_WAVES};
use crate::motion::SplineSampler;
use crate::raster::Raster;
use crate::scene::{GradBuffer, SceneModel};
use crate::so3::{self, Quat};

pub const TILE_SIZE: usize = 16;

/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;

/// Guard for alpha-normalized depth.
pub const DEPTH_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub rgb: Raster,
    /// Alpha-normalized expected depth, 0 where nothing was composited.
    pub depth: Raster,
    pub alpha: Raster,
}

impl RenderTarget {
    fn empty(width: usize, height: usize) -> Self {
        RenderTarget {
            width,
            height,
            rgb: Raster::zeros(width, height, 3),
            depth: Raster::zeros(width, height, 1),
            alpha: Raster::zeros(width, height, 1),
        }
    }
}

/// Gradients of a scalar loss with respect to every render output.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub rgb: Raster,
    pub depth: Raster,
    pub alpha: Raster,
}

impl Upstream {
    pub fn zeros(width: usize, height: usize) -> Self {
        Upstream {
            rgb: Raster::zeros(width, height, 3),
            depth: Raster::zeros(width, height, 1),
            alpha: Raster::zeros(width, height, 1),
        }
    }
}

/// Per-primitive state at one instant, kept for the backward pass.
#[derive(Debug, Clone)]
struct Instant {
    rot_base: Quat,
    rot_delta: [f64; 3],
    rot_pre: Quat,
    rotation: Quat,
    scale: [f64; 3],
}

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct ForwardContext {
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub splats: Vec<Splat>,
    pub order: Vec<usize>,
    tiles: Vec<Vec<u32>>,
    instants: Vec<Instant>,
    sampler: SplineSampler,
}

/// Projects every primitive of the scene at time `t`.
pub fn project(scene: &SceneModel, t: f64) -> Result<Vec<Splat>> {
    Ok(project_all(scene, t)?.0)
}

fn project_all(scene: &SceneModel, t: f64) -> Result<(Vec<Splat>, Vec<Instant>, SplineSampler)> {
    let cfg = &scene.config;
    let sampler = SplineSampler::new(cfg.spline, cfg.beta, &scene.keyframes, t)?;
    let (splats, instants) = scene
        .primitives
        .par_iter()
        .map(|p| {
            let track = &scene.tracks[p.track];
            let delta = sampler.eval(&track.y);
            let rot_delta = sampler.eval(&track.r);
            let position = [
                p.mu_base[0] + delta[0],
                p.mu_base[1] + delta[1],
                p.mu_base[2] + delta[2],
            ];
            let (rot_base, _) = so3::normalize(&p.rotation_base);
            let rot_pre = so3::mul(&rot_base, &so3::exp(&rot_delta));
            let (rotation, _) = so3::normalize(&rot_pre);
            let scale = p.scale();
            let waves = if cfg.primitive.uses_waves() {
                p.omegas()
            } else {
                Waves::from_slice(&[])
            };
            let splat = Splat::project(position, &rotation, scale, p.opacity(), waves, p.color);
            (
                splat,
                Instant {
                    rot_base,
                    rot_delta,
                    rot_pre,
                    rotation,
                    scale,
                },
            )
        })
        .unzip();
    Ok((splats, instants, sampler))
}

/// Front-to-back order: ascending depth, ties by primitive index.
pub fn sort_primitives(splats: &[Splat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    order
}

fn tile_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE_SIZE), height.div_ceil(TILE_SIZE))
}

/// Pixel index range whose centers may fall inside `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

fn bin_tiles(splats: &[Splat], order: &[usize], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = tile_grid(width, height);
    let mut tiles = vec![Vec::new(); tx * ty];
    for &i in order {
        let s = &splats[i];
        if !s.valid || !s.radius.is_finite() {
            continue;
        }
        let xs = pixel_span(s.center[0] - s.radius, s.center[0] + s.radius, width);
        let ys = pixel_span(s.center[1] - s.radius, s.center[1] + s.radius, height);
        let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) else {
            continue;
        };
        for tyi in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for txi in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[tyi * tx + txi].push(i as u32);
            }
        }
    }
    tiles
}

#[inline]
fn pixel_center(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

fn tile_pixels(tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, _) = tile_grid(width, height);
    let (bx, by) = ((tile % tx) * TILE_SIZE, (tile / tx) * TILE_SIZE);
    let (ex, ey) = ((bx + TILE_SIZE).min(width), (by + TILE_SIZE).min(height));
    (by..ey).flat_map(move |y| (bx..ex).map(move |x| (x, y)))
}

struct PixelOut {
    rgb: [f64; 3],
    depth: f64,
    alpha: f64,
    trans: f64,
}

/// Composites one pixel; `visit` sees each contributing `(list position, α, T before)`.
fn composite<F: FnMut(usize, f64, f64)>(
    scene: &SceneModel,
    splats: &[Splat],
    list: &[u32],
    pixel: [f64; 2],
    mut visit: F,
) -> PixelOut {
    let cfg = &scene.config;
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut dnum = 0.0;
    let mut mass = 0.0;
    for (pos, &i) in list.iter().enumerate() {
        let s = &splats[i as usize];
        if !s.covers(pixel) {
            continue;
        }
        let a = s.alpha(pixel, cfg.primitive, cfg);
        if a <= 0.0 {
            continue;
        }
        visit(pos, a, trans);
        let w = trans * a;
        for c in 0..3 {
            rgb[c] += w * s.color[c];
        }
        dnum += w * s.depth;
        mass += w;
        trans *= 1.0 - a;
        if trans < T_MIN {
            break;
        }
    }
    // Σ T_k α_k equals 1 - Π(1 - α_k) but keeps its digits when coverage is faint
    let alpha = mass.min(1.0);
    let depth = if alpha > 0.0 { dnum / alpha.max(DEPTH_EPS) } else { 0.0 };
    PixelOut {
        rgb,
        depth,
        alpha,
        trans,
    }
}

/// Renders the scene at time `t`.
pub fn render(scene: &SceneModel, t: f64, width: usize, height: usize) -> Result<RenderTarget> {
    Ok(render_with_context(scene, t, width, height)?.0)
}

/// Renders and keeps the state needed by [`backward`].
pub fn render_with_context(
    scene: &SceneModel,
    t: f64,
    width: usize,
    height: usize,
) -> Result<(RenderTarget, ForwardContext)> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("render target must be at least 1x1"));
    }
    let (splats, instants, sampler) = project_all(scene, t)?;
    let order = sort_primitives(&splats);
    let tiles = bin_tiles(&splats, &order, width, height);

    let tile_out: Vec<Vec<(usize, usize, PixelOut)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            tile_pixels(ti, width, height)
                .map(|(x, y)| (x, y, composite(scene, &splats, list, pixel_center(x, y), |_, _, _| {})))
                .collect()
        })
        .collect();

    let mut target = RenderTarget::empty(width, height);
    for (x, y, px) in tile_out.into_iter().flatten() {
        for c in 0..3 {
            target.rgb.set(x, y, c, px.rgb[c]);
        }
        target.depth.set(x, y, 0, px.depth);
        target.alpha.set(x, y, 0, px.alpha);
    }
    let ctx = ForwardContext {
        t,
        width,
        height,
        splats,
        order,
        tiles,
        instants,
        sampler,
    };
    Ok((target, ctx))
}

/// Splat-level gradients for one tile, indexed by position in the tile list.
fn tile_backward(scene: &SceneModel, ctx: &ForwardContext, tile: usize, up: &Upstream) -> Vec<SplatGrad> {
    let cfg = &scene.config;
    let list = &ctx.tiles[tile];
    let mut grads = vec![SplatGrad::default(); list.len()];
    let mut contrib: Vec<(usize, f64, f64)> = Vec::new();
    for (x, y) in tile_pixels(tile, ctx.width, ctx.height) {
        let g_rgb = [up.rgb.get(x, y, 0), up.rgb.get(x, y, 1), up.rgb.get(x, y, 2)];
        let g_depth = up.depth.get(x, y, 0);
        let g_alpha = up.alpha.get(x, y, 0);
        if g_rgb == [0.0; 3] && g_depth == 0.0 && g_alpha == 0.0 {
            continue;
        }
        let pixel = pixel_center(x, y);
        contrib.clear();
        let out = composite(scene, &ctx.splats, list, pixel, |pos, a, tr| contrib.push((pos, a, tr)));
        if contrib.is_empty() {
            continue;
        }
        let t_final = out.trans;
        let a_total = out.alpha;
        let dnum = out.depth * a_total.max(DEPTH_EPS);
        let g_dnum = g_depth / a_total.max(DEPTH_EPS);
        let g_atotal = if a_total > DEPTH_EPS {
            g_alpha - g_depth * dnum / (a_total * a_total)
        } else {
            g_alpha
        };

        let mut suffix_rgb = [0.0; 3];
        let mut suffix_d = 0.0;
        for &(pos, a, tr) in contrib.iter().rev() {
            let s = &ctx.splats[list[pos] as usize];
            let inv = 1.0 / (1.0 - a);
            let mut ga = 0.0;
            for c in 0..3 {
                ga += g_rgb[c] * (tr * s.color[c] - suffix_rgb[c] * inv);
            }
            ga += g_dnum * (tr * s.depth - suffix_d * inv);
            ga += g_atotal * t_final * inv;

            let w = tr * a;
            let g = &mut grads[pos];
            for c in 0..3 {
                g.color[c] += w * g_rgb[c];
                suffix_rgb[c] += w * s.color[c];
            }
            g.depth += w * g_dnum;
            suffix_d += w * s.depth;
            s.alpha_backward(pixel, cfg.primitive, cfg, ga, g);
        }
    }
    grads
}

/// Gradients of a scalar loss with respect to every scene parameter, given its
/// gradients with respect to the outputs of the matching forward render.
pub fn backward(scene: &SceneModel, ctx: &ForwardContext, upstream: &Upstream) -> Result<GradBuffer> {
    if ctx.splats.len() != scene.primitives.len() {
        return Err(Error::invalid(
            "forward context was produced for a different scene",
        ));
    }
    for (r, ch, what) in [
        (&upstream.rgb, 3, "rgb"),
        (&upstream.depth, 1, "depth"),
        (&upstream.alpha, 1, "alpha"),
    ] {
        if r.width != ctx.width || r.height != ctx.height || r.channels != ch {
            return Err(Error::ShapeMismatch(format!(
                "upstream {what} gradient is {}x{}x{}, forward pass was {}x{}x{ch}",
                r.width, r.height, r.channels, ctx.width, ctx.height
            )));
        }
    }
    let per_tile: Vec<Vec<SplatGrad>> = (0..ctx.tiles.len())
        .into_par_iter()
        .map(|ti| tile_backward(scene, ctx, ti, upstream))
        .collect();
    let mut splat_grads = vec![SplatGrad::default(); ctx.splats.len()];
    for (list, grads) in ctx.tiles.iter().zip(&per_tile) {
        for (&i, g) in list.iter().zip(grads) {
            splat_grads[i as usize].add(g);
        }
    }
    let mut out = GradBuffer::zeros_like(scene);
    accumulate_splat_grads(scene, ctx, &splat_grads, &mut out);
    Ok(out)
}

/// Chains splat-level gradients back to raw primitive and track parameters.
pub fn accumulate_splat_grads(
    scene: &SceneModel,
    ctx: &ForwardContext,
    splat_grads: &[SplatGrad],
    out: &mut GradBuffer,
) {
    let cfg = &scene.config;
    let m = scene.keyframes.len();
    let mut w = vec![0.0; m];
    for (i, sg) in splat_grads.iter().enumerate() {
        if sg.is_zero() {
            continue;
        }
        let p = &scene.primitives[i];
        let splat = &ctx.splats[i];
        let inst = &ctx.instants[i];
        let st = project_backward(splat, &inst.rotation, inst.scale, sg);
        let g = &mut out.primitives[i];
        for c in 0..3 {
            g.mu_base[c] += st.position[c];
            g.log_scale[c] += st.log_scale[c];
            g.color[c] += st.color[c];
        }
        let a = splat.opacity;
        g.opacity_raw += st.opacity * a * (1.0 - a);
        if cfg.primitive.uses_waves() {
            for (k, raw) in p.omega_raw.iter().enumerate().take(MAX_WAVES) {
                g.omega_raw[k] += st.waves[k] * hard_sigmoid_ste(*raw).backward_scale;
            }
        }
        // rotation: q = normalize(normalize(q_base) ⊗ exp(v))
        let g_pre = so3::normalize_backward(&inst.rot_pre, &st.rotation);
        let e = so3::exp(&inst.rot_delta);
        let (g_base_unit, g_e) = so3::mul_backward(&inst.rot_base, &e, &g_pre);
        let g_base = so3::normalize_backward(&p.rotation_base, &g_base_unit);
        for c in 0..4 {
            g.rotation[c] += g_base[c];
        }
        let g_v = so3::exp_backward(&inst.rot_delta, &g_e);

        let track = &scene.tracks[p.track];
        let tg = &mut out.tracks[p.track];
        for c in 0..3 {
            ctx.sampler.weights(&track.y, c, &mut w);
            for (j, wj) in w.iter().enumerate() {
                tg.y[j][c] += wj * st.position[c];
            }
            ctx.sampler.weights(&track.r, c, &mut w);
            for (j, wj) in w.iter().enumerate() {
                tg.r[j][c] += wj * g_v[c];
            }
        }
    }
}

/// Adds the gradient of a loss on primitive `i`'s projected 2D center.
pub fn accumulate_center_grad(
    scene: &SceneModel,
    ctx: &ForwardContext,
    i: usize,
    g_center: [f64; 2],
    out: &mut GradBuffer,
) {
    let p = &scene.primitives[i];
    let track = &scene.tracks[p.track];
    let mut w = vec![0.0; scene.keyframes.len()];
    for c in 0..2 {
        out.primitives[i].mu_base[c] += g_center[c];
        ctx.sampler.weights(&track.y, c, &mut w);
        for (j, wj) in w.iter().enumerate() {
            out.tracks[p.track].y[j][c] += wj * g_center[c];
        }
    }
}
