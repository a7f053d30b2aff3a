//! Adaptive initialization: scores candidate points from depth, tracks and
//! masks, draws a spatially balanced subset and turns it into primitives.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{logit, GaborPrimitive, PrimitiveKind, SceneConfig};
use crate::losses::FrameBundle;
use crate::motion::{MotionTrack, SplineSampler, Vec3};
use crate::raster::Raster;
use crate::scene::{frame_time, SceneModel, TrackBinding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub lambda_tau: f64,
    pub lambda_g: f64,
    pub lambda_b: f64,
    pub epsilon: f64,
    /// Cells per image side.
    pub grid: usize,
    /// Apply the per-cell occupancy penalty while drawing.
    pub grid_modulation: bool,
    /// Seed each primitive's motion from the nearest observed track; when
    /// false every track starts at zero displacement.
    pub dynamic_motion: bool,
    pub initial_opacity: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            lambda_tau: 0.5,
            lambda_g: 1.0,
            lambda_b: 2.0,
            epsilon: 1e-6,
            grid: 16,
            grid_modulation: true,
            dynamic_motion: true,
            initial_opacity: 0.5,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_tau) {
            return Err(Error::invalid("lambda_tau must lie in [0, 1]"));
        }
        if !(self.lambda_g > 0.0) || !(self.lambda_b >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("lambda_g and epsilon must be positive, lambda_b nonnegative"));
        }
        if self.grid == 0 {
            return Err(Error::invalid("grid must have at least one cell per side"));
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            return Err(Error::invalid("initial opacity must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePoint {
    pub pixel: [f64; 2],
    pub frame: usize,
    pub depth: f64,
    /// Frames in which the underlying track is visible; 1 for plain pixels.
    pub tau: f64,
    /// Candidates per unit area around the point.
    pub rho: f64,
    pub grid_cell: (usize, usize),
    pub boundary_strength: f64,
    pub track: Option<u64>,
    pub foreground: bool,
}

/// `1/(τ+ε) + λ_τ/(ρ+ε)`.
pub fn base_probability(p: &CandidatePoint, lambda_tau: f64, epsilon: f64) -> f64 {
    1.0 / (p.tau + epsilon) + lambda_tau / (p.rho + epsilon)
}

/// `Π / (1 + λ_g C)`.
pub fn grid_modulate(weight: f64, cell_count: usize, lambda_g: f64) -> f64 {
    weight / (1.0 + lambda_g * cell_count as f64)
}

/// `Π' (1 + λ_b ‖∇M‖)`.
pub fn boundary_compensate(weight: f64, boundary_strength: f64, lambda_b: f64) -> f64 {
    weight * (1.0 + lambda_b * boundary_strength)
}

/// Nearest pixel to a continuous image position.
fn pixel_of(p: [f64; 2], width: usize, height: usize) -> (usize, usize) {
    let x = (p[0].floor().max(0.0) as usize).min(width - 1);
    let y = (p[1].floor().max(0.0) as usize).min(height - 1);
    (x, y)
}

/// Central-difference gradient magnitude of a single-channel mask, edges replicated.
pub fn boundary_strength(mask: &Raster, x: usize, y: usize) -> f64 {
    let at = |x: usize, y: usize| mask.get(x, y, 0);
    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(mask.width - 1));
    let (yu, yd) = (y.saturating_sub(1), (y + 1).min(mask.height - 1));
    let gx = 0.5 * (at(xr, y) - at(xl, y));
    let gy = 0.5 * (at(x, yd) - at(x, yu));
    (gx * gx + gy * gy).sqrt()
}

/// Grid cell `(u, v)` of an image point on a `grid × grid` partition.
pub fn grid_cell(p: [f64; 2], width: usize, height: usize, grid: usize) -> (usize, usize) {
    let u = ((p[0] / width as f64 * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    let v = ((p[1] / height as f64 * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    (u, v)
}

fn check_bundles(bundles: &[FrameBundle]) -> Result<(usize, usize)> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("initialization needs at least one frame"))?;
    let (w, h) = (first.width(), first.height());
    for b in bundles {
        if b.rgb.channels != 3
            || (b.width(), b.height()) != (w, h)
            || (b.depth.width, b.depth.height, b.depth.channels) != (w, h, 1)
            || (b.mask.width, b.mask.height, b.mask.channels) != (w, h, 1)
        {
            return Err(Error::ShapeMismatch(format!(
                "frame {} does not match the {w}x{h} layout of frame {}",
                b.frame, first.frame
            )));
        }
    }
    Ok((w, h))
}

/// Enumerates and scores every candidate: one per track at its first visible
/// frame, and every pixel of every frame.
pub fn collect_candidates(bundles: &[FrameBundle], cfg: &InitConfig) -> Result<Vec<CandidatePoint>> {
    let (w, h) = check_bundles(bundles)?;
    let mut visible: HashMap<u64, (usize, [f64; 2], usize)> = HashMap::new();
    for (fi, b) in bundles.iter().enumerate() {
        for tp in b.tracks.iter().filter(|t| t.visibility > 0.0) {
            let e = visible.entry(tp.point_id).or_insert((fi, [tp.x, tp.y], 0));
            e.2 += 1;
        }
    }
    let mut ids: Vec<u64> = visible.keys().copied().collect();
    ids.sort_unstable();

    let make = |fi: usize, pixel: [f64; 2], tau: f64, track: Option<u64>| {
        let b = &bundles[fi];
        let (x, y) = pixel_of(pixel, w, h);
        CandidatePoint {
            pixel,
            frame: fi,
            depth: b.depth.get(x, y, 0),
            tau,
            rho: 0.0,
            grid_cell: grid_cell(pixel, w, h, cfg.grid),
            boundary_strength: boundary_strength(&b.mask, x, y),
            track,
            foreground: b.mask.get(x, y, 0) > 0.5,
        }
    };
    let mut cands: Vec<CandidatePoint> = ids
        .iter()
        .map(|id| {
            let (fi, p, n) = visible[id];
            make(fi, p, n as f64, Some(*id))
        })
        .collect();
    let pixels: Vec<CandidatePoint> = (0..bundles.len())
        .into_par_iter()
        .flat_map_iter(|fi| {
            (0..h).flat_map(move |y| (0..w).map(move |x| (fi, x, y)))
        })
        .map(|(fi, x, y)| make(fi, [x as f64 + 0.5, y as f64 + 0.5], 1.0, None))
        .collect();
    cands.extend(pixels);
    estimate_density(&mut cands, w, h);
    Ok(cands)
}

/// Sets `rho` to the number of same-frame candidates within a radius of one
/// sixty-fourth of the image diagonal, per unit area.
pub fn estimate_density(cands: &mut [CandidatePoint], width: usize, height: usize) {
    let r = ((width * width + height * height) as f64).sqrt() / 64.0;
    let area = std::f64::consts::PI * r * r;
    let key = |p: &CandidatePoint| {
        (
            p.frame,
            (p.pixel[0] / r).floor() as i64,
            (p.pixel[1] / r).floor() as i64,
        )
    };
    let mut hash: HashMap<(usize, i64, i64), Vec<[f64; 2]>> = HashMap::new();
    for p in cands.iter() {
        hash.entry(key(p)).or_default().push(p.pixel);
    }
    cands.par_iter_mut().for_each(|p| {
        let (f, cx, cy) = key(p);
        let mut n = 0usize;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = hash.get(&(f, cx + dx, cy + dy)) {
                    n += list
                        .iter()
                        .filter(|q| {
                            let (a, b) = (q[0] - p.pixel[0], q[1] - p.pixel[1]);
                            a * a + b * b <= r * r
                        })
                        .count();
                }
            }
        }
        p.rho = n as f64 / area;
    });
}

/// Sequential weighted sampling without replacement.
///
/// Each draw first picks a grid cell with probability proportional to its
/// remaining boundary-compensated mass divided by `1 + λ_g C`, where `C`
/// counts the cell's earlier draws, then a candidate within the cell in
/// proportion to its own weight. This is exactly a draw proportional to the
/// per-candidate weight `Π''`.
pub fn sample_candidates(
    cands: &[CandidatePoint],
    count: usize,
    cfg: &InitConfig,
    rng: &mut impl Rng,
) -> Vec<usize> {
    if count >= cands.len() {
        return (0..cands.len()).collect();
    }
    let g = cfg.grid;
    let weights: Vec<f64> = cands
        .iter()
        .map(|p| {
            boundary_compensate(
                base_probability(p, cfg.lambda_tau, cfg.epsilon),
                p.boundary_strength,
                cfg.lambda_b,
            )
        })
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g * g];
    for (i, p) in cands.iter().enumerate() {
        members[p.grid_cell.1 * g + p.grid_cell.0].push(i);
    }
    let mut mass: Vec<f64> = members
        .iter()
        .map(|m| m.iter().map(|&i| weights[i]).sum())
        .collect();
    let mut drawn = vec![0usize; g * g];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let cell_w: Vec<f64> = (0..g * g)
            .map(|c| {
                if members[c].is_empty() {
                    0.0
                } else if cfg.grid_modulation {
                    grid_modulate(mass[c], drawn[c], cfg.lambda_g)
                } else {
                    mass[c]
                }
            })
            .collect();
        let c = weighted_index(&cell_w, rng);
        let local: Vec<f64> = members[c].iter().map(|&i| weights[i]).collect();
        let k = weighted_index(&local, rng);
        let i = members[c].swap_remove(k);
        mass[c] = members[c].iter().map(|&j| weights[j]).sum();
        drawn[c] += 1;
        out.push(i);
    }
    out
}

fn weighted_index(w: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, v) in w.iter().enumerate() {
        if *v <= 0.0 {
            continue;
        }
        last = i;
        if u < *v {
            return i;
        }
        u -= v;
    }
    last
}

/// Observed image-plane and depth position of a track over all frames, with
/// gaps filled by linear interpolation and the ends held.
fn track_positions(bundles: &[FrameBundle], id: u64) -> Vec<Option<Vec3>> {
    bundles
        .iter()
        .map(|b| {
            b.tracks
                .iter()
                .find(|t| t.point_id == id && t.visibility > 0.0)
                .map(|t| {
                    let (x, y) = pixel_of([t.x, t.y], b.width(), b.height());
                    [t.x, t.y, b.depth.get(x, y, 0)]
                })
        })
        .collect()
}

/// Keyframe displacements of an observed track relative to its position at frame 0.
fn keyframe_offsets(obs: &[Option<Vec3>], keyframes: &[f64]) -> Option<Vec<Vec3>> {
    let f = obs.len();
    let known: Vec<(f64, Vec3)> = obs
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|p| (frame_time(i, f), p)))
        .collect();
    if known.is_empty() {
        return None;
    }
    let at = |t: f64| -> Vec3 {
        let j = known.partition_point(|(tk, _)| *tk <= t);
        if j == 0 {
            return known[0].1;
        }
        if j == known.len() {
            return known[j - 1].1;
        }
        let (t0, p0) = known[j - 1];
        let (t1, p1) = known[j];
        let s = (t - t0) / (t1 - t0);
        [0, 1, 2].map(|c| p0[c] + s * (p1[c] - p0[c]))
    };
    let origin = at(0.0);
    Some(
        keyframes
            .iter()
            .map(|t| {
                let p = at(*t);
                [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]
            })
            .collect(),
    )
}

/// Median distance from each point to its nearest distinct neighbour.
fn median_nn_distance(points: &[[f64; 2]], cell: f64) -> Option<f64> {
    let key = |p: &[f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut hash: HashMap<(i64, i64), Vec<[f64; 2]>> = HashMap::new();
    for p in points {
        hash.entry(key(p)).or_default().push(*p);
    }
    let mut d: Vec<f64> = points
        .par_iter()
        .filter_map(|p| {
            let (cx, cy) = key(p);
            let mut best = f64::INFINITY;
            for ring in 1..=8i64 {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if let Some(list) = hash.get(&(cx + dx, cy + dy)) {
                            for q in list {
                                let dd = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                                if dd > 0.0 && dd < best {
                                    best = dd;
                                }
                            }
                        }
                    }
                }
                if best <= ring as f64 * cell {
                    break;
                }
            }
            best.is_finite().then_some(best)
        })
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// Builds the initial scene from the supervision frames.
///
/// Sampled points become isotropic primitives at `(x, y, depth prior)` with
/// the observed color; those seeded on a track are bound to it.
pub fn build_initial_scene(
    bundles: &[FrameBundle],
    target_count: usize,
    scene_cfg: &SceneConfig,
    cfg: &InitConfig,
) -> Result<SceneModel> {
    cfg.validate()?;
    scene_cfg.validate()?;
    if target_count == 0 {
        return Err(Error::invalid("target primitive count must be at least 1"));
    }
    let (w, h) = check_bundles(bundles)?;
    let cands = collect_candidates(bundles, cfg)?;
    if cands.is_empty() {
        return Err(Error::invalid("no initialization candidates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picked = sample_candidates(&cands, target_count, cfg, &mut rng);

    let f = bundles.len();
    let mut scene = SceneModel::empty(scene_cfg.clone(), w, h, f);
    let keys = scene.keyframes.clone();

    // displacement curves of every observed track
    let mut track_ids: Vec<u64> = bundles
        .iter()
        .flat_map(|b| b.tracks.iter().map(|t| t.point_id))
        .collect();
    track_ids.sort_unstable();
    track_ids.dedup();
    let curves: HashMap<u64, (Vec<Option<Vec3>>, Vec<Vec3>)> = if cfg.dynamic_motion {
        track_ids
            .par_iter()
            .filter_map(|id| {
                let obs = track_positions(bundles, *id);
                keyframe_offsets(&obs, &keys).map(|y| (*id, (obs, y)))
            })
            .collect()
    } else {
        HashMap::new()
    };

    let points: Vec<[f64; 2]> = picked.iter().map(|&i| cands[i].pixel).collect();
    let spacing = median_nn_distance(&points, 2.0).unwrap_or(1.0);
    let s0 = (0.5 * spacing).max(0.25);
    let omega0 = match scene_cfg.primitive {
        PrimitiveKind::Gabor0 => 1.0,
        _ => -1.0,
    };
    let n = scene_cfg.wave_count();
    let opacity_raw = logit(cfg.initial_opacity);

    for &ci in &picked {
        let c = &cands[ci];
        let b = &bundles[c.frame];
        let (px, py) = pixel_of(c.pixel, w, h);
        let color = [b.rgb.get(px, py, 0), b.rgb.get(px, py, 1), b.rgb.get(px, py, 2)];
        let mut track = MotionTrack::zero(&keys);
        let source = c.track.or_else(|| nearest_track(b, c, &curves));
        if let Some(y) = source.and_then(|id| curves.get(&id)).map(|(_, y)| y) {
            track.y = y.clone();
        }
        let t_f = frame_time(c.frame, f);
        let sampler = SplineSampler::new(scene_cfg.spline, scene_cfg.beta, &keys, t_f)?;
        let d = sampler.eval(&track.y);
        let prim = GaborPrimitive {
            mu_base: [c.pixel[0] - d[0], c.pixel[1] - d[1], c.depth - d[2]],
            log_scale: [s0.ln(); 3],
            rotation_base: [1.0, 0.0, 0.0, 0.0],
            opacity_raw,
            color,
            omega_raw: vec![omega0; n],
            track: 0,
        };
        let idx = scene.add_primitive(prim, track);
        if let Some(id) = c.track {
            scene.bindings.push(TrackBinding {
                point_id: id,
                primitive: idx,
            });
        }
    }
    scene.validate()?;
    Ok(scene)
}

/// Nearest track visible in the candidate's frame that shares its mask label.
fn nearest_track(
    b: &FrameBundle,
    c: &CandidatePoint,
    curves: &HashMap<u64, (Vec<Option<Vec3>>, Vec<Vec3>)>,
) -> Option<u64> {
    let mut best: Option<(f64, u64)> = None;
    for tp in b.tracks.iter().filter(|t| t.visibility > 0.0) {
        if !curves.contains_key(&tp.point_id) {
            continue;
        }
        let (x, y) = pixel_of([tp.x, tp.y], b.width(), b.height());
        if (b.mask.get(x, y, 0) > 0.5) != c.foreground {
            continue;
        }
        let d = (tp.x - c.pixel[0]).powi(2) + (tp.y - c.pixel[1]).powi(2);
        if best.is_none_or(|(bd, bid)| d < bd || (d == bd && tp.point_id < bid)) {
            best = Some((d, tp.point_id));
        }
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::TrackPoint;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn cand(tau: f64, rho: f64) -> CandidatePoint {
        CandidatePoint {
            pixel: [0.5, 0.5],
            frame: 0,
            depth: 1.0,
            tau,
            rho,
            grid_cell: (0, 0),
            boundary_strength: 0.0,
            track: None,
            foreground: false,
        }
    }

    fn bundle(w: usize, h: usize, mask: impl Fn(usize, usize) -> bool) -> FrameBundle {
        let mut m = Raster::zeros(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, 0, if mask(x, y) { 1.0 } else { 0.0 });
            }
        }
        FrameBundle {
            frame: 0,
            rgb: Raster::filled(w, h, 3, 0.5),
            depth: Raster::filled(w, h, 1, 3.0),
            mask: m,
            tracks: Vec::new(),
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(base_probability(&cand(1.0, 1.0), 1.0, 0.0), 2.0);
        assert!(base_probability(&cand(1e12, 1.0), 0.0, 1e-6) < 1e-11);
        let a = base_probability(&cand(2.0, 3.0), 0.5, 1e-6);
        let b = base_probability(&cand(2.0, 6.0), 0.5, 1e-6);
        assert!(b < a);
        assert_eq!(grid_modulate(0.7, 0, 1.0), 0.7);
        assert!((grid_modulate(0.7, 9, 1.0) - 0.07).abs() < 1e-15);
        assert_eq!(boundary_compensate(0.4, 0.0, 2.0), 0.4);
        assert!((boundary_compensate(0.4, 1.0, 2.0) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn repeated_draws_from_a_cell_lower_its_weight() {
        let cfg = InitConfig::default();
        let cands: Vec<CandidatePoint> = (0..20).map(|_| cand(1.0, 1.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picked = sample_candidates(&cands, 10, &cfg, &mut rng);
        assert_eq!(picked.len(), 10);
        let mut last = f64::INFINITY;
        for c in 0..picked.len() {
            let w = grid_modulate(base_probability(&cands[0], cfg.lambda_tau, cfg.epsilon), c, cfg.lambda_g);
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn mask_edges_outweigh_interior() {
        let b = bundle(32, 32, |x, y| {
            let (dx, dy) = (x as f64 - 15.5, y as f64 - 15.5);
            dx * dx + dy * dy < 100.0
        });
        let cfg = InitConfig::default();
        let cands = collect_candidates(&[b], &cfg).unwrap();
        let w = |c: &CandidatePoint| boundary_compensate(base_probability(c, cfg.lambda_tau, cfg.epsilon), c.boundary_strength, cfg.lambda_b);
        let at = |x: f64, y: f64| cands.iter().find(|c| c.pixel == [x + 0.5, y + 0.5]).unwrap();
        let edge = at(25.0, 15.0);
        let inside = at(16.0, 16.0);
        assert!(edge.boundary_strength > 0.0);
        assert_eq!(inside.boundary_strength, 0.0);
        assert_eq!(edge.rho, inside.rho);
        assert!(w(edge) > w(inside));
    }

    #[test]
    fn uniform_frame_fills_grid_uniformly() {
        let b = bundle(128, 128, |_, _| false);
        let cfg = InitConfig { seed: 17, ..InitConfig::default() };
        let cands = collect_candidates(&[b], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let picked = sample_candidates(&cands, 4096, &cfg, &mut rng);
        let mut counts = vec![0.0; 256];
        for i in picked {
            let (u, v) = cands[i].grid_cell;
            counts[v * 16 + u] += 1.0;
        }
        let e = 4096.0 / 256.0;
        let chi2: f64 = counts.iter().map(|o| (o - e) * (o - e) / e).sum();
        let crit = ChiSquared::new(255.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "{chi2} >= {crit}");
    }

    #[test]
    fn strong_boundary_weight_oversamples_edge_cells() {
        let b = bundle(64, 64, |x, _| x >= 32);
        let edge_share = |lambda_b: f64| {
            let cfg = InitConfig { lambda_b, ..InitConfig::default() };
            let cands = collect_candidates(std::slice::from_ref(&b), &cfg).unwrap();
            let mut hits = 0usize;
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                hits += sample_candidates(&cands, 600, &cfg, &mut rng)
                    .into_iter()
                    .filter(|&i| (7..=8).contains(&cands[i].grid_cell.0))
                    .count();
            }
            hits
        };
        assert!(edge_share(50.0) > edge_share(0.0));
    }

    #[test]
    fn grid_modulation_improves_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cands = Vec::new();
        for i in 0..3300 {
            let p = if i < 3000 {
                [rng.random_range(0.0..16.0), rng.random_range(0.0..16.0)]
            } else {
                [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]
            };
            cands.push(CandidatePoint {
                pixel: p,
                grid_cell: grid_cell(p, 64, 64, 16),
                ..cand(1.0, 0.0)
            });
        }
        estimate_density(&mut cands, 64, 64);
        let occupied = |modulate: bool, seed: u64| {
            let cfg = InitConfig { grid_modulation: modulate, ..InitConfig::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = std::collections::HashSet::new();
            for i in sample_candidates(&cands, 200, &cfg, &mut rng) {
                seen.insert(cands[i].grid_cell);
            }
            seen.len() as f64 / 256.0
        };
        let with: f64 = (0..20).map(|s| occupied(true, s)).sum::<f64>() / 20.0;
        let without: f64 = (0..20).map(|s| occupied(false, s)).sum::<f64>() / 20.0;
        assert!(with >= without, "{with} < {without}");
    }

    #[test]
    fn builds_bound_scene_on_prior_depth() {
        let mut frames = Vec::new();
        for f in 0..4 {
            let mut b = bundle(24, 24, |x, y| (8..16).contains(&x) && (8..16).contains(&y));
            b.frame = f;
            for y in 0..24 {
                for x in 0..24 {
                    b.depth.set(x, y, 0, 1.0 + 0.1 * x as f64 + 0.01 * y as f64);
                }
            }
            b.tracks = (0..3)
                .map(|k| TrackPoint {
                    point_id: 10 + k,
                    x: 9.5 + k as f64 + f as f64,
                    y: 10.5,
                    visibility: 1.0,
                })
                .collect();
            frames.push(b);
        }
        let cfg = SceneConfig::default();
        let scene = build_initial_scene(&frames, 5000, &cfg, &InitConfig::default()).unwrap();
        // more requested than available: every candidate is used
        assert_eq!(scene.primitives.len(), 3 + 4 * 24 * 24);
        let mut ids: Vec<u64> = scene.bindings.iter().map(|b| b.point_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![10, 11, 12]);
        let mut prims: Vec<usize> = scene.bindings.iter().map(|b| b.primitive).collect();
        prims.sort_unstable();
        prims.dedup();
        assert_eq!(prims.len(), 3);
        for b in &scene.bindings {
            let p = &scene.primitives[b.primitive];
            let pos = crate::render::project(&scene, 0.0).unwrap()[b.primitive].center;
            let k = (b.point_id - 10) as f64;
            assert!((pos[0] - (9.5 + k)).abs() < 1e-9 && (pos[1] - 10.5).abs() < 1e-9);
            assert!(p.omega_raw.iter().all(|w| *w == -1.0));
        }
        let small = build_initial_scene(&frames, 50, &cfg, &InitConfig::default()).unwrap();
        assert_eq!(small.primitives.len(), 50);
        assert!(build_initial_scene(&frames, 0, &cfg, &InitConfig::default()).is_err());
        assert!(build_initial_scene(&[], 10, &cfg, &InitConfig::default()).is_err());
    }

    #[test]
    fn back_projected_depth_matches_prior() {
        let mut b = bundle(16, 16, |_, _| false);
        for y in 0..16 {
            for x in 0..16 {
                b.depth.set(x, y, 0, 2.0 + (x * 16 + y) as f64 * 0.013);
            }
        }
        let scene = build_initial_scene(std::slice::from_ref(&b), 40, &SceneConfig::default(), &InitConfig::default()).unwrap();
        for p in &scene.primitives {
            let (x, y) = (p.mu_base[0].floor() as usize, p.mu_base[1].floor() as usize);
            assert_eq!(p.mu_base[2], b.depth.get(x, y, 0));
            assert_eq!(p.opacity(), 0.5);
            assert!((p.scale()[0] - p.scale()[2]).abs() < 1e-15);
        }
    }
}
