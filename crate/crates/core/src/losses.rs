//! Supervision terms and their gradients with respect to render outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rgb: f64,
    pub lambda_flow: f64,
    pub lambda_depth: f64,
    pub lambda_curv: f64,
    pub lambda_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rgb: 1.0,
            lambda_flow: 0.1,
            lambda_depth: 0.1,
            lambda_curv: 0.01,
            lambda_ssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_rgb,
            self.lambda_flow,
            self.lambda_depth,
            self.lambda_curv,
            self.lambda_ssim,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::invalid("lambda_ssim must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One observed point of a 2D track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub point_id: u64,
    pub x: f64,
    pub y: f64,
    /// Visibility weight in `[0, 1]`.
    pub visibility: f64,
}

/// All supervision for one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame: usize,
    pub rgb: Raster,
    pub depth: Raster,
    /// 1 on foreground, 0 elsewhere.
    pub mask: Raster,
    pub tracks: Vec<TrackPoint>,
}

impl FrameBundle {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// A scalar loss and its gradient with respect to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Raster,
}

/// Mean absolute error.
pub fn l1(pred: &Raster, target: &Raster) -> Result<ImageLoss> {
    pred.check_same_shape(target, "l1")?;
    let n = pred.data.len().max(1) as f64;
    let mut grad = Raster::zeros(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(ImageLoss {
        value: sum / n,
        grad,
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable filtering of one channel.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|j| g[j] * src[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back to full size.
fn filter_adjoint(map: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for i in 0..SSIM_WINDOW {
            for x in 0..ow {
                rows[(y + i) * ow + x] += g[i] * map[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for j in 0..SSIM_WINDOW {
                out[y * w + x + j] += g[j] * v;
            }
        }
    }
    out
}

fn check_ssim_shape(pred: &Raster, target: &Raster) -> Result<()> {
    pred.check_same_shape(target, "ssim")?;
    if pred.width < SSIM_WINDOW || pred.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            pred.width, pred.height
        )));
    }
    Ok(())
}

/// Mean SSIM over all valid window positions and channels.
pub fn ssim(pred: &Raster, target: &Raster) -> Result<f64> {
    Ok(ssim_impl(pred, target, false)?.0)
}

/// Mean SSIM and its gradient with respect to `pred`.
pub fn ssim_with_grad(pred: &Raster, target: &Raster) -> Result<(f64, Raster)> {
    let (v, g) = ssim_impl(pred, target, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ssim_impl(pred: &Raster, target: &Raster, want_grad: bool) -> Result<(f64, Option<Raster>)> {
    check_ssim_shape(pred, target)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    let g = gaussian_window();
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Raster::zeros(w, h, ch));
    for c in 0..ch {
        let x = pred.channel(c).data;
        let y = target.channel(c).data;
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, w, h, &g);
        let my = filter_valid(&y, w, h, &g);
        let exx = filter_valid(&xx, w, h, &g);
        let eyy = filter_valid(&yy, w, h, &g);
        let exy = filter_valid(&xy, w, h, &g);
        let n = mx.len();
        let mut d_m = vec![0.0; n];
        let mut d_e = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_de = -s / b2;
                let ds_dexy = 2.0 * s / a2;
                d_m[i] = 2.0 * uy * a2 / (b1 * b2) - 2.0 * ux * s / b1 - 2.0 * ux * ds_de - uy * ds_dexy;
                d_e[i] = ds_de;
                d_xy[i] = ds_dexy;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let am = filter_adjoint(&d_m, w, h, &g);
            let ae = filter_adjoint(&d_e, w, h, &g);
            let axy = filter_adjoint(&d_xy, w, h, &g);
            for p in 0..w * h {
                let v = (am[p] + 2.0 * x[p] * ae[p] + y[p] * axy[p]) / count;
                grad.data[p * ch + c] = v;
            }
        }
    }
    Ok((total / count, grad))
}

/// `(1 - λ) L1 + λ (1 - SSIM)`.
pub fn loss_rgb(pred: &Raster, target: &Raster, lambda_ssim: f64) -> Result<ImageLoss> {
    let l1 = l1(pred, target)?;
    if lambda_ssim == 0.0 {
        return Ok(l1);
    }
    let (s, sg) = ssim_with_grad(pred, target)?;
    let mut grad = l1.grad;
    for (g, d) in grad.data.iter_mut().zip(&sg.data) {
        *g = (1.0 - lambda_ssim) * *g - lambda_ssim * d;
    }
    Ok(ImageLoss {
        value: (1.0 - lambda_ssim) * l1.value + lambda_ssim * (1.0 - s),
        grad,
    })
}

/// Small constant in the flow loss denominator.
pub const FLOW_EPS: f64 = 1e-8;

/// Flow loss value and gradients on the projected centers of bound primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLoss {
    pub value: f64,
    /// `(primitive index, dL/d center)`.
    pub grads: Vec<(usize, [f64; 2])>,
}

/// Visibility-weighted L1 distance between projected and tracked positions.
///
/// `binding` maps a track point id to the primitive seeded on it; `centers`
/// holds each primitive's projected center at the frame of `tracks`.
pub fn loss_flow<B>(tracks: &[TrackPoint], binding: B, centers: &[[f64; 2]]) -> Result<FlowLoss>
where
    B: Fn(u64) -> Option<usize>,
{
    let mut bound = Vec::with_capacity(tracks.len());
    for tp in tracks {
        let prim = binding(tp.point_id).ok_or(Error::UnboundTrack(tp.point_id))?;
        if prim >= centers.len() {
            return Err(Error::UnboundTrack(tp.point_id));
        }
        bound.push(prim);
    }
    let wsum: f64 = tracks.iter().map(|t| t.visibility).sum();
    let den = wsum + FLOW_EPS;
    let mut value = 0.0;
    let mut grads = Vec::new();
    for (tp, &prim) in tracks.iter().zip(&bound) {
        if tp.visibility <= 0.0 {
            continue;
        }
        let c = centers[prim];
        let d = [c[0] - tp.x, c[1] - tp.y];
        value += tp.visibility * (d[0].abs() + d[1].abs());
        let k = tp.visibility / den;
        grads.push((prim, [k * sign(d[0]), k * sign(d[1])]));
    }
    Ok(FlowLoss {
        value: value / den,
        grads,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Median of the valid samples and the derivative weight each sample carries.
fn median_with_weights(values: &[f64], valid: &[usize]) -> (f64, Vec<(usize, f64)>) {
    let mut idx = valid.to_vec();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = idx.len();
    if n % 2 == 1 {
        let i = idx[n / 2];
        (values[i], vec![(i, 1.0)])
    } else {
        let (a, b) = (idx[n / 2 - 1], idx[n / 2]);
        (0.5 * (values[a] + values[b]), vec![(a, 0.5), (b, 0.5)])
    }
}

fn valid_indices(d: &Raster, valid: &[bool]) -> Result<Vec<usize>> {
    if d.channels != 1 || valid.len() != d.data.len() {
        return Err(Error::ShapeMismatch(
            "depth map and validity mask must be single-channel and equal in size".into(),
        ));
    }
    Ok((0..valid.len()).filter(|&i| valid[i]).collect())
}

/// Median-centered, mean-absolute-deviation-scaled depth; invalid pixels map to 0.
pub fn normalize_depth(d: &Raster, valid: &[bool]) -> Result<Raster> {
    let idx = valid_indices(d, valid)?;
    if idx.is_empty() {
        return Err(Error::invalid("depth normalization needs at least one valid pixel"));
    }
    let (med, _) = median_with_weights(&d.data, &idx);
    let mad = idx.iter().map(|&i| (d.data[i] - med).abs()).sum::<f64>() / idx.len() as f64;
    let mut out = Raster::zeros(d.width, d.height, 1);
    if mad > 0.0 {
        for &i in &idx {
            out.data[i] = (d.data[i] - med) / mad;
        }
    }
    Ok(out)
}

/// Scale- and shift-invariant depth loss, averaged over valid pixels.
///
/// An empty valid set yields zero loss and zero gradient.
pub fn loss_depth(pred: &Raster, prior: &Raster, valid: &[bool]) -> Result<ImageLoss> {
    pred.check_same_shape(prior, "depth loss")?;
    let idx = valid_indices(pred, valid)?;
    let mut grad = Raster::zeros(pred.width, pred.height, 1);
    if idx.is_empty() {
        return Ok(ImageLoss { value: 0.0, grad });
    }
    let n = idx.len() as f64;
    let target = normalize_depth(prior, valid)?;
    let (med, med_w) = median_with_weights(&pred.data, &idx);
    let mad = idx.iter().map(|&i| (pred.data[i] - med).abs()).sum::<f64>() / n;
    if mad == 0.0 {
        let value = idx.iter().map(|&i| target.data[i].abs()).sum::<f64>() / n;
        return Ok(ImageLoss { value, grad });
    }
    let mut value = 0.0;
    let mut e_sum = 0.0;
    let mut eu_sum = 0.0;
    let mut sgn_sum = 0.0;
    let mut e = vec![0.0; idx.len()];
    for (k, &i) in idx.iter().enumerate() {
        let u = pred.data[i] - med;
        let r = u / mad - target.data[i];
        value += r.abs();
        e[k] = sign(r) / n;
        e_sum += e[k];
        eu_sum += e[k] * u;
        sgn_sum += sign(u);
    }
    // dL/dD_j = (e_j - E m_j)/s - F/s² (sign(u_j) - Σsign(u) m_j)/n
    for (k, &i) in idx.iter().enumerate() {
        let u = pred.data[i] - med;
        grad.data[i] = e[k] / mad - eu_sum / (mad * mad) * sign(u) / n;
    }
    for (i, mw) in med_w {
        grad.data[i] += -e_sum * mw / mad + eu_sum / (mad * mad) * sgn_sum * mw / n;
    }
    Ok(ImageLoss {
        value: value / n,
        grad,
    })
}

/// Per-term loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub rgb: f64,
    pub flow: f64,
    pub depth: f64,
    pub curv: f64,
}

/// Weighted sum of the four terms.
pub fn loss_total(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_rgb * parts.rgb + w.lambda_flow * parts.flow + w.lambda_depth * parts.depth + w.lambda_curv * parts.curv
}

/// Peak signal-to-noise ratio for `[0, 1]` images, capped at 99 dB.
pub fn psnr(pred: &Raster, target: &Raster) -> Result<f64> {
    pred.check_same_shape(target, "psnr")?;
    let n = pred.data.len().max(1) as f64;
    let mse = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

pub const PSNR_CAP: f64 = 99.0;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Raster {
        Raster::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    /// SSIM computed window by window straight from its definition.
    fn dense_ssim(a: &Raster, b: &Raster) -> f64 {
        let g = gaussian_window();
        let (w, h) = (a.width, a.height);
        let mut total = 0.0;
        let mut count = 0.0;
        for c in 0..a.channels {
            for py in 0..=h - SSIM_WINDOW {
                for px in 0..=w - SSIM_WINDOW {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            let k = g[i] * g[j];
                            mx += k * a.get(px + j, py + i, c);
                            my += k * b.get(px + j, py + i, c);
                        }
                    }
                    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            let k = g[i] * g[j];
                            let dx = a.get(px + j, py + i, c) - mx;
                            let dy = b.get(px + j, py + i, c) - my;
                            vx += k * dx * dx;
                            vy += k * dy * dy;
                            cxy += k * dx * dy;
                        }
                    }
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    fn fd_check(f: &dyn Fn(&Raster) -> f64, x: &Raster, grad: &Raster, rng: &mut impl Rng, tol: f64) {
        let h = 1e-6;
        for _ in 0..40 {
            let i = rng.random_range(0..x.data.len());
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = grad.data[i];
            let err = (an - fd).abs();
            assert!(err <= tol * an.abs().max(fd.abs()) || err < 1e-9, "{an} vs {fd}");
        }
    }

    #[test]
    fn l1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_raster(&mut rng, 12, 12, 3);
        assert_eq!(loss_rgb(&a, &a, 0.2).unwrap().value, 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        assert!((loss_rgb(&b, &a, 0.0).unwrap().value - 0.1).abs() < 1e-12);
        assert!(loss_rgb(&a, &Raster::zeros(12, 11, 3), 0.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_raster(&mut rng, 20, 16, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Raster::from_vec(20, 16, 3, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&inv, &a).unwrap();
        assert!(s < 1.0);
        assert!((s - dense_ssim(&inv, &a)).abs() < 1e-12);
        let c = Raster::filled(16, 16, 1, 0.3);
        assert!((ssim(&c, &c.clone()).unwrap() - 1.0).abs() < 1e-15);
        assert!(ssim(&Raster::zeros(10, 20, 1), &Raster::zeros(10, 20, 1)).is_err());
    }

    #[test]
    fn ssim_matches_dense_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_raster(&mut rng, 17, 14, 2);
            let b = random_raster(&mut rng, 17, 14, 2);
            let s = ssim(&a, &b).unwrap();
            assert!((s - dense_ssim(&a, &b)).abs() < 1e-12);
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-15);
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn rgb_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_raster(&mut rng, 16, 13, 3);
        let b = random_raster(&mut rng, 16, 13, 3);
        for lambda in [0.0, 0.2, 1.0] {
            let l = loss_rgb(&a, &b, lambda).unwrap();
            fd_check(&|x| loss_rgb(x, &b, lambda).unwrap().value, &a, &l.grad, &mut rng, 1e-4);
        }
    }

    #[test]
    fn flow_examples() {
        let tp = |id, x, y, v| TrackPoint {
            point_id: id,
            x,
            y,
            visibility: v,
        };
        let bind = |id: u64| Some(id as usize);
        let centers = [[1.0, 2.0], [5.0, 6.0]];
        let perfect = [tp(0, 1.0, 2.0, 1.0), tp(1, 5.0, 6.0, 0.5)];
        assert_eq!(loss_flow(&perfect, bind, &centers).unwrap().value, 0.0);
        let off = [tp(0, -2.0, -2.0, 1.0)];
        let l = loss_flow(&off, bind, &centers).unwrap();
        assert!((l.value - 7.0).abs() < 1e-7);
        assert_eq!(l.grads, vec![(0, [1.0 / (1.0 + FLOW_EPS), 1.0 / (1.0 + FLOW_EPS)])]);
        let hidden = [tp(0, 40.0, 40.0, 0.0), tp(1, -9.0, 3.0, 0.0)];
        assert_eq!(loss_flow(&hidden, bind, &centers).unwrap().value, 0.0);
        assert!(matches!(
            loss_flow(&[tp(7, 0.0, 0.0, 1.0)], |_| None, &centers),
            Err(Error::UnboundTrack(7))
        ));
    }

    #[test]
    fn depth_normalization_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let valid = vec![true; 30];
        let c = Raster::filled(6, 5, 1, 2.5);
        assert!(normalize_depth(&c, &valid).unwrap().data.iter().all(|v| *v == 0.0));
        let d = random_raster(&mut rng, 6, 5, 1);
        let e = Raster::from_vec(6, 5, 1, d.data.iter().map(|v| 5.0 * v + 3.0).collect()).unwrap();
        let (nd, ne) = (normalize_depth(&d, &valid).unwrap(), normalize_depth(&e, &valid).unwrap());
        assert!(nd.max_abs_diff(&ne) < 1e-9);
        // direct oracle: median of 30 values averages ranks 15 and 16
        let mut sorted = d.data.clone();
        sorted.sort_by(f64::total_cmp);
        let med = 0.5 * (sorted[14] + sorted[15]);
        let mad = d.data.iter().map(|v| (v - med).abs()).sum::<f64>() / 30.0;
        for (o, v) in nd.data.iter().zip(&d.data) {
            assert!((o - (v - med) / mad).abs() < 1e-12);
        }
        assert!(normalize_depth(&d, &[false; 30]).is_err());
    }

    #[test]
    fn depth_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = random_raster(&mut rng, 9, 7, 1);
        let mut valid: Vec<bool> = (0..63).map(|_| rng.random_bool(0.8)).collect();
        assert_eq!(loss_depth(&prior, &prior, &valid).unwrap().value, 0.0);
        let affine = Raster::from_vec(9, 7, 1, prior.data.iter().map(|v| 2.0 * v + 1.0).collect()).unwrap();
        assert!(loss_depth(&affine, &prior, &valid).unwrap().value < 1e-9);
        let pred = random_raster(&mut rng, 9, 7, 1);
        let l = loss_depth(&pred, &prior, &valid).unwrap();
        fd_check(&|x| loss_depth(x, &prior, &valid).unwrap().value, &pred, &l.grad, &mut rng, 1e-4);
        valid.iter_mut().for_each(|v| *v = false);
        let l = loss_depth(&pred, &prior, &valid).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn total_examples() {
        let w = LossWeights {
            lambda_rgb: 1.0,
            lambda_flow: 0.1,
            lambda_depth: 0.1,
            lambda_curv: 0.01,
            lambda_ssim: 0.2,
        };
        let ones = LossParts {
            rgb: 1.0,
            flow: 1.0,
            depth: 1.0,
            curv: 1.0,
        };
        assert!((loss_total(&ones, &w) - 1.21).abs() < 1e-15);
        assert_eq!(loss_total(&LossParts::default(), &w), 0.0);
        let doubled = LossWeights { lambda_flow: 0.2, ..w };
        assert!((loss_total(&ones, &doubled) - loss_total(&ones, &w) - 0.1).abs() < 1e-15);
        assert!(LossWeights { lambda_ssim: 1.5, ..w }.validate().is_err());
    }

    #[test]
    fn psnr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_raster(&mut rng, 8, 8, 3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Raster::from_vec(8, 8, 3, a.data.iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&b, &a).unwrap() - 20.0).abs() < 1e-9);
        let c = random_raster(&mut rng, 8, 8, 3);
        let mse = a.data.iter().zip(&c.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 192.0;
        assert!((psnr(&a, &c).unwrap() + 10.0 * mse.log10()).abs() < 1e-12);
        assert!(psnr(&a, &Raster::zeros(8, 8, 1)).is_err());
    }

    proptest! {
        #[test]
        fn depth_loss_is_affine_invariant(
            seed in any::<u64>(), a in 0.01f64..100.0, b in -50.0f64..50.0,
            a2 in 0.01f64..100.0, b2 in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = random_raster(&mut rng, 8, 8, 1);
            let prior = random_raster(&mut rng, 8, 8, 1);
            let valid: Vec<bool> = (0..64).map(|_| rng.random_bool(0.7)).collect();
            prop_assume!(valid.iter().any(|v| *v));
            let map = |r: &Raster, a: f64, b: f64| Raster::from_vec(8, 8, 1, r.data.iter().map(|v| a * v + b).collect()).unwrap();
            let l0 = loss_depth(&pred, &prior, &valid).unwrap().value;
            let l1 = loss_depth(&map(&pred, a, b), &map(&prior, a2, b2), &valid).unwrap().value;
            prop_assert!((l0 - l1).abs() < 1e-9);
        }

        #[test]
        fn flow_ignores_track_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers: Vec<[f64; 2]> = (0..10).map(|_| [rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)]).collect();
            let mut tracks: Vec<TrackPoint> = (0..10u64)
                .map(|i| TrackPoint { point_id: i, x: rng.random_range(0.0..32.0), y: rng.random_range(0.0..32.0), visibility: rng.random() })
                .collect();
            let l0 = loss_flow(&tracks, |id| Some(id as usize), &centers).unwrap().value;
            tracks.reverse();
            let l1 = loss_flow(&tracks, |id| Some(id as usize), &centers).unwrap().value;
            prop_assert!((l0 - l1).abs() < 1e-12);
            prop_assert!(l0 >= 0.0);
        }

        #[test]
        fn losses_are_nonnegative(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_raster(&mut rng, 12, 12, 3);
            let b = random_raster(&mut rng, 12, 12, 3);
            prop_assert!(loss_rgb(&a, &b, lambda).unwrap().value >= 0.0);
            prop_assert!(ssim(&a, &b).unwrap() <= 1.0);
        }
    }
}
