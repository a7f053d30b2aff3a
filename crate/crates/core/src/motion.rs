//! Per-primitive trajectories over keyframes.
//!
//! Translations are interpolated with a cubic Hermite spline whose tangents
//! come from an auto-slope rule with a componentwise monotone gate. Rotations
//! reuse the same interpolant on so(3) control vectors and are mapped to unit
//! quaternions through the exponential map. Natural cubic and clamped cubic
//! B-spline interpolants are available as baselines via [`SplineKind`].
//!
//! Every interpolant here is linear in the control values once the gate
//! pattern is fixed, so evaluation and differentiation share one weight
//! vector per component.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{self, Quat};

pub type Vec3 = [f64; 3];

/// Small constant in the curvature loss denominator.
pub const CURVATURE_EPS: f64 = 1e-8;

/// Dimension factor `D` of the curvature loss normalizer.
const CURVATURE_DIM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplineKind {
    /// Gated cubic Hermite.
    #[default]
    Hermite,
    /// Natural cubic spline through the control values.
    Cubic,
    /// Clamped cubic B-spline with the control values as control points.
    BSpline,
}

impl SplineKind {
    pub fn code(self) -> u8 {
        match self {
            SplineKind::Hermite => 0,
            SplineKind::Cubic => 1,
            SplineKind::BSpline => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SplineKind::Hermite,
            1 => SplineKind::Cubic,
            2 => SplineKind::BSpline,
            _ => return None,
        })
    }
}

impl std::str::FromStr for SplineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermite" => Ok(SplineKind::Hermite),
            "cubic" => Ok(SplineKind::Cubic),
            "bspline" => Ok(SplineKind::BSpline),
            other => Err(Error::invalid(format!("unknown spline kind '{other}'"))),
        }
    }
}

/// Keyframe times plus translation (`y`) and rotation-vector (`r`) controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrack {
    pub times: Vec<f64>,
    pub y: Vec<Vec3>,
    pub r: Vec<Vec3>,
}

impl MotionTrack {
    /// A motionless track over `times`.
    pub fn zero(times: &[f64]) -> Self {
        MotionTrack {
            times: times.to_vec(),
            y: vec![[0.0; 3]; times.len()],
            r: vec![[0.0; 3]; times.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        validate_times(&self.times)?;
        if self.y.len() != self.times.len() || self.r.len() != self.times.len() {
            return Err(Error::ShapeMismatch(format!(
                "track has {} times but {} translations and {} rotations",
                self.times.len(),
                self.y.len(),
                self.r.len()
            )));
        }
        Ok(())
    }

    /// Brings every rotation control to magnitude at most π.
    pub fn wrap_rotations(&mut self) {
        for r in &mut self.r {
            *r = so3::wrap_rotation_vector(r);
        }
    }
}

pub fn validate_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::invalid(format!(
            "a track needs at least 2 keyframes, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("keyframe times must be strictly increasing"));
    }
    Ok(())
}

/// Uniform keyframe grid over `[0, 1]` for a video of `frames` frames.
pub fn keyframe_grid(frames: usize) -> Vec<f64> {
    let m = 4.max(frames.div_ceil(4));
    (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
}

#[inline]
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Index `k` of the interval `[t_k, t_{k+1}]` holding `t` (already clamped).
fn interval(times: &[f64], t: f64) -> usize {
    let m = times.len();
    times.partition_point(|&x| x <= t).saturating_sub(1).min(m - 2)
}

fn clamp_time(times: &[f64], t: f64) -> f64 {
    t.clamp(times[0], times[times.len() - 1])
}

/// Gated auto-slopes for arbitrary control values.
pub fn slopes(times: &[f64], values: &[Vec3], beta: f64) -> Result<Vec<Vec3>> {
    validate_times(times)?;
    if values.len() != times.len() {
        return Err(Error::ShapeMismatch("values and times differ in length".into()));
    }
    let m = times.len();
    let secant = |k: usize, c: usize| (values[k + 1][c] - values[k][c]) / (times[k + 1] - times[k]);
    let mut out = vec![[0.0; 3]; m];
    for c in 0..3 {
        out[0][c] = beta * secant(0, c);
        out[m - 1][c] = beta * secant(m - 2, c);
        for k in 1..m - 1 {
            let (a, b) = (secant(k - 1, c), secant(k, c));
            out[k][c] = if sign(a) == sign(b) { beta * 0.5 * (a + b) } else { 0.0 };
        }
    }
    Ok(out)
}

/// Gated auto-slopes of a track's translation controls.
pub fn auto_slopes(track: &MotionTrack, beta: f64) -> Result<Vec<Vec3>> {
    slopes(&track.times, &track.y, beta)
}

/// Cubic Hermite basis `(H00, H10, H01, H11)` at `s ∈ [0, 1]`.
pub fn hermite_basis(s: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("Hermite parameter {s} outside [0, 1]")));
    }
    Ok(basis(s))
}

#[inline]
fn basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

/// Direct gated Hermite evaluation of arbitrary control values.
pub fn hermite_eval(times: &[f64], values: &[Vec3], beta: f64, t: f64) -> Result<Vec3> {
    let m = slopes(times, values, beta)?;
    let t = clamp_time(times, t);
    let k = interval(times, t);
    let dt = times[k + 1] - times[k];
    let h = basis(((t - times[k]) / dt).clamp(0.0, 1.0));
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = h[0] * values[k][c] + h[1] * dt * m[k][c] + h[2] * values[k + 1][c] + h[3] * dt * m[k + 1][c];
    }
    Ok(out)
}

/// Interpolated displacement `Δ(t)` of the translation track; `t` is clamped.
pub fn displacement_at(track: &MotionTrack, beta: f64, t: f64) -> Result<Vec3> {
    hermite_eval(&track.times, &track.y, beta, t)
}

/// `μ(t) = μ_base + Δ(t)`.
pub fn position_at(mu_base: Vec3, track: &MotionTrack, beta: f64, t: f64) -> Result<Vec3> {
    let d = displacement_at(track, beta, t)?;
    Ok([mu_base[0] + d[0], mu_base[1] + d[1], mu_base[2] + d[2]])
}

/// `normalize(normalize(q_base) ⊗ exp(v))`.
pub fn compose_rotation(q_base: &Quat, v: &Vec3) -> Quat {
    let (qb, _) = so3::normalize(q_base);
    so3::normalize(&so3::mul(&qb, &so3::exp(v))).0
}

/// Interpolated rotation at `t` from the track's so(3) controls.
pub fn rotation_at(q_base: &Quat, track: &MotionTrack, beta: f64, t: f64) -> Result<Quat> {
    let v = hermite_eval(&track.times, &track.r, beta, t)?;
    Ok(compose_rotation(q_base, &v))
}

/// Non-uniform second differences at the interior keyframes.
pub fn second_derivative(track: &MotionTrack) -> Result<Vec<Vec3>> {
    if track.len() < 3 {
        return Err(Error::invalid(format!(
            "curvature needs at least 3 keyframes, got {}",
            track.len()
        )));
    }
    track.validate()?;
    Ok(curvatures(&track.times, &track.y))
}

fn curvatures(times: &[f64], y: &[Vec3]) -> Vec<Vec3> {
    (1..times.len() - 1)
        .map(|k| {
            let h0 = times[k] - times[k - 1];
            let h1 = times[k + 1] - times[k];
            let mut out = [0.0; 3];
            for c in 0..3 {
                let dp = (y[k + 1][c] - y[k][c]) / h1;
                let dm = (y[k][c] - y[k - 1][c]) / h0;
                out[c] = 2.0 * (dp - dm) / (h0 + h1);
            }
            out
        })
        .collect()
}

/// Curvature penalty and its gradient with respect to every translation control.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureLoss {
    pub value: f64,
    pub grad_y: Vec<Vec<Vec3>>,
}

/// Weighted second-order energy over all tracks, normalized by total weight.
///
/// Tracks with fewer than three keyframes contribute nothing.
pub fn curvature_loss(tracks: &[MotionTrack]) -> CurvatureLoss {
    let mut num = 0.0;
    let mut den = 0.0;
    for tr in tracks.iter().filter(|t| t.len() >= 3) {
        for (k, ydd) in curvatures(&tr.times, &tr.y).iter().enumerate() {
            let k = k + 1;
            let w = 0.5 * (tr.times[k + 1] - tr.times[k - 1]);
            num += w * ydd.iter().map(|v| v * v).sum::<f64>();
            den += w * CURVATURE_DIM;
        }
    }
    den += CURVATURE_EPS;
    let value = num / den;

    let grad_y = tracks
        .iter()
        .map(|tr| {
            let mut g = vec![[0.0; 3]; tr.len()];
            if tr.len() < 3 {
                return g;
            }
            for (k, ydd) in curvatures(&tr.times, &tr.y).iter().enumerate() {
                let k = k + 1;
                let h0 = tr.times[k] - tr.times[k - 1];
                let h1 = tr.times[k + 1] - tr.times[k];
                let w = 0.5 * (h0 + h1);
                let s = h0 + h1;
                for c in 0..3 {
                    let gd = 2.0 * w * ydd[c] / den;
                    g[k + 1][c] += gd * 2.0 / (h1 * s);
                    g[k][c] -= gd * 2.0 / s * (1.0 / h1 + 1.0 / h0);
                    g[k - 1][c] += gd * 2.0 / (h0 * s);
                }
            }
            g
        })
        .collect();
    CurvatureLoss { value, grad_y }
}

/// Per-instant evaluator for one spline kind over a shared keyframe grid.
///
/// Natural cubic and B-spline weights do not depend on the control values and
/// are computed once; Hermite weights depend on the gate pattern and are
/// computed per call.
#[derive(Debug, Clone)]
pub struct SplineSampler {
    kind: SplineKind,
    beta: f64,
    times: Vec<f64>,
    t: f64,
    interval: usize,
    fixed: Vec<f64>,
}

impl SplineSampler {
    pub fn new(kind: SplineKind, beta: f64, times: &[f64], t: f64) -> Result<Self> {
        validate_times(times)?;
        let t = clamp_time(times, t);
        let interval = interval(times, t);
        let fixed = match kind {
            SplineKind::Hermite => Vec::new(),
            SplineKind::Cubic => natural_cubic_weights(times, t, interval),
            SplineKind::BSpline => bspline_weights(times, t),
        };
        Ok(SplineSampler {
            kind,
            beta,
            times: times.to_vec(),
            t,
            interval,
            fixed,
        })
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Weights `w_j` such that component `c` of the interpolant is `Σ w_j values[j][c]`.
    pub fn weights(&self, values: &[Vec3], c: usize, out: &mut [f64]) {
        match self.kind {
            SplineKind::Hermite => self.hermite_weights(values, c, out),
            _ => out.copy_from_slice(&self.fixed),
        }
    }

    fn hermite_weights(&self, values: &[Vec3], c: usize, out: &mut [f64]) {
        let times = &self.times;
        let m = times.len();
        out.iter_mut().for_each(|w| *w = 0.0);
        let k = self.interval;
        let dt = times[k + 1] - times[k];
        let h = basis(((self.t - times[k]) / dt).clamp(0.0, 1.0));
        out[k] += h[0];
        out[k + 1] += h[2];
        let beta = self.beta;
        let secant = |j: usize| (values[j + 1][c] - values[j][c]) / (times[j + 1] - times[j]);
        // adds coef * dm_j/dvalues into out
        let mut add_slope = |j: usize, coef: f64| {
            if coef == 0.0 {
                return;
            }
            if j == 0 || j == m - 1 {
                let i = if j == 0 { 0 } else { m - 2 };
                let inv = beta / (times[i + 1] - times[i]);
                out[i] -= coef * inv;
                out[i + 1] += coef * inv;
            } else if sign(secant(j - 1)) == sign(secant(j)) {
                let a = 0.5 * beta / (times[j] - times[j - 1]);
                let b = 0.5 * beta / (times[j + 1] - times[j]);
                out[j - 1] -= coef * a;
                out[j] += coef * (a - b);
                out[j + 1] += coef * b;
            }
        };
        add_slope(k, dt * h[1]);
        add_slope(k + 1, dt * h[3]);
    }

    /// Evaluates all three components.
    pub fn eval(&self, values: &[Vec3]) -> Vec3 {
        let mut w = vec![0.0; self.len()];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            self.weights(values, c, &mut w);
            *o = w.iter().zip(values).map(|(w, v)| w * v[c]).sum();
        }
        out
    }
}

/// Cardinal weights of the natural cubic spline through `times` at `t`.
fn natural_cubic_weights(times: &[f64], t: f64, k: usize) -> Vec<f64> {
    let m = times.len();
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut out = vec![0.0; m];
    let hk = h[k];
    let a = (times[k + 1] - t) / hk;
    let b = (t - times[k]) / hk;
    out[k] += a;
    out[k + 1] += b;
    if m < 3 {
        return out;
    }
    let ca = (a * a * a - a) * hk * hk / 6.0;
    let cb = (b * b * b - b) * hk * hk / 6.0;
    // Second derivatives of the cardinal spline for each unit control.
    let n = m - 2;
    for j in 0..m {
        let mut rhs = vec![0.0; n];
        for i in 1..m - 1 {
            let e = |idx: usize| if idx == j { 1.0 } else { 0.0 };
            rhs[i - 1] = 6.0 * ((e(i + 1) - e(i)) / h[i] - (e(i) - e(i - 1)) / h[i - 1]);
        }
        let sigma_inner = solve_tridiagonal(&h, &rhs);
        let sigma = |idx: usize| {
            if idx == 0 || idx == m - 1 {
                0.0
            } else {
                sigma_inner[idx - 1]
            }
        };
        out[j] += ca * sigma(k) + cb * sigma(k + 1);
    }
    out
}

/// Solves the natural-spline system for interior second derivatives (Thomas algorithm).
fn solve_tridiagonal(h: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut diag: Vec<f64> = (0..n).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
    let mut r = rhs.to_vec();
    for i in 1..n {
        let f = h[i] / diag[i - 1];
        diag[i] -= f * h[i];
        r[i] -= f * r[i - 1];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let upper = if i + 1 < n { h[i + 1] * x[i + 1] } else { 0.0 };
        x[i] = (r[i] - upper) / diag[i];
    }
    x
}

/// Basis values of a clamped B-spline of degree `min(3, M-1)` with uniform interior knots.
fn bspline_weights(times: &[f64], t: f64) -> Vec<f64> {
    let m = times.len();
    let p = 3.min(m - 1);
    let (t0, t1) = (times[0], times[m - 1]);
    let interior = m - p - 1;
    let mut knots = vec![t0; p + 1];
    for i in 1..=interior {
        knots.push(t0 + (t1 - t0) * i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(t1, p + 1));

    let mut out = vec![0.0; m];
    if t >= t1 {
        out[m - 1] = 1.0;
        return out;
    }
    // degree-0 span, then Cox–de Boor elevation
    let span = (p..m).rfind(|&i| knots[i] <= t).unwrap_or(p);
    let mut n = vec![0.0; p + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (r, v) in n.iter().enumerate() {
        out[span - p + r] = *v;
    }
    out
}
