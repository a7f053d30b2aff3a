//! The adaptive Gabor density: activations, evaluation and analytic partials.
//!
//! A primitive is a 3D anisotropic Gaussian seen through a fixed orthographic
//! camera. Its footprint on the image plane is a 2D Gaussian whose opacity is
//! modulated by a sum of cosine waves running along the primitive's two local
//! in-plane axes:
//!
//! ```text
//! α_contrib(x) = α · exp(-½ dᵀ Σ₂⁻¹ d) · S(local(x)),   d = x - μ_xy
//! S_adap(u)    = b + (1/N) Σ ω_i cos(f_i u_{axis(i)})
//! b            = γ + (1 - γ)(1 - mean ω)
//! ```
//!
//! `local(x) = π · diag(1/s_x, 1/s_y) · (Rᵀ)₂ₓ₂ · d` expresses the offset in
//! phase units: one unit of `f_i · u` is one radian, and at `f = 1` the wave
//! completes half a period per standard deviation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::SplineKind;
use crate::so3::{self, Mat3, Quat};

/// Upper bound on the number of waves per primitive.
pub const MAX_WAVES: usize = 8;

/// Composited opacity is clamped to this value.
pub const MAX_ALPHA: f64 = 0.999;

/// Which opacity modulation a primitive uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    /// Plain Gaussian, `S ≡ 1`.
    Gaussian,
    /// Standard Gabor without compensation, `S = (1/N) Σ ω cos`.
    Gabor0,
    /// Naive `1 + Σ ω cos`.
    OnePlusS,
    /// Energy-compensated adaptive Gabor.
    #[default]
    Adaptive,
}

impl PrimitiveKind {
    pub fn code(self) -> u8 {
        match self {
            PrimitiveKind::Gaussian => 0,
            PrimitiveKind::Gabor0 => 1,
            PrimitiveKind::OnePlusS => 2,
            PrimitiveKind::Adaptive => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => PrimitiveKind::Gaussian,
            1 => PrimitiveKind::Gabor0,
            2 => PrimitiveKind::OnePlusS,
            3 => PrimitiveKind::Adaptive,
            _ => return None,
        })
    }

    pub fn uses_waves(self) -> bool {
        self != PrimitiveKind::Gaussian
    }
}

impl std::str::FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(PrimitiveKind::Gaussian),
            "gabor0" => Ok(PrimitiveKind::Gabor0),
            "onepluss" => Ok(PrimitiveKind::OnePlusS),
            "adaptive" => Ok(PrimitiveKind::Adaptive),
            other => Err(Error::invalid(format!("unknown primitive kind '{other}'"))),
        }
    }
}

/// Global hyperparameters shared by every primitive of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Degradation smoothness, in `[0, 1]`.
    pub gamma: f64,
    /// Spline tangent scale, in `(0, 1]`.
    pub beta: f64,
    /// Wave frequencies; their count is the wave count `N`.
    pub freqs: Vec<f64>,
    pub primitive: PrimitiveKind,
    pub spline: SplineKind,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            gamma: 0.5,
            beta: 1.0,
            freqs: vec![1.0, 2.0],
            primitive: PrimitiveKind::Adaptive,
            spline: SplineKind::Hermite,
        }
    }
}

impl SceneConfig {
    pub fn wave_count(&self) -> usize {
        self.freqs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta {} outside (0, 1]", self.beta)));
        }
        if self.freqs.is_empty() || self.freqs.len() > MAX_WAVES {
            return Err(Error::invalid(format!(
                "wave count {} outside 1..={MAX_WAVES}",
                self.freqs.len()
            )));
        }
        if self.freqs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("frequencies must be positive and finite"));
        }
        Ok(())
    }
}

/// One renderable unit, stored as unconstrained raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborPrimitive {
    pub mu_base: [f64; 3],
    pub log_scale: [f64; 3],
    /// Stored unnormalized; always used through `normalize`.
    pub rotation_base: Quat,
    pub opacity_raw: f64,
    pub color: [f64; 3],
    pub omega_raw: Vec<f64>,
    /// Index of this primitive's motion track in the scene.
    pub track: usize,
}

impl GaborPrimitive {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn omegas(&self) -> Waves {
        Waves::activate(&self.omega_raw)
    }
}

/// Activated wave weights `ω̂ ∈ [0, 1]`, stored inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waves {
    pub len: usize,
    pub values: [f64; MAX_WAVES],
}

impl Waves {
    pub fn activate(raw: &[f64]) -> Self {
        let mut values = [0.0; MAX_WAVES];
        for (v, r) in values.iter_mut().zip(raw) {
            *v = hard_sigmoid_ste(*r).forward;
        }
        Waves {
            len: raw.len().min(MAX_WAVES),
            values,
        }
    }

    pub fn from_slice(w: &[f64]) -> Self {
        let mut values = [0.0; MAX_WAVES];
        values[..w.len()].copy_from_slice(w);
        Waves {
            len: w.len(),
            values,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Forward value and surrogate backward factor of the straight-through hard sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ste {
    pub forward: f64,
    pub backward_scale: f64,
}

/// Hard sigmoid `clip((ω+1)/2, 0, 1)` forward, logistic derivative backward.
pub fn hard_sigmoid_ste(omega_raw: f64) -> Ste {
    let e = (-omega_raw.abs()).exp();
    Ste {
        forward: ((omega_raw + 1.0) * 0.5).clamp(0.0, 1.0),
        backward_scale: e / ((1.0 + e) * (1.0 + e)),
    }
}

/// Unnormalized standard Gaussian density in whitened coordinates.
pub fn eval_gaussian(offset: [f64; 2]) -> f64 {
    (-0.5 * (offset[0] * offset[0] + offset[1] * offset[1])).exp()
}

/// Local axis carrying wave `i`: waves alternate between the two in-plane axes.
#[inline]
pub fn wave_axis(i: usize) -> usize {
    i % 2
}

/// `Σ ω_i cos(f_i ⟨d_i, x⟩)` with zero phase, `local_pos` in phase units.
pub fn sinusoid_sum(local_pos: [f64; 2], omegas: &[f64], cfg: &SceneConfig) -> f64 {
    omegas
        .iter()
        .zip(&cfg.freqs)
        .enumerate()
        .map(|(i, (w, f))| w * (f * local_pos[wave_axis(i)]).cos())
        .sum()
}

fn mean(omegas: &[f64]) -> f64 {
    if omegas.is_empty() {
        0.0
    } else {
        omegas.iter().sum::<f64>() / omegas.len() as f64
    }
}

/// Energy compensation `b = γ + (1-γ)(1 - mean ω)`.
///
/// Evaluated as `1 - (1-γ)·mean ω`, which is exactly 1 when every weight is 0.
pub fn compensation_b(omegas: &[f64], gamma: f64) -> f64 {
    1.0 - (1.0 - gamma) * mean(omegas)
}

/// Adaptive modulation `b + (1/N) Σ ω_i cos(f_i ⟨d_i, x⟩)`.
pub fn s_adaptive(local_pos: [f64; 2], omegas: &[f64], cfg: &SceneConfig) -> f64 {
    let n = omegas.len().max(1) as f64;
    compensation_b(omegas, cfg.gamma) + sinusoid_sum(local_pos, omegas, cfg) / n
}

/// Modulation for any primitive kind.
pub fn modulation(kind: PrimitiveKind, local_pos: [f64; 2], omegas: &[f64], cfg: &SceneConfig) -> f64 {
    let n = omegas.len().max(1) as f64;
    match kind {
        PrimitiveKind::Gaussian => 1.0,
        PrimitiveKind::Gabor0 => sinusoid_sum(local_pos, omegas, cfg) / n,
        PrimitiveKind::OnePlusS => 1.0 + sinusoid_sum(local_pos, omegas, cfg),
        PrimitiveKind::Adaptive => s_adaptive(local_pos, omegas, cfg),
    }
}

/// Partials of the modulation with respect to phase coordinates and wave weights.
fn modulation_grad(
    kind: PrimitiveKind,
    u: [f64; 2],
    omegas: &[f64],
    cfg: &SceneConfig,
    d_omega: &mut [f64; MAX_WAVES],
) -> [f64; 2] {
    let mut du = [0.0; 2];
    let n = omegas.len().max(1) as f64;
    let (wave_scale, offset) = match kind {
        PrimitiveKind::Gaussian => return du,
        PrimitiveKind::Gabor0 => (1.0 / n, 0.0),
        PrimitiveKind::OnePlusS => (1.0, 0.0),
        PrimitiveKind::Adaptive => (1.0 / n, -(1.0 - cfg.gamma) / n),
    };
    for (i, (w, f)) in omegas.iter().zip(&cfg.freqs).enumerate() {
        let a = wave_axis(i);
        let (s, c) = (f * u[a]).sin_cos();
        d_omega[i] = wave_scale * c + offset;
        du[a] -= wave_scale * w * f * s;
    }
    du
}

/// A primitive's screen-space footprint at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub center: [f64; 2],
    pub depth: f64,
    pub cov: [[f64; 2]; 2],
    pub conic: [[f64; 2]; 2],
    /// Maps a pixel offset to phase coordinates.
    pub frame: [[f64; 2]; 2],
    pub opacity: f64,
    pub waves: Waves,
    pub color: [f64; 3],
    /// Three standard deviations along the major axis.
    pub radius: f64,
    pub valid: bool,
}

/// Mahalanobis radius (in σ) beyond which a splat contributes nothing.
pub const CUTOFF_SIGMA: f64 = 3.0;

impl Splat {
    /// Orthographic projection of an activated primitive.
    pub fn project(
        position: [f64; 3],
        rotation: &Quat,
        scale: [f64; 3],
        opacity: f64,
        waves: Waves,
        color: [f64; 3],
    ) -> Splat {
        let r = so3::to_matrix(rotation);
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                cov[i][k] = (0..3).map(|j| r[i][j] * r[k][j] * scale[j] * scale[j]).sum();
            }
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let valid = det > 1e-16 && det.is_finite();
        let conic = if valid {
            [
                [cov[1][1] / det, -cov[0][1] / det],
                [-cov[1][0] / det, cov[0][0] / det],
            ]
        } else {
            [[0.0; 2]; 2]
        };
        let mid = 0.5 * (cov[0][0] + cov[1][1]);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let mut frame = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                frame[a][b] = PI * r[b][a] / scale[a];
            }
        }
        Splat {
            center: [position[0], position[1]],
            depth: position[2],
            cov,
            conic,
            frame,
            opacity,
            waves,
            color,
            radius: CUTOFF_SIGMA * lambda_max.sqrt(),
            valid,
        }
    }

    #[inline]
    pub fn offset(&self, pixel: [f64; 2]) -> [f64; 2] {
        [pixel[0] - self.center[0], pixel[1] - self.center[1]]
    }

    /// Squared Mahalanobis distance of `pixel` from the center.
    #[inline]
    pub fn mahalanobis2(&self, pixel: [f64; 2]) -> f64 {
        let d = self.offset(pixel);
        let c = &self.conic;
        c[0][0] * d[0] * d[0] + (c[0][1] + c[1][0]) * d[0] * d[1] + c[1][1] * d[1] * d[1]
    }

    #[inline]
    pub fn local(&self, pixel: [f64; 2]) -> [f64; 2] {
        let d = self.offset(pixel);
        [
            self.frame[0][0] * d[0] + self.frame[0][1] * d[1],
            self.frame[1][0] * d[0] + self.frame[1][1] * d[1],
        ]
    }

    /// Whether the pixel lies inside the splat's support.
    #[inline]
    pub fn covers(&self, pixel: [f64; 2]) -> bool {
        self.valid && self.mahalanobis2(pixel) <= CUTOFF_SIGMA * CUTOFF_SIGMA
    }

    /// Unclamped `α · G · S`.
    pub fn alpha_unclamped(&self, pixel: [f64; 2], kind: PrimitiveKind, cfg: &SceneConfig) -> f64 {
        let g = (-0.5 * self.mahalanobis2(pixel)).exp();
        self.opacity * g * modulation(kind, self.local(pixel), self.waves.as_slice(), cfg)
    }

    /// Opacity contribution clamped to `[0, MAX_ALPHA]`.
    pub fn alpha(&self, pixel: [f64; 2], kind: PrimitiveKind, cfg: &SceneConfig) -> f64 {
        self.alpha_unclamped(pixel, kind, cfg).clamp(0.0, MAX_ALPHA)
    }

    /// Accumulates `g_alpha · ∂alpha/∂(splat quantities)` into `grad`.
    ///
    /// Returns the clamped alpha. Clamped pixels contribute no gradient.
    pub fn alpha_backward(
        &self,
        pixel: [f64; 2],
        kind: PrimitiveKind,
        cfg: &SceneConfig,
        g_alpha: f64,
        grad: &mut SplatGrad,
    ) -> f64 {
        let d = self.offset(pixel);
        let c = &self.conic;
        let cd = [
            c[0][0] * d[0] + c[0][1] * d[1],
            c[1][0] * d[0] + c[1][1] * d[1],
        ];
        let g = (-0.5 * (d[0] * cd[0] + d[1] * cd[1])).exp();
        let u = self.local(pixel);
        let waves = self.waves.as_slice();
        let s = modulation(kind, u, waves, cfg);
        let raw = self.opacity * g * s;
        if !(raw > 0.0 && raw < MAX_ALPHA) {
            return raw.clamp(0.0, MAX_ALPHA);
        }
        grad.opacity += g_alpha * g * s;
        let g_gauss = g_alpha * self.opacity * s;
        let g_mod = g_alpha * self.opacity * g;

        // Gaussian envelope
        let gg = g_gauss * g;
        grad.center[0] += gg * cd[0];
        grad.center[1] += gg * cd[1];
        for i in 0..2 {
            for j in 0..2 {
                grad.conic[i][j] -= 0.5 * gg * d[i] * d[j];
            }
        }

        // Modulation
        let mut d_omega = [0.0; MAX_WAVES];
        let du = modulation_grad(kind, u, waves, cfg, &mut d_omega);
        for (acc, dw) in grad.waves.iter_mut().zip(&d_omega[..waves.len()]) {
            *acc += g_mod * dw;
        }
        let gu = [g_mod * du[0], g_mod * du[1]];
        for a in 0..2 {
            for b in 0..2 {
                grad.frame[a][b] += gu[a] * d[b];
            }
        }
        grad.center[0] -= self.frame[0][0] * gu[0] + self.frame[1][0] * gu[1];
        grad.center[1] -= self.frame[0][1] * gu[0] + self.frame[1][1] * gu[1];
        raw
    }
}

/// Reverse-mode accumulator for the quantities of one [`Splat`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad {
    pub center: [f64; 2],
    pub depth: f64,
    pub conic: [[f64; 2]; 2],
    pub frame: [[f64; 2]; 2],
    pub opacity: f64,
    pub waves: [f64; MAX_WAVES],
    pub color: [f64; 3],
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.center[i] += o.center[i];
            for j in 0..2 {
                self.conic[i][j] += o.conic[i][j];
                self.frame[i][j] += o.frame[i][j];
            }
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
        for (a, b) in self.waves.iter_mut().zip(&o.waves) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&o.color) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == SplatGrad::default()
    }
}

/// Gradients with respect to the activated state a splat was projected from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateGrad {
    pub position: [f64; 3],
    /// With respect to the unit rotation quaternion, treated as a free 4-vector.
    pub rotation: Quat,
    pub log_scale: [f64; 3],
    /// With respect to activated opacity.
    pub opacity: f64,
    /// With respect to activated wave weights `ω̂`.
    pub waves: [f64; MAX_WAVES],
    pub color: [f64; 3],
}

/// Pulls splat-level gradients back through [`Splat::project`].
pub fn project_backward(splat: &Splat, rotation: &Quat, scale: [f64; 3], grad: &SplatGrad) -> StateGrad {
    let r = so3::to_matrix(rotation);
    let mut g_r: Mat3 = [[0.0; 3]; 3];
    let mut g_s = [0.0; 3];

    if splat.valid {
        // conic = cov⁻¹  ⇒  dL/dcov = -C G C
        let c = &splat.conic;
        let mut cg = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cg[i][j] = (0..2).map(|k| c[i][k] * grad.conic[k][j]).sum();
            }
        }
        let mut g_cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g_cov[i][j] = -(0..2).map(|k| cg[i][k] * c[k][j]).sum::<f64>();
            }
        }
        // cov = A Aᵀ, A[i][j] = R[i][j] s_j  ⇒  dL/dA = (G + Gᵀ) A
        for i in 0..2 {
            for j in 0..3 {
                let g_a: f64 = (0..2)
                    .map(|k| (g_cov[i][k] + g_cov[k][i]) * r[k][j] * scale[j])
                    .sum();
                g_r[i][j] += g_a * scale[j];
                g_s[j] += g_a * r[i][j];
            }
        }
    }

    // frame[a][b] = π R[b][a] / s_a
    for a in 0..2 {
        for b in 0..2 {
            let gl = grad.frame[a][b];
            g_r[b][a] += PI * gl / scale[a];
            g_s[a] -= PI * gl * r[b][a] / (scale[a] * scale[a]);
        }
    }

    StateGrad {
        position: [grad.center[0], grad.center[1], grad.depth],
        rotation: so3::to_matrix_backward(rotation, &g_r),
        log_scale: [g_s[0] * scale[0], g_s[1] * scale[1], g_s[2] * scale[2]],
        opacity: grad.opacity,
        waves: grad.waves,
        color: grad.color,
    }
}

impl GaborPrimitive {
    /// Footprint of the primitive at rest (base position and rotation).
    pub fn splat(&self) -> Splat {
        let (q, _) = so3::normalize(&self.rotation_base);
        Splat::project(
            self.mu_base,
            &q,
            self.scale(),
            self.opacity(),
            self.omegas(),
            self.color,
        )
    }

    /// Opacity contribution of the primitive at rest.
    pub fn alpha_gabor(&self, pixel: [f64; 2], cfg: &SceneConfig) -> f64 {
        self.splat().alpha(pixel, cfg.primitive, cfg)
    }
}

/// Partials of [`GaborPrimitive::alpha_gabor`] with respect to raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradients {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: Quat,
    /// Routed through the straight-through surrogate.
    pub omega_raw: Vec<f64>,
    pub opacity_raw: f64,
}

pub fn kernel_gradients(prim: &GaborPrimitive, pixel: [f64; 2], cfg: &SceneConfig) -> KernelGradients {
    let (q, _) = so3::normalize(&prim.rotation_base);
    let scale = prim.scale();
    let splat = prim.splat();
    let mut sg = SplatGrad::default();
    splat.alpha_backward(pixel, cfg.primitive, cfg, 1.0, &mut sg);
    let st = project_backward(&splat, &q, scale, &sg);
    let alpha = splat.opacity;
    KernelGradients {
        mu: st.position,
        log_scale: st.log_scale,
        rotation: so3::normalize_backward(&prim.rotation_base, &st.rotation),
        omega_raw: prim
            .omega_raw
            .iter()
            .enumerate()
            .map(|(i, w)| st.waves[i] * hard_sigmoid_ste(*w).backward_scale)
            .collect(),
        opacity_raw: st.opacity * alpha * (1.0 - alpha),
    }
}
