//! The full learnable scene and its gradient mirror.

use std::fmt;

use crate::error::{Error, Result};
use crate::kernel::{GaborPrimitive, SceneConfig};
use crate::motion::{MotionTrack, Vec3};
use crate::so3::{self, Quat};

/// Ties a supervised 2D track to the primitive seeded on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackBinding {
    pub point_id: u64,
    pub primitive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub config: SceneConfig,
    pub width: usize,
    pub height: usize,
    /// Number of video frames the scene was built for.
    pub frame_count: usize,
    /// Keyframe grid shared by every track.
    pub keyframes: Vec<f64>,
    pub primitives: Vec<GaborPrimitive>,
    pub tracks: Vec<MotionTrack>,
    pub bindings: Vec<TrackBinding>,
}

/// Learnable parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Color,
    Opacity,
    Omega,
    TranslationControl,
    RotationControl,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Color,
        ParamGroup::Opacity,
        ParamGroup::Omega,
        ParamGroup::TranslationControl,
        ParamGroup::RotationControl,
    ];

    pub fn is_motion(self) -> bool {
        matches!(
            self,
            ParamGroup::Position | ParamGroup::TranslationControl | ParamGroup::RotationControl
        )
    }

    pub fn is_control(self) -> bool {
        matches!(self, ParamGroup::TranslationControl | ParamGroup::RotationControl)
    }

    pub fn index(self) -> usize {
        ParamGroup::ALL.iter().position(|g| *g == self).unwrap()
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::Position => "position",
            ParamGroup::Scale => "scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Color => "color",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Omega => "omega",
            ParamGroup::TranslationControl => "translation-control",
            ParamGroup::RotationControl => "rotation-control",
        };
        f.write_str(s)
    }
}

impl SceneModel {
    /// A scene with no primitives on the default keyframe grid for `frame_count` frames.
    pub fn empty(config: SceneConfig, width: usize, height: usize, frame_count: usize) -> Self {
        SceneModel {
            config,
            width,
            height,
            frame_count,
            keyframes: crate::motion::keyframe_grid(frame_count),
            primitives: Vec::new(),
            tracks: Vec::new(),
            bindings: Vec::new(),
        }
    }

    /// Appends a primitive with its own motion track and returns its index.
    pub fn add_primitive(&mut self, mut prim: GaborPrimitive, track: MotionTrack) -> usize {
        prim.track = self.tracks.len();
        self.tracks.push(track);
        self.primitives.push(prim);
        self.primitives.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        crate::motion::validate_times(&self.keyframes)?;
        let n = self.config.wave_count();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.track >= self.tracks.len() {
                return Err(Error::invalid(format!(
                    "primitive {i} references missing track {}",
                    p.track
                )));
            }
            if p.omega_raw.len() != n {
                return Err(Error::invalid(format!(
                    "primitive {i} has {} wave weights, expected {n}",
                    p.omega_raw.len()
                )));
            }
        }
        for (i, tr) in self.tracks.iter().enumerate() {
            tr.validate()?;
            if tr.times != self.keyframes {
                return Err(Error::invalid(format!("track {i} does not use the scene keyframes")));
            }
        }
        for b in &self.bindings {
            if b.primitive >= self.primitives.len() {
                return Err(Error::invalid(format!(
                    "binding of point {} references missing primitive {}",
                    b.point_id, b.primitive
                )));
            }
        }
        Ok(())
    }

    /// Time of frame `i`: `i / (F - 1)`, with a single frame at 0.
    pub fn frame_time(&self, i: usize) -> f64 {
        frame_time(i, self.frame_count)
    }

    /// Group of every scalar in [`flatten`](Self::flatten) order.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let n = self.config.wave_count();
        let mut out = Vec::with_capacity(self.param_count());
        for _ in &self.primitives {
            out.extend([ParamGroup::Position; 3]);
            out.extend([ParamGroup::Scale; 3]);
            out.extend([ParamGroup::Rotation; 4]);
            out.extend([ParamGroup::Color; 3]);
            out.push(ParamGroup::Opacity);
            out.extend(std::iter::repeat_n(ParamGroup::Omega, n));
        }
        for tr in &self.tracks {
            out.extend(std::iter::repeat_n(ParamGroup::TranslationControl, 3 * tr.len()));
            out.extend(std::iter::repeat_n(ParamGroup::RotationControl, 3 * tr.len()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let n = self.config.wave_count();
        self.primitives.len() * (14 + n) + self.tracks.iter().map(|t| 6 * t.len()).sum::<usize>()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.primitives {
            out.extend(p.mu_base);
            out.extend(p.log_scale);
            out.extend(p.rotation_base);
            out.extend(p.color);
            out.push(p.opacity_raw);
            out.extend(&p.omega_raw);
        }
        for tr in &self.tracks {
            tr.y.iter().for_each(|v| out.extend(v));
            tr.r.iter().for_each(|v| out.extend(v));
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector of {} for a scene of {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter().copied();
        let mut take = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        for p in &mut self.primitives {
            take(&mut p.mu_base);
            take(&mut p.log_scale);
            take(&mut p.rotation_base);
            take(&mut p.color);
            take(std::slice::from_mut(&mut p.opacity_raw));
            take(&mut p.omega_raw);
        }
        for tr in &mut self.tracks {
            tr.y.iter_mut().for_each(|v| take(v));
            tr.r.iter_mut().for_each(|v| take(v));
        }
        Ok(())
    }

    /// Re-imposes constraints after an unconstrained update: unit rotations,
    /// wrapped rotation controls, colors in `[0, 1]`.
    pub fn project_constraints(&mut self) {
        for p in &mut self.primitives {
            p.rotation_base = so3::normalize(&p.rotation_base).0;
            for c in &mut p.color {
                *c = c.clamp(0.0, 1.0);
            }
        }
        for tr in &mut self.tracks {
            tr.wrap_rotations();
        }
    }

    /// Primitive bound to a supervised track point.
    pub fn bound_primitive(&self, point_id: u64) -> Option<usize> {
        self.bindings
            .iter()
            .find(|b| b.point_id == point_id)
            .map(|b| b.primitive)
    }
}

pub fn frame_time(i: usize, frame_count: usize) -> f64 {
    if frame_count <= 1 {
        0.0
    } else {
        i as f64 / (frame_count - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveGrad {
    pub mu_base: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub color: Vec3,
    pub opacity_raw: f64,
    pub omega_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackGrad {
    pub y: Vec<Vec3>,
    pub r: Vec<Vec3>,
}

/// One gradient slot per learnable scalar of a [`SceneModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub primitives: Vec<PrimitiveGrad>,
    pub tracks: Vec<TrackGrad>,
}

impl GradBuffer {
    pub fn zeros_like(scene: &SceneModel) -> Self {
        let n = scene.config.wave_count();
        GradBuffer {
            primitives: scene
                .primitives
                .iter()
                .map(|_| PrimitiveGrad {
                    omega_raw: vec![0.0; n],
                    ..Default::default()
                })
                .collect(),
            tracks: scene
                .tracks
                .iter()
                .map(|t| TrackGrad {
                    y: vec![[0.0; 3]; t.len()],
                    r: vec![[0.0; 3]; t.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.primitives {
            out.extend(p.mu_base);
            out.extend(p.log_scale);
            out.extend(p.rotation);
            out.extend(p.color);
            out.push(p.opacity_raw);
            out.extend(&p.omega_raw);
        }
        for tr in &self.tracks {
            tr.y.iter().for_each(|v| out.extend(v));
            tr.r.iter().for_each(|v| out.extend(v));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|v| *v == 0.0)
    }

    /// Adds `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &GradBuffer, scale: f64) {
        fn axpy(a: &mut [f64], b: &[f64], s: f64) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        for (a, b) in self.primitives.iter_mut().zip(&other.primitives) {
            axpy(&mut a.mu_base, &b.mu_base, scale);
            axpy(&mut a.log_scale, &b.log_scale, scale);
            axpy(&mut a.rotation, &b.rotation, scale);
            axpy(&mut a.color, &b.color, scale);
            a.opacity_raw += scale * b.opacity_raw;
            axpy(&mut a.omega_raw, &b.omega_raw, scale);
        }
        for (a, b) in self.tracks.iter_mut().zip(&other.tracks) {
            for (x, y) in a.y.iter_mut().zip(&b.y) {
                axpy(x, y, scale);
            }
            for (x, y) in a.r.iter_mut().zip(&b.r) {
                axpy(x, y, scale);
            }
        }
    }
}
