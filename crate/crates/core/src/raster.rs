//! Dense row-major float images.

use crate::error::{Error, Result};

/// Interleaved `height × width × channels` buffer of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} samples cannot hold {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Raster, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts a single channel as its own raster.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
