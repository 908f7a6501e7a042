//! Affine transformation matrices, inverse warping with the bilinear kernel,
//! analytic derivatives of the warp and per-factor derivative bounds.
//!
//! Coordinates are in pixels with the origin at the image centre: output
//! pixel `(row, col)` sits at `x' = col - (W-1)/2`, `y' = row - (H-1)/2`.
//! The matrix maps output coordinates to source coordinates
//! (`[x, y]ᵀ = A [x', y', 1]ᵀ`), so rotation and scaling act about the image
//! centre and translations are plain pixel offsets of the source lookup.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformation factors. Angles in degrees, translations in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rotation: f64,
    pub scale: f64,
    pub t_hor: f64,
    pub t_vrt: f64,
}

impl TransformParams {
    pub const IDENTITY: Self = Self {
        rotation: 0.0,
        scale: 1.0,
        t_hor: 0.0,
        t_vrt: 0.0,
    };

    pub fn get(&self, factor: Factor) -> f64 {
        match factor {
            Factor::Rotation => self.rotation,
            Factor::Scale => self.scale,
            Factor::TranslateHor => self.t_hor,
            Factor::TranslateVrt => self.t_vrt,
        }
    }

    pub fn set(&mut self, factor: Factor, value: f64) {
        match factor {
            Factor::Rotation => self.rotation = value,
            Factor::Scale => self.scale = value,
            Factor::TranslateHor => self.t_hor = value,
            Factor::TranslateVrt => self.t_vrt = value,
        }
    }
}

impl Default for TransformParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    Rotation,
    Scale,
    TranslateHor,
    TranslateVrt,
}

impl Factor {
    pub const ALL: [Factor; 4] = [
        Factor::Rotation,
        Factor::Scale,
        Factor::TranslateHor,
        Factor::TranslateVrt,
    ];
}

/// How the scale factor enters the matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixMode {
    /// `[[λcosγ, -sinγ, t_h], [sinγ, λcosγ, t_v]]`: λ scales the cosine
    /// entries only.
    #[default]
    CosineScaled,
    /// `λ R(γ)` plus translation, a proper similarity transform.
    Composed,
}

/// 2×3 source-lookup matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix(pub [[f64; 3]; 2]);

impl AffineMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }
}

pub fn build_matrix(params: &TransformParams, mode: MatrixMode) -> AffineMatrix {
    let g = params.rotation.to_radians();
    let (s, c) = g.sin_cos();
    let l = params.scale;
    let (a12, a21) = match mode {
        MatrixMode::CosineScaled => (-s, s),
        MatrixMode::Composed => (-l * s, l * s),
    };
    AffineMatrix([[l * c, a12, params.t_hor], [a21, l * c, params.t_vrt]])
}

/// Entrywise derivative of [`build_matrix`] with respect to one factor.
pub fn matrix_derivative(params: &TransformParams, factor: Factor, mode: MatrixMode) -> AffineMatrix {
    let g = params.rotation.to_radians();
    let (s, c) = g.sin_cos();
    let l = params.scale;
    let deg = PI / 180.0;
    let m = match (factor, mode) {
        (Factor::Rotation, MatrixMode::CosineScaled) => {
            [[-l * s * deg, -c * deg, 0.0], [c * deg, -l * s * deg, 0.0]]
        }
        (Factor::Rotation, MatrixMode::Composed) => {
            [[-l * s * deg, -l * c * deg, 0.0], [l * c * deg, -l * s * deg, 0.0]]
        }
        (Factor::Scale, MatrixMode::CosineScaled) => [[c, 0.0, 0.0], [0.0, c, 0.0]],
        (Factor::Scale, MatrixMode::Composed) => [[c, -s, 0.0], [s, c, 0.0]],
        (Factor::TranslateHor, _) => [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
        (Factor::TranslateVrt, _) => [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    };
    AffineMatrix(m)
}

/// `H × W × C` image, channel-interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Image(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Image(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Image(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Pixel value with zero outside the grid.
    fn at(&self, row: i64, col: i64, ch: usize) -> f64 {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            0.0
        } else {
            self.get(row as usize, col as usize, ch)
        }
    }

    /// Channel-major copy (`C × H × W`).
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }
}

fn centre(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Source pixel coordinates `(x, y)` (column, row) read by output pixel
/// `(row, col)`.
pub fn source_coords(height: usize, width: usize, a: &AffineMatrix, row: usize, col: usize) -> (f64, f64) {
    let (cx, cy) = (centre(width), centre(height));
    let (x, y) = a.apply(col as f64 - cx, row as f64 - cy);
    (x + cx, y + cy)
}

/// Bilinear sample of one channel and its partial derivatives
/// `(V, ∂V/∂x, ∂V/∂y)`.
///
/// Only the four neighbours `⌊x⌋, ⌊x⌋+1` × `⌊y⌋, ⌊y⌋+1` carry weight. At an
/// integral coordinate the derivative is the right-hand one.
pub fn sample(image: &GrayImage, ch: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0 as i64, y0 as i64);
    let u00 = image.at(r0, c0, ch);
    let u01 = image.at(r0, c0 + 1, ch);
    let u10 = image.at(r0 + 1, c0, ch);
    let u11 = image.at(r0 + 1, c0 + 1, ch);
    let v = (1.0 - fy) * ((1.0 - fx) * u00 + fx * u01) + fy * ((1.0 - fx) * u10 + fx * u11);
    let dvdx = (1.0 - fy) * (u01 - u00) + fy * (u11 - u10);
    let dvdy = (1.0 - fx) * (u10 - u00) + fx * (u11 - u01);
    (v, dvdx, dvdy)
}

/// Inverse warp with the bilinear kernel and zero padding.
pub fn warp(image: &GrayImage, a: &AffineMatrix) -> GrayImage {
    let (h, w, nc) = (image.height, image.width, image.channels);
    let mut data = Vec::with_capacity(image.data.len());
    for row in 0..h {
        for col in 0..w {
            let (x, y) = source_coords(h, w, a, row, col);
            for ch in 0..nc {
                data.push(sample(image, ch, x, y).0.clamp(0.0, 1.0));
            }
        }
    }
    GrayImage {
        height: h,
        width: w,
        channels: nc,
        data,
    }
}

/// `∂V/∂factor` for every output pixel and channel, in the image's
/// `H × W × C` layout.
pub fn warp_grad(image: &GrayImage, params: &TransformParams, factor: Factor, mode: MatrixMode) -> Vec<f64> {
    let (h, w, nc) = (image.height, image.width, image.channels);
    let a = build_matrix(params, mode);
    let da = matrix_derivative(params, factor, mode).0;
    let (cx, cy) = (centre(w), centre(h));
    let mut out = Vec::with_capacity(image.data.len());
    for row in 0..h {
        for col in 0..w {
            let (xo, yo) = (col as f64 - cx, row as f64 - cy);
            let (x, y) = source_coords(h, w, &a, row, col);
            let dx = da[0][0] * xo + da[0][1] * yo + da[0][2];
            let dy = da[1][0] * xo + da[1][1] * yo + da[1][2];
            for ch in 0..nc {
                let (_, dvdx, dvdy) = sample(image, ch, x, y);
                out.push(dvdx * dx + dvdy * dy);
            }
        }
    }
    out
}

/// Per-pixel bounds on `|∂V/∂factor|` for images with values in `[0, 1]`,
/// valid for [`MatrixMode::CosineScaled`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorBounds {
    /// Per degree.
    pub rotation: f64,
    pub scale: f64,
    /// Per pixel.
    pub t_hor: f64,
    pub t_vrt: f64,
}

impl FactorBounds {
    pub fn get(&self, factor: Factor) -> f64 {
        match factor {
            Factor::Rotation => self.rotation,
            Factor::Scale => self.scale,
            Factor::TranslateHor => self.t_hor,
            Factor::TranslateVrt => self.t_vrt,
        }
    }
}

fn contains_multiple(lo: f64, hi: f64, offset: f64, period: f64) -> bool {
    ((lo - offset) / period).ceil() <= ((hi - offset) / period).floor()
}

/// `sup |cos γ|` over `[lo, hi]` degrees.
pub fn sup_abs_cos(lo: f64, hi: f64) -> f64 {
    if contains_multiple(lo, hi, 0.0, 180.0) {
        1.0
    } else {
        lo.to_radians().cos().abs().max(hi.to_radians().cos().abs())
    }
}

/// `sup |sin γ|` over `[lo, hi]` degrees.
pub fn sup_abs_sin(lo: f64, hi: f64) -> f64 {
    if contains_multiple(lo, hi, 90.0, 180.0) {
        1.0
    } else {
        lo.to_radians().sin().abs().max(hi.to_radians().sin().abs())
    }
}

/// Bounds from `|∂V/∂x|, |∂V/∂y| ≤ 1`, `|∂x/∂θ| ≤ W`, `|∂y/∂θ| ≤ H` and the
/// chain rule through the matrix entries; the scale bound is
/// `sup |cos γ| · (W + H)`.
pub fn lipschitz_bound(
    height: usize,
    width: usize,
    rotation: (f64, f64),
    scale: (f64, f64),
) -> Result<FactorBounds> {
    for &(lo, hi) in &[rotation, scale] {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::EmptyRange { lo, hi });
        }
    }
    let span = (width + height) as f64;
    let cos = sup_abs_cos(rotation.0, rotation.1);
    let sin = sup_abs_sin(rotation.0, rotation.1);
    let lambda = scale.0.abs().max(scale.1.abs());
    Ok(FactorBounds {
        rotation: PI / 180.0 * (lambda * sin + cos) * span,
        scale: cos * span,
        t_hor: 1.0,
        t_vrt: 1.0,
    })
}
