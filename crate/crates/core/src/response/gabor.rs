use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::ResponseModel;
use crate::error::{Error, Result};
use crate::render::Image;

/// Gabor filter parameters. Pixel coordinates have x to the right and y down
/// (row index); `orientation` rotates the carrier direction from +x toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaborFilter {
    /// Radians.
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
    /// Envelope standard deviation in pixels.
    pub sigma: f64,
    /// `[x, y]` in pixel coordinates; the image center `((w-1)/2, (h-1)/2)` when absent.
    pub center: Option<[f64; 2]>,
    pub amplitude: f64,
}

impl Default for GaborFilter {
    fn default() -> Self {
        Self {
            orientation: 0.0,
            frequency: 0.08,
            phase: 0.0,
            sigma: 7.0,
            center: None,
            amplitude: 1.0,
        }
    }
}

impl GaborFilter {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.orientation, self.frequency, self.phase, self.sigma, self.amplitude]
            .iter()
            .all(|x| x.is_finite())
            && self.center.is_none_or(|c| c.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidParameter("gabor parameters must be finite".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("gabor sigma {} must be > 0", self.sigma)));
        }
        Ok(())
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    fn center_for(&self, width: usize, height: usize) -> [f64; 2] {
        self.center
            .unwrap_or([(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0])
    }
}

/// `amplitude · exp(-(x'² + y'²)/(2σ²)) · cos(2π·frequency·x' + phase)` with
/// `(x', y')` the coordinates relative to the center rotated by `-orientation`.
pub fn make_gabor(params: &GaborFilter, width: usize, height: usize) -> Result<Image> {
    params.validate()?;
    let [cx, cy] = params.center_for(width, height);
    let (s, c) = params.orientation.sin_cos();
    let inv_two_var = 0.5 / (params.sigma * params.sigma);
    let mut data = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let x = col as f64 - cx;
            let y = row as f64 - cy;
            let xr = x * c + y * s;
            let yr = -x * s + y * c;
            let env = (-(xr * xr + yr * yr) * inv_two_var).exp();
            data.push(params.amplitude * env * (TAU * params.frequency * xr + params.phase).cos());
        }
    }
    Image::new(width, height, data)
}

fn check_shape(img: &Image, filter: &Image) -> Result<()> {
    if !img.same_shape(filter) {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, filter is {}x{}",
            img.width(),
            img.height(),
            filter.width(),
            filter.height()
        )));
    }
    Ok(())
}

/// Rectified linear Gabor unit: `max(0, ⟨img, G⟩) / (budget · ‖G‖)`.
/// The gradient at the rectification kink is taken as zero.
#[derive(Debug, Clone)]
pub struct SimpleCell {
    params: GaborFilter,
    filter: Image,
    denom: f64,
}

impl SimpleCell {
    pub fn new(params: GaborFilter, width: usize, height: usize, norm_budget: f64) -> Result<Self> {
        let filter = make_gabor(&params, width, height)?;
        Self::from_filter(params, filter, norm_budget)
    }

    fn from_filter(params: GaborFilter, filter: Image, norm_budget: f64) -> Result<Self> {
        if !(norm_budget > 0.0) {
            return Err(Error::InvalidParameter(format!("norm budget {norm_budget} must be > 0")));
        }
        let norm = filter.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("simple cell filter is identically zero".into()));
        }
        Ok(Self {
            params,
            filter,
            denom: norm_budget * norm,
        })
    }

    pub fn params(&self) -> &GaborFilter {
        &self.params
    }

    pub fn filter(&self) -> &Image {
        &self.filter
    }

    /// The image on the norm budget sphere that attains the bound of 1.
    pub fn optimal_stimulus(&self) -> Image {
        self.filter.scaled(self.denom / self.filter.norm().powi(2))
    }

    pub fn drive(&self, img: &Image) -> Result<f64> {
        check_shape(img, &self.filter)?;
        Ok(img.dot(&self.filter) / self.denom)
    }
}

impl ResponseModel for SimpleCell {
    fn respond(&self, img: &Image) -> Result<f64> {
        Ok(self.drive(img)?.max(0.0))
    }

    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        let drive = self.drive(img)?;
        if drive > 0.0 {
            Ok((drive, self.filter.scaled(1.0 / self.denom)))
        } else {
            Ok((0.0, Image::zeros(img.width(), img.height())))
        }
    }

    fn describe(&self) -> String {
        format!("simple cell {:?}", self.params)
    }
}

/// Phase-invariant energy unit over a quadrature pair:
/// `sqrt(⟨img, G₁⟩² + ⟨img, G₂⟩²) / (budget · ‖G₁‖)`.
#[derive(Debug, Clone)]
pub struct ComplexCell {
    params: GaborFilter,
    even: Image,
    odd: Image,
    denom: f64,
}

impl ComplexCell {
    /// Quadrature pair built from `params` with phases φ and φ + π/2.
    pub fn new(params: GaborFilter, width: usize, height: usize, norm_budget: f64) -> Result<Self> {
        let second = params.with_phase(params.phase + FRAC_PI_2);
        Self::from_pair(params, second, width, height, norm_budget)
    }

    /// Rejects pairs that differ in anything but a π/2 phase step.
    pub fn from_pair(
        first: GaborFilter,
        second: GaborFilter,
        width: usize,
        height: usize,
        norm_budget: f64,
    ) -> Result<Self> {
        let same_shape = first.orientation == second.orientation
            && first.frequency == second.frequency
            && first.sigma == second.sigma
            && first.center == second.center
            && first.amplitude == second.amplitude;
        let dphi = (second.phase - first.phase - FRAC_PI_2).rem_euclid(TAU);
        let dphi = dphi.min(TAU - dphi);
        if !same_shape || dphi > 1e-9 {
            return Err(Error::InvalidParameter(
                "complex cell filters must form a quadrature pair (same shape, phase offset π/2)".into(),
            ));
        }
        if !(norm_budget > 0.0) {
            return Err(Error::InvalidParameter(format!("norm budget {norm_budget} must be > 0")));
        }
        let even = make_gabor(&first, width, height)?;
        let odd = make_gabor(&second, width, height)?;
        let norm = even.norm();
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("complex cell filter is identically zero".into()));
        }
        Ok(Self {
            params: first,
            even,
            odd,
            denom: norm_budget * norm,
        })
    }

    pub fn params(&self) -> &GaborFilter {
        &self.params
    }

    fn projections(&self, img: &Image) -> Result<(f64, f64)> {
        check_shape(img, &self.even)?;
        Ok((img.dot(&self.even), img.dot(&self.odd)))
    }
}

impl ResponseModel for ComplexCell {
    fn respond(&self, img: &Image) -> Result<f64> {
        let (a, b) = self.projections(img)?;
        Ok((a * a + b * b).sqrt() / self.denom)
    }

    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        let (a, b) = self.projections(img)?;
        let energy = (a * a + b * b).sqrt();
        let mut g = Image::zeros(img.width(), img.height());
        if energy > 0.0 {
            let (ka, kb) = (a / (energy * self.denom), b / (energy * self.denom));
            for ((out, e), o) in g.data_mut().iter_mut().zip(self.even.data()).zip(self.odd.data()) {
                *out = ka * e + kb * o;
            }
        }
        Ok((energy / self.denom, g))
    }

    fn describe(&self) -> String {
        format!("complex cell {:?}", self.params)
    }
}

/// Phase (degrees in `[0, 360)`) of the Gabor, from a bank sharing every
/// other parameter with `params`, that correlates best with `img`.
pub fn dominant_phase(img: &Image, params: &GaborFilter, step_degrees: f64) -> Result<f64> {
    if !(step_degrees > 0.0) {
        return Err(Error::InvalidParameter("phase step must be > 0".into()));
    }
    let steps = (360.0 / step_degrees).round().max(1.0) as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for s in 0..steps {
        let deg = s as f64 * 360.0 / steps as f64;
        let g = make_gabor(&params.with_phase(deg.to_radians()), img.width(), img.height())?;
        let score = img.dot(&g) / g.norm();
        if score > best.0 {
            best = (score, deg);
        }
    }
    Ok(best.1)
}

/// Circular distance between two angles in degrees, in `[0, 180]`.
pub fn phase_distance_degrees(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
