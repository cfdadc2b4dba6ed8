use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Standardize to a target mean/std, then rescale to a fixed L2 norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSpec {
    pub target_mean: f64,
    pub target_std: f64,
    pub target_norm: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            target_mean: 0.0,
            target_std: 1.0,
            target_norm: 25.0,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_std > 0.0 && self.target_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("target_std {} must be > 0", self.target_std)));
        }
        if !(self.target_norm > 0.0 && self.target_norm.is_finite()) {
            return Err(Error::InvalidParameter(format!("target_norm {} must be > 0", self.target_norm)));
        }
        if !self.target_mean.is_finite() {
            return Err(Error::InvalidParameter("target_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Output of the normalization together with what its adjoint needs.
#[derive(Debug, Clone)]
pub struct NormalizedImage {
    pub image: Image,
    standardized: Vec<f64>,
    std: f64,
    mid_norm: f64,
    spec: NormalizationSpec,
}

pub fn normalize_image(img: &Image, spec: &NormalizationSpec) -> Result<Image> {
    Ok(normalize_image_with_grad(img, spec)?.image)
}

/// Stage 1: `z = (I - mean) · target_std / std + target_mean` (population std).
/// Stage 2: `out = z · target_norm / ‖z‖`.
pub fn normalize_image_with_grad(img: &Image, spec: &NormalizationSpec) -> Result<NormalizedImage> {
    spec.validate()?;
    img.check_finite("input image")?;
    let n = img.len() as f64;
    let mean = img.mean();
    let var = img.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !(std > mean.abs() * 1e-14) {
        return Err(Error::Degenerate("constant image cannot be standardized".into()));
    }
    let standardized: Vec<f64> = img.data().iter().map(|x| (x - mean) / std).collect();
    let mid: Vec<f64> = standardized
        .iter()
        .map(|u| u * spec.target_std + spec.target_mean)
        .collect();
    let mid_norm = mid.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(mid_norm > 0.0) {
        return Err(Error::Degenerate("standardized image has zero norm".into()));
    }
    let k = spec.target_norm / mid_norm;
    let out = Image::new(img.width(), img.height(), mid.iter().map(|x| x * k).collect())?;
    Ok(NormalizedImage {
        image: out,
        standardized,
        std,
        mid_norm,
        spec: *spec,
    })
}

impl NormalizedImage {
    /// Vector-Jacobian product: adjoint on the output to adjoint on the input.
    pub fn backward(&self, adjoint: &Image) -> Result<Image> {
        if !adjoint.same_shape(&self.image) {
            return Err(Error::DimensionMismatch("normalization adjoint shape".into()));
        }
        let n = self.standardized.len() as f64;
        let y = self.image.data();
        let t = self.spec.target_norm;
        // out = T · z / ‖z‖  =>  gz = (T/‖z‖)(gy - ŷ (ŷ·gy)), ŷ = out / T.
        let y_dot_g: f64 = y.iter().zip(adjoint.data()).map(|(a, b)| a * b).sum::<f64>() / t;
        let scale = t / self.mid_norm;
        let gu: Vec<f64> = adjoint
            .data()
            .iter()
            .zip(y)
            .map(|(g, yy)| scale * (g - yy / t * y_dot_g) * self.spec.target_std)
            .collect();
        // u = (x - mean)/std  =>  gx = (gu - mean(gu) - u · mean(gu ∘ u)) / std.
        let mean_gu = gu.iter().sum::<f64>() / n;
        let mean_gu_u = gu.iter().zip(&self.standardized).map(|(g, u)| g * u).sum::<f64>() / n;
        let gx = gu
            .iter()
            .zip(&self.standardized)
            .map(|(g, u)| (g - mean_gu - u * mean_gu_u) / self.std)
            .collect();
        Image::new(self.image.width(), self.image.height(), gx)
    }
}
