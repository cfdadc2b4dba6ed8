//! Scalar response models over normalized images.
//!
//! The built-in simple and complex cells are bounded in `[0, 1]` for any
//! image whose L2 norm equals the norm budget, which makes "approaching the
//! upper bound" a literal, checkable statement. Arbitrary encoders plug in
//! through [`ExternalModel`].

mod external;
mod gabor;

pub use external::{
    decode_request, decode_response, encode_request, encode_response, read_request, write_response,
    ExternalModel,
};
pub use gabor::{dominant_phase, make_gabor, phase_distance_degrees, ComplexCell, GaborFilter, SimpleCell};

use crate::error::Result;
use crate::render::Image;

/// A differentiable scalar function of an image.
pub trait ResponseModel: Send + Sync {
    fn respond(&self, img: &Image) -> Result<f64>;

    /// Response together with its gradient with respect to every pixel.
    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)>;

    fn describe(&self) -> String;
}

/// Mean pixel value. Mostly useful as a consistency and symmetry probe.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanResponse;

impl ResponseModel for MeanResponse {
    fn respond(&self, img: &Image) -> Result<f64> {
        Ok(img.mean())
    }

    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        let g = 1.0 / img.len() as f64;
        Ok((img.mean(), Image::filled(img.width(), img.height(), g)))
    }

    fn describe(&self) -> String {
        "mean".into()
    }
}

impl<M: ResponseModel + ?Sized> ResponseModel for Box<M> {
    fn respond(&self, img: &Image) -> Result<f64> {
        (**self).respond(img)
    }
    fn respond_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        (**self).respond_gradient(img)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}
