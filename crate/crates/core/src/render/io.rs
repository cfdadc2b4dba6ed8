use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// ASCII graymap (P2), byte-stable across runs.
    Pgm,
    /// 8-bit grayscale PNG.
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "png" => Some(Self::Png),
            _ => None,
        }
    }
}

/// How luminance values map onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// `[0, 1]` maps to `[0, 255]`, values outside are clipped.
    #[default]
    Fixed,
    /// The image's own min and max map to 0 and 255. A constant image maps to 0.
    MinMax,
}

/// Quantizes with round-half-up, so 0.5 becomes 128.
pub fn image_to_gray8(img: &Image, window: Window) -> Vec<u8> {
    let (lo, scale) = match window {
        Window::Fixed => (0.0, 1.0),
        Window::MinMax => {
            let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, 1.0 / (hi - lo))
            } else {
                (lo, 0.0)
            }
        }
    };
    img.data()
        .iter()
        .map(|&x| {
            let t = ((x - lo) * scale).clamp(0.0, 1.0);
            (t * 255.0 + 0.5).floor().min(255.0) as u8
        })
        .collect()
}

pub fn write_pgm(img: &Image, window: Window) -> String {
    let bytes = image_to_gray8(img, window);
    let mut s = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for row in bytes.chunks(img.width().max(1)) {
        let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat, window: Window) -> Result<()> {
    let path = path.as_ref();
    match format {
        ImageFormat::Pgm => fs::write(path, write_pgm(img, window)).map_err(|e| Error::io(path, e)),
        ImageFormat::Png => {
            let bytes = image_to_gray8(img, window);
            let buf = ::image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .ok_or_else(|| Error::DimensionMismatch("png buffer size".into()))?;
            buf.save_with_format(path, ::image::ImageFormat::Png)
                .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
        }
    }
}
