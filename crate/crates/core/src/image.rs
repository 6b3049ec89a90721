//! `ImageTensor`: a 3×H×W sRGB image with values in `[0, 1]`.

use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3, Axis, Ix3};
use sfd_autograd::Tensor;

use crate::error::{Result, SfdError};

pub const MIN_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(SfdError::InvalidImage(format!("expected 3 channels, got {c}")));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(SfdError::InvalidImage(format!(
                "{h}x{w} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SfdError::InvalidImage(format!(
                "value {v} outside [0, 1] or not finite"
            )));
        }
        Ok(Self { data })
    }

    /// Clamps into `[0, 1]` first; non-finite values are still rejected.
    pub fn from_clamped(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SfdError::NonFinite {
                term: "image".into(),
            });
        }
        Self::new(data.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((3, h, w), value))
    }

    pub fn data(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// `[1, 3, H, W]` tensor for the tape.
    pub fn to_batch(&self) -> Tensor {
        self.data.clone().insert_axis(Axis(0)).into_dyn()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| SfdError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = px[c] as f64 / 255.0;
            }
        }
        Self::new(data).map_err(|e| SfdError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes an 8-bit PNG (values rounded to the nearest level).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (_, h, w) = self.data.dim();
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                px[c] = (self.data[[c, y as usize, x as usize]] * 255.0).round() as u8;
            }
        }
        buf.save(path).map_err(|e| SfdError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Crop `size`×`size` at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if top + size_h > self.height() || left + size_w > self.width() {
            return Err(SfdError::Shape(format!(
                "crop {size_h}x{size_w}@({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        Self::new(
            self.data
                .slice(ndarray::s![.., top..top + size_h, left..left + size_w])
                .to_owned(),
        )
    }
}

/// Stack same-sized images into `[N, 3, H, W]`.
pub fn stack(images: &[ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| SfdError::Shape("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.height() != h || img.width() != w {
            return Err(SfdError::Shape(format!(
                "batch mixes {h}x{w} and {}x{}",
                img.height(),
                img.width()
            )));
        }
        out.index_axis_mut(Axis(0), i).assign(&img.data);
    }
    Ok(out.into_dyn())
}

/// Split `[N, 3, H, W]` back into images, clamping into `[0, 1]`.
pub fn unstack_clamped(batch: &Tensor) -> Result<Vec<ImageTensor>> {
    if batch.ndim() != 4 {
        return Err(SfdError::Shape(format!("expected NCHW, got {:?}", batch.shape())));
    }
    batch
        .outer_iter()
        .map(|img| {
            let img = img.into_dimensionality::<Ix3>().unwrap().to_owned();
            ImageTensor::from_clamped(img)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_small() {
        assert!(ImageTensor::new(Array3::from_elem((3, 8, 8), 1.5)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((3, 7, 8), 0.5)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((1, 8, 8), 0.5)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((3, 8, 8), f64::NAN)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((3, 8, 8), 0.5)).is_ok());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data = Array3::from_shape_fn((3, 9, 11), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 256) as f64 / 255.0);
        let img = ImageTensor::new(data).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(ImageTensor::load(&path).unwrap(), img);
    }
}
