//! Fidelity metrics on the luminance channel.

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdError};
use crate::image::ImageTensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YConvention {
    /// BT.601 studio swing, `Y` in `[16, 235] / 255`.
    #[default]
    StudioSwing,
    /// BT.601 full swing, `Y` in `[0, 1]`.
    FullSwing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct YImage {
    pub data: Array2<f64>,
}

impl YImage {
    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

pub fn rgb_to_y(img: &ImageTensor) -> YImage {
    rgb_to_y_with(img, YConvention::StudioSwing)
}

pub fn rgb_to_y_with(img: &ImageTensor, convention: YConvention) -> YImage {
    let d = img.data();
    let (r, g, b) = (d.index_axis(Axis(0), 0), d.index_axis(Axis(0), 1), d.index_axis(Axis(0), 2));
    let mut y = Array2::zeros((img.height(), img.width()));
    match convention {
        YConvention::StudioSwing => Zip::from(&mut y).and(r).and(g).and(b).for_each(|y, &r, &g, &b| {
            *y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
        }),
        YConvention::FullSwing => Zip::from(&mut y).and(r).and(g).and(b).for_each(|y, &r, &g, &b| {
            *y = 0.299 * r + 0.587 * g + 0.114 * b;
        }),
    }
    YImage { data: y }
}

/// Drops `border` pixels from every edge.
pub fn crop_border(y: &YImage, border: usize) -> Result<YImage> {
    let (h, w) = y.dim();
    if 2 * border >= h || 2 * border >= w {
        return Err(SfdError::Shape(format!("cannot crop {border} px from a {h}x{w} image")));
    }
    Ok(YImage {
        data: y.data.slice(s![border..h - border, border..w - border]).to_owned(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Set when the inputs are identical; `db` then holds [`PSNR_CAP_DB`].
    pub exact_match: bool,
}

fn same_shape(a: &YImage, b: &YImage) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(SfdError::Shape(format!("Y images differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn psnr_y(a: &YImage, b: &YImage, peak: f64) -> Result<Psnr> {
    same_shape(a, b)?;
    let mse = Zip::from(&a.data)
        .and(&b.data)
        .fold(0.0, |acc, x, y| acc + (x - y) * (x - y))
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            exact_match: true,
        });
    }
    Ok(Psnr {
        db: (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB),
        exact_match: false,
    })
}

fn gaussian_window() -> Array2<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| g[i] * g[j] / (total * total))
}

/// Valid-mode windowed mean.
fn filter(x: &Array2<f64>, win: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = win.nrows();
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(i, j)| {
        Zip::from(x.slice(s![i..i + k, j..j + k])).and(win).fold(0.0, |acc, a, b| acc + a * b)
    })
}

/// Mean single-scale SSIM (11×11 Gaussian window, σ = 1.5, unit dynamic range).
pub fn ssim_y(a: &YImage, b: &YImage) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(SfdError::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter(&a.data, &win);
    let mu_b = filter(&b.data, &win);
    let aa = filter(&(&a.data * &a.data), &win);
    let bb = filter(&(&b.data * &b.data), &win);
    let ab = filter(&(&a.data * &b.data), &win);
    let mut total = 0.0;
    Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).for_each(|&ma, &mb, &xx, &yy, &xy| {
        let va = xx - ma * ma;
        let vb = yy - mb * mb;
        let cov = xy - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    });
    Ok(total / mu_a.len() as f64)
}

/// PSNR and SSIM of `sr` against `hr` on Y after cropping `border` pixels.
pub fn fidelity(sr: &ImageTensor, hr: &ImageTensor, border: usize) -> Result<(Psnr, f64)> {
    let a = crop_border(&rgb_to_y(sr), border)?;
    let b = crop_border(&rgb_to_y(hr), border)?;
    Ok((psnr_y(&a, &b, 1.0)?, ssim_y(&a, &b)?))
}
