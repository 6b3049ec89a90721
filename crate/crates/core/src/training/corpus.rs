//! Image corpus, batch sampling and the synthetic toy corpus.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{degrade, DegradationParams};
use crate::error::{Result, SfdError};
use crate::image::{stack, ImageTensor};

use super::step::Batch;

#[derive(Clone, Debug)]
pub struct Corpus {
    pub paths: Vec<PathBuf>,
    pub images: Vec<ImageTensor>,
}

/// `*.png` files of `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| SfdError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| SfdError::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

impl Corpus {
    /// Loads every PNG; fails if there are none or any is smaller than
    /// `min_side`.
    pub fn load(dir: &Path, min_side: usize) -> Result<Self> {
        let paths = list_pngs(dir)?;
        if paths.is_empty() {
            return Err(SfdError::Config(format!("no PNG images in {}", dir.display())));
        }
        let images = paths.iter().map(|p| ImageTensor::load(p)).collect::<Result<Vec<_>>>()?;
        for (p, img) in paths.iter().zip(&images) {
            if img.height() < min_side || img.width() < min_side {
                return Err(SfdError::InvalidImage(format!(
                    "{} is {}x{}, smaller than the {min_side}px patch",
                    p.display(),
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(Self { paths, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// The RNG for one step: a fixed seed with the step as stream id.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Random `patch`-sized crops (offsets aligned to `scale`) with horizontal
/// flips, degraded into LR inputs. Deterministic in `(seed, step)`.
pub fn sample_batch(
    corpus: &Corpus,
    seed: u64,
    step: u64,
    batch_size: usize,
    patch: usize,
    scale: usize,
    degradation: &DegradationParams,
) -> Result<Batch> {
    let mut rng = step_rng(seed, step);
    let mut hrs = Vec::with_capacity(batch_size);
    let mut lrs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let img = &corpus.images[rng.random_range(0..corpus.len())];
        let top = rng.random_range(0..=(img.height() - patch) / scale) * scale;
        let left = rng.random_range(0..=(img.width() - patch) / scale) * scale;
        let mut hr = img.crop(top, left, patch, patch)?;
        if rng.random_bool(0.5) {
            let mut d = hr.into_data();
            d.invert_axis(ndarray::Axis(2));
            hr = ImageTensor::new(d.as_standard_layout().into_owned())?;
        }
        let params = DegradationParams {
            seed: rng.random(),
            ..degradation.clone()
        };
        lrs.push(degrade(&hr, &params, scale)?);
        hrs.push(hr);
    }
    Ok(Batch {
        lr: stack(&lrs)?,
        hr: stack(&hrs)?,
    })
}

/// Centre crops of `images` and their degraded inputs, for evaluation.
pub fn center_pairs(
    images: &[ImageTensor],
    patch: usize,
    scale: usize,
    degradation: &DegradationParams,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            if img.height() < patch || img.width() < patch {
                return Err(SfdError::InvalidImage(format!("image {i} smaller than {patch}px")));
            }
            let top = (img.height() - patch) / 2 / scale * scale;
            let left = (img.width() - patch) / 2 / scale * scale;
            let hr = img.crop(top, left, patch, patch)?;
            let params = DegradationParams {
                seed: degradation.seed.wrapping_add(i as u64),
                ..degradation.clone()
            };
            Ok((degrade(&hr, &params, scale)?, hr))
        })
        .collect()
}

/// A procedural test image: smooth background, flat shapes with sharp
/// edges, and patches of fine texture (gratings, checkers, speckle), so that
/// downsampling destroys detail the discriminators can learn to miss.
pub fn synth_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Array3::<f64>::zeros((3, size, size));
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let grad: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
    let n = size as f64;
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                img[[c, i, j]] = base[c] + grad[c].0 * (i as f64 / n - 0.5) + grad[c].1 * (j as f64 / n - 0.5);
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cy = rng.random_range(0.0..n);
        let cx = rng.random_range(0.0..n);
        let r = rng.random_range(n / 10.0..n / 3.0);
        let texture = rng.random_range(0..4);
        let freq = rng.random_range(0.6..1.6);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(0.15..0.35);
        let round = rng.random_bool(0.5);
        let speckle_seed: u64 = rng.random();
        let mut speckle = ChaCha8Rng::seed_from_u64(speckle_seed);
        for i in 0..size {
            for j in 0..size {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                let inside = if round {
                    dy * dy + dx * dx < r * r
                } else {
                    dy.abs() < r && dx.abs() < r * 0.7
                };
                let noise: f64 = speckle.random_range(-1.0..1.0);
                if !inside {
                    continue;
                }
                let u = dx * angle.cos() + dy * angle.sin();
                let t = match texture {
                    0 => 0.0,
                    1 => (u * freq * 2.0).sin(),
                    2 => {
                        if ((i / 2) + (j / 2)) % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    _ => noise,
                };
                for c in 0..3 {
                    img[[c, i, j]] = color[c] + amp * t;
                }
            }
        }
    }
    ImageTensor::from_clamped(img).expect("valid synthetic image")
}

/// Writes `count` synthetic PNGs (`synth_000.png`, ...) into `dir`.
pub fn synth_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| SfdError::io(dir, e))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("synth_{i:03}.png"));
            synth_image(size, super::step::derive_seed(seed, 1000 + i as u64)).save_png(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_per_step() {
        let images: Vec<_> = (0..3).map(|i| synth_image(48, i)).collect();
        let corpus = Corpus {
            paths: vec![PathBuf::new(); 3],
            images,
        };
        let p = DegradationParams::default();
        let a = sample_batch(&corpus, 7, 3, 2, 32, 4, &p).unwrap();
        let b = sample_batch(&corpus, 7, 3, 2, 32, 4, &p).unwrap();
        let c = sample_batch(&corpus, 7, 4, 2, 32, 4, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.hr.shape(), &[2, 3, 32, 32]);
        assert_eq!(a.lr.shape(), &[2, 3, 8, 8]);
    }

    #[test]
    fn synthetic_images_vary() {
        let a = synth_image(32, 1);
        assert_eq!(a, synth_image(32, 1));
        assert_ne!(a, synth_image(32, 2));
    }
}
