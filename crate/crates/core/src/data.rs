//! Datasets: directories of PNG/PPM files, a synthetic texture generator, and
//! the training crop/flip augmentation.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, CoreError, Result};
use crate::image::{self, Image};
use crate::nn::rng_for;

/// Image files under `dir` with a supported extension, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every readable image in `dir`; unreadable files come back as
/// `(path, reason)` pairs instead of failing the whole set.
pub fn load_dir(dir: &Path) -> Result<(Vec<(PathBuf, Image)>, Vec<(PathBuf, String)>)> {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for p in list_images(dir)? {
        match Image::load(&p) {
            Ok(img) => ok.push((p, img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push((p, e.to_string()));
            }
        }
    }
    Ok((ok, skipped))
}

/// Deterministic colored textures: a few oriented gratings, a smooth color
/// gradient and fine grain. Every image is drawn from its own RNG stream.
pub fn synthetic_textures(count: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    if size == 0 {
        return Err(shape_err!("texture size must be positive"));
    }
    (0..count).map(|i| texture(size, &mut rng_for(seed, 0x7465_7800 + i as u64))).collect()
}

fn texture(size: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    use std::f64::consts::TAU;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let tilt: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)]);
    let n_waves = rng.random_range(2..=4);
    let waves: Vec<([f64; 3], f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            let amp = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
            let freq = rng.random_range(2.0..12.0) / size as f64;
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..TAU);
            let square = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
            (amp, freq, theta, phase, square)
        })
        .collect();
    let grain = Normal::new(0.0, rng.random_range(0.01..0.05)).expect("positive sigma");
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64 - 0.5, y as f64 / size as f64 - 0.5);
            let mut px = [0f64; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = base[c] + tilt[c][0] * u + tilt[c][1] * v;
            }
            for (amp, freq, theta, phase, square) in &waves {
                let t = TAU * freq * (x as f64 * theta.cos() + y as f64 * theta.sin()) + phase;
                let s = if *square > 0.0 { t.sin().signum() } else { t.sin() };
                for c in 0..3 {
                    px[c] += amp[c] * s;
                }
            }
            for p in px {
                data.push((p + grain.sample(rng)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(size, size, data)
}

/// Random-resized crop or plain crop (50/50) to `crop × crop`, then a
/// horizontal flip with probability 0.5.
pub fn augment(img: &Image, crop: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    if w < crop || h < crop {
        return Err(shape_err!("{w}x{h} image is smaller than the {crop} crop"));
    }
    let out = if rng.random_bool(0.5) {
        random_resized_crop(img, crop, rng)?
    } else {
        let x0 = rng.random_range(0..=w - crop);
        let y0 = rng.random_range(0..=h - crop);
        img.crop(x0, y0, crop, crop)?
    };
    Ok(if rng.random_bool(0.5) { out.flip_horizontal() } else { out })
}

/// Area fraction in [0.25, 1], aspect ratio in [3/4, 4/3]; falls back to the
/// largest centered square after ten rejected draws.
fn random_resized_crop(img: &Image, out: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    let area = (w * h) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(0.25..=1.0);
        let ratio = (rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln())).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let x0 = rng.random_range(0..=w - cw);
            let y0 = rng.random_range(0..=h - ch);
            return img.crop(x0, y0, cw, ch)?.resize(out, out);
        }
    }
    let s = w.min(h);
    img.crop((w - s) / 2, (h - s) / 2, s, s)?.resize(out, out)
}

/// Batch for training step `step`: images drawn with replacement and augmented,
/// all from the `(seed, step)` stream so a resumed run sees the same data.
pub fn sample_batch(data: &[Image], batch: usize, crop: usize, seed: u64, step: u64) -> Result<Tensor> {
    if data.is_empty() || batch == 0 {
        return Err(CoreError::Training("empty dataset or zero batch size".into()));
    }
    let mut rng = rng_for(seed ^ 0x6461_7461, step);
    let imgs = (0..batch)
        .map(|_| augment(&data[rng.random_range(0..data.len())], crop, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    image::to_tensor(&imgs)
}

/// Fixed (unaugmented) batches covering `data` in order.
pub fn chunks(data: &[Image], batch: usize) -> Result<Vec<Tensor>> {
    data.chunks(batch.max(1)).map(image::to_tensor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_are_deterministic_and_varied() {
        let a = synthetic_textures(3, 32, 7).unwrap();
        assert_eq!(a, synthetic_textures(3, 32, 7).unwrap());
        assert_ne!(a[0], a[1]);
        assert_ne!(a[0], synthetic_textures(1, 32, 8).unwrap()[0]);
    }

    #[test]
    fn augment_shapes() {
        let img = synthetic_textures(1, 40, 1).unwrap().remove(0);
        let mut rng = rng_for(1, 1);
        for _ in 0..20 {
            let a = augment(&img, 32, &mut rng).unwrap();
            assert_eq!((a.width(), a.height()), (32, 32));
        }
        assert!(augment(&img, 64, &mut rng).is_err());
    }

    #[test]
    fn batches_follow_the_step_stream() {
        let data = synthetic_textures(4, 32, 1).unwrap();
        let a = sample_batch(&data, 2, 32, 5, 10).unwrap();
        let b = sample_batch(&data, 2, 32, 5, 10).unwrap();
        let c = sample_batch(&data, 2, 32, 5, 11).unwrap();
        let d = |x: &Tensor, y: &Tensor| x.sub(y).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d(&a, &b), 0.0);
        assert!(d(&a, &c) > 0.0);
    }
}
