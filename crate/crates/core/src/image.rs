//! RGB images with values in `[0, 1]`.

use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{shape_err, CoreError, Result};

/// Height × width × 3 image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(shape_err!("image dims must be positive, got {width}x{height}"));
        }
        if data.len() != width * height * 3 {
            return Err(shape_err!("{} values for a {width}x{height}x3 image", data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    /// Writes an 8-bit image; the format follows the extension (png, ppm).
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer length matches dims");
        buf.save(path)?;
        Ok(())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    /// Rounds to the 8-bit grid, as a save/load cycle would.
    pub fn quantize_8bit(&self) -> Self {
        let data = self.to_u8().into_iter().map(|b| b as f32 / 255.0).collect();
        Self { data, ..*self }
    }

    /// Pads right and bottom to multiples of `multiple` by mirror reflection
    /// (edge pixel not repeated), repeating the mirror as often as needed.
    pub fn pad_reflect(&self, multiple: usize) -> Self {
        let w = self.width.div_ceil(multiple) * multiple;
        let h = self.height.div_ceil(multiple) * multiple;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            let sy = reflect(y, self.height);
            for x in 0..w {
                let sx = reflect(x, self.width);
                data.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        Self { width: w, height: h, data }
    }

    /// Top-left `width × height` window.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(shape_err!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width,
                self.height
            ));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Ok(Self { width, height, data })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Self { data, ..*self }
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(shape_err!("resize target must be positive"));
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * tx;
                    let bot = c[ch] + (d[ch] - c[ch]) * tx;
                    data.push((top + (bot - top) * ty).clamp(0.0, 1.0));
                }
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(shape_err!(
                "{}x{} vs {}x{}",
                self.width,
                self.height,
                other.width,
                other.height
            ));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    /// Channel-major plane `c` as f64 values, row-major.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|v| *v as f64).collect()
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Stacks same-sized images into a (B, 3, H, W) tensor.
pub fn to_tensor(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| shape_err!("empty image batch"))?;
    let (w, h) = (first.width, first.height);
    let mut buf: Vec<f32> = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(shape_err!("batch mixes {w}x{h} and {}x{}", img.width, img.height));
        }
        for c in 0..3 {
            buf.extend(img.data.iter().skip(c).step_by(3));
        }
    }
    Ok(Tensor::from_vec(buf, (images.len(), 3, h, w), &Device::Cpu)?)
}

/// Splits a (B, 3, H, W) tensor into images, clamping to `[0, 1]`.
pub fn from_tensor(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(shape_err!("expected 3 channels, got {c}"));
    }
    let v: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let base = &v[i * 3 * plane..(i + 1) * 3 * plane];
            let mut data = Vec::with_capacity(3 * plane);
            for p in 0..plane {
                for ch in 0..3 {
                    data.push(base[ch * plane + p].clamp(0.0, 1.0));
                }
            }
            Image::new(w, h, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|i| (i % 251) as f32 / 250.0).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(Image::new(1, 1, vec![0.0, 1.5, 0.0]), Err(CoreError::Domain(_))));
        assert!(Image::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!((0..8).map(|i| reflect(i, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0, 1, 2, 1]);
        let img = ramp(5, 3);
        let p = img.pad_reflect(64);
        assert_eq!((p.width(), p.height()), (64, 64));
        assert_eq!(p.pixel(5, 0), img.pixel(3, 0));
        assert_eq!(p.crop(0, 0, 5, 3).unwrap(), img);
    }

    #[test]
    fn tensor_round_trip() {
        let imgs = vec![ramp(4, 2), ramp(4, 2).flip_horizontal()];
        let t = to_tensor(&imgs).unwrap();
        assert_eq!(t.dims(), &[2, 3, 2, 4]);
        assert_eq!(from_tensor(&t).unwrap(), imgs);
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = ramp(7, 5).quantize_8bit();
        img.save(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }
}
