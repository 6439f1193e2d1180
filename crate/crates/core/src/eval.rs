//! Distortion and statistical-fidelity metrics, dataset-level codec evaluation
//! and the versioned report schema.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::codec::HyperpriorCodec;
use crate::error::{shape_err, CoreError, Result};
use crate::image::{self, Image};
use crate::losses::{self, PerceptualExtractor, RandomConvNet};
use crate::nn::rng_for;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr(x: &Image, x_hat: &Image) -> Result<f64> {
    let mse = x.mse(x_hat)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Largest scale count (at most 5) the image supports with an 11-tap window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let m = width.min(height);
    (1..=5).rev().find(|&s| m > (SSIM_WIN - 1) * (1 << (s - 1))).unwrap_or(0)
}

/// Multi-scale SSIM over RGB, averaged over channels. Below 161 pixels on the
/// short side fewer scales are used with the leading weights renormalized.
pub fn ms_ssim(x: &Image, x_hat: &Image) -> Result<f64> {
    if (x.width(), x.height()) != (x_hat.width(), x_hat.height()) {
        return Err(shape_err!("ms_ssim: {}x{} vs {}x{}", x.width(), x.height(), x_hat.width(), x_hat.height()));
    }
    let scales = ms_ssim_scales(x.width(), x.height());
    if scales == 0 {
        return Err(shape_err!("image {}x{} is smaller than the {SSIM_WIN}-pixel SSIM window", x.width(), x.height()));
    }
    if scales < 5 {
        log::warn!("ms_ssim: {}x{} supports only {scales} scale(s)", x.width(), x.height());
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();
    let kernel = gaussian_1d(SSIM_WIN, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let mut a = Plane::new(x.width(), x.height(), x.plane(c));
        let mut b = Plane::new(x.width(), x.height(), x_hat.plane(c));
        let mut v = 1.0;
        for (s, w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&a, &b, &kernel);
            let term = if s + 1 == scales { ssim } else { cs };
            v *= term.max(0.0).powf(*w);
            if s + 1 < scales {
                a = a.downsample();
                b = b.downsample();
            }
        }
        total += v;
    }
    Ok(total / 3.0)
}

fn gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn new(w: usize, h: usize, v: Vec<f64>) -> Self {
        Self { w, h, v }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.w + x]
    }

    /// Separable valid-mode filtering.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                rows[y * ow + x] = (0..n).map(|i| k[i] * self.at(x + i, y)).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane::new(ow, oh, out)
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane::new(self.w, self.h, self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect())
    }

    /// 2×2 average pooling; odd sizes are first extended by symmetric padding.
    fn downsample(&self) -> Plane {
        let (pw, ph) = (self.w + self.w % 2, self.h + self.h % 2);
        let get = |x: usize, y: usize| self.at(x.min(self.w - 1), y.min(self.h - 1));
        let (ow, oh) = (pw / 2, ph / 2);
        let mut out = Vec::with_capacity(ow * oh);
        for y in 0..oh {
            for x in 0..ow {
                out.push(0.25 * (get(2 * x, 2 * y) + get(2 * x + 1, 2 * y) + get(2 * x, 2 * y + 1) + get(2 * x + 1, 2 * y + 1)));
            }
        }
        Plane::new(ow, oh, out)
    }
}

/// Mean SSIM and mean contrast-structure term at one scale (data range 1).
fn ssim_cs(a: &Plane, b: &Plane, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mu_a = a.filter(k);
    let mu_b = b.filter(k);
    let aa = a.map2(a, |x, y| x * y).filter(k);
    let bb = b.map2(b, |x, y| x * y).filter(k);
    let ab = a.map2(b, |x, y| x * y).filter(k);
    let n = mu_a.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// How images are turned into extractor inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPolicy {
    /// Whole image resized to the extractor's input size.
    WholeResized,
    /// Non-overlapping 256×256 tiles, each resized to the input size.
    Tiled256,
}

impl std::str::FromStr for CropPolicy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole-resized" => Ok(Self::WholeResized),
            "tiled-256" => Ok(Self::Tiled256),
            other => Err(CoreError::Config(format!("unknown crop policy `{other}`"))),
        }
    }
}

/// Feature embeddings, row-major `n × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub extractor: String,
    pub crop_policy: CropPolicy,
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(extractor: &str, crop_policy: CropPolicy, n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d || d == 0 {
            return Err(shape_err!("{} feature values for {n}x{d}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Domain("non-finite feature value".into()));
        }
        Ok(Self {
            extractor: extractor.to_string(),
            crop_policy,
            n,
            d,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }

    fn compatible(&self, o: &FeatureSet) -> Result<()> {
        if self.extractor != o.extractor || self.crop_policy != o.crop_policy || self.d != o.d {
            return Err(CoreError::Eval(format!(
                "feature sets differ: {}/{:?}/{} vs {}/{:?}/{}",
                self.extractor, self.crop_policy, self.d, o.extractor, o.crop_policy, o.d
            )));
        }
        Ok(())
    }
}

fn mean_cov(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows() as f64;
    let mu = m.row_mean().transpose();
    let mut c = m.clone();
    for mut r in c.row_iter_mut() {
        r -= mu.transpose();
    }
    let cov = (c.transpose() * &c) / (n - 1.0);
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to the two sets.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    a.compatible(b)?;
    if a.n < 2 || b.n < 2 {
        return Err(CoreError::Eval("fid needs at least 2 samples per set".into()));
    }
    let (mu_a, sa) = mean_cov(&a.matrix());
    let (mu_b, sb) = mean_cov(&b.matrix());
    let ra = sym_sqrt(&sa);
    let mut m = &ra * &sb * &ra;
    m = (&m + m.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (mu_a - mu_b).norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidResult {
    pub mean: f64,
    pub std: f64,
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² between two sample sets under the cubic polynomial kernel.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let within = |s: &[&[f64]]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    t += poly_kernel(s[i], s[j]);
                }
            }
        }
        t
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    within(x) / (m * (m - 1.0)) + within(y) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Kernel inception distance: `n_subsets` independent subsets, each drawn
/// without replacement from each set. Returns mean and population std.
pub fn kid(a: &FeatureSet, b: &FeatureSet, subset_size: usize, n_subsets: usize, seed: u64) -> Result<KidResult> {
    a.compatible(b)?;
    if subset_size < 2 || subset_size > a.n.min(b.n) {
        return Err(CoreError::Eval(format!(
            "kid subset size {subset_size} outside [2, {}]",
            a.n.min(b.n)
        )));
    }
    if n_subsets == 0 {
        return Err(CoreError::Eval("kid needs at least one subset".into()));
    }
    let mut rng = rng_for(seed, 0x006b_6964);
    let vals: Vec<f64> = (0..n_subsets)
        .map(|_| {
            let ia = sample(&mut rng, a.n, subset_size);
            let ib = sample(&mut rng, b.n, subset_size);
            let x: Vec<&[f64]> = ia.iter().map(|i| a.row(i)).collect();
            let y: Vec<&[f64]> = ib.iter().map(|i| b.row(i)).collect();
            mmd2_unbiased(&x, &y)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    Ok(KidResult { mean, std: var.sqrt() })
}

/// Image embedding network for FID/KID.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    /// Square input resolution.
    fn input_size(&self) -> usize;
    fn dim(&self) -> usize;
    /// `(B, 3, S, S)` batch to `B × dim` features.
    fn embed(&self, batch: &candle_core::Tensor) -> Result<Vec<f64>>;
}

/// Three strided random conv layers, global-average pooled.
pub struct TinyConvExtractor {
    net: RandomConvNet,
}

pub const TINY_CONV_ID: &str = "tiny-conv";

impl TinyConvExtractor {
    pub fn new() -> Result<Self> {
        Ok(Self {
            net: RandomConvNet::new(TINY_CONV_ID, 0x7469_6e79, &[(16, 2), (32, 2), (32, 2)])?,
        })
    }
}

impl FeatureExtractor for TinyConvExtractor {
    fn id(&self) -> &str {
        TINY_CONV_ID
    }

    fn input_size(&self) -> usize {
        64
    }

    fn dim(&self) -> usize {
        32
    }

    fn embed(&self, batch: &candle_core::Tensor) -> Result<Vec<f64>> {
        let last = self.net.layers(batch)?.pop().ok_or_else(|| CoreError::Eval("empty extractor".into()))?;
        let pooled = last.flatten_from(2)?.mean(2)?.to_dtype(candle_core::DType::F64)?;
        Ok(pooled.flatten_all()?.to_vec1()?)
    }
}

/// Extractor registry.
pub fn feature_extractor(id: &str) -> Result<Box<dyn FeatureExtractor>> {
    match id {
        TINY_CONV_ID => Ok(Box::new(TinyConvExtractor::new()?)),
        other => Err(CoreError::Eval(format!("unknown feature extractor `{other}`"))),
    }
}

fn crops(img: &Image, policy: CropPolicy, size: usize) -> Result<Vec<Image>> {
    match policy {
        CropPolicy::WholeResized => Ok(vec![img.resize(size, size)?]),
        CropPolicy::Tiled256 => {
            let mut out = Vec::new();
            for y in (0..img.height() / 256).map(|t| t * 256) {
                for x in (0..img.width() / 256).map(|t| t * 256) {
                    out.push(img.crop(x, y, 256, 256)?.resize(size, size)?);
                }
            }
            Ok(out)
        }
    }
}

/// Embeds `images` under `policy`; one row per crop.
pub fn extract_features(images: &[Image], extractor: &dyn FeatureExtractor, policy: CropPolicy) -> Result<FeatureSet> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut pending = Vec::new();
    let flush = |pending: &mut Vec<Image>, data: &mut Vec<f64>| -> Result<()> {
        if !pending.is_empty() {
            data.extend(extractor.embed(&image::to_tensor(pending)?)?);
            pending.clear();
        }
        Ok(())
    };
    for img in images {
        for c in crops(img, policy, extractor.input_size())? {
            pending.push(c);
            n += 1;
            if pending.len() == 16 {
                flush(&mut pending, &mut data)?;
            }
        }
    }
    flush(&mut pending, &mut data)?;
    FeatureSet::new(extractor.id(), policy, n, extractor.dim(), data)
}

/// Anything that turns an image into bytes and back.
pub trait ImageCodec {
    fn id(&self) -> String;
    fn encode(&self, image: &Image) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<Image>;
}

impl ImageCodec for HyperpriorCodec {
    fn id(&self) -> String {
        format!("illm-{:016x}", self.model_id().unwrap_or(0))
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>> {
        self.compress_bytes(image)
    }

    fn decode(&self, bytes: &[u8]) -> Result<Image> {
        self.decompress_bytes(bytes)
    }
}

/// Raw 8-bit storage with an 8-byte size header; lossless for 8-bit images.
pub struct IdentityCodec;

impl ImageCodec for IdentityCodec {
    fn id(&self) -> String {
        "identity".into()
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 + image.data().len());
        out.extend_from_slice(&(image.width() as u32).to_le_bytes());
        out.extend_from_slice(&(image.height() as u32).to_le_bytes());
        out.extend(image.to_u8());
        Ok(out)
    }

    fn decode(&self, bytes: &[u8]) -> Result<Image> {
        if bytes.len() < 8 {
            return Err(CoreError::Eval("identity stream too short".into()));
        }
        let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        Image::new(w, h, bytes[8..].iter().map(|b| *b as f32 / 255.0).collect())
    }
}

mod inf_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMetrics {
    pub name: String,
    pub bytes: usize,
    pub bpp: f64,
    #[serde(with = "inf_float")]
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
    pub perceptual_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub mean_bpp: f64,
    #[serde(with = "inf_float")]
    pub mean_psnr: f64,
    pub mean_ms_ssim: Option<f64>,
    pub mean_perceptual_distance: f64,
    pub fid: Option<f64>,
    pub kid_mean: Option<f64>,
    pub kid_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub codec_id: String,
    pub dataset_id: String,
    pub extractor_id: String,
    pub crop_policy: CropPolicy,
    pub images: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(CoreError::Eval(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Evaluation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub extractor: String,
    pub crop_policy: CropPolicy,
    /// Capped at the sample count.
    pub kid_subset_size: usize,
    pub kid_subsets: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            extractor: TINY_CONV_ID.into(),
            crop_policy: CropPolicy::WholeResized,
            kid_subset_size: 1000,
            kid_subsets: 100,
            seed: 0,
        }
    }
}

/// Runs every image through the codec's byte path and computes all metrics.
pub fn evaluate_images(
    codec: &dyn ImageCodec,
    dataset_id: &str,
    images: &[(String, Image)],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let extractor = feature_extractor(&opts.extractor)?;
    let perceptual = RandomConvNet::perceptual_default()?;
    let mut per_image = Vec::with_capacity(images.len());
    let mut originals = Vec::with_capacity(images.len());
    let mut recons = Vec::with_capacity(images.len());
    for (name, img) in images {
        let bytes = codec.encode(img)?;
        let rec = codec.decode(&bytes)?;
        let ms = if ms_ssim_scales(img.width(), img.height()) > 0 { Some(ms_ssim(img, &rec)?) } else { None };
        let pd = losses::perceptual_distance(&image::to_tensor(std::slice::from_ref(&rec))?, &image::to_tensor(std::slice::from_ref(img))?, &perceptual as &dyn PerceptualExtractor)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec1::<f64>()?[0];
        per_image.push(ImageMetrics {
            name: name.clone(),
            bytes: bytes.len(),
            bpp: illm_entropy::bits_per_pixel(bytes.len(), img.width() as u32, img.height() as u32),
            psnr: psnr(img, &rec)?,
            ms_ssim: ms,
            perceptual_distance: pd,
        });
        originals.push(img.clone());
        recons.push(rec);
    }
    let n = per_image.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    let mean_ms_ssim = if per_image.iter().all(|m| m.ms_ssim.is_some()) && !per_image.is_empty() {
        Some(mean(&|m| m.ms_ssim.unwrap_or(0.0)))
    } else {
        None
    };
    let (mut fid_v, mut kid_v) = (None, None);
    if originals.len() >= 2 {
        let fa = extract_features(&originals, extractor.as_ref(), opts.crop_policy)?;
        let fb = extract_features(&recons, extractor.as_ref(), opts.crop_policy)?;
        if fa.n >= 2 && fb.n >= 2 {
            fid_v = Some(fid(&fa, &fb)?);
            let s = opts.kid_subset_size.min(fa.n).min(fb.n);
            kid_v = Some(kid(&fa, &fb, s, opts.kid_subsets, opts.seed)?);
        }
    }
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        codec_id: codec.id(),
        dataset_id: dataset_id.to_string(),
        extractor_id: extractor.id().to_string(),
        crop_policy: opts.crop_policy,
        aggregate: Aggregate {
            mean_bpp: mean(&|m| m.bpp),
            mean_psnr: mean(&|m| m.psnr),
            mean_ms_ssim,
            mean_perceptual_distance: mean(&|m| m.perceptual_distance),
            fid: fid_v,
            kid_mean: kid_v.map(|k| k.mean),
            kid_std: kid_v.map(|k| k.std),
        },
        images: per_image,
        skipped: Vec::new(),
    })
}

/// [`evaluate_images`] over a directory; unreadable files are listed in the
/// report instead of aborting.
pub fn evaluate_codec(codec: &dyn ImageCodec, dataset_dir: &Path, opts: &EvalOptions) -> Result<MetricsReport> {
    let (ok, bad) = crate::data::load_dir(dataset_dir)?;
    let images: Vec<(String, Image)> = ok
        .into_iter()
        .map(|(p, img)| (p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(), img))
        .collect();
    let id = dataset_dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| dataset_dir.display().to_string());
    let mut r = evaluate_images(codec, &id, &images, opts)?;
    r.skipped = bad
        .into_iter()
        .map(|(p, reason)| Skipped {
            path: p.display().to_string(),
            reason,
        })
        .collect();
    Ok(r)
}
