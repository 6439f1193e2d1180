use std::path::PathBuf;

use illm_core::eval::*;
use illm_core::image::Image;
use illm_core::nn::rng_for;
use rand_distr::{Distribution, StandardNormal};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/ms_ssim").join(name)
}

// Two independent references per pair: a float64 numpy/scipy implementation
// (same conventions) and tf.image.ssim_multiscale, which carries float32
// round-off of about 1e-6. Power factors are renormalized to three scales for
// the 64x64 pair.
const MS_SSIM_REFERENCE: [(&str, f64, f64); 5] = [
    ("inverse", 0.0, 0.0),
    ("noise", 0.9627545822156297, 0.9627537131309509),
    ("blur", 0.9798956034981835, 0.9798945784568787),
    ("other", 0.015448103481808834, 0.015447836369276047),
    ("small_noise", 0.9592974612712952, 0.9592971205711365),
];

#[test]
fn ms_ssim_matches_reference() {
    for (name, numpy, tf) in MS_SSIM_REFERENCE {
        let a = Image::load(&data(&format!("{name}_a.png"))).unwrap();
        let b = Image::load(&data(&format!("{name}_b.png"))).unwrap();
        let got = ms_ssim(&a, &b).unwrap();
        assert!((got - numpy).abs() < 1e-9, "{name}: {got} vs {numpy}");
        assert!((got - tf).abs() < 1e-5, "{name}: {got} vs {tf}");
        assert!((ms_ssim(&b, &a).unwrap() - got).abs() < 1e-12);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ms_ssim_rejects_tiny_images() {
    let a = Image::filled(10, 40, 0.5).unwrap();
    assert!(ms_ssim(&a, &a).is_err());
}

#[test]
fn psnr_log_law() {
    let a = Image::filled(8, 8, 0.5).unwrap();
    let b = Image::filled(8, 8, 0.6).unwrap();
    let c = Image::filled(8, 8, 0.5 + 0.1 / 2f32.sqrt()).unwrap();
    let gain = psnr(&a, &c).unwrap() - psnr(&a, &b).unwrap();
    assert!((gain - 3.0103).abs() < 1e-3, "{gain}");
}

fn gaussian_set(n: usize, d: usize, shift: &[f64], seed: u64) -> FeatureSet {
    let mut rng = rng_for(seed, 0);
    let data = (0..n * d)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + shift[i % d]
        })
        .collect();
    FeatureSet::new("synthetic", CropPolicy::WholeResized, n, d, data).unwrap()
}

#[test]
fn fid_properties() {
    let a = gaussian_set(500, 4, &[0.0; 4], 1);
    let b = gaussian_set(400, 4, &[1.0, 0.0, 0.0, 0.0], 2);
    assert!(fid(&a, &a).unwrap() <= 1e-6);
    assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() <= 1e-6);
    let other = FeatureSet::new("synthetic", CropPolicy::Tiled256, 2, 4, vec![0.0; 8]).unwrap();
    assert!(fid(&a, &other).is_err());
}

#[test]
fn kid_reproducible_and_guarded() {
    let a = gaussian_set(60, 4, &[0.0; 4], 3);
    let b = gaussian_set(60, 4, &[0.5; 4], 4);
    let k1 = kid(&a, &b, 20, 10, 9).unwrap();
    assert_eq!(k1, kid(&a, &b, 20, 10, 9).unwrap());
    assert_ne!(k1, kid(&a, &b, 20, 10, 10).unwrap());
    assert!(kid(&a, &b, 61, 10, 9).is_err());
    // A single subset covering the whole set is the plain unbiased estimate.
    let rows = |s: &FeatureSet| (0..s.n).map(|i| s.row(i).to_vec()).collect::<Vec<_>>();
    let (ra, rb) = (rows(&a), rows(&b));
    let x: Vec<&[f64]> = ra.iter().map(|r| r.as_slice()).collect();
    let y: Vec<&[f64]> = rb.iter().map(|r| r.as_slice()).collect();
    let full = mmd2_unbiased(&x, &y);
    assert!((kid(&a, &b, 60, 1, 0).unwrap().mean - full).abs() < 1e-12);
    // Identical subsets can yield a negative estimate.
    let same = kid(&a, &a, 60, 1, 0).unwrap().mean;
    assert!(same <= 1e-12);
}

#[test]
fn kid_null_is_near_zero() {
    let a = gaussian_set(200, 4, &[0.0; 4], 5);
    let k = kid(&a, &a, 50, 50, 1).unwrap();
    assert!(k.mean.abs() <= 3.0 * k.std.max(1e-12), "{k:?}");
}

#[test]
fn features_are_deterministic() {
    let imgs = illm_core::data::synthetic_textures(10, 48, 3).unwrap();
    let ex = feature_extractor("tiny-conv").unwrap();
    let f = extract_features(&imgs, ex.as_ref(), CropPolicy::WholeResized).unwrap();
    assert_eq!((f.n, f.d), (10, ex.dim()));
    assert_eq!(f, extract_features(&imgs, ex.as_ref(), CropPolicy::WholeResized).unwrap());
    assert!(feature_extractor("inception").is_err());
    let big = Image::filled(600, 300, 0.3).unwrap();
    assert_eq!(extract_features(&[big], ex.as_ref(), CropPolicy::Tiled256).unwrap().n, 2);
}

#[test]
fn identity_codec_report() {
    let dir = tempfile::tempdir().unwrap();
    for (i, img) in illm_core::data::synthetic_textures(4, 32, 8).unwrap().iter().enumerate() {
        img.save(&dir.path().join(format!("{i}.png"))).unwrap();
    }
    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    let opts = EvalOptions::default();
    let r = evaluate_codec(&IdentityCodec, dir.path(), &opts).unwrap();
    assert_eq!(r.images.len(), 4);
    assert_eq!(r.skipped.len(), 1);
    assert!(r.images.iter().all(|m| m.psnr == f64::INFINITY && m.bpp > 0.0));
    assert!(r.aggregate.fid.unwrap() <= 1e-6);
    let mean: f64 = r.images.iter().map(|m| m.bpp).sum::<f64>() / 4.0;
    assert!((r.aggregate.mean_bpp - mean).abs() < 1e-12);
    assert_eq!(r.images[0].bpp, 8.0 * r.images[0].bytes as f64 / (32.0 * 32.0));
    let back = MetricsReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}
