use candle_core::{Device, Tensor, Var};
use illm_core::codec::{quantize, CodecConfig, HyperpriorCodec, QuantMode};
use illm_core::image::Image;
use illm_core::nn::rng_for;
use illm_core::CoreError;
use rand::Rng;

fn small() -> HyperpriorCodec {
    let cfg = CodecConfig { hidden_channels: 16, latent_channels: 24, hyper_channels: 8, ..Default::default() };
    HyperpriorCodec::new(cfg, 7).unwrap()
}

fn noise_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = rng_for(seed, 1);
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0f32..=1.0)).collect();
    Image::new(w, h, data).unwrap()
}

#[test]
fn round_trip_matches_reconstruction_for_assorted_sizes() {
    let codec = small();
    for (i, &(w, h)) in [(64, 64), (1, 1), (17, 93), (130, 64), (65, 129)].iter().enumerate() {
        let img = noise_image(w, h, i as u64);
        let bytes = codec.compress_bytes(&img).unwrap();
        assert_eq!(bytes, codec.compress_bytes(&img).unwrap(), "compression is deterministic");
        let dec = codec.decompress_bytes(&bytes).unwrap();
        assert_eq!((dec.width(), dec.height()), (w, h));
        assert_eq!(dec, codec.reconstruct(&img).unwrap(), "{w}x{h}");
    }
}

#[test]
fn decompress_rejects_foreign_and_corrupt_containers() {
    let codec = small();
    let img = noise_image(64, 64, 9);
    let mut c = codec.compress(&img).unwrap();
    let other = HyperpriorCodec::new(codec.config.clone(), 8).unwrap();
    assert!(matches!(other.decompress(&c), Err(CoreError::ModelMismatch { .. })));
    c.streams[1].extend_from_slice(&[0xAB; 16]);
    assert!(codec.decompress(&c).is_err());
    assert!(codec.decompress_bytes(b"JUNK").is_err());
}

#[test]
fn synthesize_is_deterministic_on_zero_latent() {
    let codec = small();
    let y = Tensor::zeros((1, 24, 4, 4), candle_core::DType::F32, &Device::Cpu).unwrap();
    let a = codec.synthesize(&y).unwrap();
    let b = codec.synthesize(&y).unwrap();
    assert_eq!(a.dims(), &[1, 3, 64, 64]);
    let (va, vb): (Vec<f32>, Vec<f32>) = (a.flatten_all().unwrap().to_vec1().unwrap(), b.flatten_all().unwrap().to_vec1().unwrap());
    assert_eq!(va, vb);
    assert!(va.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn ste_gradient_equals_identity_gradient() {
    let codec = small();
    let x = illm_core::image::to_tensor(&[noise_image(64, 64, 3)]).unwrap();
    let y = codec.analyze(&x).unwrap();
    let yv = Var::from_tensor(&y.detach()).unwrap();
    let means = (yv.as_tensor().detach() * 0.3).unwrap();
    let mut rng = rng_for(0, 0);
    let q = quantize(yv.as_tensor(), &means, QuantMode::Ste, &mut rng).unwrap();
    let r = quantize(yv.as_tensor(), &means, QuantMode::Round, &mut rng).unwrap();
    assert_eq!(q.flatten_all().unwrap().to_vec1::<f32>().unwrap(), r.flatten_all().unwrap().to_vec1::<f32>().unwrap());
    let g_ste = codec.synthesize(&q).unwrap().sum_all().unwrap().backward().unwrap();
    // Same graph with quantization replaced by identity on the input, evaluated at
    // the rounded point so the downstream Jacobian is identical.
    let rv = Var::from_tensor(&r).unwrap();
    let g_id = codec.synthesize(rv.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
    let a: Vec<f32> = g_ste.get(yv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f32> = g_id.get(rv.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let max = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(max <= 1e-6, "max diff {max}");
    assert!(a.iter().any(|v| *v != 0.0));
}

#[test]
fn forward_train_accounting_and_encoder_gradients() {
    let codec = small();
    let x = illm_core::image::to_tensor(&[noise_image(64, 64, 4), noise_image(64, 64, 5)]).unwrap();
    let mut rng = rng_for(1, 2);
    let out = codec.forward_train(&x, &mut rng).unwrap();
    assert_eq!(out.x_hat.dims(), x.dims());
    let r = out.rate().unwrap();
    assert!((r.total_bits - r.latent_bits - r.hyper_bits).abs() < 1e-9);
    assert!(r.latent_bits > 0.0 && r.hyper_bits > 0.0);
    let loss = (out.x_hat - &x).unwrap().sqr().unwrap().mean_all().unwrap();
    let grads = loss.backward().unwrap();
    let w = codec.store.get("encoder.0.weight").unwrap();
    let g: Vec<f32> = grads.get(w.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert!(g.iter().any(|v| *v != 0.0));
}

#[test]
fn checkpoint_round_trip_preserves_model() {
    let codec = small();
    let mut ck = illm_core::checkpoint::Checkpoint::new();
    codec.write_checkpoint(&mut ck).unwrap();
    let bytes = ck.to_bytes().unwrap();
    let back = HyperpriorCodec::from_checkpoint(&illm_core::checkpoint::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.model_id().unwrap(), codec.model_id().unwrap());
    assert_eq!(back.store.export().unwrap(), codec.store.export().unwrap());
}
