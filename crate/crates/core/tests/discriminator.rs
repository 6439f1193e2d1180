use candle_core::{DType, Device, Tensor};
use illm_core::discriminator::*;
use illm_core::nn::Normalization;

fn cfg(kind: DiscriminatorKind, norm: Normalization, classes: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        kind,
        normalization: norm,
        base_channels: 4,
        classes,
        conditioning_channels: 0,
    }
}

fn input(b: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let n = b * 3 * h * w;
    let v: Vec<f32> = (0..n).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32) / 1000.0).collect();
    Tensor::from_vec(v, (b, 3, h, w), &Device::Cpu).unwrap()
}

#[test]
fn illm_output_dims_follow_label_grid() {
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::None, 1024), 0).unwrap();
    assert_eq!(d.forward(&input(1, 256, 256, 1), None).unwrap().dims(), &[1, 1025, 32, 32]);
    assert_eq!(d.forward(&input(1, 128, 128, 1), None).unwrap().dims(), &[1, 1025, 16, 16]);
    assert_eq!(d.output_channels(), 1025);
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::None, 7), 0).unwrap();
    for (h, w) in [(8, 8), (24, 40), (72, 16), (64, 64)] {
        assert_eq!(d.forward(&input(2, h, w, 3), None).unwrap().dims(), &[2, 8, h / 8, w / 8]);
    }
    assert!(d.forward(&input(1, 12, 16, 0), None).is_err());
}

#[test]
fn patchgan_shapes_and_conditioning() {
    let d = make_discriminator(cfg(DiscriminatorKind::Patchgan, Normalization::None, 1), 0).unwrap();
    assert_eq!(d.forward(&input(1, 256, 256, 1), None).unwrap().dims(), &[1, 1, 16, 16]);
    let y = Tensor::zeros((1, 5, 4, 4), DType::F32, &Device::Cpu).unwrap();
    assert!(d.forward(&input(1, 64, 64, 1), Some(&y)).is_err());
    let mut c = cfg(DiscriminatorKind::Patchgan, Normalization::None, 1);
    c.conditioning_channels = 5;
    let d = make_discriminator(c, 0).unwrap();
    assert_eq!(d.forward(&input(1, 64, 64, 1), Some(&y)).unwrap().dims(), &[1, 1, 4, 4]);
    assert!(d.forward(&input(1, 64, 64, 1), None).is_err());
}

#[test]
fn forward_is_reproducible() {
    for kind in [DiscriminatorKind::IllmUnet, DiscriminatorKind::Patchgan] {
        let x = input(2, 32, 32, 5);
        let a = make_discriminator(cfg(kind, Normalization::Instance, 3), 11).unwrap();
        let b = make_discriminator(cfg(kind, Normalization::Instance, 3), 11).unwrap();
        let (ya, yb) = (a.forward(&x, None).unwrap(), b.forward(&x, None).unwrap());
        let diff = ya.sub(&yb).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
        let again = a.forward(&x, None).unwrap().sub(&ya).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(again.to_scalar::<f32>().unwrap(), 0.0);
    }
}

#[test]
fn normalization_is_introspectable() {
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::None, 3), 0).unwrap();
    assert_eq!(d.normalization_layers(), (0, 0));
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::Instance, 3), 0).unwrap();
    let (inst, spec) = d.normalization_layers();
    assert!(inst > 0 && spec == 0);
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::Spectral, 3), 0).unwrap();
    let (inst, spec) = d.normalization_layers();
    assert!(inst == 0 && spec > 0);
    assert!(d.store.buffers().count() >= spec);
    d.power_iterate().unwrap();
    assert!("batch".parse::<Normalization>().is_err());
    assert!("resnet".parse::<DiscriminatorKind>().is_err());
    assert!(make_discriminator(DiscriminatorConfig { base_channels: 0, ..Default::default() }, 0).is_err());
}

#[test]
fn horizontal_flip_equivariance_with_mirrored_kernels() {
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::None, 5), 2).unwrap();
    for (name, v) in d.store.params() {
        if v.rank() == 4 && name.ends_with("weight") {
            let w = v.as_tensor();
            let k = w.dim(3).unwrap();
            let idx = Tensor::from_vec((0..k as u32).rev().collect::<Vec<_>>(), k, &Device::Cpu).unwrap();
            let mirrored = w.index_select(&idx, 3).unwrap();
            v.set(&((w + mirrored).unwrap() * 0.5).unwrap()).unwrap();
        }
    }
    let flip = |t: &Tensor| {
        let w = t.dim(3).unwrap();
        let idx = Tensor::from_vec((0..w as u32).rev().collect::<Vec<_>>(), w, &Device::Cpu).unwrap();
        t.index_select(&idx, 3).unwrap()
    };
    let x = input(1, 64, 48, 9);
    let a = flip(&d.forward(&x, None).unwrap());
    let b = d.forward(&flip(&x), None).unwrap();
    let diff = a.sub(&b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(diff < 1e-4, "{diff}");
}

#[test]
fn checkpoint_round_trip() {
    let d = make_discriminator(cfg(DiscriminatorKind::IllmUnet, Normalization::Spectral, 3), 4).unwrap();
    let mut c = illm_core::checkpoint::Checkpoint::new();
    d.write_checkpoint(&mut c).unwrap();
    let e = Discriminator::from_checkpoint(&c).unwrap();
    let x = input(1, 16, 16, 2);
    let diff = d.forward(&x, None).unwrap().sub(&e.forward(&x, None).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
    assert_eq!(diff.to_scalar::<f32>().unwrap(), 0.0);
}
