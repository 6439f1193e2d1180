use candle_core::{Device, Tensor, Var};
use illm_core::labeler::{code_losses, nearest_code, LabelMap};
use illm_core::losses::{binary_gan_losses, illm_disc_loss, illm_gen_loss, MAX_NLL};
use proptest::prelude::*;

fn brute(v: &[f32], d: usize, cb: &[f32]) -> u32 {
    let dists: Vec<f64> = cb.chunks_exact(d).map(|m| v.iter().zip(m).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum()).collect();
    let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|x| *x == best).unwrap() as u32 + 1
}

fn codebook_case() -> impl Strategy<Value = (usize, Vec<f32>, Vec<f32>)> {
    (1usize..=8, 1usize..=64, 1usize..6).prop_flat_map(|(d, c, n)| {
        (Just(d), prop::collection::vec(-2.0f32..2.0, c * d), prop::collection::vec(-3.0f32..3.0, n * d))
    })
}

fn logits(v: Vec<f64>, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(v, (1, c, h, w), &Device::Cpu).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

proptest! {
    #[test]
    fn nearest_code_is_the_brute_force_argmin((d, cb, vs) in codebook_case()) {
        let got = nearest_code(&vs, d, &cb).unwrap();
        for (i, v) in vs.chunks_exact(d).enumerate() {
            prop_assert_eq!(got[i], brute(v, d, &cb));
        }
    }

    #[test]
    fn labels_are_constant_inside_voronoi_cells((d, cb, vs) in codebook_case(), t in 0.0f64..0.95, seed in any::<u64>()) {
        prop_assume!(cb.len() / d >= 2);
        let v = &vs[..d];
        let mut dist: Vec<f64> = cb.chunks_exact(d).map(|m| v.iter().zip(m).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt()).collect();
        dist.sort_by(f64::total_cmp);
        let margin = (dist[1] - dist[0]) / 2.0;
        prop_assume!(margin > 1e-3);
        let dir: Vec<f64> = (0..d).map(|i| ((seed >> (i * 7)) & 0x7f) as f64 - 63.5).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        let moved: Vec<f32> = v.iter().zip(&dir).map(|(a, u)| (*a as f64 + t * margin * u / norm) as f32).collect();
        prop_assert_eq!(nearest_code(&moved, d, &cb).unwrap(), nearest_code(v, d, &cb).unwrap());
    }

    #[test]
    fn one_hot_round_trips(c in 1usize..20, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let idx: Vec<u32> = (0..h * w).map(|i| (seed.rotate_left(i as u32 * 5) % (c as u64 + 1)) as u32).collect();
        let m = LabelMap::new(c, h, w, idx).unwrap();
        let oh = m.one_hot();
        prop_assert_eq!(oh.iter().map(|v| *v as usize).sum::<usize>(), h * w);
        prop_assert_eq!(LabelMap::from_one_hot(&oh, c + 1, h, w).unwrap(), m);
    }

    #[test]
    fn single_class_illm_is_binary_gan(v in prop::collection::vec(-40.0f64..40.0, 24)) {
        let (real, fake) = (logits(v[..12].to_vec(), 2, 2, 3), logits(v[12..].to_vec(), 2, 2, 3));
        let labels = [LabelMap::new(1, 2, 3, vec![1; 6]).unwrap()];
        let margin = |t: &Tensor| t.narrow(1, 1, 1).unwrap().sub(&t.narrow(1, 0, 1).unwrap()).unwrap();
        let (ld, lg) = binary_gan_losses(&margin(&real), &margin(&fake)).unwrap();
        prop_assert!((scalar(&illm_disc_loss(&real, &fake, &labels).unwrap()) - scalar(&ld)).abs() <= 1e-9);
        prop_assert!((scalar(&illm_gen_loss(&fake, &labels).unwrap()) - scalar(&lg)).abs() <= 1e-9);
    }

    #[test]
    fn illm_losses_are_bounded_and_nonnegative(v in prop::collection::vec(-100.0f64..100.0, 40), label in 0u32..5) {
        let (real, fake) = (logits(v[..20].to_vec(), 5, 2, 2), logits(v[20..].to_vec(), 5, 2, 2));
        let labels = [LabelMap::new(4, 2, 2, vec![label; 4]).unwrap()];
        let ld = scalar(&illm_disc_loss(&real, &fake, &labels).unwrap());
        let lg = scalar(&illm_gen_loss(&fake, &labels).unwrap());
        prop_assert!((0.0..=2.0 * MAX_NLL).contains(&ld));
        prop_assert!((0.0..=MAX_NLL).contains(&lg));
    }
}

#[test]
fn generator_gradient_is_softmax_minus_target() {
    let v = vec![0.5, -1.0, 2.0, 0.0];
    let var = Var::from_tensor(&logits(v.clone(), 4, 1, 1)).unwrap();
    let labels = [LabelMap::new(3, 1, 1, vec![2]).unwrap()];
    let g = illm_gen_loss(var.as_tensor(), &labels).unwrap().backward().unwrap();
    let got: Vec<f64> = g.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let z: f64 = v.iter().map(|x: &f64| x.exp()).sum();
    for (k, gk) in got.iter().enumerate() {
        let expect = v[k].exp() / z - if k == 2 { 1.0 } else { 0.0 };
        assert!((gk - expect).abs() < 1e-12, "{k}: {gk} vs {expect}");
    }
}

#[test]
fn label_shape_mismatch_is_rejected() {
    let l = logits(vec![0.0; 12], 3, 2, 2);
    assert!(illm_gen_loss(&l, &[LabelMap::new(3, 2, 2, vec![1; 4]).unwrap()]).is_err());
    assert!(illm_gen_loss(&l, &[LabelMap::new(2, 1, 4, vec![1; 4]).unwrap()]).is_err());
    assert!(illm_gen_loss(&l, &[]).is_err());
    assert!(illm_disc_loss(&l, &logits(vec![0.0; 6], 3, 1, 2), &[LabelMap::new(2, 2, 2, vec![1; 4]).unwrap()]).is_err());
}

#[test]
fn code_losses_are_equal_in_value_with_split_gradients() {
    let e = Var::from_tensor(&Tensor::new(&[[1.0f32, 2.0]], &Device::Cpu).unwrap()).unwrap();
    let m = Var::from_tensor(&Tensor::new(&[[0.0f32, 4.0]], &Device::Cpu).unwrap()).unwrap();
    let (emb, commit) = code_losses(e.as_tensor(), m.as_tensor()).unwrap();
    let (a, b) = (emb.to_scalar::<f32>().unwrap(), commit.to_scalar::<f32>().unwrap());
    assert_eq!(a, b);
    let g = emb.backward().unwrap();
    assert!(g.get(e.as_tensor()).is_none() || g.get(e.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() == 0.0);
    let g = commit.backward().unwrap();
    assert!(g.get(m.as_tensor()).is_none() || g.get(m.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() == 0.0);
}
