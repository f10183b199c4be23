use candle_core::{Device, Tensor};
use csgan::metrics::{mse, psnr_from_mse, ssim, SsimParams};
use csgan::objectives::{l1_loss, lsgan_d_loss, lsgan_g_loss, scalar};
use csgan::{from_model_range, to_model_range, ImageTensor, PixelRange};
use proptest::prelude::*;

fn tensor(v: &[f64]) -> Tensor {
    Tensor::from_slice(v, v.len(), &Device::Cpu).unwrap()
}

fn unit8(v: &[u8], side: usize) -> ImageTensor {
    let f: Vec<f32> = v.iter().map(|&x| f32::from(x)).collect();
    ImageTensor::new(Tensor::from_vec(f, (1, 3, side, side), &Device::Cpu).unwrap(), PixelRange::Unit8).unwrap()
}

fn triple(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    let v = || prop::collection::vec(-5.0f64..5.0, len);
    (v(), v(), v())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_is_a_metric((x, y, z) in (1usize..40).prop_flat_map(triple)) {
        let d = |a: &[f64], b: &[f64]| scalar(&l1_loss(&tensor(a), &tensor(b)).unwrap()).unwrap();
        prop_assert!(d(&x, &y) >= 0.0);
        prop_assert!(d(&x, &x) == 0.0);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-12);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
    }

    #[test]
    fn adversarial_losses_are_non_negative(real in prop::collection::vec(-3.0f64..3.0, 1..20),
                                           fake in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        prop_assert!(scalar(&lsgan_d_loss(&tensor(&real), &tensor(&fake)).unwrap()).unwrap() >= 0.0);
        prop_assert!(scalar(&lsgan_g_loss(&tensor(&fake)).unwrap()).unwrap() >= 0.0);
    }

    #[test]
    fn range_round_trip_is_exact(v in prop::collection::vec(any::<u8>(), 3 * 4 * 4)) {
        let img = unit8(&v, 4);
        let back = from_model_range(&to_model_range(&img).unwrap()).unwrap();
        prop_assert_eq!(back.to_f64_vec().unwrap(), img.to_f64_vec().unwrap());
    }

    #[test]
    fn psnr_is_strictly_decreasing(a in 0.0f64..70000.0, b in 0.0f64..70000.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(psnr_from_mse(lo).unwrap() > psnr_from_mse(hi).unwrap());
    }

    #[test]
    fn mse_symmetry_and_quasi_triangle(a in prop::collection::vec(any::<u8>(), 48),
                                       b in prop::collection::vec(any::<u8>(), 48),
                                       c in prop::collection::vec(any::<u8>(), 48)) {
        let (a, b, c) = (unit8(&a, 4), unit8(&b, 4), unit8(&c, 4));
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert!(mse(&a, &c).unwrap() <= 2.0 * (mse(&a, &b).unwrap() + mse(&b, &c).unwrap()) + 1e-9);
    }

    #[test]
    fn ssim_symmetric_bounded_and_channel_permutation_invariant(
        a in prop::collection::vec(any::<u8>(), 3 * 12 * 12),
        b in prop::collection::vec(any::<u8>(), 3 * 12 * 12),
    ) {
        let p = SsimParams::default();
        let (x, y) = (unit8(&a, 12), unit8(&b, 12));
        let s = ssim(&x, &y, &p).unwrap();
        prop_assert!((s - ssim(&y, &x, &p).unwrap()).abs() < 1e-12);
        prop_assert!(s > -1.0 && s <= 1.0 + 1e-12);
        let plane = 144;
        let rotate = |v: &[u8]| -> Vec<u8> { [&v[plane..], &v[..plane]].concat() };
        let s_rot = ssim(&unit8(&rotate(&a), 12), &unit8(&rotate(&b), 12), &p).unwrap();
        prop_assert!((s - s_rot).abs() < 1e-12);
    }
}
