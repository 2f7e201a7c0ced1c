use kshift::artifact::{ArtifactKind, ArtifactSpec, IntensityGrid};
use kshift::fft::{fft2, fftshift, ifft2, ifftshift};
use kshift::kspace::{to_image, to_kspace, PhaseAxis};
use kshift::norm::{normalize, NormMode, NormScheme, NormState};
use kshift::{Complex64, Rng, Tensor};
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = Rng::new(seed);
    Tensor::from_fn(&[h, w], |_| r.next_f64())
}

fn features(dims: [usize; 4], seed: u64, scale: f64) -> Tensor<f64> {
    let mut r = Rng::new(seed);
    Tensor::from_fn(&dims, |_| scale * r.normal() + 1.0)
}

fn norm(x: &Tensor<f64>, scheme: NormScheme) -> Tensor<f64> {
    let mut st = NormState::for_scheme(&scheme, x.dims()[1]);
    normalize(x, &scheme, &mut st, NormMode::Train).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_is_unitary(h in 2usize..40, w in 2usize..40, seed in any::<u64>()) {
        let mut r = Rng::new(seed);
        let x: Tensor<Complex64> = Tensor::from_fn(&[h, w], |_| Complex64::new(r.normal(), r.normal()));
        let k = fft2(&x).unwrap();
        let back = ifft2(&k).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
        let e = |t: &Tensor<Complex64>| t.data().iter().map(|z| z.norm_sqr()).sum::<f64>();
        prop_assert!((e(&x) - e(&k)).abs() < 1e-9 * e(&x).max(1.0));
    }

    #[test]
    fn shifts_are_inverse(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let x = image(h, w, seed);
        prop_assert_eq!(ifftshift(&fftshift(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn kspace_round_trip_of_nonnegative_image(h in 2usize..33, w in 2usize..33, seed in any::<u64>()) {
        let x = image(h, w, seed);
        let y = to_image(&to_kspace(&x, PhaseAxis::Cols).unwrap()).unwrap();
        prop_assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn artifacts_are_seed_deterministic_and_nonnegative(
        k in 0usize..5, level in 0usize..5, seed in any::<u64>(), img in any::<u64>(),
    ) {
        let kind = ArtifactKind::ALL[k];
        let params = IntensityGrid::standard(kind).levels[level].clone();
        let spec = ArtifactSpec::new(params, seed).unwrap();
        let x = image(24, 20, img);
        let a = spec.apply_indexed(&x, 3).unwrap();
        prop_assert_eq!(&a, &spec.apply_indexed(&x, 3).unwrap());
        prop_assert_eq!(a.dims(), x.dims());
        prop_assert!(a.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn per_sample_norms_ignore_the_rest_of_the_batch(seed in any::<u64>(), g in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let x = features([4, 8, 3, 3], seed, 2.0);
        let single = Tensor::new(vec![1, 8, 3, 3], x.data()[..72].to_vec()).unwrap();
        for scheme in [NormScheme::group(g), NormScheme::layer(), NormScheme::instance()] {
            let full = norm(&x, scheme);
            prop_assert!(norm(&single, scheme).data().iter().zip(&full.data()[..72]).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn normalized_sets_have_zero_mean_unit_variance(seed in any::<u64>(), scale in 1.0f64..50.0) {
        let x = features([5, 4, 4, 4], seed, scale);
        let y = norm(&x, NormScheme::batch());
        for c in 0..4 {
            let v: Vec<f64> = (0..5).flat_map(|n| y.data()[(n * 4 + c) * 16..(n * 4 + c + 1) * 16].to_vec()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64;
            prop_assert!(m.abs() < 1e-12);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
