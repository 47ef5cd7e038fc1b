use cbnlab::tensor::io::{decode, encode, DType};
use cbnlab::tensor::{
    channel_stats, conv2d_raw, transposed_conv2d_raw, ConvGeometry, Padding, Prng, StatScope, Tensor,
};
use proptest::prelude::*;

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Zero), Just(Padding::Reflection)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, pad in padding()) {
        let mut r = Prng::new(seed);
        let x = Tensor::randn(&[2, 2, 6, 5], 1.0, &mut r);
        let u = Tensor::randn(&[2, 2, 6, 5], 1.0, &mut r);
        let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
        let g = ConvGeometry::new(1, 1, pad);
        let mix = x.scale(a).add(&u.scale(b)).unwrap();
        let lhs = conv2d_raw(&mix, &w, g).unwrap();
        let rhs = conv2d_raw(&x, &w, g).unwrap().scale(a).add(&conv2d_raw(&u, &w, g).unwrap().scale(b)).unwrap();
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn reflection_keeps_constant_planes_constant(v in -5.0f64..5.0, m in 3usize..9, n in 3usize..9) {
        let x = Tensor::full(&[1, 1, m, n], v);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_raw(&x, &w, ConvGeometry::new(1, 1, Padding::Reflection)).unwrap();
        let (lo, hi) = y.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
        prop_assert_eq!(hi - lo, 0.0);
    }

    /// <conv(x), y> = <x, conv^T(y)> for zero padding.
    #[test]
    fn transposed_is_adjoint(seed in any::<u64>()) {
        let mut r = Prng::new(seed);
        let x = Tensor::randn(&[1, 2, 8, 8], 1.0, &mut r);
        let w = Tensor::randn(&[3, 2, 4, 4], 1.0, &mut r);
        let y = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut r);
        let lhs = conv2d_raw(&x, &w, ConvGeometry::new(2, 1, Padding::Zero)).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&transposed_conv2d_raw(&y, &w, 2, 1).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn seeded_draws_replay(seed in any::<u64>()) {
        let a = Tensor::randn(&[17], 1.0, &mut Prng::new(seed));
        let b = Tensor::randn(&[17], 1.0, &mut Prng::new(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cbnt_round_trip(seed in any::<u64>(), dims in proptest::collection::vec(1usize..4, 0..5)) {
        let t = Tensor::randn(&dims, 1.0, &mut Prng::new(seed));
        prop_assert_eq!(decode(&encode(&t, DType::F64).unwrap()).unwrap(), t);
    }
}

#[test]
fn population_statistics() {
    let t = Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
    let s = channel_stats(&t, StatScope::Instance).unwrap();
    assert_eq!(s.means.data(), &[2.0]);
    assert_eq!(s.stds.data(), &[1.0]);
    let t = Tensor::new(&[2, 1, 1, 1], vec![0.0, 4.0]).unwrap();
    let s = channel_stats(&t, StatScope::Batch).unwrap();
    assert_eq!((s.means.data()[0], s.stds.data()[0]), (2.0, 2.0));
    let s = channel_stats(&Tensor::full(&[1, 1, 3, 3], 5.0), StatScope::Instance).unwrap();
    assert_eq!((s.means.data()[0], s.stds.data()[0]), (5.0, 0.0));
}

#[test]
fn corner_edge_interior_tap_counts() {
    let x = Tensor::full(&[1, 1, 5, 5], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d_raw(&x, &w, ConvGeometry::new(1, 1, Padding::Zero)).unwrap();
    assert_eq!(y.get(&[0, 0, 0, 0]), 4.0);
    assert_eq!(y.get(&[0, 0, 0, 2]), 6.0);
    assert_eq!(y.get(&[0, 0, 2, 2]), 9.0);
}
