use cbnlab::checks::cbn_added;
use cbnlab::generator::{
    build_generator, count_params, format_units, load_checkpoint, save_checkpoint, GeneratorSpec, Injection,
};
use cbnlab::layers::NormKind;
use cbnlab::tensor::{Padding, Prng, Tensor};
use proptest::prelude::*;

#[test]
fn reference_table_counts() {
    let base = count_params(&GeneratorSpec::default()).base_conv_weights;
    assert_eq!(base, 8_407_424);
    assert_eq!(format_units(base), "8M");
    for (s, added, label) in [(2, 7_040, "6.9K"), (8, 28_160, "27.5K"), (128, 450_560, "440K"), (256, 901_120, "880K")] {
        let p = count_params(&GeneratorSpec {
            latent_dim: s,
            ..Default::default()
        });
        assert_eq!(p.injection_added, added);
        assert_eq!(p.injection_added as f64, cbn_added(s));
        assert_eq!(format_units(p.injection_added), label);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Counting from the layout agrees with the allocated parameters.
    #[test]
    fn analytic_count_matches_built(
        w in 1usize..6, s in 1usize..6, blocks in 0usize..3,
        lci in any::<bool>(), bn in any::<bool>(), affine in any::<bool>(),
    ) {
        let spec = GeneratorSpec {
            base_width: w,
            latent_dim: s,
            extent: 16,
            res_blocks: blocks,
            injection: if lci { Injection::Lci } else { Injection::Cbn },
            base_norm: if bn { NormKind::Bn } else { NormKind::In },
            cbn_affine: affine,
            ..Default::default()
        };
        let g = build_generator(&spec, &mut Prng::new(0)).unwrap();
        prop_assert_eq!(count_params(&spec).total(), g.param_count());
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let spec = GeneratorSpec {
        base_width: 4,
        extent: 16,
        res_blocks: 1,
        base_norm: NormKind::Bn,
        padding: Padding::Zero,
        ..Default::default()
    };
    let g = build_generator(&spec, &mut Prng::new(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&g, dir.path()).unwrap();
    let h = load_checkpoint(dir.path()).unwrap();
    assert_eq!(h.spec, g.spec);
    let mut r = Prng::new(6);
    let x = Tensor::randn(&[2, 3, 16, 16], 1.0, &mut r);
    let c = Tensor::randn(&[2, 4], 1.0, &mut r);
    assert_eq!(g.generate(&x, &c).unwrap(), h.generate(&x, &c).unwrap());
}

#[test]
fn rejects_bad_specs() {
    for spec in [
        GeneratorSpec { extent: 18, ..Default::default() },
        GeneratorSpec { latent_dim: 0, ..Default::default() },
        GeneratorSpec { base_norm: NormKind::Cbin, ..Default::default() },
        GeneratorSpec { dropout: 1.0, ..Default::default() },
    ] {
        assert!(build_generator(&spec, &mut Prng::new(0)).is_err());
    }
}

#[test]
fn output_is_bounded_and_shaped() {
    let spec = GeneratorSpec { base_width: 4, extent: 16, res_blocks: 2, init_std: 1.0, ..Default::default() };
    let g = build_generator(&spec, &mut Prng::new(2)).unwrap();
    let x = Tensor::randn(&[3, 3, 16, 16], 1.0, &mut Prng::new(3));
    let y = g.generate(&x, &Tensor::zeros(&[3, 4])).unwrap();
    assert_eq!(y.shape(), &[3, 3, 16, 16]);
    assert!(y.max_abs() <= 1.0);
}
