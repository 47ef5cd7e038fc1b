use cbnlab::synth::{gen_dataset, hue_oracle, TaskKind, TaskSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// The hue oracle reads back the domain each target was painted with.
    #[test]
    fn oracle_recovers_domains(seed in any::<u64>(), domains in 2usize..7) {
        let spec = TaskSpec { domains, extent: 16, samples: 24, seed, ..Default::default() };
        let data = gen_dataset(&spec).unwrap();
        for s in &data.samples {
            let got = hue_oracle(&s.y, &s.mask, domains).unwrap();
            prop_assert!(got.is_none() || got == s.domain);
        }
        let read = data.samples.iter().filter(|s| hue_oracle(&s.y, &s.mask, domains).unwrap().is_some()).count();
        prop_assert!(read * 10 >= data.len() * 9);
    }
}

#[test]
fn inputs_are_gray_and_targets_are_not() {
    let data = gen_dataset(&TaskSpec { extent: 16, samples: 8, ..Default::default() }).unwrap();
    for s in &data.samples {
        assert!(hue_oracle(&s.x, &s.mask, 4).unwrap().is_none());
        assert!(s.y.max_abs() <= 1.0);
    }
}

#[test]
fn same_seed_same_data() {
    let spec = TaskSpec { kind: TaskKind::Continuous, extent: 16, samples: 6, seed: 3, ..Default::default() };
    let a = gen_dataset(&spec).unwrap();
    let b = gen_dataset(&spec).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn rejects_bad_tasks() {
    assert!(gen_dataset(&TaskSpec { extent: 10, ..Default::default() }).is_err());
    assert!(gen_dataset(&TaskSpec { domains: 1, ..Default::default() }).is_err());
}
