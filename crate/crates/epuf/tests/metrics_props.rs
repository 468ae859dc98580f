use epuf::config::RunConfig;
use epuf::metrics::{study_population, PopulationStudy, Stage};
use epuf_core::DeviceModel;
use proptest::prelude::*;

const THETAS: [u32; 4] = [0, 1, 2, 5];

fn one_segment_study(seed: u64, p_noise_max: f64, reads: usize) -> PopulationStudy {
    let mut cfg = RunConfig::default();
    cfg.set("banks", "1").unwrap();
    cfg.set("segments", "1").unwrap();
    cfg.thetas = THETAS.to_vec();
    let model = DeviceModel::new(seed, cfg.geometry, cfg.f_fail, 0.002, p_noise_max).unwrap();
    study_population(&[model], &cfg.pipeline(), &cfg.temperatures, reads).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn qualified_bits_and_masked_errors_grow_with_theta(seed in any::<u64>()) {
        let study = one_segment_study(seed, 0.05, 4);
        let seg = &study.segments[0];
        let counts: Vec<usize> = THETAS.iter().map(|&t| seg.ch.helper_stream(t).qualified()).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", counts);
        for ti in 0..study.temperatures.len() {
            let errs: Vec<u64> = THETAS.iter().map(|&t| seg.tallies[&(ti, Stage::Masked, Some(t))].errors).collect();
            prop_assert!(errs.windows(2).all(|w| w[0] <= w[1]), "{:?}", errs);
        }
    }

    #[test]
    fn theta_zero_is_error_free_without_read_noise(seed in any::<u64>()) {
        let study = one_segment_study(seed, 0.0, 6);
        for ti in 0..study.temperatures.len() {
            prop_assert_eq!(study.segments[0].tallies[&(ti, Stage::Masked, Some(0))].errors, 0);
        }
    }
}

/// The error ratio over qualified bits is not monotone segment by segment:
/// a larger threshold can add bits that happened not to fail during
/// validation, lowering the ratio while the error count stays put.
#[test]
#[ignore = "ratio form does not hold per segment; error counts are checked instead"]
fn masked_ber_ratio_per_segment() {
    let cfg = RunConfig {
        devices: 5,
        thetas: THETAS.to_vec(),
        ..RunConfig::default()
    };
    let study = study_population(&cfg.population().unwrap(), &cfg.pipeline(), &cfg.temperatures, 10).unwrap();
    let mut violations = 0;
    for seg in &study.segments {
        for ti in 0..study.temperatures.len() {
            let bers: Vec<f64> = THETAS
                .iter()
                .map(|&t| seg.tallies[&(ti, Stage::Masked, Some(t))].ber())
                .collect();
            violations += bers.windows(2).any(|w| w[0] > w[1]) as usize;
        }
    }
    assert_eq!(violations, 0);
}
