use std::collections::BTreeSet;
use std::path::PathBuf;

use binar::dataprep::{
    binarize_and_sum, compute_baseline, fit_iid_binomial, model_comparison, BinomialSeries, RatePanel, RateRow, Window,
};
use binar::estimation::log_partial_likelihood;
use binar::model::{simulate_series, ExogenousSpec, Init, ModelSpec, ParamVector};
use binar::Error;
use proptest::prelude::*;

fn fixture() -> RatePanel {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rates_two_states.csv");
    RatePanel::read_csv(std::fs::File::open(p).unwrap()).unwrap()
}

const EVAL: Window = Window {
    start: (2017, 1),
    end: (2017, 6),
};

fn states() -> Vec<String> {
    vec!["A".into(), "B".into()]
}

#[test]
fn fixture_matches_hand_enumeration() {
    let panel = fixture();
    let baseline = compute_baseline(&panel, &[2015, 2016].into()).unwrap();
    assert_eq!(baseline.get("A", 1), Some(2.0));
    assert_eq!(baseline.get("B", 6), Some(15.0));
    let s = binarize_and_sum(&panel, &baseline, &states(), EVAL).unwrap();
    assert_eq!(s.n, 2);
    assert_eq!(s.x, vec![1, 1, 0, 2, 0, 2]);
    assert_eq!(s.labels, (1..=6).map(|w| (2017, w)).collect::<Vec<_>>());
}

#[test]
fn single_baseline_year_is_identity() {
    let panel = fixture();
    let b = compute_baseline(&panel, &[2016].into()).unwrap();
    for w in 1..=6 {
        assert_eq!(b.get("A", w), panel.get("A", 2016, w));
    }
}

#[test]
fn ties_and_saturation() {
    let rows = |rate2017: f64| {
        (1..=4)
            .flat_map(|w| {
                ["A", "B", "C"].into_iter().flat_map(move |s| {
                    [
                        RateRow { state: s.into(), iso_year: 2016, week: w, rate: 3.0 },
                        RateRow { state: s.into(), iso_year: 2017, week: w, rate: rate2017 },
                    ]
                })
            })
            .collect::<Vec<_>>()
    };
    let window = Window { start: (2017, 1), end: (2017, 4) };
    let names: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
    let tied = RatePanel::from_rows(rows(3.0)).unwrap();
    let b = compute_baseline(&tied, &[2016].into()).unwrap();
    assert_eq!(binarize_and_sum(&tied, &b, &names, window).unwrap().x, vec![0; 4]);
    let above = RatePanel::from_rows(rows(3.5)).unwrap();
    let b = compute_baseline(&above, &[2016].into()).unwrap();
    assert_eq!(binarize_and_sum(&above, &b, &names, window).unwrap().x, vec![3; 4]);
}

#[test]
fn missing_state_in_window_is_a_coverage_error() {
    let panel = fixture();
    let baseline = compute_baseline(&panel, &[2015, 2016].into()).unwrap();
    let err = binarize_and_sum(&panel, &baseline, &["A".into(), "Z".into()], EVAL).unwrap_err();
    assert!(matches!(err, Error::Coverage(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binarization_is_scale_equivariant(
        rates in proptest::collection::vec(0u32..40, 24),
        factor in 0.01..100.0f64,
    ) {
        // two states, years 2016 (baseline) and 2017, six weeks; quarter-unit grid
        let mut rows = Vec::new();
        let mut it = rates.iter();
        for s in ["A", "B"] {
            for y in [2016, 2017] {
                for w in 1..=6 {
                    rows.push(RateRow { state: s.into(), iso_year: y, week: w, rate: *it.next().unwrap() as f64 * 0.25 });
                }
            }
        }
        let panel = RatePanel::from_rows(rows).unwrap();
        let years: BTreeSet<i32> = [2016].into();
        let base = compute_baseline(&panel, &years).unwrap();
        let plain = binarize_and_sum(&panel, &base, &states(), EVAL).unwrap();
        let scaled = binarize_and_sum(&panel.scaled(factor), &base.scaled(factor), &states(), EVAL).unwrap();
        prop_assert_eq!(plain, scaled);
    }

    #[test]
    fn ar1_nests_constant_model(seed in 0u64..10_000, phi1 in -0.6..0.6f64) {
        let spec = ModelSpec::new(6, ParamVector::new(-0.4, phi1, &[]), ExogenousSpec::none()).unwrap();
        let s = simulate_series(&spec, 200, seed, Init::default()).unwrap();
        let series = BinomialSeries::new(6, (0..=200).map(|t| (2000, t as u32)).collect(), s.x().to_vec()).unwrap();
        let cmp = model_comparison(&series).unwrap();
        prop_assert!(cmp.ar1_log_pl >= cmp.simple.log_lik - 1e-6);
        prop_assert!(cmp.lr_stat >= 0.0);
        prop_assert!((0.0..=1.0).contains(&cmp.p_value));
    }
}

#[test]
fn constant_model_is_the_phi1_zero_slice() {
    let spec = ModelSpec::new(6, ParamVector::new(-0.4, 0.0, &[]), ExogenousSpec::none()).unwrap();
    let s = simulate_series(&spec, 300, 5, Init::default()).unwrap();
    let series = BinomialSeries::new(6, vec![(2000, 1); 301], s.x().to_vec()).unwrap();
    let simple = fit_iid_binomial(&series).unwrap();
    let logit = (simple.pi_hat / (1.0 - simple.pi_hat)).ln();
    let at_slice = log_partial_likelihood(&s, 6, &ParamVector::new(logit, 0.0, &[])).unwrap();
    assert!((at_slice - simple.log_lik).abs() < 1e-6);
}

#[test]
fn aic_prefers_ar1_when_dependence_is_present() {
    let spec = ModelSpec::new(6, ParamVector::new(-2.0, 0.8, &[]), ExogenousSpec::none()).unwrap();
    let s = simulate_series(&spec, 500, 17, Init::default()).unwrap();
    let series = BinomialSeries::new(6, vec![(2000, 1); 501], s.x().to_vec()).unwrap();
    let cmp = model_comparison(&series).unwrap();
    assert!(cmp.aic_simple > cmp.aic_ar1, "{} vs {}", cmp.aic_simple, cmp.aic_ar1);
    assert!(cmp.p_value < 1e-6);
}
