use proptest::prelude::*;
use serde::Deserialize;
use transex_core::stats::{
    cohens_d_values, likert_with_moments, tost_values, welch_t_values, DEFAULT_ALPHA,
};

#[derive(Deserialize)]
struct Fixture {
    name: String,
    a: Vec<(f64, usize)>,
    b: Vec<(f64, usize)>,
    d_bound: f64,
    t: f64,
    df: f64,
    p: f64,
    cohens_d: f64,
    raw_bound: f64,
    p_lower: f64,
    p_upper: f64,
    p_tost: f64,
}

fn expand(runs: &[(f64, usize)]) -> Vec<f64> {
    runs.iter().flat_map(|&(v, c)| std::iter::repeat_n(v, c)).collect()
}

fn fixtures() -> Vec<Fixture> {
    serde_json::from_str(include_str!("data/stats_fixtures.json")).unwrap()
}

#[test]
fn welch_and_tost_match_reference_oracle() {
    let all = fixtures();
    assert!(all.len() >= 10);
    for f in &all {
        let (a, b) = (expand(&f.a), expand(&f.b));
        let w = welch_t_values(&a, &b, DEFAULT_ALPHA).unwrap();
        assert!((w.p_value - f.p).abs() <= 1e-9, "{}: p {} vs {}", f.name, w.p_value, f.p);
        assert!((w.t_statistic - f.t).abs() <= 1e-9 * f.t.abs().max(1.0), "{}: t", f.name);
        assert!((w.degrees_of_freedom - f.df).abs() <= 1e-9 * f.df, "{}: df", f.name);
        let d = cohens_d_values(&a, &b).unwrap().unwrap();
        assert!((d - f.cohens_d).abs() <= 1e-12, "{}: d", f.name);
        let t = tost_values(&a, &b, f.d_bound, DEFAULT_ALPHA).unwrap();
        assert!((t.raw_bound - f.raw_bound).abs() <= 1e-12, "{}: raw bound", f.name);
        assert!((t.p_lower - f.p_lower).abs() <= 1e-9, "{}: p_lower {} vs {}", f.name, t.p_lower, f.p_lower);
        assert!((t.p_upper - f.p_upper).abs() <= 1e-9, "{}: p_upper {} vs {}", f.name, t.p_upper, f.p_upper);
        assert!((t.p_tost - f.p_tost).abs() <= 1e-9, "{}: p_tost", f.name);
        assert_eq!(t.reject_nonequivalence, t.p_tost < DEFAULT_ALPHA);
    }
}

fn to_f64(s: Vec<u8>) -> Vec<f64> {
    s.into_iter().map(f64::from).collect()
}

#[test]
fn monet_and_selfie_decisions() {
    let monet_v = to_f64(likert_with_moments(1250, 3.20, 1.59).unwrap());
    let monet_s = to_f64(likert_with_moments(1250, 2.91, 1.76).unwrap());
    let selfie_v = to_f64(likert_with_moments(1250, 3.11, 1.76).unwrap());
    let selfie_s = to_f64(likert_with_moments(1250, 3.08, 1.50).unwrap());

    let monet = welch_t_values(&monet_v, &monet_s, DEFAULT_ALPHA).unwrap();
    assert!(monet.significant && (monet.t_statistic - 4.32).abs() < 0.02);
    let selfie = welch_t_values(&selfie_v, &selfie_s, DEFAULT_ALPHA).unwrap();
    assert!(!selfie.significant && selfie.p_value > 0.05);

    for (v, s) in [(&monet_v, &monet_s), (&selfie_v, &selfie_s)] {
        assert!(tost_values(v, s, 0.3, DEFAULT_ALPHA).unwrap().reject_nonequivalence);
    }
    let bound = tost_values(&selfie_v, &selfie_s, 0.3, DEFAULT_ALPHA).unwrap().raw_bound;
    assert!((bound - 0.49).abs() <= 0.02, "{bound}");

    let d = cohens_d_values(&monet_v, &monet_s).unwrap().unwrap();
    assert!((d - 0.173).abs() < 0.005, "{d}");
}

#[test]
fn tost_at_the_bound_is_half() {
    // Equal variances and sizes: observed d equals d_bound exactly.
    let a: Vec<f64> = (0..400).map(|i| if i % 2 == 0 { 2.0 } else { 4.0 }).collect();
    let sd = welch_t_values(&a, &a, DEFAULT_ALPHA).unwrap().std_a;
    let shift = 0.3 * sd;
    let b: Vec<f64> = a.iter().map(|v| v - shift).collect();
    let t = tost_values(&a, &b, 0.3, DEFAULT_ALPHA).unwrap();
    assert!((t.p_upper - 0.5).abs() < 1e-9, "{}", t.p_upper);
    assert!((t.p_tost - 0.5).abs() < 1e-9);
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u8..=5, 3..40).prop_map(to_f64)
}

proptest! {
    #[test]
    fn welch_is_antisymmetric(a in sample(), b in sample()) {
        let ab = welch_t_values(&a, &b, DEFAULT_ALPHA).unwrap();
        let ba = welch_t_values(&b, &a, DEFAULT_ALPHA).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn cohens_d_is_affine_invariant(a in sample(), b in sample(), k in 0.1f64..10.0, c in -5.0f64..5.0) {
        if let Some(d) = cohens_d_values(&a, &b).unwrap() {
            let scale = |x: &[f64]| x.iter().map(|v| k * v + c).collect::<Vec<_>>();
            let d2 = cohens_d_values(&scale(&a), &scale(&b)).unwrap().unwrap();
            prop_assert!((d - d2).abs() < 1e-9 * d.abs().max(1.0));
        }
    }

    #[test]
    fn tost_decision_is_monotone_in_bound(a in sample(), b in sample(), lo in 0.05f64..1.0, extra in 0.0f64..2.0) {
        if let (Ok(narrow), Ok(wide)) = (
            tost_values(&a, &b, lo, DEFAULT_ALPHA),
            tost_values(&a, &b, lo + extra, DEFAULT_ALPHA),
        ) {
            prop_assert!(wide.p_tost <= narrow.p_tost + 1e-12);
            if narrow.reject_nonequivalence {
                prop_assert!(wide.reject_nonequivalence);
            }
        }
    }
}
