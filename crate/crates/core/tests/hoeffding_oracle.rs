mod common;

use common::hoeffding_oracle;
use deconfound::independence::hoeffding_d_slices;
use proptest::prelude::*;

fn d(x: &[f64], y: &[f64]) -> f64 {
    hoeffding_d_slices(x, y).unwrap().value()
}

#[test]
fn oracle_agrees_on_perfect_dependence() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [-1.0, -2.0, -3.0, -4.0, -5.0];
    assert_eq!(hoeffding_oracle(&x, &x), 1.0);
    assert_eq!(hoeffding_oracle(&x, &y), 1.0);
}

#[test]
fn tied_inputs_match() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[1.0, 1.0, 2.0, 3.0, 4.0], &[0.3, -1.2, 0.7, 0.1, 2.0]),
        (
            &[1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0],
            &[5.0, 5.0, 4.0, 5.0, 4.0, 4.0, 4.0],
        ),
        (&[1.0; 8], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
    ];
    for (x, y) in cases {
        let v = d(x, y);
        assert!(v.is_finite());
        assert!((v - hoeffding_oracle(x, y)).abs() < 1e-12);
    }
}

fn small_alphabet_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (5usize..150).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u8..6).prop_map(f64::from), n),
            proptest::collection::vec((0u8..6).prop_map(f64::from), n),
        )
    })
}

fn continuous_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (5usize..150).prop_flat_map(|n| {
        (
            proptest::collection::vec(-1e3f64..1e3, n),
            proptest::collection::vec(-1e3f64..1e3, n),
        )
    })
}

proptest! {
    #[test]
    fn fast_path_matches_oracle_with_ties((x, y) in small_alphabet_pairs()) {
        prop_assert!((d(&x, &y) - hoeffding_oracle(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_oracle((x, y) in continuous_pairs()) {
        prop_assert!((d(&x, &y) - hoeffding_oracle(&x, &y)).abs() < 1e-12);
    }
}
