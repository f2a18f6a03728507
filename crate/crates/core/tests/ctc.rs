mod common;

use acnv::ctc::{
    best_path_decode, collapse, ctc_loss, edit_distance, label_probability, label_probability_bruteforce,
    lexicon_decode, required_frames, sequence_loss_and_grad, Alphabet, LabelSequence, Lexicon,
};
use acnv::model::DistributionSequence;
use acnv::{Error, Tensor};
use common::ctccases::{normalization_max_error, oracle_max_error, random_instance};
use proptest::prelude::*;

#[test]
fn forward_backward_matches_enumeration() {
    let err = oracle_max_error(300);
    assert!(err < 1e-9, "max error {err:e}");
}

#[test]
fn label_probabilities_sum_to_one() {
    let err = normalization_max_error(60);
    assert!(err < 1e-9, "max error {err:e}");
}

#[test]
fn hand_computed_two_frame_case() {
    // y = [[0.6, 0.4], [0.3, 0.7]] with blank = 1:
    // paths to "0" are (0,0), (0,b), (b,0) -> 0.18 + 0.42 + 0.12
    let y = DistributionSequence::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]).unwrap();
    let l = LabelSequence::from_indices(vec![0]);
    assert!((label_probability(&y, &l) - 0.72).abs() < 1e-15);
    assert!((label_probability(&y, &LabelSequence::default()) - 0.28).abs() < 1e-15);
    assert!((label_probability_bruteforce(&y, &l).unwrap() - 0.72).abs() < 1e-15);
}

#[test]
fn repeated_symbols_need_a_separating_blank() {
    let y = DistributionSequence::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let aa = LabelSequence::from_indices(vec![0, 0]);
    assert_eq!(required_frames(&aa), 3);
    assert_eq!(label_probability(&y, &aa), 0.0);
}

#[test]
fn infeasible_and_malformed_targets_rejected() {
    let logits = Tensor::zeros(&[1, 3, 4]);
    let long = LabelSequence::from_indices(vec![0, 0, 1]);
    match ctc_loss(&logits, &[long]) {
        Err(Error::InfeasibleTarget { required: 4, frames: 3, .. }) => {}
        other => panic!("expected infeasible target, got {other:?}"),
    }
    assert!(ctc_loss(&logits, &[LabelSequence::default()]).is_err());
    assert!(ctc_loss(&logits, &[LabelSequence::from_indices(vec![3])]).is_err());
    let nan = Tensor::full(&[1, 3, 4], f64::NAN);
    assert!(matches!(
        ctc_loss(&nan, &[LabelSequence::from_indices(vec![0])]),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn uniform_rows_give_the_closed_form_loss() {
    // with uniform rows every path has probability K^-W, so
    // loss = W ln K - ln(number of alignments); "a" over 3 frames has 6
    let logits = Tensor::zeros(&[1, 3, 37]);
    let a = Alphabet::alphanumeric().encode("a").unwrap();
    let loss = ctc_loss(&logits, &[a]).unwrap().item();
    let expected = 3.0 * 37f64.ln() - 6f64.ln();
    assert!((loss - expected).abs() < 1e-12);
}

#[test]
fn lexicon_with_ground_truth_recovers_word() {
    let a = Alphabet::alphanumeric();
    let b = a.blank();
    let mut rows = Vec::new();
    for c in "h-e-l-l-o".chars() {
        let mut r = vec![0.0; 37];
        r[if c == '-' { b } else { a.index_of(c).unwrap() }] = 1.0;
        rows.push(r);
    }
    // corrupt one frame so the free decode is "helo"
    rows[6] = {
        let mut r = vec![0.0; 37];
        r[b] = 1.0;
        r
    };
    let y = DistributionSequence::from_rows(&rows).unwrap();
    assert_eq!(a.decode(&best_path_decode(&y)), "helo");
    let lex = Lexicon::from_strs(&a, &["hello", "world", "help"]).unwrap();
    assert_eq!(a.decode(&lexicon_decode(&y, &lex).unwrap()), "hello");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn collapse_never_grows_and_drops_blanks(path in prop::collection::vec(0usize..5, 0..20)) {
        let l = collapse(&path, 4);
        prop_assert!(l.len() <= path.len());
        prop_assert!(!l.as_slice().contains(&4));
        prop_assert!(required_frames(&l) <= path.len());
    }

    #[test]
    fn probability_in_unit_interval(seed in 0u64..10_000) {
        let (y, l) = random_instance(seed, 8, 4);
        let p = label_probability(&y, &l);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero(seed in 0u64..10_000) {
        let (y, l) = random_instance(seed, 8, 4);
        prop_assume!(!l.is_empty() && required_frames(&l) <= y.len());
        let k = y.num_classes();
        let logits: Vec<f64> = y.as_slice().iter().map(|p| p.ln()).collect();
        let (loss, grad) = sequence_loss_and_grad(&logits, k, &l);
        prop_assert!(loss >= -1e-12);
        for row in grad.chunks(k) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
        c in prop::collection::vec(0u8..4, 0..8),
    ) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) >= a.len().abs_diff(b.len()));
    }
}
