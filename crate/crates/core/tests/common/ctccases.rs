//! Random small CTC instances checked against path enumeration.

use acnv::ctc::{collapse, label_probability, label_probability_bruteforce, LabelSequence};
use acnv::init::RngSeed;
use acnv::model::DistributionSequence;
use rand::Rng;

/// Random distribution over `2..=max_classes` classes (blank last) and
/// `1..=max_frames` frames, plus a label that is feasible half the time by
/// construction and arbitrary otherwise.
pub fn random_instance(seed: u64, max_frames: usize, max_classes: usize) -> (DistributionSequence, LabelSequence) {
    let mut rng = RngSeed(seed).rng();
    let w = rng.random_range(1..=max_frames);
    let k = rng.random_range(2..=max_classes);
    let rows: Vec<Vec<f64>> = (0..w)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    let y = DistributionSequence::from_rows(&rows).unwrap();
    let label = if rng.random_bool(0.5) {
        let path: Vec<usize> = (0..w).map(|_| rng.random_range(0..k)).collect();
        collapse(&path, k - 1)
    } else {
        let len = rng.random_range(0..=w);
        LabelSequence::from_indices((0..len).map(|_| rng.random_range(0..k - 1)).collect())
    };
    (y, label)
}

/// Worst absolute gap between forward-backward and enumeration over
/// `count` instances with at most 8 frames and 4 classes.
pub fn oracle_max_error(count: u64) -> f64 {
    (0..count)
        .map(|i| {
            let (y, l) = random_instance(1000 + i, 8, 4);
            let fb = label_probability(&y, &l);
            let bf = label_probability_bruteforce(&y, &l).unwrap();
            (fb - bf).abs()
        })
        .fold(0.0, f64::max)
}

/// Every label of length `0..=max_len` over `symbols` classes.
pub fn all_labels(symbols: usize, max_len: usize) -> Vec<LabelSequence> {
    let mut out = vec![LabelSequence::default()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for c in 0..symbols {
                let mut m: Vec<usize> = l.clone();
                m.push(c);
                out.push(LabelSequence::from_indices(m.clone()));
                next.push(m);
            }
        }
        frontier = next;
    }
    out
}

/// Worst `|sum_l p(l|y) - 1|` over `count` instances, summing the
/// forward-backward probability of every label up to the frame count
/// (longer labels cannot be emitted).
pub fn normalization_max_error(count: u64) -> f64 {
    (0..count)
        .map(|i| {
            let (y, _) = random_instance(5000 + i, 7, 4);
            let total: f64 = all_labels(y.num_classes() - 1, y.len())
                .iter()
                .map(|l| label_probability(&y, l))
                .sum();
            (total - 1.0).abs()
        })
        .fold(0.0, f64::max)
}
