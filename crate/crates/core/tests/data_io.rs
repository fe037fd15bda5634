mod common;

use common::rng;
use imf_core::data::{
    corrupt_triples, load_features, split_70_10_20, write_features, Dataset, MissingFill, Modality, Triple,
};
use imf_core::synthetic::{generate, SyntheticConfig};
use imf_core::Tensor;

#[test]
fn corruption_is_uniform_over_other_entities() {
    let n = 6;
    let draws = 60_000;
    let batch = vec![Triple::new(2, 0, 4); draws];
    let out = corrupt_triples(&batch, n, &mut rng(5)).unwrap();
    let mut heads = vec![0usize; n];
    let mut tails = vec![0usize; n];
    for t in &out {
        assert_eq!(t.relation, 0);
        match (t.head != 2, t.tail != 4) {
            (true, false) => heads[t.head] += 1,
            (false, true) => tails[t.tail] += 1,
            other => panic!("exactly one side must change: {other:?}"),
        }
    }
    assert_eq!(heads[2], 0);
    assert_eq!(tails[4], 0);
    // chi-squared over the 10 (side, replacement) cells, 9 dof; 27.9 is the 0.1% critical value
    let expected = draws as f64 / 10.0;
    let chi2: f64 = heads
        .iter()
        .enumerate()
        .filter(|&(e, _)| e != 2)
        .chain(tails.iter().enumerate().filter(|&(e, _)| e != 4))
        .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 27.9, "chi2 = {chi2}");
    assert!(corrupt_triples(&batch[..1], 1, &mut rng(0)).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let kg = generate(&SyntheticConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic");
    kg.dataset.save_dir(&path).unwrap();
    let back = Dataset::load_dir(&path).unwrap();
    assert_eq!(back.vocab, kg.dataset.vocab);
    assert_eq!(back.triples, kg.dataset.triples);
    assert_eq!(back.stats(), kg.dataset.stats());
}

#[test]
fn binary_features_round_trip_at_f32_precision() {
    let m = Tensor::xavier_uniform(&[7, 3], &mut rng(6));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.mmft");
    write_features(&path, &m).unwrap();
    let back = load_features(&path, Modality::Visual, 7, MissingFill::Zero).unwrap();
    assert!(back.matrix.max_abs_diff(&m).unwrap() < 1e-7);
    let err = load_features(&path, Modality::Visual, 8, MissingFill::Zero).unwrap_err();
    assert!(err.to_string().contains("7 rows"), "{err}");
}

#[test]
fn csv_features_fill_missing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, "1,2\n\n3,6\n").unwrap();
    let zero = load_features(&path, Modality::Textual, 3, MissingFill::Zero).unwrap();
    assert_eq!(zero.matrix.row(1), [0.0, 0.0]);
    let mean = load_features(&path, Modality::Textual, 3, MissingFill::Mean).unwrap();
    assert_eq!(mean.matrix.row(1), [2.0, 4.0]);
    std::fs::write(&path, "1,2\n3\n").unwrap();
    assert!(load_features(&path, Modality::Textual, 2, MissingFill::Zero).is_err());
}

#[test]
fn seventy_ten_twenty_split() {
    let triples: Vec<Triple> = (0..100).map(|i| Triple::new(i, 0, (i + 1) % 100)).collect();
    let store = split_70_10_20(triples.clone(), &mut rng(9));
    assert_eq!((store.train.len(), store.valid.len(), store.test.len()), (70, 10, 20));
    let mut all: Vec<Triple> = store.all().copied().collect();
    all.sort();
    let mut want = triples;
    want.sort();
    assert_eq!(all, want);
}
