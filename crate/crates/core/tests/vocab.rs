mod common;

use proptest::prelude::*;
use vwt::kmeans::{KMeansConfig, KMeansMode};
use vwt::vocab::{
    assign_nearest, build_vocab, build_vocab_with_report, load_vocab, save_vocab,
};
use vwt::{Error, PatchMatrix};

fn corpus_from(rows: Vec<f32>, dim: usize, chunk: usize) -> Vec<PatchMatrix> {
    rows.chunks(chunk * dim)
        .map(|c| PatchMatrix::from_vectors(dim, c.to_vec()).unwrap())
        .collect()
}

#[test]
fn recovers_three_blobs_with_lloyd() {
    let dim = 12;
    let mut rng = common::rng(1);
    let (rows, means) = common::three_blobs(&mut rng, 200, dim, 0.02);
    let corpus = corpus_from(rows.clone(), dim, 50);
    let vocab = build_vocab(&corpus, &KMeansConfig::lloyd(3).with_seed(4), "blobs").unwrap();

    // each blob mean has exactly one centroid nearby
    let sep = common::blob_separation(dim);
    let mut hit = [false; 3];
    for w in 0..3 {
        let c = vocab.centroid(w);
        let (b, err) = means
            .iter()
            .enumerate()
            .map(|(b, m)| {
                let e: f64 = m.iter().zip(c).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                (b, e.sqrt())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(err < 0.01 * sep, "word {w}: error {err} vs separation {sep}");
        assert!(!hit[b]);
        hit[b] = true;
    }

    // assignments agree with brute force and put every blob member together
    let labels = assign_nearest(&PatchMatrix::from_vectors(dim, rows.clone()).unwrap(), &vocab).unwrap();
    let table = common::euclid_table(&rows, vocab.centroids(), dim);
    for (i, row) in table.iter().enumerate() {
        assert_eq!(labels[i], common::argmin_lowest(row));
        assert_eq!(labels[i], labels[i % 3]);
    }
}

#[test]
fn single_word_is_corpus_mean() {
    let mut rng = common::rng(2);
    let rows = common::random_vectors(&mut rng, 300, 5);
    let mut mean = [0.0f64; 5];
    for r in rows.chunks(5) {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v as f64 / 300.0;
        }
    }
    let vocab = build_vocab(corpus_from(rows, 5, 64), &KMeansConfig::lloyd(1), "mean").unwrap();
    for (&c, m) in vocab.centroid(0).iter().zip(mean) {
        assert!((c as f64 - m).abs() < 1e-6);
    }
}

#[test]
fn repeated_distinct_patches_become_the_words() {
    let distinct: Vec<[f32; 3]> = vec![[0.1, 0.2, 0.3], [0.9, 0.1, 0.5], [0.4, 0.4, 0.4], [0.0, 1.0, 0.0]];
    let rows: Vec<f32> = (0..200).flat_map(|i| distinct[i % 4]).collect();
    for mode in [KMeansMode::Lloyd, KMeansMode::Minibatch] {
        let mut cfg = KMeansConfig::lloyd(4);
        cfg.mode = mode;
        cfg.batch_size = 32;
        let vocab = build_vocab(corpus_from(rows.clone(), 3, 25), &cfg, "dups").unwrap();
        let mut words: Vec<Vec<f32>> = vocab.words().map(|w| w.to_vec()).collect();
        words.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = distinct.iter().map(|d| d.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (w, d) in words.iter().zip(&want) {
            for (a, b) in w.iter().zip(d) {
                assert!((a - b).abs() < 1e-6, "{mode:?}: {w:?} vs {d:?}");
            }
        }
    }
}

#[test]
fn lloyd_objective_never_increases() {
    for seed in 0..20u64 {
        let mut rng = common::rng(100 + seed);
        let n = 80 + (seed as usize * 13) % 90;
        let dim = 2 + (seed as usize % 6);
        let rows = common::random_vectors(&mut rng, n, dim);
        let mut cfg = KMeansConfig::lloyd(2 + (seed as usize % 7)).with_seed(seed);
        cfg.tol = 0.0;
        cfg.max_iters = 50;
        let (_, report) = build_vocab_with_report(corpus_from(rows, dim, 40), &cfg, "r").unwrap();
        for w in report.objective_history.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn minibatch_centroids_stay_in_bounding_box() {
    let mut rng = common::rng(5);
    let rows: Vec<f32> = common::random_vectors(&mut rng, 2000, 6)
        .into_iter()
        .map(|v| 0.2 + 0.5 * v)
        .collect();
    let (lo, hi) = rows.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let mut cfg = KMeansConfig::new(16).with_seed(3);
    cfg.batch_size = 64;
    cfg.max_iters = 60;
    let vocab = build_vocab(corpus_from(rows, 6, 100), &cfg, "box").unwrap();
    assert!(vocab.centroids().iter().all(|&v| v >= lo && v <= hi));
}

#[test]
fn builds_are_bit_identical_per_seed() {
    let mut rng = common::rng(6);
    let rows = common::random_vectors(&mut rng, 500, 4);
    for mode in [KMeansMode::Lloyd, KMeansMode::Minibatch] {
        let mut cfg = KMeansConfig::new(8).with_seed(42);
        cfg.mode = mode;
        cfg.batch_size = 64;
        let a = build_vocab(corpus_from(rows.clone(), 4, 50), &cfg, "d").unwrap();
        let b = build_vocab(corpus_from(rows.clone(), 4, 50), &cfg, "d").unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

#[test]
fn save_load_is_bit_identical() {
    let mut rng = common::rng(7);
    let rows = common::random_vectors(&mut rng, 256, 12);
    let corpus: Vec<PatchMatrix> = rows
        .chunks(16 * 12)
        .map(|c| PatchMatrix::from_rows(2, 3, (4, 4), c.to_vec()).unwrap())
        .collect();
    let vocab = build_vocab(&corpus, &KMeansConfig::lloyd(5).with_seed(9), "tiles").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vwtv");
    save_vocab(&vocab, &path).unwrap();
    let back = load_vocab(&path).unwrap();
    assert_eq!(back, vocab);
    assert_eq!(back.metadata().corpus, "tiles");
    assert_eq!(back.metadata().seed, 9);
    assert_eq!(back.patch_size(), 2);
    let bits = |v: &vwt::Vocabulary| v.centroids().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&vocab));
}

#[test]
fn too_few_distinct_patches_reports_effective_count() {
    let rows: Vec<f32> = (0..100).flat_map(|i| [(i % 2) as f32, 0.5]).collect();
    match build_vocab(corpus_from(rows, 2, 10), &KMeansConfig::lloyd(3), "x") {
        Err(Error::InsufficientDistinct { distinct, requested }) => {
            assert_eq!((distinct, requested), (2, 3))
        }
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #[test]
    fn assign_nearest_matches_distance_table(seed in any::<u64>(), n in 1usize..40, v in 1usize..12, dim in 1usize..9) {
        let mut rng = common::rng(seed);
        let patches = common::random_vectors(&mut rng, n, dim);
        let centroids = common::random_vectors(&mut rng, v, dim);
        let vocab = common::pixel_vocab(1, dim, centroids.clone());
        let got = assign_nearest(&PatchMatrix::from_vectors(dim, patches.clone()).unwrap(), &vocab).unwrap();
        let table = common::euclid_table(&patches, &centroids, dim);
        let want: Vec<usize> = table.iter().map(|r| common::argmin_lowest(r)).collect();
        prop_assert_eq!(got, want);
    }
}
