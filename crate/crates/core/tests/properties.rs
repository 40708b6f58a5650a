use proptest::prelude::*;

use protonet_core::metrics::{aggregate, classification_metrics, confusion_matrix};
use protonet_core::proto::{classify_queries, compute_prototypes, episode_loss, EmbeddingBatch};

fn support_strategy() -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<f64>)> {
    (2usize..=6, 1usize..=8, 1usize..=5).prop_flat_map(|(n_way, dim, k)| {
        let labels: Vec<usize> = (0..n_way).flat_map(|c| std::iter::repeat_n(c, k)).collect();
        let n = labels.len();
        (
            Just(n_way),
            Just(dim),
            Just(labels),
            proptest::collection::vec(-3.0f64..3.0, n * dim),
        )
    })
}

proptest! {
    #[test]
    fn prototypes_commute_with_affine_maps(
        (n_way, dim, labels, values) in support_strategy(),
        a in -3.0f64..3.0,
        b in proptest::collection::vec(-3.0f64..3.0, 8),
    ) {
        let plain = compute_prototypes(&EmbeddingBatch::new(dim, values.clone(), labels.clone()).unwrap(), n_way).unwrap();
        let mapped: Vec<f64> = values.iter().enumerate().map(|(i, v)| a * v + b[i % dim]).collect();
        let mapped = compute_prototypes(&EmbeddingBatch::new(dim, mapped, labels).unwrap(), n_way).unwrap();
        for (i, (p, m)) in plain.prototypes.iter().zip(&mapped.prototypes).enumerate() {
            prop_assert!((a * p + b[i % dim] - m).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_leaves_predictions_unchanged(
        (n_way, dim, labels, values) in support_strategy(),
        queries in proptest::collection::vec(-3.0f64..3.0, 8 * 4),
        shift in proptest::collection::vec(-5.0f64..5.0, 8),
    ) {
        let q: Vec<f64> = queries[..4 * dim].to_vec();
        let shifted = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().map(|(i, x)| x + shift[i % dim]).collect() };
        let protos = compute_prototypes(&EmbeddingBatch::new(dim, values.clone(), labels.clone()).unwrap(), n_way).unwrap();
        let protos_t = compute_prototypes(&EmbeddingBatch::new(dim, shifted(&values), labels).unwrap(), n_way).unwrap();
        let a = classify_queries(&EmbeddingBatch::new(dim, q.clone(), vec![0; 4]).unwrap(), &protos).unwrap();
        let b = classify_queries(&EmbeddingBatch::new(dim, shifted(&q), vec![0; 4]).unwrap(), &protos_t).unwrap();
        prop_assert_eq!(&a.predictions, &b.predictions);
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        for row in 0..4 {
            let (ra, rb) = (&a.logits[row * n_way..][..n_way], &b.logits[row * n_way..][..n_way]);
            for k in 1..n_way {
                prop_assert!(((ra[k] - ra[0]) - (rb[k] - rb[0])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        (n_way, dim, labels, values) in support_strategy(),
        queries in proptest::collection::vec(-10.0f64..10.0, 8 * 3),
    ) {
        let protos = compute_prototypes(&EmbeddingBatch::new(dim, values, labels).unwrap(), n_way).unwrap();
        let c = classify_queries(&EmbeddingBatch::new(dim, queries[..3 * dim].to_vec(), vec![0; 3]).unwrap(), &protos).unwrap();
        for row in c.probabilities.chunks(n_way) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant(mut values in proptest::collection::vec(0.0f64..1.0, 2..40), seed in any::<u64>()) {
        let a = aggregate(&values).unwrap();
        let mut rng = protonet_core::seed::rng_from(&[seed]);
        rand::seq::SliceRandom::shuffle(values.as_mut_slice(), &mut rng);
        let b = aggregate(&values).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std.unwrap().to_bits(), b.std.unwrap().to_bits());
        prop_assert!(b.is_consistent(1e-9));
    }

    #[test]
    fn confusion_preserves_totals(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let c = confusion_matrix(&pred, &truth, 6).unwrap();
        prop_assert_eq!(c.total() as usize, pred.len());
        for k in 0..6 {
            prop_assert_eq!(c.row_sum(k) as usize, truth.iter().filter(|&&t| t == k).count());
        }
    }
}

/// Straight-from-definition metrics on a random 60-element case.
#[test]
fn metrics_match_confusion_oracle() {
    use rand::Rng;
    let mut rng = protonet_core::seed::rng_from(&[60]);
    let n = 6;
    let truth: Vec<usize> = (0..60).map(|_| rng.gen_range(0..n)).collect();
    let pred: Vec<usize> = (0..60).map(|_| rng.gen_range(0..n)).collect();
    let m = classification_metrics(&pred, &truth, n).unwrap();

    let mut cm = vec![vec![0usize; n]; n];
    for (&t, &p) in truth.iter().zip(&pred) {
        cm[t][p] += 1;
    }
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let tp = cm[k][k] as f64;
        let predicted: usize = (0..n).map(|t| cm[t][k]).sum();
        let actual: usize = cm[k].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        p_sum += p;
        r_sum += r;
        f_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
    assert!((m.accuracy - correct as f64 / 60.0).abs() < 1e-9);
    assert!((m.precision_macro - p_sum / n as f64).abs() < 1e-9);
    assert!((m.recall_macro - r_sum / n as f64).abs() < 1e-9);
    assert!((m.f1_macro - f_sum / n as f64).abs() < 1e-9);
}

#[test]
fn loss_matches_log_sum_exp_oracle() {
    use rand::Rng;
    let mut rng = protonet_core::seed::rng_from(&[43]);
    let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let labels = [2usize, 0, 1, 2];
    let mut total = 0.0;
    for (row, &y) in logits.chunks(3).zip(&labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / z).ln();
    }
    let got = episode_loss(&logits, 3, &labels).unwrap();
    assert!((got - total / 4.0).abs() < 1e-9);
}

#[test]
fn random_prototypes_match_accumulation_oracle() {
    use rand::Rng;
    let mut rng = protonet_core::seed::rng_from(&[610]);
    let (n_way, k, d) = (6, 10, 8);
    let mut labels: Vec<usize> = (0..n_way).flat_map(|c| std::iter::repeat_n(c, k)).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let values: Vec<f64> = (0..labels.len() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = compute_prototypes(&EmbeddingBatch::new(d, values.clone(), labels.clone()).unwrap(), n_way).unwrap();
    let mut acc = vec![0.0; n_way * d];
    let mut count = vec![0.0; n_way];
    for (i, &l) in labels.iter().enumerate() {
        count[l] += 1.0;
        for j in 0..d {
            acc[l * d + j] += values[i * d + j];
        }
    }
    for c in 0..n_way {
        for j in 0..d {
            assert!((p.prototypes[c * d + j] - acc[c * d + j] / count[c]).abs() < 1e-6);
        }
    }
}
