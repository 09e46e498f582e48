mod common;

use hdr_nmt::backbone::{cosine_distance, layer_norm, softmax, Graph, Tensor};
use hdr_nmt::data::{batch_by_tokens, tokenize, Vocab};
use hdr_nmt::eval::{bleu, pca_2d, Heatmap, SenseCounts};
use hdr_nmt::pretrain::{sr_logits, sum_pool, HdrModel};
use hdr_nmt::transformer::ModelConfig;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f32..5.0, r * c)
            .prop_map(move |d| Tensor::new(&[r, c], d).unwrap())
    })
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g"]),
        1..8,
    )
    .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 8)) {
        let y = softmax(&x, None).unwrap();
        for r in 0..y.rows() {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(x in matrix(3, 6), c in -10.0f32..10.0) {
        let shifted = Tensor::new(x.shape(), x.data().iter().map(|v| v + c).collect()).unwrap();
        let (a, b) = (softmax(&x, None).unwrap(), softmax(&shifted, None).unwrap());
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }

    #[test]
    fn layer_norm_centres_rows(x in matrix(4, 8)) {
        let n = x.cols();
        prop_assume!(n > 1);
        let g = Tensor::full(&[n], 1.0);
        let b = Tensor::zeros(&[n]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for r in 0..y.rows() {
            let src = x.row(r);
            let mean_in = src.iter().sum::<f32>() / n as f32;
            let var_in = src.iter().map(|v| (v - mean_in).powi(2)).sum::<f32>() / n as f32;
            let row = y.row(r);
            let mean = row.iter().sum::<f32>() / n as f32;
            prop_assert!(mean.abs() < 1e-4);
            if var_in > 1e-2 {
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n as f32;
                prop_assert!((var - 1.0).abs() < 1e-2, "variance {}", var);
            }
        }
    }

    #[test]
    fn cosine_distance_range_and_scale(
        a in prop::collection::vec(-3.0f32..3.0, 6),
        b in prop::collection::vec(-3.0f32..3.0, 6),
        k in 0.1f32..10.0,
    ) {
        let norm = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
        prop_assume!(norm(&a) > 1e-2 && norm(&b) > 1e-2);
        let d = cosine_distance(&a, &b).unwrap();
        prop_assert!((-1e-6..=2.0 + 1e-6).contains(&d));
        let ka: Vec<f32> = a.iter().map(|v| v * k).collect();
        prop_assert!((cosine_distance(&ka, &b).unwrap() - d).abs() < 1e-4);
        prop_assert!((cosine_distance(&a, &b).unwrap() - cosine_distance(&b, &a).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn sum_pool_ignores_row_order(x in matrix(6, 5), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rows: Vec<&[f32]> = (0..x.rows()).map(|r| x.row(r)).collect();
        rows.shuffle(&mut common::rng(seed));
        let shuffled = Tensor::from_rows(&rows);
        let (a, b) = (sum_pool(&x).unwrap(), sum_pool(&shuffled).unwrap());
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-4);
        }
    }

    #[test]
    fn bleu_is_bounded(
        hyps in prop::collection::vec(sentence(), 1..5),
        refs_seed in prop::collection::vec(sentence(), 5),
    ) {
        let h: Vec<String> = hyps.iter().map(|s| s.join(" ")).collect();
        let r: Vec<String> = refs_seed[..h.len()].iter().map(|s| s.join(" ")).collect();
        let s = bleu(&h, &r).unwrap().score;
        prop_assert!((0.0..=100.0).contains(&s), "score {}", s);
        // Without a single 4-gram the corpus score is 0 even for a perfect match.
        let perfect = if refs_seed[..h.len()].iter().any(|s| s.len() >= 4) { 100.0 } else { 0.0 };
        prop_assert_eq!(bleu(&r, &r).unwrap().score, perfect);
    }

    #[test]
    fn bleu_rewards_fixing_a_token(reference in prop::collection::vec(sentence(), 1..4), pick in any::<prop::sample::Index>()) {
        // Corrupting one token never raises the score.
        let r: Vec<String> = reference.iter().map(|s| s.join(" ")).collect();
        let k = pick.index(reference.len());
        let mut corrupted = reference.clone();
        corrupted[k][0] = "zzz".into();
        let h: Vec<String> = corrupted.iter().map(|s| s.join(" ")).collect();
        prop_assert!(bleu(&h, &r).unwrap().score <= bleu(&r, &r).unwrap().score);
    }

    #[test]
    fn token_batches_partition_and_fit(
        sizes in prop::collection::vec(1usize..40, 0..60),
        max in 40usize..200,
    ) {
        let batches = batch_by_tokens(&sizes, max).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..sizes.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty());
            prop_assert!(b.iter().map(|&i| sizes[i]).sum::<usize>() <= max);
        }
    }

    #[test]
    fn vocabulary_roundtrip(corpus in prop::collection::vec(sentence(), 1..10), pick in any::<prop::sample::Index>()) {
        let v = Vocab::build(&corpus, 1, None);
        let s = &corpus[pick.index(corpus.len())];
        prop_assert_eq!(&v.decode(&v.encode(s)), s);
    }

    #[test]
    fn tokenize_is_idempotent(line in "[ a-zA-Z0-9,.!?'()-]{0,40}") {
        let once = tokenize(&line);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn heatmap_is_symmetric_with_unit_diagonal(vs in prop::collection::vec(prop::collection::vec(0.1f32..2.0, 4), 1..6)) {
        let labels = (0..vs.len()).map(|i| i.to_string()).collect();
        let h = Heatmap::from_vectors(labels, &vs).unwrap();
        for a in 0..vs.len() {
            prop_assert!((h.matrix[a][a] - 1.0).abs() < 1e-6);
            for b in 0..vs.len() {
                prop_assert!((h.matrix[a][b] - h.matrix[b][a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_of_duplicates_coincides(v in prop::collection::vec(-1.0f32..1.0, 5), others in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 5), 1..4)) {
        let mut all = vec![v.clone(), v];
        all.extend(others);
        let p = pca_2d(&all);
        prop_assert_eq!(p.len(), all.len());
        prop_assert!((p[0][0] - p[1][0]).abs() < 1e-5 && (p[0][1] - p[1][1]).abs() < 1e-5);
    }

    #[test]
    fn sense_metrics_are_bounded(correct in 0usize..50, wrong in 0usize..50, missed in 0usize..50) {
        let c = SenseCounts { correct, wrong_sense: wrong, missed };
        for m in [c.precision(), c.recall(), c.f1()] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert!(c.recall() <= c.precision() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sentence_logits_are_symmetric(a in sentence(), b in sentence()) {
        let vocab = Vocab::build(&[a.clone(), b.clone()], 1, None);
        let cfg = ModelConfig { d_model: 8, n_heads: 2, n_enc_layers: 1, d_ff: 16, ..Default::default() };
        let model = HdrModel::new(cfg, vocab.clone(), false, 3).unwrap();
        let (ia, ib) = (vocab.encode(&a), vocab.encode(&b));
        let mut g = Graph::inference();
        let ab = sr_logits(&mut g, &model, &[ia.as_slice()], &[ib.as_slice()], false).unwrap();
        let ba = sr_logits(&mut g, &model, &[ib.as_slice()], &[ia.as_slice()], false).unwrap();
        prop_assert!(g.value(ab).bit_eq(g.value(ba)));
    }
}
