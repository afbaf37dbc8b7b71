use std::collections::BTreeMap;

use proptest::prelude::*;

use diet_nlu::corpus::{stratified_kfold, tokenize_with_offsets, Dataset, Utterance};
use diet_nlu::eval::{mean_std, micro_f1, per_intent_prf, Confusion};
use diet_nlu::featurizer::{hash_embed, normalize_key, write_hash_table, DenseProvider};
use diet_nlu::model::crf::{log_partition, nll_with_grad, path_score, viterbi};
use diet_nlu::trainer::make_batches;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labelled(counts: &[usize]) -> Dataset {
    let mut utts = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            utts.push(Utterance::new(format!("c{c}-{i}"), format!("word{i} class{c}"), format!("intent-{c}")));
        }
    }
    Dataset::new("prop", utts).unwrap()
}

fn crf_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..=4, 1usize..=5).prop_flat_map(|(l, t)| {
        (
            Just(l),
            prop::collection::vec(-4.0f64..4.0, t * l),
            prop::collection::vec(-4.0f64..4.0, (l + 2) * (l + 2)),
            prop::collection::vec(0..l, t),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_stratify(counts in prop::collection::vec(1usize..25, 1..6), k in 2usize..8, seed: u64) {
        let ds = labelled(&counts);
        prop_assume!(k <= ds.len());
        let plan = stratified_kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(plan.assignment.len(), ds.len());
        let mut per_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for u in ds.utterances() {
            let f = plan.assignment[&u.id];
            prop_assert!(f < k);
            per_class.entry(u.intent.as_str()).or_insert_with(|| vec![0; k])[f] += 1;
        }
        for counts in per_class.values() {
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(plan, stratified_kfold(&ds, k, seed).unwrap());
    }

    #[test]
    fn micro_f1_is_accuracy(pairs in prop::collection::vec((0u8..6, 0u8..6), 1..80)) {
        let gold: Vec<String> = pairs.iter().map(|p| p.0.to_string()).collect();
        let pred: Vec<String> = pairs.iter().map(|p| p.1.to_string()).collect();
        let acc = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
        prop_assert!((micro_f1(&gold, &pred).unwrap() - acc).abs() < 1e-12);
        let cm = Confusion::new(&gold, &pred).unwrap();
        prop_assert_eq!(cm.total(), pairs.len());
        let prf = per_intent_prf(&gold, &pred).unwrap();
        for (i, label) in cm.labels.iter().enumerate() {
            let support = prf.get(label).map_or(0, |p| p.support);
            prop_assert_eq!(cm.row_sum(i), support);
        }
        for p in prf.values() {
            prop_assert!((0.0..=1.0).contains(&p.f1));
        }
    }

    #[test]
    fn crf_decoding_and_likelihood((l, em, tr, gold) in crf_case()) {
        let z = log_partition(&em, &tr, l);
        let (best, best_score) = viterbi(&em, &tr, l);
        prop_assert!((path_score(&em, &tr, l, &best) - best_score).abs() < 1e-9);
        prop_assert!(best_score <= z + 1e-12);
        prop_assert!(path_score(&em, &tr, l, &gold) <= best_score + 1e-9);

        let (nll, d_em, _) = nll_with_grad(&em, &tr, l, &gold);
        prop_assert!((nll - (z - path_score(&em, &tr, l, &gold))).abs() < 1e-9);
        prop_assert!(nll >= -1e-12);
        // Emission gradient is marginals minus gold one-hot: each row sums to zero.
        for row in d_em.chunks(l) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn hash_embed_unit_and_deterministic(key in "\\PC{0,12}", dim in 1usize..64, seed: u64) {
        let v = hash_embed(&key, dim, seed);
        prop_assert_eq!(v.len(), dim);
        let norm: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-5);
        prop_assert_eq!(v, hash_embed(&key, dim, seed));
    }

    #[test]
    fn token_offsets_cover_token_text(text in "[a-zA-Z0-9 ,.!?'-]{0,40}") {
        let chars: Vec<char> = text.chars().collect();
        let mut prev_end = 0;
        for t in tokenize_with_offsets(&text) {
            prop_assert!(t.start < t.end && t.end <= chars.len() && t.start >= prev_end);
            let raw: String = chars[t.start..t.end].iter().collect();
            prop_assert_eq!(raw.to_lowercase(), t.text);
            prev_end = t.end;
        }
    }

    #[test]
    fn batches_cover_every_example(labels in prop::collection::vec(0usize..5, 1..120), bs in 1usize..40, balanced: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = make_batches(&labels, bs, balanced, &mut rng);
        prop_assert_eq!(batches.len(), labels.len().div_ceil(bs));
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        if !balanced {
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn population_std_of_constant_is_zero(x in -10.0f64..10.0, n in 1usize..10) {
        let (mean, std) = mean_std(&vec![x; n]);
        prop_assert!((mean - x).abs() < 1e-12);
        prop_assert!(std.abs() < 1e-12);
    }
}

#[test]
fn fifty_key_hash_table_matches_reference_vectors() {
    let keys: Vec<String> = (0..50).map(|i| format!("Key-{i:02} Ünïcode\u{301}")).collect();
    let table = write_hash_table(keys.iter().map(String::as_str), 24, 99).unwrap();
    assert_eq!(table.len(), 50);
    let bytes = table.to_dnse_bytes().unwrap();
    let back = DenseProvider::from_dnse_bytes(&bytes).unwrap();
    assert_eq!(back.to_dnse_bytes().unwrap(), bytes);
    for k in &keys {
        let nk = normalize_key(k);
        assert_eq!(back.lookup(&nk).unwrap(), hash_embed(&nk, 24, 99).as_slice());
    }
}
