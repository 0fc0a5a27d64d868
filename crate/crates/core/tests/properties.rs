use std::collections::HashSet;

use herdkit_core::config::{LossKind, ProbeConfig};
use herdkit_core::data::{epoch_batch_indices, mirror_image, random_hflip, ImageBatch, IMAGE_BYTES};
use herdkit_core::herd::sample_roles;
use herdkit_core::loss::{cosine_loss, loss_value, mse_loss, salient_loss};
use herdkit_core::model::EmbeddingBatch;
use herdkit_core::probes::{knn_predict, linear_probe, macro_f1, mlp_probe, EmbeddingTable, KnnMetric};
use herdkit_core::seed::{derive_seed, flip_label, peer_init_label, role_label, shuffle_label};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(values: Vec<f64>, dim: usize) -> EmbeddingBatch<f64> {
    let rows = values.len() / dim;
    EmbeddingBatch::from_values(values, rows, dim).unwrap()
}

fn operands() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (1usize..5, 1usize..9).prop_flat_map(|(rows, dim)| {
        let n = rows * dim;
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
            Just(dim),
        )
    })
}

#[test]
fn derived_seeds_are_distinct() {
    let mut seen = HashSet::new();
    for i in 0..2_500u64 {
        for label in [peer_init_label(i as usize), shuffle_label(i as usize), role_label(i), flip_label(i)] {
            assert!(seen.insert(derive_seed(7, &label)), "collision at {label}");
        }
    }
    assert_eq!(seen.len(), 10_000);
}

proptest! {
    #[test]
    fn losses_are_non_negative_and_salient_brackets_mse((a, b, dim) in operands()) {
        let (a, b) = (batch(a, dim), batch(b, dim));
        for &kind in LossKind::ALL {
            prop_assert!(loss_value(kind, &a, &b).unwrap() >= 0.0);
        }
        let mse = mse_loss(&a, &b).unwrap();
        let sal = salient_loss(&a, &b).unwrap();
        prop_assert!(mse <= sal * (1.0 + 1e-12) + 1e-300);
        prop_assert!(sal <= dim as f64 * mse * (1.0 + 1e-12) + 1e-300);
        let cos = cosine_loss(&a, &b).unwrap();
        prop_assert!(cos <= 2.0 + 1e-12);
    }

    #[test]
    fn identical_operands_give_zero((a, _, dim) in operands()) {
        let a = batch(a, dim);
        prop_assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(salient_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_ignores_sample_order_and_class_names(
        pairs in prop::collection::vec((0u8..10, 0u8..10), 1..200),
        seed in any::<u64>(),
    ) {
        let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let base = macro_f1(&preds, &labels, 10).unwrap();
        prop_assert!((0.0..=100.0).contains(&base));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let p2: Vec<u8> = order.iter().map(|&i| preds[i]).collect();
        let l2: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
        prop_assert!((macro_f1(&p2, &l2, 10).unwrap() - base).abs() < 1e-9);

        let mut rename: Vec<u8> = (0..10).collect();
        rand::seq::SliceRandom::shuffle(rename.as_mut_slice(), &mut rng);
        let p3: Vec<u8> = preds.iter().map(|&c| rename[c as usize]).collect();
        let l3: Vec<u8> = labels.iter().map(|&c| rename[c as usize]).collect();
        prop_assert!((macro_f1(&p3, &l3, 10).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn epoch_batches_partition_the_dataset(len in 1usize..500, bs in 1usize..64, seed in any::<u64>()) {
        let chunks = epoch_batch_indices(len, bs, seed).unwrap();
        prop_assert_eq!(chunks.len(), len.div_ceil(bs));
        for c in &chunks[..chunks.len() - 1] {
            prop_assert_eq!(c.len(), bs);
        }
        let mut all: Vec<usize> = chunks.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(epoch_batch_indices(len, bs, seed).unwrap(), chunks);
    }

    #[test]
    fn mirroring_is_an_involution(image in prop::collection::vec(any::<u8>(), IMAGE_BYTES)) {
        let mut m = image.clone();
        mirror_image(&mut m);
        mirror_image(&mut m);
        prop_assert_eq!(m, image);
    }

    #[test]
    fn flip_changes_only_whole_images(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<f32> = (0..3 * IMAGE_BYTES).map(|_| rng.gen()).collect();
        let b = ImageBatch { pixels: pixels.clone(), labels: vec![0, 1, 2], step_id: 0 };
        let flipped = random_hflip(b.clone(), 0.5, seed);
        for i in 0..3 {
            let mut m = b.image(i).to_vec();
            mirror_image(&mut m);
            prop_assert!(flipped.image(i) == b.image(i) || flipped.image(i) == m.as_slice());
        }
        prop_assert_eq!(flipped.labels, b.labels);
    }

    #[test]
    fn knn_matches_exhaustive_vote(
        fit in prop::collection::vec(((-8i32..8, -8i32..8), 0u8..4), 1..40),
        queries in prop::collection::vec((-8i32..8, -8i32..8), 1..10),
        k in 1usize..8,
    ) {
        // Quarter-grid coordinates keep every squared distance exact in f32.
        let q = |v: i32| v as f32 * 0.25;
        let train = EmbeddingTable::new(
            fit.iter().flat_map(|&((a, b), _)| [q(a), q(b)]).collect(),
            2,
            fit.iter().map(|&(_, c)| c).collect(),
            vec![0],
        ).unwrap();
        let test = EmbeddingTable::new(
            queries.iter().flat_map(|&(a, b)| [q(a), q(b)]).collect(),
            2,
            vec![0; queries.len()],
            vec![0],
        ).unwrap();
        let got = knn_predict(&train, &test, k, KnnMetric::Euclidean).unwrap();
        for (qi, &(a, b)) in queries.iter().enumerate() {
            let mut d: Vec<(i64, usize)> = fit
                .iter()
                .enumerate()
                .map(|(j, &((x, y), _))| (((x - a) as i64).pow(2) + ((y - b) as i64).pow(2), j))
                .collect();
            d.sort();
            let near = &d[..k.min(d.len())];
            let mut best: Option<(usize, f64, u8)> = None;
            for c in 0..4u8 {
                let members: Vec<f64> = near.iter().filter(|&&(_, j)| fit[j].1 == c).map(|&(s, _)| (s as f64).sqrt()).collect();
                if members.is_empty() {
                    continue;
                }
                let cand = (members.len(), members.iter().sum::<f64>(), c);
                best = match best {
                    None => Some(cand),
                    Some(b) if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1 - 1e-9) => Some(cand),
                    keep => keep,
                };
            }
            prop_assert_eq!(got[qi], best.unwrap().2);
        }
    }
}

#[test]
fn role_sampling_is_uniform_over_sixteen_peers() {
    let draws = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut students = [0usize; 16];
    let mut teachers = [0usize; 16];
    for _ in 0..draws {
        let (s, t) = sample_roles(16, 1, &mut rng).unwrap();
        students[s] += 1;
        teachers[t[0]] += 1;
    }
    let p = 1.0 / 16.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for i in 0..16 {
        assert!((students[i] as f64 - mean).abs() <= 3.0 * sigma, "student {i}: {}", students[i]);
        assert!((teachers[i] as f64 - mean).abs() <= 3.0 * sigma, "teacher {i}: {}", teachers[i]);
    }
}

#[test]
fn random_predictions_score_about_ten_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 50_000;
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let preds: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    let f1 = macro_f1(&preds, &labels, 10).unwrap();
    assert!((f1 - 10.0).abs() <= 1.5, "{f1}");
}

fn clustered(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<u8>) {
    let centres: Vec<f32> = (0..10 * dim).map(|i| if i % (dim + 1) == 0 { 3.0 } else { 0.0 }).collect();
    let mut x = Vec::with_capacity(rows * dim);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let c = rng.gen_range(0..10usize);
        y.push(c as u8);
        x.extend((0..dim).map(|j| centres[c * dim + j] + rng.gen_range(-1.0f32..1.0)));
    }
    (x, y)
}

#[test]
fn linear_probe_on_permuted_labels_is_at_chance() {
    let cfg = ProbeConfig { probe_epochs: 5, probe_lr: 0.05, probe_batch_size: 64, ..ProbeConfig::default() };
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (xf, mut yf) = clustered(2_000, 16, &mut rng);
        rand::seq::SliceRandom::shuffle(yf.as_mut_slice(), &mut rng);
        let (xt, yt) = clustered(2_000, 16, &mut rng);
        let fit = EmbeddingTable::new(xf, 16, yf, vec![0]).unwrap();
        let test = EmbeddingTable::new(xt, 16, yt, vec![0]).unwrap();
        accs.push(linear_probe(&fit, &test, &cfg, seed).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 10.0).abs() <= 3.0, "{accs:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (xf, yf) = clustered(2_000, 16, &mut rng);
    let (xt, yt) = clustered(2_000, 16, &mut rng);
    let fit = EmbeddingTable::new(xf, 16, yf, vec![0]).unwrap();
    let test = EmbeddingTable::new(xt, 16, yt, vec![0]).unwrap();
    assert!(linear_probe(&fit, &test, &cfg, 0).unwrap().accuracy > 90.0);
}

fn xor_table(rows: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let mut x = Vec::with_capacity(rows * 2);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (a, b) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        let s = |on: bool| if on { 1.0f32 } else { -1.0 };
        x.push(s(a) + rng.gen_range(-0.3f32..0.3));
        x.push(s(b) + rng.gen_range(-0.3f32..0.3));
        y.push((a ^ b) as u8);
    }
    EmbeddingTable::new(x, 2, y, vec![0]).unwrap()
}

#[test]
fn mlp_solves_xor_where_linear_cannot() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fit = xor_table(1_000, &mut rng);
    let test = xor_table(1_000, &mut rng);
    let cfg = ProbeConfig { probe_epochs: 60, probe_lr: 0.1, probe_batch_size: 32, mlp_hidden: 32, ..ProbeConfig::default() };
    let lin = linear_probe(&fit, &test, &cfg, 1).unwrap().accuracy;
    let mlp = mlp_probe(&fit, &test, &cfg, 1).unwrap().accuracy;
    assert!((35.0..=65.0).contains(&lin), "linear {lin}");
    assert!(mlp > 90.0, "mlp {mlp}");
}
