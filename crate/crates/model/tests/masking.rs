//! Blocking and MLM corruption statistics.

use behavior_lm_core::vocab::{MASK, NUM_SPECIALS, SEP};
use behavior_lm_model::masking::{mask_batch, window_sequences, Batch};
use behavior_lm_model::ModelError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 200;

fn big_batch(rows: usize, len: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<Vec<u32>> = (0..rows)
        .map(|_| (0..len).map(|_| rng.random_range(NUM_SPECIALS as u32..V as u32)).collect())
        .collect();
    Batch::pad(&seqs).unwrap()
}

#[test]
fn block_arithmetic() {
    let ids: Vec<u32> = (0..10).collect();
    assert_eq!(window_sequences(&ids, 16), std::slice::from_ref(&ids));
    let long: Vec<u32> = (0..5000).collect();
    let blocks = window_sequences(&long, 4096);
    assert_eq!(blocks.iter().map(Vec::len).collect::<Vec<_>>(), [4096, 904]);
}

#[test]
fn selection_rate_over_a_million_positions() {
    let batch = big_batch(1000, 1000, 1);
    let mb = mask_batch(&batch, V, 0.15, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let n = mb.masked_positions();
    let frac = n as f64 / 1e6;
    assert!((frac - 0.15).abs() <= 0.002, "selected fraction {frac}");

    // Corruption split among selected positions.
    let (mut masked, mut kept, mut replaced) = (0usize, 0usize, 0usize);
    for (i, l) in mb.labels.iter().enumerate() {
        let Some(orig) = *l else {
            assert_eq!(mb.batch.ids[i], batch.ids[i]);
            continue;
        };
        let now = mb.batch.ids[i];
        if now == MASK {
            masked += 1;
        } else {
            assert!((NUM_SPECIALS as u32..V as u32).contains(&now));
            if now == orig {
                kept += 1;
            } else {
                replaced += 1;
            }
        }
    }
    // A random replacement equals the original with probability 1/(V-4).
    let n = n as f64;
    let p_keep = 0.1 + 0.1 / (V - NUM_SPECIALS) as f64;
    let sd = |p: f64| (p * (1.0 - p) / n).sqrt();
    assert!((masked as f64 / n - 0.8).abs() < 5.0 * sd(0.8));
    assert!((kept as f64 / n - p_keep).abs() < 5.0 * sd(p_keep));
    assert!((replaced as f64 / n - (0.2 - p_keep)).abs() < 5.0 * sd(0.1));
}

#[test]
fn specials_and_padding_are_never_selected() {
    let seqs = vec![vec![SEP, 5, 6, SEP, 7], vec![8, SEP]];
    let batch = Batch::pad(&seqs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let mb = mask_batch(&batch, 20, 0.5, &mut rng).unwrap();
        for (i, l) in mb.labels.iter().enumerate() {
            if l.is_some() {
                assert!(batch.valid[i] && batch.ids[i] != SEP);
            }
        }
    }
}

#[test]
fn degenerate_inputs() {
    let batch = Batch::pad(&[vec![5u32, 6]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for rate in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(matches!(mask_batch(&batch, 10, rate, &mut rng), Err(ModelError::MaskRate(_))));
    }
    let only_sep = Batch::pad(&[vec![SEP, SEP]]).unwrap();
    assert!(matches!(mask_batch(&only_sep, 10, 0.15, &mut rng), Err(ModelError::NothingToMask)));
    // A tiny rate almost never selects in 64 draws of two positions.
    assert!(matches!(mask_batch(&batch, 10, 1e-9, &mut rng), Err(ModelError::EmptyMask(64))));
    assert!(Batch::pad(&[vec![5u32, 0, 6]]).is_err());
}

#[test]
fn same_seed_same_mask() {
    let batch = big_batch(4, 50, 5);
    let a = mask_batch(&batch, V, 0.15, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let b = mask_batch(&batch, V, 0.15, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn blocks_concatenate_to_the_original(ids in proptest::collection::vec(4u32..100, 0..300), block in 1usize..70) {
        let blocks = window_sequences(&ids, block);
        prop_assert!(blocks.iter().all(|b| !b.is_empty() && b.len() <= block));
        prop_assert_eq!(blocks.concat(), ids);
    }

    #[test]
    fn labels_mark_exactly_the_selected_positions(seed in any::<u64>(), rows in 1usize..4, len in 1usize..40) {
        let batch = big_batch(rows, len, seed);
        let mb = mask_batch(&batch, V, 0.3, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        prop_assert!(mb.masked_positions() >= 1);
        for i in 0..batch.ids.len() {
            match mb.labels[i] {
                Some(l) => prop_assert_eq!(l, batch.ids[i]),
                None => prop_assert_eq!(mb.batch.ids[i], batch.ids[i]),
            }
        }
        prop_assert_eq!(&mb.batch.valid, &batch.valid);
    }
}
