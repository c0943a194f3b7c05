//! Structural and loss properties of the encoder.

use std::time::Instant;

use behavior_lm_core::vocab::SEP;
use behavior_lm_model::config::REFERENCE_VOCAB;
use behavior_lm_model::masking::{mask_batch, Batch, MaskedBatch};
use behavior_lm_model::scalar::{gemm, Layout};
use behavior_lm_model::{Model, ModelConfig, ModelError, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(4..vocab)).collect()
}

fn tiny(vocab: usize, seed: u64) -> Model<f32> {
    let mut cfg = ModelConfig::custom(2, 2, 16, 64, 4, vocab);
    cfg.seed = seed;
    Model::init(cfg).unwrap()
}

#[test]
fn gemm_matches_naive_product() {
    let a: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 2.0).collect();
    let b: Vec<f32> = (0..8).map(|i| (i as f32).sin()).collect();
    let mut c = vec![0.0f32; 6];
    gemm(3, 4, 2, 1.0, &a, Layout::Normal, &b, Layout::Normal, 0.0, &mut c);
    for i in 0..3 {
        for j in 0..2 {
            let want: f64 = (0..4).map(|k| a[i * 4 + k] as f64 * b[k * 2 + j] as f64).sum();
            assert!((c[i * 2 + j] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_token_embeddings_leave_only_positional_variation() {
    let mut m = tiny(40, 1);
    let idx = m.params.index_of("tok_emb").unwrap();
    m.params.tensors[idx].data.iter_mut().for_each(|x| *x = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_seq(&mut rng, 20, 40);
    let b = random_seq(&mut rng, 20, 40);
    let ha = m.encode(&Batch::pad(&[a]).unwrap()).unwrap();
    let hb = m.encode(&Batch::pad(&[b]).unwrap()).unwrap();
    for (x, y) in ha.iter().zip(&hb) {
        assert!((x - y).abs() < 1e-5);
    }

    // With positions zeroed too, every row is the same.
    let pidx = m.params.index_of("pos_emb").unwrap();
    m.params.tensors[pidx].data.iter_mut().for_each(|x| *x = 0.0);
    let h = m.encode(&Batch::pad(&[random_seq(&mut rng, 20, 40)]).unwrap()).unwrap();
    let d = m.config.dims;
    for row in h.chunks(d).skip(1) {
        for (x, y) in row.iter().zip(&h[..d]) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn batch_order_does_not_matter() {
    let m = tiny(50, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seqs: Vec<Vec<u32>> = (0..4).map(|i| random_seq(&mut rng, 20 + 3 * i, 50)).collect();
    seqs[1][5] = SEP;
    let batch = Batch::pad(&seqs).unwrap();
    let h = m.encode(&batch).unwrap();
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<Vec<u32>> = perm.iter().map(|&i| seqs[i].clone()).collect();
    let hp = m.encode(&Batch::pad(&permuted).unwrap()).unwrap();
    let row = batch.len * m.config.dims;
    for (slot, &src) in perm.iter().enumerate() {
        for (x, y) in hp[slot * row..(slot + 1) * row].iter().zip(&h[src * row..(src + 1) * row]) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn padding_does_not_change_real_positions() {
    let m = tiny(50, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let short = random_seq(&mut rng, 10, 50);
    let long = random_seq(&mut rng, 30, 50);
    let alone = m.encode(&Batch::pad(std::slice::from_ref(&short)).unwrap()).unwrap();
    let padded = m.encode(&Batch::pad(&[short, long]).unwrap()).unwrap();
    for (x, y) in alone.iter().zip(&padded[..alone.len()]) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let v = 500;
    let m = tiny(v, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seqs: Vec<Vec<u32>> = (0..4).map(|_| random_seq(&mut rng, 64, v as u32)).collect();
    let mb = mask_batch(&Batch::pad(&seqs).unwrap(), v, 0.15, &mut rng).unwrap();
    let ce = m.mlm(&mb).unwrap().loss as f64;
    let ln_v = (v as f64).ln();
    assert!((ce - ln_v).abs() / ln_v < 0.1, "ce {ce} vs ln V {ln_v}");
}

#[test]
fn loss_equals_log_softmax_oracle() {
    let v = 60;
    let m = tiny(v, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let seqs: Vec<Vec<u32>> = (0..3).map(|_| random_seq(&mut rng, 40, v as u32)).collect();
    let mb = mask_batch(&Batch::pad(&seqs).unwrap(), v, 0.2, &mut rng).unwrap();
    let out = m.mlm(&mb).unwrap();
    let want_labels: Vec<u32> = mb.labels.iter().flatten().copied().collect();
    assert_eq!(out.labels, want_labels);
    let mut total = 0.0f64;
    for (row, &label) in out.logits.chunks(v).zip(&out.labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x as f64));
        let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[label as usize] as f64;
    }
    let want = total / out.labels.len() as f64;
    assert!((out.loss as f64 - want).abs() < 1e-5, "{} vs {want}", out.loss);
}

#[test]
fn confident_correct_logits_drive_loss_to_zero() {
    let v = 30;
    let mut m = tiny(v, 11);
    let seq = vec![9u32; 20];
    let batch = Batch::pad(&[seq]).unwrap();
    let mut labels = vec![None; 20];
    labels[4] = Some(9);
    labels[12] = Some(9);
    let mb = MaskedBatch { batch, labels };
    let b = m.params.index_of("head.bias").unwrap();
    m.params.tensors[b].data[9] = 60.0;
    assert!(m.mlm(&mb).unwrap().loss < 1e-6);
}

#[test]
fn empty_mask_and_overlong_inputs_are_errors() {
    let m = tiny(30, 12);
    let batch = Batch::pad(&[vec![5u32; 8]]).unwrap();
    let mb = MaskedBatch {
        labels: vec![None; 8],
        batch,
    };
    assert!(matches!(m.mlm(&mb), Err(ModelError::AllIgnored)));
    let long = Batch::pad(&[vec![5u32; 65]]).unwrap();
    assert!(matches!(m.encode(&long), Err(ModelError::TooLong { len: 65, block: 64 })));
}

#[test]
fn runtime_grows_linearly_with_length() {
    let mut cfg = ModelConfig::custom(1, 2, 32, 8192, 8, 100);
    cfg.seed = 1;
    let m = Model::<f32>::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut time = |len: usize| {
        let batch = Batch::pad(&[random_seq(&mut rng, len, 100)]).unwrap();
        (0..7)
            .map(|_| {
                let t = Instant::now();
                m.encode(&batch).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    time(256);
    let (t1, t2) = (time(2048), time(4096));
    let ratio = t2 / (2.0 * t1);
    println!("t(2048) {t1:.4}s, t(4096) {t2:.4}s, ratio {ratio:.3}");
    assert!(ratio <= 1.3, "doubling the length scaled time by {:.3}", t2 / t1);
}

#[test]
fn large_preset_runs_a_short_forward_pass() {
    let cfg = ModelConfig::preset(Preset::Large, REFERENCE_VOCAB);
    let m = Model::<f32>::init(cfg.clone()).unwrap();
    assert_eq!(m.param_count(), cfg.param_count());
    let h = m.encode(&Batch::pad(&[vec![4u32, 100, 3, 7, 9]]).unwrap()).unwrap();
    assert_eq!(h.len(), 5 * 768);
    assert!(h.iter().all(|x| x.is_finite()));
}
