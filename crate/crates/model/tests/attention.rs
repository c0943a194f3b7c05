//! Sparse attention against a dense masked-softmax reference.

use behavior_lm_model::attention::{sparse_attention, AttnPattern, Qkv};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense reference: full score matrix, masked entries set to -inf, row
/// softmax, weighted sum of values. Returns (context, weights[h][b][i][j]).
#[allow(clippy::too_many_arguments)]
fn dense_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    gq: Option<(&[f64], &[f64], &[f64])>,
    batch: usize,
    len: usize,
    heads: usize,
    dims: usize,
    window: usize,
    dilation: usize,
    global: &[bool],
    valid: &[bool],
) -> (Vec<f64>, Vec<f64>) {
    let dh = dims / heads;
    let mut out = vec![0.0; batch * len * dims];
    let mut weights = vec![0.0; heads * batch * len * len];
    for b in 0..batch {
        for i in 0..len {
            let qi_row = b * len + i;
            if !valid[qi_row] {
                continue;
            }
            let (q, k, v) = match gq {
                Some(g) if global[qi_row] => g,
                _ => (q, k, v),
            };
            for h in 0..heads {
                let mut scores = vec![f64::NEG_INFINITY; len];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj_row = b * len + j;
                    let dist = (i as i64 - j as i64).unsigned_abs() as usize;
                    let local = dist <= window * dilation && dist.is_multiple_of(dilation);
                    let visible = valid[kj_row] && (local || global[qi_row] || global[kj_row]);
                    if visible {
                        let mut d = 0.0;
                        for c in h * dh..(h + 1) * dh {
                            d += q[qi_row * dims + c] * k[kj_row * dims + c];
                        }
                        *s = d / (dh as f64).sqrt();
                    }
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..len {
                    let w = exps[j] / z;
                    weights[((h * batch + b) * len + i) * len + j] = w;
                    for c in h * dh..(h + 1) * dh {
                        out[qi_row * dims + c] += w * v[(b * len + j) * dims + c];
                    }
                }
            }
        }
    }
    (out, weights)
}

struct Case {
    batch: usize,
    len: usize,
    heads: usize,
    dims: usize,
    window: usize,
    dilation: usize,
    global: Vec<bool>,
    valid: Vec<bool>,
    qkv: [Vec<f64>; 3],
    gqkv: Option<[Vec<f64>; 3]>,
}

fn random_case(rng: &mut ChaCha8Rng, with_global_proj: bool) -> Case {
    let batch = rng.random_range(1..=3);
    let len = rng.random_range(1..=64);
    let heads = rng.random_range(1..=3);
    let dims = heads * rng.random_range(1..=6);
    let window = rng.random_range(1..=8);
    let dilation = rng.random_range(1..=2);
    let mut global = vec![false; batch * len];
    let mut valid = vec![false; batch * len];
    for b in 0..batch {
        let n = rng.random_range(1..=len);
        for i in 0..n {
            valid[b * len + i] = true;
            global[b * len + i] = i == 0 || rng.random_bool(0.08);
        }
    }
    let mut mat = || -> Vec<f64> { (0..batch * len * dims).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let qkv = [mat(), mat(), mat()];
    let gqkv = with_global_proj.then(|| [mat(), mat(), mat()]);
    Case {
        batch,
        len,
        heads,
        dims,
        window,
        dilation,
        global,
        valid,
        qkv,
        gqkv,
    }
}

fn run_case(c: &Case) -> f64 {
    let p = AttnPattern::new(c.batch, c.len, c.heads, c.window, c.dilation, c.global.clone(), c.valid.clone()).unwrap();
    let local = Qkv {
        q: &c.qkv[0],
        k: &c.qkv[1],
        v: &c.qkv[2],
    };
    let global = c.gqkv.as_ref().map(|g| Qkv {
        q: &g[0],
        k: &g[1],
        v: &g[2],
    });
    let (out, cache) = sparse_attention(local, global, c.dims, &p).unwrap();
    let (want, dense_w) = dense_attention(
        &c.qkv[0],
        &c.qkv[1],
        &c.qkv[2],
        c.gqkv.as_ref().map(|g| (g[0].as_slice(), g[1].as_slice(), g[2].as_slice())),
        c.batch,
        c.len,
        c.heads,
        c.dims,
        c.window,
        c.dilation,
        &c.global,
        &c.valid,
    );
    let mut worst = out.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // Sparse weights scattered back to dense must match as well, with zero
    // outside the stored keys.
    for (b, seq) in cache.iter().enumerate() {
        for h in 0..c.heads {
            for i in 0..c.len {
                let mut row = vec![0.0; c.len];
                let (keys, w) = seq.row(h, i);
                for (&j, &x) in keys.iter().zip(w) {
                    row[j as usize] = x;
                }
                for (j, x) in row.iter().enumerate() {
                    let d = dense_w[((h * c.batch + b) * c.len + i) * c.len + j];
                    worst = worst.max((x - d).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn sparse_matches_dense_on_random_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for n in 0..200 {
        let case = random_case(&mut rng, n % 2 == 1);
        worst = worst.max(run_case(&case));
    }
    println!("max abs difference over 200 cases: {worst:.3e}");
    assert!(worst <= 1e-6, "max abs difference {worst}");
}

#[test]
fn single_precision_tracks_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let case = random_case(&mut rng, true);
    let p = AttnPattern::new(case.batch, case.len, case.heads, case.window, case.dilation, case.global.clone(), case.valid.clone())
        .unwrap();
    let f = |m: &Vec<f64>| m.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let (l, g) = (case.qkv.each_ref().map(f), case.gqkv.as_ref().unwrap().each_ref().map(f));
    let (out32, _) = sparse_attention(
        Qkv { q: &l[0], k: &l[1], v: &l[2] },
        Some(Qkv { q: &g[0], k: &g[1], v: &g[2] }),
        case.dims,
        &p,
    )
    .unwrap();
    let (out64, _) = sparse_attention(
        Qkv { q: &case.qkv[0], k: &case.qkv[1], v: &case.qkv[2] },
        case.gqkv.as_ref().map(|g| Qkv { q: &g[0], k: &g[1], v: &g[2] }),
        case.dims,
        &p,
    )
    .unwrap();
    for (a, b) in out32.iter().zip(&out64) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}

#[test]
fn window_covering_the_sequence_is_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut case = random_case(&mut rng, false);
    case.window = case.len;
    case.dilation = 1;
    case.global.iter_mut().for_each(|g| *g = false);
    let p = AttnPattern::new(case.batch, case.len, case.heads, case.window, 1, case.global.clone(), case.valid.clone()).unwrap();
    let (_, cache) = sparse_attention(
        Qkv { q: &case.qkv[0], k: &case.qkv[1], v: &case.qkv[2] },
        None,
        case.dims,
        &p,
    )
    .unwrap();
    for (b, seq) in cache.iter().enumerate() {
        let n = case.valid[b * case.len..(b + 1) * case.len].iter().filter(|&&v| v).count();
        for i in 0..n {
            assert_eq!(seq.row(0, i).0.len(), n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_are_distributions_and_padding_is_silent(seed in any::<u64>(), proj in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng, proj);
        let p = AttnPattern::new(c.batch, c.len, c.heads, c.window, c.dilation, c.global.clone(), c.valid.clone()).unwrap();
        let (out, cache) = sparse_attention(
            Qkv { q: &c.qkv[0], k: &c.qkv[1], v: &c.qkv[2] },
            c.gqkv.as_ref().map(|g| Qkv { q: &g[0], k: &g[1], v: &g[2] }),
            c.dims,
            &p,
        ).unwrap();
        for (b, seq) in cache.iter().enumerate() {
            for i in 0..c.len {
                let row_valid = c.valid[b * c.len + i];
                for h in 0..c.heads {
                    let (keys, w) = seq.row(h, i);
                    if !row_valid {
                        prop_assert!(keys.is_empty());
                        continue;
                    }
                    let s: f64 = w.iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-9);
                    prop_assert!(w.iter().all(|&x| x >= 0.0));
                    for &j in keys {
                        prop_assert!(c.valid[b * c.len + j as usize]);
                        prop_assert!(p.allowed(b, i, j as usize));
                    }
                }
                if !row_valid {
                    let r = (b * c.len + i) * c.dims;
                    prop_assert!(out[r..r + c.dims].iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}
