use behavior_lm_core::session::by_player;
use behavior_lm_core::synth::{sample_corpus, GenConfig};
use behavior_lm_core::vocab::{detokenize, read_token_file, tokenize, write_token_file, TokenSequence, UNK};
use behavior_lm_core::{assemble_document, build_vocab, segment, EventSchema, PreprocessConfig, Vocabulary, DEFAULT_GAP_MS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn synthetic_docs(seed: u64) -> Vec<String> {
    let cfg = GenConfig {
        players: 30,
        days: 2,
        seed,
        ..GenConfig::default()
    };
    let c = sample_corpus(&cfg, &EventSchema::default_schema()).unwrap();
    let prep = PreprocessConfig::default_config();
    let sessions = segment(&c.log, DEFAULT_GAP_MS).unwrap();
    by_player(&sessions)
        .iter()
        .map(|s| assemble_document(s, &prep).unwrap().words.join(" "))
        .collect()
}

#[test]
fn size_is_distinct_words_plus_specials() {
    // A Zipf-ish corpus over ~13,500 distinct words.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let docs: Vec<String> = (0..400)
        .map(|_| {
            (0..200)
                .map(|_| {
                    let r: f64 = rng.random();
                    format!("w{}", (13_500.0 * r * r) as usize)
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let distinct: HashSet<&str> = docs.iter().flat_map(|d| d.split_whitespace()).collect();
    let v = build_vocab(&docs, 1).unwrap();
    assert_eq!(v.len(), distinct.len() + 4);
    assert!(distinct.len() > 10_000);
}

#[test]
fn synthetic_corpus_roundtrips() {
    let docs = synthetic_docs(2);
    let v = build_vocab(&docs, 1).unwrap();
    for d in &docs {
        let t = tokenize(d, &v);
        assert!(t.ids.iter().all(|&id| id != UNK && (id as usize) < v.len()));
        let normalized = d.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(detokenize(&t, &v).unwrap(), normalized);
    }
}

#[test]
fn save_load_is_bit_identical() {
    let v = build_vocab(&synthetic_docs(3), 1).unwrap();
    let tsv = v.to_tsv();
    let back = Vocabulary::from_tsv(&tsv).unwrap();
    assert_eq!(back.to_tsv(), tsv);
    assert_eq!(back, v);
}

#[test]
fn ids_do_not_depend_on_document_order() {
    let mut docs = synthetic_docs(4);
    let a = build_vocab(&docs, 1).unwrap();
    docs.reverse();
    assert_eq!(build_vocab(&docs, 1).unwrap().to_tsv(), a.to_tsv());
}

proptest! {
    #[test]
    fn tokenize_after_detokenize_is_identity(ids in prop::collection::vec(0u32..40, 0..64)) {
        let docs: Vec<String> = (0..36).map(|i| format!("w{i}")).collect();
        let v = build_vocab(&docs, 1).unwrap();
        prop_assume!(ids.iter().all(|&i| (i as usize) < v.len() && i != UNK));
        let t = TokenSequence::new("p", ids);
        let text = detokenize(&t, &v).unwrap();
        prop_assert_eq!(tokenize(&text, &v).ids, t.ids.clone());
        let file = write_token_file(std::slice::from_ref(&t));
        prop_assert_eq!(read_token_file(&file).unwrap(), vec![t]);
    }
}
