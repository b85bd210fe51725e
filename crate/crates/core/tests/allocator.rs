use std::collections::HashSet;

use textid_core::allocator::{
    allocate_all, beam_search, generate_candidates, generate_user_id, AllocatorConfig, Seq2Seq, TextualId,
};
use textid_core::corpus::FlattenedText;
use textid_core::model::{ModelConfig, ModelParams};
use textid_core::tokenizer::{Vocabulary, EOS, PAD, UNK};

fn vocab() -> Vocabulary {
    let words = "red blue green hat shoe lamp wool steel title category home office";
    Vocabulary::build(&[words], 1, usize::MAX)
}

fn model(vocab: &Vocabulary, seed: u64) -> ModelParams {
    ModelParams::init(&ModelConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_src_len: 24,
        max_tgt_len: 6,
        vocab_size: vocab.size(),
        seed,
    })
    .unwrap()
}

fn config() -> AllocatorConfig {
    AllocatorConfig {
        groups: 2,
        beams_per_group: 2,
        lambda_init: 0.0,
        lambda_step: 1.0,
        lambda_max: 3.0,
        length_ranges: vec![(1, 3), (3, 6)],
        allow_fallback: false,
    }
}

/// Straight-line restatement of the allocation procedure: take the first
/// unused candidate, otherwise raise the penalty, then move to the next
/// length range.
fn reference(
    model: &ModelParams,
    vocab: &Vocabulary,
    items: &[(String, FlattenedText)],
    c: &AllocatorConfig,
) -> Vec<(String, String, f64, usize)> {
    let mut used: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for (key, text) in items {
        let src = vocab.encode(text.as_str(), model.config.max_src_len);
        let mut found = None;
        'ranges: for range in 0..c.length_ranges.len() {
            let mut lambda = c.lambda_init;
            while lambda <= c.lambda_max {
                let cands = generate_candidates(model, vocab, &src, c, lambda, range).unwrap();
                if let Some(id) = cands.iter().find(|id| !used.contains(&id.text)) {
                    found = Some((id.text.clone(), lambda, range));
                    break 'ranges;
                }
                lambda += c.lambda_step;
            }
        }
        let (text, lambda, range) = found.expect("reference allocation ran out of candidates");
        used.insert(text.clone());
        out.push((key.clone(), text, lambda, range));
    }
    out
}

fn items(texts: &[&str]) -> Vec<(String, FlattenedText)> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("item{i}"), FlattenedText(t.to_string())))
        .collect()
}

#[test]
fn identical_texts_escalate_like_the_reference() {
    let v = vocab();
    let c = config();
    let list = items(&["title: red wool hat"; 4]);
    for seed in 0..5 {
        let m = model(&v, seed);
        let reg = allocate_all(&m, &v, &list, &c).unwrap();
        let got: Vec<(String, String, f64, usize)> = reg
            .entries()
            .iter()
            .map(|e| (e.item_key.clone(), e.id.text.clone(), e.lambda, e.range_idx))
            .collect();
        assert_eq!(got, reference(&m, &v, &list, &c), "seed {seed}");

        let src = v.encode(list[0].1.as_str(), 24);
        let top = &generate_candidates(&m, &v, &src, &c, c.lambda_init, 0).unwrap()[0];
        assert_eq!(reg.entries()[0].id.text, top.text);
        let stats = reg.stats();
        assert!(stats.lambda_escalated + stats.length_extended > 0, "seed {seed}: {stats:?}");
    }
}

#[test]
fn registry_ids_are_distinct_and_clean() {
    let v = vocab();
    let c = AllocatorConfig {
        allow_fallback: true,
        ..config()
    };
    let list = items(&[
        "title: red hat",
        "title: blue hat",
        "title: red hat",
        "category: home",
        "title: green shoe; category: office",
        "title: steel lamp",
        "title: red hat",
        "title: wool",
    ]);
    let m = model(&v, 3);
    let reg = allocate_all(&m, &v, &list, &c).unwrap();
    assert_eq!(reg.len(), list.len());
    let texts: HashSet<&str> = reg.entries().iter().map(|e| e.id.text.as_str()).collect();
    assert_eq!(texts.len(), list.len());
    for e in reg.entries() {
        assert!((1..=5).contains(&e.id.len()));
        assert!(e.id.tokens.iter().all(|&t| t != PAD && t != EOS && t != UNK));
    }
    assert_eq!(allocate_all(&m, &v, &list, &c).unwrap().content_hash(), reg.content_hash());
}

#[test]
fn user_ids_are_deterministic_and_use_the_truncated_history() {
    let v = vocab();
    let m = model(&v, 8);
    let c = config();
    let hat = FlattenedText("title: red wool hat".into());
    let shoe = FlattenedText("title: blue shoe; category: office".into());
    let one = generate_user_id(&m, &v, &[&hat], &c).unwrap();
    assert_eq!(one, generate_user_id(&m, &v, &[&hat], &c).unwrap());

    let direct = |src: &[u32]| -> TextualId {
        let enc = m.encode(src).unwrap();
        let (lo, hi) = c.length_bounds(0);
        let tokens = beam_search(&Seq2Seq { model: &m, enc: &enc }, c.beams_per_group, lo, hi).unwrap();
        TextualId::from_tokens(&v, tokens).unwrap()
    };
    assert_eq!(one, direct(&v.encode(hat.as_str(), usize::MAX)));

    let long: Vec<&FlattenedText> = [&hat, &shoe].into_iter().cycle().take(12).collect();
    let joined = long.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("; ");
    let full = v.encode(&joined, usize::MAX);
    assert!(full.len() > 24);
    let got = generate_user_id(&m, &v, &long, &c).unwrap();
    assert_eq!(got, direct(&full[..24]));
    assert!(generate_user_id(&m, &v, &[], &c).is_err());
}

#[test]
fn allocation_rejects_ids_longer_than_the_decoder() {
    let v = vocab();
    let m = model(&v, 1);
    let c = AllocatorConfig {
        length_ranges: vec![(1, 10)],
        ..config()
    };
    assert!(allocate_all(&m, &v, &items(&["title: red hat"]), &c).is_err());
}
