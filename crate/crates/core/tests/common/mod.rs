#![allow(dead_code)]

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use textid_core::allocator::{IdEntry, IdRegistry, TextualId};
use textid_core::model::{ModelConfig, ModelParams};
use textid_core::tokenizer::{Vocabulary, NUM_SPECIALS};

/// Writes one summary line to the real stderr, bypassing libtest capture.
pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion:>2} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// Vocabulary of `words` ordinary tokens `w00`, `w01`, ... plus the specials.
pub fn word_vocab(words: usize) -> Vocabulary {
    let text: Vec<String> = (0..words).map(|i| format!("w{i:02}")).collect();
    Vocabulary::build(&[text.join(" ")], 1, usize::MAX)
}

pub fn tiny_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_dim: 16,
        max_src_len: 64,
        max_tgt_len: 6,
        vocab_size,
        seed,
    }
}

pub fn tiny_model(vocab_size: usize, seed: u64) -> ModelParams {
    ModelParams::init(&tiny_config(vocab_size, seed)).unwrap()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab_size: usize, len: usize) -> Vec<u32> {
    (0..len)
        .map(|_| rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32))
        .collect()
}

/// `n` distinct random IDs of 1 to `max_len` ordinary tokens.
pub fn random_ids(rng: &mut ChaCha8Rng, vocab: &Vocabulary, n: usize, max_len: usize) -> Vec<TextualId> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(1..=max_len);
        let tokens = random_tokens(rng, vocab.size(), len);
        if seen.insert(tokens.clone()) {
            out.push(TextualId::from_tokens(vocab, tokens).unwrap());
        }
    }
    out.shuffle(rng);
    out
}

pub fn registry_of(ids: &[TextualId]) -> IdRegistry {
    let mut reg = IdRegistry::new(vec![(1, 10), (10, 20)], 1.0, "test".into());
    for (i, id) in ids.iter().enumerate() {
        reg.insert(IdEntry {
            item_key: format!("item{i:03}"),
            id: id.clone(),
            lambda: 1.0,
            range_idx: 0,
        })
        .unwrap();
    }
    reg
}
