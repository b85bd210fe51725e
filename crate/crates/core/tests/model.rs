mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textid_core::model::{
    expected_embedding, load_checkpoint, save_checkpoint, AdamState, Graph, Mat, ModelParams, Tape,
};
use textid_core::tokenizer::{EOS, NUM_SPECIALS, UNK};
use textid_core::Error;

use common::{random_tokens, tiny_config, tiny_model};

fn random_target(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(0..max_len);
    let mut t = random_tokens(rng, vocab, len);
    t.push(EOS);
    t
}

fn zero_model(vocab: usize, max_tgt_len: usize) -> ModelParams {
    let mut config = tiny_config(vocab, 0);
    config.max_tgt_len = max_tgt_len;
    let shapes = ModelParams::init(&config).unwrap();
    let zeros = shapes.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
    ModelParams::from_tensors(config, zeros).unwrap()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn tape_and_inference_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = tiny_model(20, 4);
    for _ in 0..10 {
        let len = rng.gen_range(1..12);
        let src = random_tokens(&mut rng, 20, len);
        let target = random_target(&mut rng, 20, 6);
        let enc = model.encode(&src).unwrap();
        let fast = model.sequence_nll(&enc, &target).unwrap();
        let mut g = Graph::new();
        let tape = Tape::bind(&mut g, &model);
        let emb = tape.embed_tokens(&mut g, &src).unwrap();
        let mem = tape.encode(&mut g, emb).unwrap();
        let loss = tape.sequence_nll(&mut g, mem, &target).unwrap();
        let slow = g.value(loss).data[0];
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn encode_is_deterministic_and_position_sensitive() {
    let model = tiny_model(12, 2);
    let a = model.encode(&[4, 7]).unwrap();
    let again = model.encode(&[4, 7]).unwrap();
    let swapped = model.encode(&[7, 4]).unwrap();
    assert_eq!(a.context, again.context);
    assert_ne!(a.context, swapped.context);
    let empty = model.encode(&[]).unwrap();
    assert!(empty.is_empty());
    let too_long = vec![4; 65];
    assert!(matches!(model.encode(&too_long), Err(Error::SequenceTooLong { .. })));
    assert!(matches!(model.encode(&[12]), Err(Error::InvalidTokenId { .. })));
}

#[test]
fn gathered_rows_match_token_encoding() {
    let model = tiny_model(15, 6);
    let src = [3u32, 9, 14, 5];
    let rows = Mat::from_rows(&src.iter().map(|&t| model.embedding().row(t as usize).to_vec()).collect::<Vec<_>>());
    let by_rows = model.encode_embeddings(&rows).unwrap();
    let by_ids = model.encode(&src).unwrap();
    assert_eq!(by_rows.context, by_ids.context);

    let mut mixed = rows.clone();
    let logits: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
    mixed.row_mut(1).copy_from_slice(&expected_embedding(&logits, model.embedding()));
    let x = model.encode_embeddings(&mixed).unwrap();
    let y = model.encode_embeddings(&mixed).unwrap();
    assert_eq!(x.context, y.context);
    assert!(model.encode_embeddings(&Mat::zeros(2, 5)).is_err());
}

#[test]
fn input_row_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = tiny_model(10, 8);
    let rows = Mat::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let target = [5u32, 6, EOS];
    let mut g = Graph::new();
    let tape = Tape::bind_frozen(&mut g, &model);
    let x = g.leaf(rows.clone());
    let mem = tape.encode(&mut g, x).unwrap();
    let loss = tape.sequence_nll(&mut g, mem, &target).unwrap();
    let adj = g.backward(loss);
    let grad = adj.get(x).unwrap();
    let f = |m: &Mat| {
        let enc = model.encode_embeddings(m).unwrap();
        model.sequence_nll(&enc, &target).unwrap()
    };
    let h = 1e-5;
    for k in 0..rows.data.len() {
        let mut plus = rows.clone();
        plus.data[k] += h;
        let mut minus = rows.clone();
        minus.data[k] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = grad.data[k];
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        assert!(err < 1e-4, "coord {k}: fd {fd} analytic {an}");
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = tiny_model(12, 13);
    let src = [4u32, 8, 11, 3];
    let target = [7u32, 9, EOS];
    let mut g = Graph::new();
    let tape = Tape::bind(&mut g, &model);
    let emb = tape.embed_tokens(&mut g, &src).unwrap();
    let mem = tape.encode(&mut g, emb).unwrap();
    let loss = tape.sequence_nll(&mut g, mem, &target).unwrap();
    let grads = tape.vars.gradients(&g.backward(loss), &model);
    let f = |m: &ModelParams| {
        let enc = m.encode(&src).unwrap();
        m.sequence_nll(&enc, &target).unwrap()
    };
    let h = 1e-5;
    let mut checked = 0;
    while checked < 25 {
        let t = rng.gen_range(0..model.tensors.len());
        let k = rng.gen_range(0..model.tensors[t].data.len());
        let an = grads.tensors[t].data[k];
        let mut plus = model.clone();
        plus.tensors[t].data[k] += h;
        let mut minus = model.clone();
        minus.tensors[t].data[k] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        if fd.abs().max(an.abs()) < 1e-7 {
            assert!(an.abs() < 1e-7, "tensor {t} coord {k}: analytic {an} where fd {fd}");
            continue;
        }
        let err = (fd - an).abs() / fd.abs().max(an.abs());
        assert!(err < 1e-4, "tensor {t} coord {k}: fd {fd} analytic {an}");
        checked += 1;
    }
}

#[test]
fn logits_are_finite_and_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = tiny_model(17, 3);
    let enc = model.encode(&random_tokens(&mut rng, 17, 5)).unwrap();
    let empty = model.decoder_logits(&enc, &[]).unwrap();
    assert_eq!(empty.len(), 17);
    assert!(empty.iter().all(|v| v.is_finite()));
    assert!((softmax(&empty).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let extended = model.decoder_logits(&enc, &[9]).unwrap();
    assert_ne!(empty, extended);
    assert!(model.decoder_logits(&enc, &[4; 5]).is_ok());
    assert!(model.decoder_logits(&enc, &[4; 6]).is_err());
}

#[test]
fn uniform_model_costs_ln_vocab_per_token() {
    let model = zero_model(3, 6);
    let enc = model.encode(&[UNK, UNK]).unwrap();
    let nll = model.sequence_nll(&enc, &[UNK, EOS]).unwrap();
    assert!((nll - 2.0 * 3f64.ln()).abs() < 1e-12, "{nll}");
}

#[test]
fn nll_is_sum_of_step_log_probs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = tiny_model(14, 1);
    let enc = model.encode(&random_tokens(&mut rng, 14, 6)).unwrap();
    let target = [5u32, 12, 8, EOS];
    let mut product = 1.0;
    for i in 0..target.len() {
        let p = softmax(&model.decoder_logits(&enc, &target[..i]).unwrap());
        product *= p[target[i] as usize];
    }
    let nll = model.sequence_nll(&enc, &target).unwrap();
    assert!(((-nll).exp() - product).abs() < 1e-12);
}

/// Every EOS-terminated sequence the decoder can emit, up to `max_len`
/// output positions (the last of which is forced to EOS).
fn all_targets(vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![EOS]];
    let mut open: Vec<Vec<u32>> = vec![vec![]];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &open {
            for t in (0..vocab).filter(|&t| t != EOS) {
                let mut q = p.clone();
                q.push(t);
                let mut done = q.clone();
                done.push(EOS);
                out.push(done);
                next.push(q);
            }
        }
        open = next;
    }
    out
}

#[test]
fn probability_mass_over_all_targets_is_one() {
    for (vocab, max_len, seed) in [(3usize, 3usize, 1u64), (5, 4, 2)] {
        let mut config = tiny_config(vocab, seed);
        config.max_tgt_len = max_len;
        let model = ModelParams::init(&config).unwrap();
        let enc = model.encode(&[UNK, EOS, UNK]).unwrap();
        let targets = all_targets(vocab as u32, max_len);
        let mass: f64 = targets
            .iter()
            .map(|t| (-model.sequence_nll(&enc, t).unwrap()).exp())
            .sum();
        assert!((mass - 1.0).abs() < 1e-9, "vocab {vocab}: {mass}");
    }
}

#[test]
fn expected_embedding_matches_dense_math() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let table = Mat::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let p = softmax(&logits);
    let got = expected_embedding(&logits, &table);
    for (c, g) in got.iter().enumerate() {
        let want: f64 = (0..5).map(|r| p[r] * table.get(r, c)).sum();
        assert!((g - want).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_and_vocab_guard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = tiny_model(NUM_SPECIALS + 9, 3);
    let opt = AdamState::new(&model);
    save_checkpoint(&path, &model, Some(&opt), "abc").unwrap();
    let (back, state) = load_checkpoint(&path, "abc").unwrap();
    assert_eq!(back, model);
    assert_eq!(back.hash(), model.hash());
    assert!(state.is_some());
    assert!(matches!(load_checkpoint(&path, "xyz"), Err(Error::VocabularyMismatch { .. })));
    std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
    assert!(matches!(load_checkpoint(&path, "abc"), Err(Error::Checkpoint(_))));
}
