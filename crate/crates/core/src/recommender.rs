//! Trie-constrained decoding and exact catalog ranking.

use std::collections::BTreeMap;

use rand::Rng;

use crate::allocator::{IdRegistry, TextualId};
use crate::error::{Error, Result};
use crate::model::{log_sum_exp, DecoderState, EncoderState, ModelParams};
use crate::tokenizer::EOS;

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    item: Option<String>,
}

/// Token trie over registered IDs, each stored as its tokens plus EOS.
#[derive(Clone, Debug)]
pub struct PrefixTrie {
    nodes: Vec<TrieNode>,
    terminals: usize,
}

impl Default for PrefixTrie {
    fn default() -> Self {
        PrefixTrie {
            nodes: vec![TrieNode::default()],
            terminals: 0,
        }
    }
}

impl PrefixTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_registry(registry: &IdRegistry) -> Result<Self> {
        let mut trie = PrefixTrie::new();
        for e in registry.entries() {
            trie.insert(&e.id, &e.item_key)?;
        }
        Ok(trie)
    }

    pub fn insert(&mut self, id: &TextualId, item_key: &str) -> Result<()> {
        let mut node = 0;
        for t in id.with_eos() {
            node = match self.nodes[node].children.get(&t) {
                Some(&n) => n,
                None => {
                    self.nodes.push(TrieNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(t, n);
                    n
                }
            };
        }
        if self.nodes[node].item.is_some() {
            return Err(Error::DuplicateId(id.text.clone()));
        }
        self.nodes[node].item = Some(item_key.to_string());
        self.terminals += 1;
        Ok(())
    }

    /// Number of registered IDs.
    pub fn len(&self) -> usize {
        self.terminals
    }

    pub fn is_empty(&self) -> bool {
        self.terminals == 0
    }

    fn walk(&self, prefix: &[u32]) -> Option<usize> {
        prefix
            .iter()
            .try_fold(0, |n, t| self.nodes[n].children.get(t).copied())
    }

    /// Sorted valid continuations of `prefix`; empty off the trie.
    pub fn valid_next(&self, prefix: &[u32]) -> Vec<u32> {
        self.walk(prefix)
            .map(|n| self.nodes[n].children.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Item reached by a full path (tokens followed by EOS).
    pub fn item_at(&self, path: &[u32]) -> Option<&str> {
        self.walk(path).and_then(|n| self.nodes[n].item.as_deref())
    }
}

/// How masked-out probability mass is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskMode {
    /// Softmax over the valid set only.
    #[default]
    Renormalized,
    /// Full-vocabulary probabilities with invalid tokens zeroed.
    Raw,
}

/// Log-probabilities of `valid` tokens under `logits` for the given mode.
pub fn masked_log_probs(logits: &[f64], valid: &[u32], mode: MaskMode) -> Result<Vec<f64>> {
    if valid.is_empty() {
        return Err(Error::DeadEnd);
    }
    let norm = match mode {
        MaskMode::Renormalized => {
            let sel: Vec<f64> = valid.iter().map(|&t| logits[t as usize]).collect();
            log_sum_exp(&sel)
        }
        MaskMode::Raw => log_sum_exp(logits),
    };
    Ok(valid.iter().map(|&t| logits[t as usize] - norm).collect())
}

/// Dense vocabulary-sized distribution, exactly zero outside `valid`.
pub fn constrained_distribution(logits: &[f64], valid: &[u32], mode: MaskMode) -> Result<Vec<f64>> {
    let lp = masked_log_probs(logits, valid, mode)?;
    let mut out = vec![0.0; logits.len()];
    for (&t, l) in valid.iter().zip(lp) {
        out[t as usize] = l.exp();
    }
    Ok(out)
}

/// `(item_key, log-score)` pairs, best first.
pub type RankedList = Vec<(String, f64)>;

fn sort_ranked(list: &mut RankedList) {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// A frozen recommender bound to a candidate trie.
pub struct Recommender<'a> {
    pub model: &'a ModelParams,
    pub trie: &'a PrefixTrie,
    pub mode: MaskMode,
}

impl<'a> Recommender<'a> {
    pub fn new(model: &'a ModelParams, trie: &'a PrefixTrie) -> Self {
        Recommender {
            model,
            trie,
            mode: MaskMode::Renormalized,
        }
    }

    pub fn with_mode(mut self, mode: MaskMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn encode(&self, prompt: &[u32]) -> Result<EncoderState> {
        self.model.encode(prompt)
    }

    /// Children of `node` with their constrained log-probabilities. The last
    /// output slot can only hold EOS.
    fn expand(&self, st: &DecoderState<'_>, node: usize) -> Result<Vec<(u32, usize, f64)>> {
        let children = &self.trie.nodes[node].children;
        if children.is_empty() {
            return Err(Error::DeadEnd);
        }
        if st.prefix_len() + 1 >= self.model.config.max_tgt_len {
            return match children.get(&EOS) {
                Some(&n) => Ok(vec![(EOS, n, 0.0)]),
                None => Err(Error::DeadEnd),
            };
        }
        let valid: Vec<u32> = children.keys().copied().collect();
        let lp = masked_log_probs(st.logits(), &valid, self.mode)?;
        Ok(children.iter().zip(lp).map(|((&t, &n), l)| (t, n, l)).collect())
    }

    /// Dense constrained next-token distribution after `prefix`.
    pub fn constrained_distribution(&self, enc: &EncoderState, prefix: &[u32]) -> Result<Vec<f64>> {
        let node = self.trie.walk(prefix).ok_or(Error::DeadEnd)?;
        let mut st = self.model.start_decoder(enc);
        for &t in prefix {
            st = st.push(t);
        }
        let mut out = vec![0.0; self.model.config.vocab_size];
        for (t, _, l) in self.expand(&st, node)? {
            out[t as usize] = l.exp();
        }
        Ok(out)
    }

    /// Teacher-forced constrained log-score of a registered ID, EOS included.
    pub fn score_candidate(&self, enc: &EncoderState, id: &TextualId) -> Result<f64> {
        let path = id.with_eos();
        if self.trie.item_at(&path).is_none() {
            return Err(Error::UnknownId(id.text.clone()));
        }
        let mut st = self.model.start_decoder(enc);
        let mut node = 0;
        let mut score = 0.0;
        for (i, &t) in path.iter().enumerate() {
            let (_, next, l) = self
                .expand(&st, node)?
                .into_iter()
                .find(|c| c.0 == t)
                .ok_or(Error::DeadEnd)?;
            score += l;
            node = next;
            if i + 1 < path.len() {
                st = st.push(t);
            }
        }
        Ok(score)
    }

    /// Exact scores for every registered ID, best first; ties by item key.
    pub fn rank_all(&self, enc: &EncoderState) -> Result<RankedList> {
        let mut out = Vec::with_capacity(self.trie.len());
        let st = self.model.start_decoder(enc);
        self.collect(&st, 0, 0.0, &mut out)?;
        sort_ranked(&mut out);
        Ok(out)
    }

    fn collect(&self, st: &DecoderState<'_>, node: usize, score: f64, out: &mut RankedList) -> Result<()> {
        for (t, next, l) in self.expand(st, node)? {
            if t == EOS {
                let item = self.trie.nodes[next].item.clone().ok_or(Error::DeadEnd)?;
                out.push((item, score + l));
            } else {
                self.collect(&st.push(t), next, score + l, out)?;
            }
        }
        Ok(())
    }

    /// Beam search restricted to trie paths. Hypotheses that take EOS are
    /// complete; the best `top_n` completed items are returned.
    pub fn beam_search(&self, enc: &EncoderState, beam_width: usize, top_n: usize) -> Result<RankedList> {
        if top_n == 0 || beam_width < top_n {
            return Err(Error::InvalidInput("need beam_width >= top_n >= 1".into()));
        }
        let mut live = vec![(self.model.start_decoder(enc), 0usize, 0.0f64)];
        let mut done: RankedList = Vec::new();
        while !live.is_empty() {
            let mut cands = Vec::new();
            for (bi, (st, node, score)) in live.iter().enumerate() {
                for (t, next, l) in self.expand(st, *node)? {
                    cands.push((score + l, bi, t, next));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            cands.truncate(beam_width);
            let mut next_live = Vec::new();
            for (score, bi, t, next) in cands {
                if t == EOS {
                    let item = self.trie.nodes[next].item.clone().ok_or(Error::DeadEnd)?;
                    done.push((item, score));
                } else {
                    next_live.push((live[bi].0.push(t), next, score));
                }
            }
            live = next_live;
        }
        sort_ranked(&mut done);
        done.truncate(top_n);
        Ok(done)
    }

    /// Draws one path (tokens then EOS) from the constrained distribution.
    pub fn sample<R: Rng>(&self, enc: &EncoderState, rng: &mut R) -> Result<Vec<u32>> {
        let mut st = self.model.start_decoder(enc);
        let mut node = 0;
        let mut path = Vec::new();
        loop {
            let opts = self.expand(&st, node)?;
            let total: f64 = opts.iter().map(|o| o.2.exp()).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = opts[opts.len() - 1];
            for o in &opts {
                u -= o.2.exp();
                if u <= 0.0 {
                    pick = *o;
                    break;
                }
            }
            path.push(pick.0);
            node = pick.1;
            if pick.0 == EOS {
                return Ok(path);
            }
            st = st.push(pick.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["red hat shoe blue green"], 1, 100)
    }

    fn id(v: &Vocabulary, s: &str) -> TextualId {
        TextualId::from_tokens(v, v.encode(s, 10)).unwrap()
    }

    fn trie(v: &Vocabulary, ids: &[&str]) -> PrefixTrie {
        let mut t = PrefixTrie::new();
        for (i, s) in ids.iter().enumerate() {
            t.insert(&id(v, s), &format!("item{i}")).unwrap();
        }
        t
    }

    #[test]
    fn trie_structure() {
        let v = vocab();
        let t = trie(&v, &["red hat", "red shoe", "blue hat"]);
        let tok = |s| v.id(s).unwrap();
        let mut root = vec![tok("red"), tok("blue")];
        root.sort();
        assert_eq!(t.valid_next(&[]), root);
        let mut after_red = vec![tok("hat"), tok("shoe")];
        after_red.sort();
        assert_eq!(t.valid_next(&[tok("red")]), after_red);
        assert!(t.valid_next(&[tok("green")]).is_empty());
        assert_eq!(t.len(), 3);

        let t = trie(&v, &["red", "red hat"]);
        let mut next = vec![EOS, tok("hat")];
        next.sort();
        assert_eq!(t.valid_next(&[tok("red")]), next);
        assert_eq!(t.item_at(&[tok("red"), EOS]), Some("item0"));

        let mut t = trie(&v, &["red"]);
        assert!(matches!(t.insert(&id(&v, "red"), "x"), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn masked_distributions() {
        let logits = [0.0; 6];
        let p = constrained_distribution(&logits, &[3, 4], MaskMode::Renormalized).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.0]);
        let p = constrained_distribution(&logits, &[5], MaskMode::Renormalized).unwrap();
        assert_eq!(p[5], 1.0);
        let logits = [0.3, -1.2, 2.0, 0.7];
        let p = constrained_distribution(&logits, &[0, 2, 3], MaskMode::Renormalized).unwrap();
        let z = 0.3f64.exp() + 2.0f64.exp() + 0.7f64.exp();
        for (i, e) in [(0, 0.3f64), (2, 2.0), (3, 0.7)] {
            assert!((p[i] - e.exp() / z).abs() < 1e-15);
        }
        assert_eq!(p[1], 0.0);
        let raw = constrained_distribution(&logits, &[0, 2], MaskMode::Raw).unwrap();
        let full: f64 = logits.iter().map(|l| l.exp()).sum();
        assert!((raw[2] - 2.0f64.exp() / full).abs() < 1e-15);
        assert!(matches!(masked_log_probs(&logits, &[], MaskMode::Raw), Err(Error::DeadEnd)));
    }

    fn tiny_model(v: &Vocabulary, seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            max_src_len: 16,
            max_tgt_len: 6,
            vocab_size: v.size(),
            seed,
        };
        ModelParams::init(&cfg).unwrap()
    }

    #[test]
    fn scores_are_normalized_and_consistent() {
        let v = vocab();
        let ids = ["red hat", "red shoe", "blue hat", "red", "green blue shoe"];
        let t = trie(&v, &ids);
        let m = tiny_model(&v, 4);
        let rec = Recommender::new(&m, &t);
        let enc = m.encode(&v.encode("red hat blue", 16)).unwrap();
        let ranked = rec.rank_all(&enc).unwrap();
        assert_eq!(ranked.len(), ids.len());
        let mass: f64 = ranked.iter().map(|r| r.1.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
        for (key, score) in &ranked {
            let i: usize = key[4..].parse().unwrap();
            let direct = rec.score_candidate(&enc, &id(&v, ids[i])).unwrap();
            assert!((direct - score).abs() < 1e-12);
        }
        assert_eq!(rec.beam_search(&enc, 5, 5).unwrap(), ranked);
        assert!(matches!(
            rec.score_candidate(&enc, &id(&v, "green")),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn single_candidate_scores_zero() {
        let v = vocab();
        let t = trie(&v, &["red hat shoe"]);
        let m = tiny_model(&v, 1);
        let rec = Recommender::new(&m, &t);
        let enc = m.encode(&v.encode("blue", 16)).unwrap();
        assert_eq!(rec.score_candidate(&enc, &id(&v, "red hat shoe")).unwrap(), 0.0);
    }
}
