//! Textual ID generation: diverse beam search and unique allocation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::FlattenedText;
use crate::error::{Error, Result};
use crate::model::{log_softmax, DecoderState, EncoderState, ModelParams};
use crate::tokenizer::{Vocabulary, EOS, NUM_SPECIALS, PAD, UNK};

/// A generated identifier: ordinary tokens only, EOS stripped.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TextualId {
    pub tokens: Vec<u32>,
    pub text: String,
}

impl TextualId {
    pub fn from_tokens(vocab: &Vocabulary, tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("textual id must not be empty".into()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| (t as usize) < NUM_SPECIALS) {
            return Err(Error::InvalidInput(format!(
                "textual id contains special token {t}"
            )));
        }
        let text = vocab.decode(&tokens)?;
        Ok(TextualId { tokens, text })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens followed by EOS, the form scored by the decoder.
    pub fn with_eos(&self) -> Vec<u32> {
        let mut t = self.tokens.clone();
        t.push(EOS);
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocatorConfig {
    pub groups: usize,
    pub beams_per_group: usize,
    pub lambda_init: f64,
    pub lambda_step: f64,
    pub lambda_max: f64,
    /// Half-open `[lo, hi)` ID length ranges tried in order.
    pub length_ranges: Vec<(usize, usize)>,
    /// Append an ordinal disambiguator instead of failing when every range
    /// and penalty is exhausted.
    pub allow_fallback: bool,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig {
            groups: 10,
            beams_per_group: 2,
            lambda_init: 1.0,
            lambda_step: 1.0,
            lambda_max: 10.0,
            length_ranges: vec![(1, 10), (10, 20)],
            allow_fallback: true,
        }
    }
}

impl AllocatorConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("allocator config: {m}")));
        if self.groups == 0 || self.beams_per_group == 0 {
            return bad("groups and beams_per_group must be at least 1");
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init <= self.lambda_max) {
            return bad("need 0 <= lambda_init <= lambda_max");
        }
        if !(self.lambda_step > 0.0) {
            return bad("lambda_step must be positive");
        }
        if self.length_ranges.is_empty() {
            return bad("at least one length range is required");
        }
        let mut prev_hi = 0;
        for &(lo, hi) in &self.length_ranges {
            if hi <= lo.max(1) {
                return bad("length ranges must admit at least one length");
            }
            if lo < prev_hi {
                return bad("length ranges must be increasing and disjoint");
            }
            prev_hi = hi;
        }
        Ok(())
    }

    /// `(min_len, max_len)` enforced while decoding range `idx`.
    pub fn length_bounds(&self, idx: usize) -> (usize, usize) {
        let (lo, hi) = self.length_ranges[idx];
        (lo.max(1), hi - 1)
    }

    fn check_model(&self, model: &ModelParams) -> Result<()> {
        let longest = self.length_bounds(self.length_ranges.len() - 1).1;
        if longest + 1 > model.config.max_tgt_len {
            return Err(Error::InvalidInput(format!(
                "id length {longest} plus EOS exceeds model max_tgt_len {}",
                model.config.max_tgt_len
            )));
        }
        Ok(())
    }
}

/// Autoregressive next-token distribution, abstracted so decoding can run
/// over the transformer or over scripted distributions.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    /// Log-probabilities over the whole vocabulary.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;
    fn advance(&self, state: &Self::State, token: u32) -> Self::State;
}

/// Transformer decoder conditioned on a fixed encoder state.
pub struct Seq2Seq<'a> {
    pub model: &'a ModelParams,
    pub enc: &'a EncoderState,
}

impl<'a> StepModel for Seq2Seq<'a> {
    type State = DecoderState<'a>;

    fn start(&self) -> DecoderState<'a> {
        self.model.start_decoder(self.enc)
    }

    fn log_probs(&self, state: &DecoderState<'a>) -> Vec<f64> {
        log_softmax(state.logits())
    }

    fn advance(&self, state: &DecoderState<'a>, token: u32) -> DecoderState<'a> {
        state.push(token)
    }
}

/// Decoding limits and diversity settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchSpec {
    pub groups: usize,
    pub beams_per_group: usize,
    pub lambda: f64,
    pub min_len: usize,
    pub max_len: usize,
}

fn banned(token: u32, len: usize, min_len: usize) -> bool {
    token == PAD || token == UNK || (token == EOS && len < min_len)
}

struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

struct Group {
    live: Vec<Hyp>,
    finished: Vec<Hyp>,
    done: bool,
}

impl Group {
    fn best_finished(&self) -> Option<&Hyp> {
        // First-inserted wins ties.
        self.finished
            .iter()
            .fold(None, |best: Option<&Hyp>, h| match best {
                Some(b) if b.score >= h.score => Some(b),
                _ => Some(h),
            })
    }
}

/// Diverse beam search with a Hamming penalty. Returns one token sequence
/// per group, in group order, EOS stripped. Sequences may repeat.
pub fn diverse_beam_search<M: StepModel>(model: &M, spec: &SearchSpec) -> Result<Vec<Vec<u32>>> {
    if spec.groups == 0 || spec.beams_per_group == 0 || spec.max_len == 0 {
        return Err(Error::InvalidInput("search needs groups, beams and max_len >= 1".into()));
    }
    if spec.lambda.is_nan() || spec.lambda < 0.0 {
        return Err(Error::InvalidInput("diversity penalty must be non-negative".into()));
    }
    let mut memo: HashMap<Vec<u32>, (M::State, Vec<f64>)> = HashMap::new();
    let root = model.start();
    let lp = model.log_probs(&root);
    memo.insert(Vec::new(), (root, lp));

    let mut groups: Vec<Group> = (0..spec.groups)
        .map(|_| Group {
            live: vec![Hyp {
                tokens: Vec::new(),
                score: 0.0,
            }],
            finished: Vec::new(),
            done: false,
        })
        .collect();

    for step in 0..spec.max_len {
        let mut used: HashMap<u32, usize> = HashMap::new();
        for group in groups.iter_mut().filter(|g| !g.done) {
            let mut cands: Vec<(f64, usize, u32)> = Vec::new();
            for (bi, hyp) in group.live.iter().enumerate() {
                let lp = &memo[&hyp.tokens].1;
                for (tok, &l) in lp.iter().enumerate() {
                    let tok = tok as u32;
                    if banned(tok, hyp.tokens.len(), spec.min_len) {
                        continue;
                    }
                    let penalty = used.get(&tok).map_or(0.0, |&c| spec.lambda * c as f64);
                    cands.push((hyp.score + l - penalty, bi, tok));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(spec.beams_per_group);

            let mut live = Vec::new();
            for &(score, bi, tok) in &cands {
                *used.entry(tok).or_insert(0) += 1;
                let mut tokens = group.live[bi].tokens.clone();
                if tok == EOS {
                    group.finished.push(Hyp { tokens, score });
                    continue;
                }
                tokens.push(tok);
                if step + 1 == spec.max_len {
                    group.finished.push(Hyp { tokens, score });
                } else {
                    if !memo.contains_key(&tokens) {
                        let parent = &memo[&group.live[bi].tokens].0;
                        let state = model.advance(parent, tok);
                        let lp = model.log_probs(&state);
                        memo.insert(tokens.clone(), (state, lp));
                    }
                    live.push(Hyp { tokens, score });
                }
            }
            group.live = live;
            let best_live = group.live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            group.done = group.live.is_empty()
                || group.best_finished().is_some_and(|f| f.score >= best_live);
        }
        if groups.iter().all(|g| g.done) {
            break;
        }
    }

    groups
        .iter()
        .map(|g| {
            g.best_finished()
                .map(|h| h.tokens.clone())
                .ok_or_else(|| Error::InvalidInput("vocabulary has no ordinary tokens to decode".into()))
        })
        .collect()
}

/// Plain beam search of width `beams`; the best finished sequence, EOS
/// stripped.
pub fn beam_search<M: StepModel>(
    model: &M,
    beams: usize,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<u32>> {
    if beams == 0 || max_len == 0 {
        return Err(Error::InvalidInput("beam search needs beams and max_len >= 1".into()));
    }
    type Beam<S> = (Vec<u32>, f64, S);
    let mut beam: Vec<Beam<M::State>> = vec![(Vec::new(), 0.0, model.start())];
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut len = 0;
    while !beam.is_empty() && len < max_len {
        let mut pool: Vec<(f64, usize, u32)> = Vec::new();
        for (i, (_, score, state)) in beam.iter().enumerate() {
            for (t, l) in model.log_probs(state).into_iter().enumerate() {
                if !banned(t as u32, len, min_len) {
                    pool.push((score + l, i, t as u32));
                }
            }
        }
        pool.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then((x.1, x.2).cmp(&(y.1, y.2)))
        });
        let mut next = Vec::new();
        for (score, i, t) in pool.into_iter().take(beams) {
            let mut seq = beam[i].0.clone();
            let complete = t == EOS || len + 1 == max_len;
            if t != EOS {
                seq.push(t);
            }
            if complete {
                if best.as_ref().is_none_or(|b| score > b.1) {
                    best = Some((seq, score));
                }
            } else {
                let state = model.advance(&beam[i].2, t);
                next.push((seq, score, state));
            }
        }
        beam = next;
        len += 1;
        if let Some((_, b)) = &best {
            if beam.iter().all(|h| h.1 <= *b) {
                break;
            }
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::InvalidInput("vocabulary has no ordinary tokens to decode".into()))
}

/// One registry row.
#[derive(Clone, Debug, PartialEq)]
pub struct IdEntry {
    pub item_key: String,
    pub id: TextualId,
    pub lambda: f64,
    /// Index into the length ranges; equal to their count for fallback IDs.
    pub range_idx: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocationStats {
    pub items: usize,
    /// Items accepted with a penalty above the initial one.
    pub lambda_escalated: usize,
    /// Items accepted beyond the first length range.
    pub length_extended: usize,
    /// Items that needed the ordinal disambiguator.
    pub fallback_items: Vec<String>,
}

impl AllocationStats {
    pub fn lambda_escalated_fraction(&self) -> f64 {
        self.lambda_escalated as f64 / self.items.max(1) as f64
    }

    pub fn length_extended_fraction(&self) -> f64 {
        self.length_extended as f64 / self.items.max(1) as f64
    }
}

/// Item to ID map with a reverse uniqueness index.
#[derive(Clone, Debug, PartialEq)]
pub struct IdRegistry {
    entries: Vec<IdEntry>,
    by_key: HashMap<String, usize>,
    by_text: HashMap<String, usize>,
    pub length_ranges: Vec<(usize, usize)>,
    pub lambda_init: f64,
    /// Parameter hash of the generator that produced the IDs.
    pub generator: String,
}

impl IdRegistry {
    pub fn new(length_ranges: Vec<(usize, usize)>, lambda_init: f64, generator: String) -> Self {
        IdRegistry {
            entries: Vec::new(),
            by_key: HashMap::new(),
            by_text: HashMap::new(),
            length_ranges,
            lambda_init,
            generator,
        }
    }

    pub fn insert(&mut self, entry: IdEntry) -> Result<()> {
        if self.by_text.contains_key(&entry.id.text) {
            return Err(Error::DuplicateId(entry.id.text));
        }
        if self.by_key.contains_key(&entry.item_key) {
            return Err(Error::InvalidInput(format!(
                "item {} registered twice",
                entry.item_key
            )));
        }
        let n = self.entries.len();
        self.by_key.insert(entry.item_key.clone(), n);
        self.by_text.insert(entry.id.text.clone(), n);
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IdEntry] {
        &self.entries
    }

    pub fn get(&self, item_key: &str) -> Option<&TextualId> {
        self.by_key.get(item_key).map(|&i| &self.entries[i].id)
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.by_text.contains_key(text)
    }

    pub fn item_for_text(&self, text: &str) -> Option<&str> {
        self.by_text.get(text).map(|&i| self.entries[i].item_key.as_str())
    }

    pub fn stats(&self) -> AllocationStats {
        let n_ranges = self.length_ranges.len();
        AllocationStats {
            items: self.entries.len(),
            lambda_escalated: self
                .entries
                .iter()
                .filter(|e| e.range_idx < n_ranges && (e.lambda > self.lambda_init || e.range_idx > 0))
                .count(),
            length_extended: self.entries.iter().filter(|e| e.range_idx > 0).count(),
            fallback_items: self
                .entries
                .iter()
                .filter(|e| e.range_idx >= n_ranges)
                .map(|e| e.item_key.clone())
                .collect(),
        }
    }

    /// SHA-256 over `(item_key, id_text)` pairs in registry order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.item_key.as_bytes());
            h.update([0u8]);
            h.update(e.id.text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_tsv(&self) -> String {
        let ranges: Vec<String> = self
            .length_ranges
            .iter()
            .map(|(lo, hi)| format!("{lo}-{hi}"))
            .collect();
        let mut out = format!(
            "#\tranges={}\tlambda_init={}\tgenerator={}\n",
            ranges.join(","),
            self.lambda_init,
            self.generator
        );
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.item_key, e.id.text, e.lambda, e.range_idx);
        }
        out
    }

    pub fn from_tsv(text: &str, vocab: &Vocabulary, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let mut fields: HashMap<&str, &str> = HashMap::new();
        let mut parts = header.split('\t');
        if parts.next() != Some("#") {
            return Err(Error::parse(path, 1, "header must start with '#'"));
        }
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{p}`")))?;
            fields.insert(k, v);
        }
        let field = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{k}`")))
        };
        let mut ranges = Vec::new();
        for r in field("ranges")?.split(',') {
            let parsed = r
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
            ranges.push(parsed.ok_or_else(|| Error::parse(path, 1, format!("bad range `{r}`")))?);
        }
        let lambda_init: f64 = field("lambda_init")?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad lambda_init"))?;
        let mut reg = IdRegistry::new(ranges, lambda_init, field("generator")?.to_string());
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(path, n + 1, "expected 4 tab-separated fields"));
            }
            let tokens = vocab.encode(cols[1], usize::MAX);
            let id = TextualId::from_tokens(vocab, tokens)?;
            if id.text != cols[1] {
                return Err(Error::parse(path, n + 1, "id text does not round-trip through the vocabulary"));
            }
            let lambda = cols[2]
                .parse()
                .map_err(|_| Error::parse(path, n + 1, "bad lambda"))?;
            let range_idx = cols[3]
                .parse()
                .map_err(|_| Error::parse(path, n + 1, "bad range index"))?;
            reg.insert(IdEntry {
                item_key: cols[0].to_string(),
                id,
                lambda,
                range_idx,
            })?;
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, vocab, path)
    }
}

/// Source tokens for an item's ID.
fn item_source(model: &ModelParams, vocab: &Vocabulary, text: &FlattenedText) -> Vec<u32> {
    vocab.encode(text.as_str(), model.config.max_src_len)
}

/// Candidates for one source under one penalty and length range.
pub fn generate_candidates(
    model: &ModelParams,
    vocab: &Vocabulary,
    src: &[u32],
    config: &AllocatorConfig,
    lambda: f64,
    range_idx: usize,
) -> Result<Vec<TextualId>> {
    let enc = model.encode(src)?;
    let (min_len, max_len) = config.length_bounds(range_idx);
    let spec = SearchSpec {
        groups: config.groups,
        beams_per_group: config.beams_per_group,
        lambda,
        min_len,
        max_len,
    };
    diverse_beam_search(&Seq2Seq { model, enc: &enc }, &spec)?
        .into_iter()
        .map(|t| TextualId::from_tokens(vocab, t))
        .collect()
}

/// Assigns every item a unique ID, escalating the diversity penalty and then
/// the length range on collisions. Items are processed in input order.
pub fn allocate_all(
    model: &ModelParams,
    vocab: &Vocabulary,
    items: &[(String, FlattenedText)],
    config: &AllocatorConfig,
) -> Result<IdRegistry> {
    config.validate()?;
    config.check_model(model)?;
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to allocate".into()));
    }
    let n_ranges = config.length_ranges.len();
    let mut registry = IdRegistry::new(config.length_ranges.clone(), config.lambda_init, model.hash());
    let mut cache: HashMap<(Vec<u32>, u64, usize), Vec<TextualId>> = HashMap::new();

    for (pos, (key, text)) in items.iter().enumerate() {
        let src = item_source(model, vocab, text);
        let mut lambda = config.lambda_init;
        let mut range_idx = 0;
        let mut last_best: Option<TextualId> = None;
        let accepted = loop {
            let ck = (src.clone(), lambda.to_bits(), range_idx);
            if !cache.contains_key(&ck) {
                let c = generate_candidates(model, vocab, &src, config, lambda, range_idx)?;
                cache.insert(ck.clone(), c);
            }
            let cands = &cache[&ck];
            if let Some(c) = cands.iter().find(|c| !registry.contains_text(&c.text)) {
                break Some((c.clone(), lambda, range_idx));
            }
            last_best = cands.first().cloned();
            lambda += config.lambda_step;
            if lambda > config.lambda_max {
                lambda = config.lambda_init;
                range_idx += 1;
                if range_idx == n_ranges {
                    break None;
                }
            }
        };
        let (id, lambda, range_idx) = match accepted {
            Some(a) => a,
            None if config.allow_fallback => {
                let base = last_best.expect("at least one attempt was made");
                let max_len = config.length_bounds(n_ranges - 1).1;
                let id = disambiguate(vocab, &base, pos, items.len(), max_len, &registry)?;
                log::warn!("item {key}: id space exhausted, using ordinal fallback `{}`", id.text);
                (id, config.lambda_max, n_ranges)
            }
            None => return Err(Error::IdSpaceExhausted { item: key.clone() }),
        };
        registry.insert(IdEntry {
            item_key: key.clone(),
            id,
            lambda,
            range_idx,
        })?;
    }
    let stats = registry.stats();
    log::info!(
        "allocated {} ids: {:.2}% needed a higher penalty, {:.2}% a longer range, {} fallbacks",
        stats.items,
        100.0 * stats.lambda_escalated_fraction(),
        100.0 * stats.length_extended_fraction(),
        stats.fallback_items.len()
    );
    Ok(registry)
}

/// `base` followed by the base-N digits of an ordinal, over ordinary tokens.
fn disambiguate(
    vocab: &Vocabulary,
    base: &TextualId,
    pos: usize,
    n_items: usize,
    max_len: usize,
    registry: &IdRegistry,
) -> Result<TextualId> {
    let alphabet: Vec<u32> = vocab.ordinary_ids().collect();
    if alphabet.is_empty() {
        return Err(Error::IdSpaceExhausted { item: format!("#{pos}") });
    }
    let radix = alphabet.len();
    for round in 0.. {
        let mut ordinal = pos + round * n_items.max(1);
        let mut digits = Vec::new();
        loop {
            digits.push(alphabet[ordinal % radix]);
            ordinal /= radix;
            if ordinal == 0 {
                break;
            }
        }
        digits.reverse();
        if digits.len() > max_len {
            break;
        }
        let keep = base.tokens.len().min(max_len - digits.len());
        let mut tokens = base.tokens[..keep].to_vec();
        tokens.extend(digits);
        let id = TextualId::from_tokens(vocab, tokens)?;
        if !registry.contains_text(&id.text) {
            return Ok(id);
        }
    }
    Err(Error::IdSpaceExhausted { item: format!("#{pos}") })
}

/// Profile ID for a user: the history texts joined by "; ", truncated to
/// the encoder limit, decoded with single-group beam search in the first
/// length range. Not registered for uniqueness.
pub fn generate_user_id(
    model: &ModelParams,
    vocab: &Vocabulary,
    history: &[&FlattenedText],
    config: &AllocatorConfig,
) -> Result<TextualId> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let joined = history.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("; ");
    let src = vocab.encode(&joined, model.config.max_src_len);
    let enc = model.encode(&src)?;
    let (min_len, max_len) = config.length_bounds(0);
    let tokens = beam_search(&Seq2Seq { model, enc: &enc }, config.beams_per_group, min_len, max_len)?;
    TextualId::from_tokens(vocab, tokens)
}

/// Memoizes user IDs by their exact source tokens.
pub struct UserIdCache<'a> {
    model: &'a ModelParams,
    vocab: &'a Vocabulary,
    config: &'a AllocatorConfig,
    seen: HashMap<Vec<u32>, TextualId>,
}

impl<'a> UserIdCache<'a> {
    pub fn new(model: &'a ModelParams, vocab: &'a Vocabulary, config: &'a AllocatorConfig) -> Self {
        UserIdCache {
            model,
            vocab,
            config,
            seen: HashMap::new(),
        }
    }

    pub fn get(&mut self, history: &[&FlattenedText]) -> Result<TextualId> {
        let joined = history.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("; ");
        let src = self.vocab.encode(&joined, self.model.config.max_src_len);
        if let Some(id) = self.seen.get(&src) {
            return Ok(id.clone());
        }
        let id = generate_user_id(self.model, self.vocab, history, self.config)?;
        self.seen.insert(src, id.clone());
        Ok(id)
    }
}

/// Distinct ID texts in a registry, for invariant checks.
pub fn distinct_texts(registry: &IdRegistry) -> HashSet<&str> {
    registry.entries().iter().map(|e| e.id.text.as_str()).collect()
}
