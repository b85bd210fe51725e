//! Word-level tokenizer shared by the ID generator and the recommender.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const NUM_SPECIALS: usize = 3;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "</s>", "<unk>"];

/// Lowercases and splits `text` into alphanumeric runs and single
/// punctuation characters. The literal `<unk>` stays a single token so that
/// decoded text re-encodes to the same ids.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = lower.as_str();
    while let Some(ch) = rest.chars().next() {
        if ch == '<' && rest.starts_with(SPECIAL_TOKENS[UNK as usize]) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(SPECIAL_TOKENS[UNK as usize].to_string());
            rest = &rest[SPECIAL_TOKENS[UNK as usize].len()..];
            continue;
        }
        rest = &rest[ch.len_utf8()..];
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary keeping tokens seen at least `min_freq` times,
    /// most frequent first with lexicographic tie-breaks, capped at
    /// `max_size` entries including the specials.
    pub fn build<S: AsRef<str>>(texts: &[S], min_freq: usize, max_size: usize) -> Self {
        Self::build_with_required(texts, &[] as &[&str], min_freq, max_size)
    }

    /// Like [`Vocabulary::build`], but every token of `required` is kept
    /// regardless of frequency and placed ahead of the frequency-ranked ones.
    pub fn build_with_required<S: AsRef<str>, R: AsRef<str>>(
        texts: &[S],
        required: &[R],
        min_freq: usize,
        max_size: usize,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let required: Vec<String> = {
            let set: BTreeSet<String> = required
                .iter()
                .flat_map(|t| split_words(t.as_ref()))
                .filter(|w| !SPECIAL_TOKENS.contains(&w.as_str()))
                .collect();
            set.into_iter().collect()
        };
        let required_set: HashSet<&str> = required.iter().map(String::as_str).collect();
        let mut ranked: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(w, &c)| c >= min_freq && !required_set.contains(w.as_str()))
            .filter(|(w, _)| !SPECIAL_TOKENS.contains(&w.as_str()))
            .map(|(w, &c)| (w, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let budget = max_size.saturating_sub(NUM_SPECIALS);
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            required
                .iter()
                .cloned()
                .chain(ranked.into_iter().map(|(w, _)| w.clone()))
                .take(budget),
        );
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Tokenizes `text`, mapping unknown words to UNK and truncating to
    /// `max_len` ids.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        split_words(text)
            .into_iter()
            .take(max_len)
            .map(|w| self.id(&w).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(Error::InvalidTokenId {
                id,
                size: self.size(),
            })?;
            if id != PAD && id != EOS {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// Ids of all non-special tokens, ascending.
    pub fn ordinary_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (NUM_SPECIALS as u32)..(self.size() as u32)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> std::result::Result<Self, String> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected token<TAB>id", line_no + 1))?;
            let id: usize = id
                .parse()
                .map_err(|_| format!("line {}: bad id {id:?}", line_no + 1))?;
            if id != tokens.len() {
                return Err(format!("line {}: ids must be sequential", line_no + 1));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err("vocabulary must start with <pad>, </s>, <unk>".into());
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err("duplicate tokens".into());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text).map_err(|m| Error::parse(path, 0, m))
    }

    /// Hex SHA-256 of the `vocab.tsv` serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}
