//! Prompt templates and rendering with recorded ID spans.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::allocator::TextualId;
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

pub const USER_SLOT: &str = "{user_id}";
pub const ITEMS_SLOT: &str = "{item_ids}";
/// Separator placed between interpolated item IDs.
pub const ID_SEPARATOR: &str = ", ";
/// Most recent history items kept in a prompt.
pub const HISTORY_CAP: usize = 20;

pub const DEFAULT_TEMPLATES: [&str; 10] = [
    "user {user_id} has purchased items {item_ids} ; predict the next possible item to be bought by the user",
    "here is the purchase history of user {user_id} : {item_ids} ; what will the user buy next",
    "user {user_id} bought {item_ids} in this order ; which item will the user purchase next",
    "given the items {item_ids} bought by user {user_id} , predict the next item",
    "the shopping record of user {user_id} is {item_ids} ; recommend the next item for this user",
    "user {user_id} has interacted with {item_ids} ; guess the item the user will choose next",
    "according to the history {item_ids} of user {user_id} , which item comes next",
    "a user has purchased items {item_ids} ; predict the next possible item to be bought",
    "purchase history : {item_ids} ; what will be bought next",
    "the items {item_ids} were bought in sequence ; recommend the next item",
];

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(String),
    User,
    Items,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub id: u32,
    pub text: String,
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(id: u32, text: &str) -> Result<Self> {
        if !(1..=10).contains(&id) {
            return Err(Error::InvalidInput(format!("template id {id} outside 1..=10")));
        }
        if text.matches(ITEMS_SLOT).count() != 1 {
            return Err(Error::InvalidInput(format!(
                "template {id} must contain {ITEMS_SLOT} exactly once"
            )));
        }
        if text.matches(USER_SLOT).count() > 1 {
            return Err(Error::InvalidInput(format!(
                "template {id} contains {USER_SLOT} more than once"
            )));
        }
        let mut pieces = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let next = [(USER_SLOT, Piece::User), (ITEMS_SLOT, Piece::Items)]
                .into_iter()
                .filter_map(|(pat, p)| rest.find(pat).map(|i| (i, pat, p)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, pat, piece)) => {
                    if i > 0 {
                        pieces.push(Piece::Text(rest[..i].to_string()));
                    }
                    pieces.push(piece);
                    rest = &rest[i + pat.len()..];
                }
                None => {
                    pieces.push(Piece::Text(rest.to_string()));
                    rest = "";
                }
            }
        }
        Ok(Template {
            id,
            text: text.to_string(),
            pieces,
        })
    }

    pub fn has_user_slot(&self) -> bool {
        self.pieces.contains(&Piece::User)
    }

    /// Literal text with placeholders removed, for vocabulary construction.
    pub fn literal_text(&self) -> String {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateBank {
    templates: Vec<Template>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        let templates = DEFAULT_TEMPLATES
            .iter()
            .enumerate()
            .map(|(i, t)| Template::parse(i as u32 + 1, t).expect("default template"))
            .collect();
        TemplateBank { templates }
    }
}

impl TemplateBank {
    pub fn new(mut templates: Vec<Template>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::EmptyTemplateBank);
        }
        templates.sort_by_key(|t| t.id);
        if templates.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput("duplicate template ids".into()));
        }
        Ok(TemplateBank { templates })
    }

    /// Parses `id<TAB>text` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut templates = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, body) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidInput(format!("templates line {}: expected id<TAB>text", n + 1)))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("templates line {}: bad id", n + 1)))?;
            templates.push(Template::parse(id, body)?);
        }
        Self::new(templates)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.templates
            .iter()
            .map(|t| format!("{}\t{}\n", t.id, t.text))
            .collect()
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn get(&self, id: u32) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Uniform draw over the whole bank.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> &Template {
        &self.templates[rng.gen_range(0..self.templates.len())]
    }

    /// Uniform draw; without user IDs only item-only templates qualify.
    pub fn sample_for<R: Rng>(&self, rng: &mut R, use_user_id: bool) -> Result<&Template> {
        if use_user_id {
            return Ok(self.sample(rng));
        }
        let pool: Vec<&Template> = self.templates.iter().filter(|t| !t.has_user_slot()).collect();
        if pool.is_empty() {
            return Err(Error::InvalidInput(
                "no item-only template available without user ids".into(),
            ));
        }
        Ok(pool[rng.gen_range(0..pool.len())])
    }

    /// Template used for evaluation: template 1, or the first item-only
    /// template when user IDs are disabled.
    pub fn eval_template(&self, use_user_id: bool) -> Result<&Template> {
        let found = if use_user_id {
            self.templates.first()
        } else {
            self.templates.iter().find(|t| !t.has_user_slot())
        };
        found.ok_or(Error::EmptyTemplateBank)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpanRole {
    User,
    /// Index into the history list passed to rendering.
    History(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub role: SpanRole,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl Prompt {
    pub fn text(&self, vocab: &Vocabulary) -> Result<String> {
        vocab.decode(&self.tokens)
    }
}

/// Renders `template` with the given IDs, recording where each ID's tokens
/// land.
pub fn render_prompt(
    vocab: &Vocabulary,
    template: &Template,
    user_id: Option<&TextualId>,
    item_ids: &[&TextualId],
) -> Result<Prompt> {
    render_from(vocab, template, user_id, item_ids, 0)
}

fn render_from(
    vocab: &Vocabulary,
    template: &Template,
    user_id: Option<&TextualId>,
    item_ids: &[&TextualId],
    first_index: usize,
) -> Result<Prompt> {
    if item_ids.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let sep = vocab.encode(ID_SEPARATOR, usize::MAX);
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for piece in &template.pieces {
        match piece {
            Piece::Text(t) => tokens.extend(vocab.encode(t, usize::MAX)),
            Piece::User => {
                let uid = user_id.ok_or(Error::MissingUserId {
                    template: template.id,
                })?;
                let start = tokens.len();
                tokens.extend_from_slice(&uid.tokens);
                spans.push(Span {
                    role: SpanRole::User,
                    start,
                    end: tokens.len(),
                });
            }
            Piece::Items => {
                for (i, id) in item_ids.iter().enumerate() {
                    if i > 0 {
                        tokens.extend_from_slice(&sep);
                    }
                    let start = tokens.len();
                    tokens.extend_from_slice(&id.tokens);
                    spans.push(Span {
                        role: SpanRole::History(first_index + i),
                        start,
                        end: tokens.len(),
                    });
                }
            }
        }
    }
    Ok(Prompt { tokens, spans })
}

/// Renders with at most [`HISTORY_CAP`] most recent items, then drops the
/// oldest items whole until the prompt fits in `max_len` tokens. Span
/// history indices refer to positions in `item_ids`.
pub fn render_fitted(
    vocab: &Vocabulary,
    template: &Template,
    user_id: Option<&TextualId>,
    item_ids: &[&TextualId],
    max_len: usize,
) -> Result<Prompt> {
    if item_ids.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut first = item_ids.len().saturating_sub(HISTORY_CAP);
    loop {
        let prompt = render_from(vocab, template, user_id, &item_ids[first..], first)?;
        if prompt.tokens.len() <= max_len {
            return Ok(prompt);
        }
        if first + 1 == item_ids.len() {
            return Err(Error::SequenceTooLong {
                len: prompt.tokens.len(),
                max: max_len,
            });
        }
        first += 1;
    }
}
