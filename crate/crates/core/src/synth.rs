//! Deterministic toy datasets with planted sequential patterns.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, InteractionLog, ItemRecord};
use crate::error::{Error, Result};

const COLORS: [&str; 12] = [
    "red", "blue", "green", "black", "white", "silver", "golden", "purple", "orange", "yellow", "gray", "pink",
];
const MATERIALS: [&str; 8] = ["cotton", "steel", "wooden", "leather", "plastic", "glass", "ceramic", "wool"];
const OBJECTS: [&str; 20] = [
    "guitar", "lamp", "kettle", "scarf", "wallet", "mug", "backpack", "clock", "chair", "pillow", "notebook", "bottle",
    "jacket", "speaker", "candle", "blanket", "vase", "hat", "tray", "brush",
];
const CATEGORIES: [&str; 6] = ["home", "music", "kitchen", "fashion", "office", "outdoor"];
const BRANDS: [&str; 8] = ["acme", "nordic", "zenith", "orbit", "maple", "harbor", "summit", "lumen"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Each user walks the catalog in order: item `i` is followed by `i + 1`.
    Cyclic,
    /// Each user repeats a personal set of items in a fixed order, so the
    /// next item is the one seen `period` steps earlier.
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub pattern: Pattern,
    pub users: usize,
    pub items: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Personal set size for [`Pattern::Periodic`].
    pub period: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// 50 users over 10 items with the cyclic rule.
    pub fn cyclic(seed: u64) -> Self {
        SynthSpec {
            name: "cyclic".into(),
            pattern: Pattern::Cyclic,
            users: 50,
            items: 10,
            min_len: 6,
            max_len: 9,
            period: 3,
            seed,
        }
    }

    /// 40 users over 40 items, each alternating between two personal items.
    pub fn periodic(name: &str, seed: u64) -> Self {
        SynthSpec {
            name: name.into(),
            pattern: Pattern::Periodic,
            users: 40,
            items: 40,
            min_len: 6,
            max_len: 8,
            period: 2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synthetic spec: {m}")));
        if self.users == 0 || self.items < 2 {
            return bad("need at least one user and two items");
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.items > COLORS.len() * MATERIALS.len() * OBJECTS.len() {
            return bad("too many items for the word pool");
        }
        if self.pattern == Pattern::Periodic && (self.period < 2 || self.period > self.items) {
            return bad("period must be between 2 and the item count");
        }
        Ok(())
    }
}

/// Distinct item descriptions drawn from a shared word pool; datasets with
/// different seeds reuse the same vocabulary.
fn make_items(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<ItemRecord> {
    let combos = COLORS.len() * MATERIALS.len() * OBJECTS.len();
    sample(rng, combos, spec.items)
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let color = COLORS[c % COLORS.len()];
            let material = MATERIALS[(c / COLORS.len()) % MATERIALS.len()];
            let object = OBJECTS[c / (COLORS.len() * MATERIALS.len())];
            ItemRecord {
                item_key: format!("{}-item-{i:03}", spec.name),
                metadata: vec![
                    ("title".into(), format!("{color} {material} {object}")),
                    ("category".into(), CATEGORIES[c % CATEGORIES.len()].into()),
                    ("brand".into(), BRANDS[(c / 3) % BRANDS.len()].into()),
                ],
            }
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let items = make_items(spec, &mut rng);
    let n = spec.items;
    // Periodic sets tile a shuffled catalog so every item recurs across users.
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut logs = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let seq: Vec<usize> = match spec.pattern {
            Pattern::Cyclic => {
                let start = rng.gen_range(0..n);
                (0..len).map(|t| (start + t) % n).collect()
            }
            Pattern::Periodic => {
                let set: Vec<usize> = (0..spec.period).map(|j| order[(u * spec.period + j) % n]).collect();
                (0..len).map(|t| set[t % spec.period]).collect()
            }
        };
        logs.push(InteractionLog {
            user_key: format!("{}-user-{u:03}", spec.name),
            item_keys: seq.iter().map(|&i| items[i].item_key.clone()).collect(),
            timestamps: Some((0..len as i64).map(|t| 1_000 + 10 * t).collect()),
        });
    }
    Dataset::new(spec.name.clone(), items, logs)
}
