//! Leave-one-out ranking metrics and the zero-shot protocol.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::allocator::{allocate_all, IdRegistry};
use crate::corpus::{HeldOut, PreparedData};
use crate::error::{Error, Result};
use crate::recommender::{MaskMode, PrefixTrie, Recommender};
use crate::training::{write_json, Bundle, Catalog, PromptBuilder};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub user: String,
    pub target: String,
    /// 1-based position of the target; `None` when a beam search missed it.
    pub rank: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Standard,
    ZeroShot,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: EvalMode,
    pub users: usize,
    #[serde(rename = "hr@5")]
    pub hr5: f64,
    #[serde(rename = "hr@10")]
    pub hr10: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: f64,
    pub ranks: Vec<RankResult>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Hit indicator and single-target NDCG for a 1-based rank.
pub fn metric_at_k(rank: usize, k: usize) -> (f64, f64) {
    if rank >= 1 && rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

fn mean_metric(ranks: &[RankResult], k: usize) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let (hr, ndcg) = ranks.iter().fold((0.0, 0.0), |(h, n), r| {
        let (a, b) = r.rank.map_or((0.0, 0.0), |rank| metric_at_k(rank, k));
        (h + a, n + b)
    });
    let n = ranks.len() as f64;
    (hr / n, ndcg / n)
}

/// Fraction of cases ranked within the top `k`.
pub fn hit_rate(ranks: &[RankResult], k: usize) -> f64 {
    mean_metric(ranks, k).0
}

pub fn report_from_ranks(dataset: &str, mode: EvalMode, ranks: Vec<RankResult>) -> EvalReport {
    let (hr5, ndcg5) = mean_metric(&ranks, 5);
    let (hr10, ndcg10) = mean_metric(&ranks, 10);
    EvalReport {
        dataset: dataset.to_string(),
        mode,
        users: ranks.len(),
        hr5,
        hr10,
        ndcg5,
        ndcg10,
        ranks,
    }
}

/// `P(X >= hits)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(hits: u64, n: u64, p: f64) -> Result<f64> {
    if hits == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(p, n).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(b.sf(hits - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub use_user_id: bool,
    pub mask: MaskMode,
    /// Beam width for generation-based ranking; `None` ranks the whole
    /// catalog exactly.
    pub beam: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            use_user_id: true,
            mask: MaskMode::Renormalized,
            beam: None,
        }
    }
}

/// Ranks each case's target among all IDs in `registry`, using the fixed
/// evaluation template. Cases are scored in parallel; output order follows
/// `cases`.
pub fn rank_heldout(
    bundle: &Bundle,
    catalog: &Catalog,
    registry: &IdRegistry,
    cases: &[HeldOut],
    opts: &EvalOptions,
) -> Result<Vec<RankResult>> {
    let trie = PrefixTrie::from_registry(registry)?;
    let template = bundle.templates.eval_template(opts.use_user_id)?;
    let rec = Recommender::new(&bundle.rec, &trie).with_mode(opts.mask);
    for c in cases {
        if registry.get(&c.target).is_none() {
            return Err(Error::TargetMissing { item: c.target.clone() });
        }
    }
    cases
        .par_iter()
        .map(|case| {
            let mut pb = PromptBuilder::new(
                &bundle.vocab,
                registry,
                catalog,
                &bundle.idgen,
                &bundle.alloc,
                bundle.rec.config.max_src_len,
            );
            let (prompt, _) = pb.render(template, &case.history)?;
            let enc = rec.encode(&prompt.tokens)?;
            let ranked = match opts.beam {
                None => rec.rank_all(&enc)?,
                Some(width) => rec.beam_search(&enc, width, width)?,
            };
            let rank = ranked.iter().position(|(k, _)| *k == case.target).map(|p| p + 1);
            Ok(RankResult {
                user: case.user_key.clone(),
                target: case.target.clone(),
                rank,
            })
        })
        .collect()
}

/// Leave-one-out test evaluation with the bundle's registry.
pub fn evaluate(bundle: &Bundle, data: &PreparedData, opts: &EvalOptions) -> Result<EvalReport> {
    let catalog = Catalog::new(&data.items);
    let ranks = rank_heldout(bundle, &catalog, &bundle.registry, &data.split.test, opts)?;
    Ok(report_from_ranks(&data.name, EvalMode::Standard, ranks))
}

/// Evaluates frozen models on an unseen dataset: fresh IDs from the bundled
/// generator, a fresh trie, no parameter updates. `vocab_hash`, when given,
/// is the vocabulary the data was prepared against and must match the
/// bundle's.
pub fn zero_shot_evaluate(
    bundle: &Bundle,
    data: &PreparedData,
    vocab_hash: Option<&str>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let expected = bundle.vocab.hash();
    if let Some(found) = vocab_hash {
        if found != expected {
            return Err(Error::VocabularyMismatch {
                expected,
                found: found.to_string(),
            });
        }
    }
    let catalog = Catalog::new(&data.items);
    let registry = allocate_all(&bundle.idgen, &bundle.vocab, &catalog.items, &bundle.alloc)?;
    let ranks = rank_heldout(bundle, &catalog, &registry, &data.split.test, opts)?;
    Ok(report_from_ranks(&data.name, EvalMode::ZeroShot, ranks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr(rank: Option<usize>) -> RankResult {
        RankResult {
            user: "u".into(),
            target: "t".into(),
            rank,
        }
    }

    #[test]
    fn metric_examples() {
        assert_eq!(metric_at_k(1, 5), (1.0, 1.0));
        assert_eq!(metric_at_k(6, 5), (0.0, 0.0));
        assert_eq!(metric_at_k(3, 5), (1.0, 0.5));
    }

    #[test]
    fn report_aggregates() {
        let r = report_from_ranks("d", EvalMode::Standard, vec![rr(Some(1)), rr(Some(7)), rr(None), rr(Some(3))]);
        assert_eq!(r.users, 4);
        assert_eq!(r.hr5, 0.5);
        assert_eq!(r.hr10, 0.75);
        assert_eq!(r.ndcg5, (1.0 + 0.5) / 4.0);
        assert!(r.hr5 <= r.hr10 && r.ndcg5 <= r.hr5 && r.ndcg10 <= r.hr10);
        let empty = report_from_ranks("d", EvalMode::Standard, vec![]);
        assert_eq!(empty.hr10, 0.0);
    }

    #[test]
    fn binomial_tail() {
        // P(X >= 1) for Binomial(2, 0.5) is 3/4.
        assert!((binomial_upper_tail(1, 2, 0.5).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(0, 10, 0.1).unwrap(), 1.0);
        assert!((binomial_upper_tail(2, 2, 0.5).unwrap() - 0.25).abs() < 1e-12);
    }
}
