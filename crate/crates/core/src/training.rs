//! Alternate training of the recommender and the ID generator.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocator::{allocate_all, AllocatorConfig, IdRegistry, TextualId, UserIdCache};
use crate::corpus::{flatten_metadata, FlattenedText, HeldOut, InteractionLog, ItemRecord, PreparedData};
use crate::error::{Error, Result};
use crate::eval::{rank_heldout, report_from_ranks, EvalMode, EvalOptions, EvalReport};
use crate::model::{
    apply_update, expected_embedding_tape, load_checkpoint, save_checkpoint, AdamState, Gradients, Graph, ModelConfig,
    ModelParams, Tape, Var,
};
use crate::prompting::{render_fitted, Prompt, Span, SpanRole, Template, TemplateBank, HISTORY_CAP, ID_SEPARATOR};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rec_epochs_per_iter: usize,
    pub idgen_epochs_per_iter: usize,
    pub lr_rec: f64,
    pub lr_idgen: f64,
    pub batch_size: usize,
    pub use_user_id: bool,
    pub seed: u64,
    /// Run the recommender phase; off for the generator-only ablation.
    pub train_recommender: bool,
    /// Run the generator phase; off for the recommender-only ablation.
    pub train_idgen: bool,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3,
            rec_epochs_per_iter: 10,
            idgen_epochs_per_iter: 1,
            lr_rec: 1e-3,
            lr_idgen: 1e-4,
            batch_size: 16,
            use_user_id: true,
            seed: 0,
            train_recommender: true,
            train_idgen: true,
            vocab_min_freq: 1,
            vocab_max_size: 30_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.iterations,
            self.rec_epochs_per_iter,
            self.idgen_epochs_per_iter,
            self.batch_size,
            self.vocab_min_freq,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidInput("training counts must be at least 1".into()));
        }
        if !(self.lr_rec > 0.0 && self.lr_idgen > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.vocab_max_size <= crate::tokenizer::NUM_SPECIALS {
            return Err(Error::InvalidInput("vocab_max_size too small".into()));
        }
        Ok(())
    }
}

/// One next-item prediction drawn from a training log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub user: String,
    /// Most recent items before the target, oldest first.
    pub history: Vec<String>,
    pub target: String,
}

/// Every prefix of every log predicts its next item.
pub fn build_examples(logs: &[InteractionLog]) -> Vec<Example> {
    let mut out = Vec::new();
    for log in logs {
        for t in 1..log.item_keys.len() {
            out.push(Example {
                user: log.user_key.clone(),
                history: log.item_keys[t.saturating_sub(HISTORY_CAP)..t].to_vec(),
                target: log.item_keys[t].clone(),
            });
        }
    }
    out
}

/// Vocabulary over item texts, with template and separator tokens always kept.
pub fn build_vocabulary(
    items: &[ItemRecord],
    templates: &TemplateBank,
    min_freq: usize,
    max_size: usize,
) -> Vocabulary {
    let texts: Vec<String> = items.iter().map(|i| flatten_metadata(i).0).collect();
    let mut required: Vec<String> = templates.templates().iter().map(Template::literal_text).collect();
    required.push(ID_SEPARATOR.to_string());
    Vocabulary::build_with_required(&texts, &required, min_freq, max_size)
}

/// Item keys with their flattened texts, in catalog order.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    pub items: Vec<(String, FlattenedText)>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(items: &[ItemRecord]) -> Self {
        let items: Vec<(String, FlattenedText)> = items
            .iter()
            .map(|i| (i.item_key.clone(), flatten_metadata(i)))
            .collect();
        let index = items.iter().enumerate().map(|(n, (k, _))| (k.clone(), n)).collect();
        Catalog { items, index }
    }

    pub fn text(&self, key: &str) -> Result<&FlattenedText> {
        self.index
            .get(key)
            .map(|&i| &self.items[i].1)
            .ok_or_else(|| Error::InvalidInput(format!("unknown item {key}")))
    }
}

/// Everything needed to resume training or to evaluate.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub vocab: Vocabulary,
    pub templates: TemplateBank,
    pub rec: ModelParams,
    pub rec_opt: AdamState,
    pub idgen: ModelParams,
    pub idgen_opt: AdamState,
    pub registry: IdRegistry,
    pub alloc: AllocatorConfig,
    pub use_user_id: bool,
    pub iteration: usize,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    format: String,
    iteration: usize,
    use_user_id: bool,
    allocator: AllocatorConfig,
}

const BUNDLE_FORMAT: &str = "textid-bundle-v1";

impl Bundle {
    /// Fresh models over `vocab`, with an initial allocation.
    pub fn init(
        vocab: Vocabulary,
        templates: TemplateBank,
        model: &ModelConfig,
        alloc: AllocatorConfig,
        catalog: &Catalog,
        seed: u64,
        use_user_id: bool,
    ) -> Result<Self> {
        let rec = ModelParams::init(&ModelConfig {
            vocab_size: vocab.size(),
            seed,
            ..model.clone()
        })?;
        let idgen = ModelParams::init(&ModelConfig {
            vocab_size: vocab.size(),
            seed: seed.wrapping_add(1),
            ..model.clone()
        })?;
        let registry = allocate_all(&idgen, &vocab, &catalog.items, &alloc)?;
        Ok(Bundle {
            rec_opt: AdamState::new(&rec),
            idgen_opt: AdamState::new(&idgen),
            vocab,
            templates,
            rec,
            idgen,
            registry,
            alloc,
            use_user_id,
            iteration: 0,
        })
    }

    /// Fails if the registry was not produced by the bundled generator.
    pub fn check_fresh(&self) -> Result<()> {
        let current = self.idgen.hash();
        if self.registry.generator != current {
            return Err(Error::StaleRegistry {
                registry: self.registry.generator.clone(),
                bundle: current,
            });
        }
        Ok(())
    }

    pub fn reallocate(&mut self, catalog: &Catalog) -> Result<()> {
        self.registry = allocate_all(&self.idgen, &self.vocab, &catalog.items, &self.alloc)?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vh = self.vocab.hash();
        self.vocab.save(&dir.join("vocab.tsv"))?;
        let tpath = dir.join("templates.txt");
        fs::write(&tpath, self.templates.to_text()).map_err(|e| Error::io(&tpath, e))?;
        save_checkpoint(&dir.join("rec.ckpt"), &self.rec, Some(&self.rec_opt), &vh)?;
        save_checkpoint(&dir.join("idgen.ckpt"), &self.idgen, Some(&self.idgen_opt), &vh)?;
        self.registry.save(&dir.join("ids.tsv"))?;
        let meta = BundleMeta {
            format: BUNDLE_FORMAT.into(),
            iteration: self.iteration,
            use_user_id: self.use_user_id,
            allocator: self.alloc.clone(),
        };
        write_json(&dir.join("bundle.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join("vocab.tsv"))?;
        let vh = vocab.hash();
        let templates = TemplateBank::load(&dir.join("templates.txt"))?;
        let (rec, rec_opt) = load_checkpoint(&dir.join("rec.ckpt"), &vh)?;
        let (idgen, idgen_opt) = load_checkpoint(&dir.join("idgen.ckpt"), &vh)?;
        let registry = IdRegistry::load(&dir.join("ids.tsv"), &vocab)?;
        let mpath = dir.join("bundle.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&mpath, e.line(), e))?;
        if meta.format != BUNDLE_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported bundle format {}", meta.format)));
        }
        let bundle = Bundle {
            rec_opt: rec_opt.unwrap_or_else(|| AdamState::new(&rec)),
            idgen_opt: idgen_opt.unwrap_or_else(|| AdamState::new(&idgen)),
            vocab,
            templates,
            rec,
            idgen,
            registry,
            alloc: meta.allocator,
            use_user_id: meta.use_user_id,
            iteration: meta.iteration,
        };
        bundle.check_fresh()?;
        Ok(bundle)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders prompts from a frozen registry and generator.
pub struct PromptBuilder<'a> {
    pub vocab: &'a Vocabulary,
    pub registry: &'a IdRegistry,
    pub catalog: &'a Catalog,
    max_src_len: usize,
    users: UserIdCache<'a>,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(
        vocab: &'a Vocabulary,
        registry: &'a IdRegistry,
        catalog: &'a Catalog,
        idgen: &'a ModelParams,
        alloc: &'a AllocatorConfig,
        max_src_len: usize,
    ) -> Self {
        PromptBuilder {
            vocab,
            registry,
            catalog,
            max_src_len,
            users: UserIdCache::new(idgen, vocab, alloc),
        }
    }

    pub fn item_id(&self, key: &str) -> Result<&'a TextualId> {
        self.registry
            .get(key)
            .ok_or_else(|| Error::TargetMissing { item: key.to_string() })
    }

    pub fn user_id(&mut self, history: &[String]) -> Result<TextualId> {
        let texts = history
            .iter()
            .map(|k| self.catalog.text(k))
            .collect::<Result<Vec<_>>>()?;
        self.users.get(&texts)
    }

    /// Prompt for `history`; the user ID is generated only when the template
    /// has a slot for it.
    pub fn render(&mut self, template: &Template, history: &[String]) -> Result<(Prompt, Option<TextualId>)> {
        let ids = history.iter().map(|k| self.item_id(k)).collect::<Result<Vec<_>>>()?;
        let user = if template.has_user_slot() {
            Some(self.user_id(history)?)
        } else {
            None
        };
        let prompt = render_fitted(self.vocab, template, user.as_ref(), &ids, self.max_src_len)?;
        Ok((prompt, user))
    }
}

/// Teacher-forced recommender loss on token input and its gradients.
pub fn rec_loss_and_grad(rec: &ModelParams, prompt: &[u32], target: &[u32]) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let tape = Tape::bind(&mut g, rec);
    let emb = tape.embed_tokens(&mut g, prompt)?;
    let memory = tape.encode(&mut g, emb)?;
    let loss = tape.sequence_nll(&mut g, memory, target)?;
    let adj = g.backward(loss);
    Ok((g.value(loss).data[0], tape.vars.gradients(&adj, rec)))
}

/// Recommender loss where each span's input rows are the expected embeddings
/// `softmax(logits) · E` of the given logits rows.
pub fn soft_id_loss_with<'m>(
    g: &mut Graph<'m>,
    rec: &Tape<'m>,
    prompt: &Prompt,
    span_logits: &[(Span, Var)],
    target: &[u32],
) -> Result<Var> {
    let table = rec.embedding();
    let mut spans: Vec<&(Span, Var)> = span_logits.iter().collect();
    spans.sort_by_key(|(s, _)| s.start);
    let mut parts = Vec::new();
    let mut cursor = 0;
    for (span, logits) in spans {
        if span.start < cursor || span.end > prompt.tokens.len() {
            return Err(Error::ShapeMismatch("spans must be ordered and in bounds".into()));
        }
        if g.value(*logits).rows != span.end - span.start {
            return Err(Error::ShapeMismatch("span logits rows must match span length".into()));
        }
        if span.start > cursor {
            parts.push(rec.embed_tokens(g, &prompt.tokens[cursor..span.start])?);
        }
        parts.push(expected_embedding_tape(g, *logits, table));
        cursor = span.end;
    }
    if cursor < prompt.tokens.len() {
        parts.push(rec.embed_tokens(g, &prompt.tokens[cursor..])?);
    }
    if parts.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let rows = g.concat_rows(&parts);
    let memory = rec.encode(g, rows)?;
    rec.sequence_nll(g, memory, target)
}

/// Generator input behind one prompt span.
#[derive(Clone, Debug)]
pub struct SpanSource {
    pub span: Span,
    /// Generator source tokens (item text, or joined history texts).
    pub src: Vec<u32>,
    /// Snapshot ID the generator is teacher-forced along.
    pub id: TextualId,
}

/// Prompt, per-span generator inputs, and the target ID with EOS.
#[derive(Clone, Debug)]
pub struct SoftIdInput {
    pub prompt: Prompt,
    pub sources: Vec<SpanSource>,
    pub target: Vec<u32>,
}

/// Loss through the generator's expected embeddings, with gradients for the
/// generator only; the recommender is held constant.
pub fn soft_id_loss_and_grad(rec: &ModelParams, idgen: &ModelParams, input: &SoftIdInput) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let rt = Tape::bind_frozen(&mut g, rec);
    let it = Tape::bind(&mut g, idgen);
    let mut memo: HashMap<(&[u32], &[u32]), Var> = HashMap::new();
    let mut span_logits = Vec::with_capacity(input.sources.len());
    for s in &input.sources {
        let key = (s.src.as_slice(), s.id.tokens.as_slice());
        let rows = match memo.get(&key) {
            Some(&v) => v,
            None => {
                let emb = it.embed_tokens(&mut g, &s.src)?;
                let mem = it.encode(&mut g, emb)?;
                let logits = it.decode(&mut g, mem, &s.id.with_eos())?;
                let rows = g.slice_rows(logits, 0, s.id.len());
                memo.insert(key, rows);
                rows
            }
        };
        span_logits.push((s.span, rows));
    }
    let loss = soft_id_loss_with(&mut g, &rt, &input.prompt, &span_logits, &input.target)?;
    let adj = g.backward(loss);
    Ok((g.value(loss).data[0], it.vars.gradients(&adj, idgen)))
}

/// Shuffles, groups similar prompt lengths within megabatches, and cuts
/// batches.
fn batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for mega in order.chunks(batch_size * 4) {
        let mut mega = mega.to_vec();
        mega.sort_by_key(|&i| lengths[i]);
        out.extend(mega.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out
}

fn sample_template<'b>(bank: &'b TemplateBank, rng: &mut ChaCha8Rng, use_user_id: bool) -> Result<&'b Template> {
    bank.sample_for(rng, use_user_id)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    /// Mean per-example sequence loss.
    pub mean_loss: f64,
    /// Loss per target token.
    pub loss_per_token: f64,
}

/// Updates the recommender only, against the current ID snapshot.
pub fn train_recommender_phase(
    bundle: &mut Bundle,
    catalog: &Catalog,
    examples: &[Example],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochStats>> {
    bundle.check_fresh()?;
    let mut stats = Vec::new();
    for epoch in 0..config.rec_epochs_per_iter {
        let mut prepared = Vec::with_capacity(examples.len());
        {
            let mut pb = PromptBuilder::new(
                &bundle.vocab,
                &bundle.registry,
                catalog,
                &bundle.idgen,
                &bundle.alloc,
                bundle.rec.config.max_src_len,
            );
            for ex in examples {
                let template = sample_template(&bundle.templates, rng, config.use_user_id)?;
                let (prompt, _) = pb.render(template, &ex.history)?;
                prepared.push((prompt.tokens, pb.item_id(&ex.target)?.with_eos()));
            }
        }
        let lengths: Vec<usize> = prepared.iter().map(|p| p.0.len()).collect();
        let (mut total, mut tokens) = (0.0, 0usize);
        for batch in batches(&lengths, config.batch_size, rng) {
            let mut grads = Gradients::zeros_like(&bundle.rec);
            for &i in &batch {
                let (loss, g) = rec_loss_and_grad(&bundle.rec, &prepared[i].0, &prepared[i].1)?;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
                total += loss;
                tokens += prepared[i].1.len();
            }
            apply_update(&mut bundle.rec, &grads, &mut bundle.rec_opt, config.lr_rec)?;
        }
        let s = EpochStats {
            mean_loss: total / examples.len().max(1) as f64,
            loss_per_token: total / tokens.max(1) as f64,
        };
        log::info!("rec epoch {}: loss {:.4} ({:.4}/token)", epoch + 1, s.mean_loss, s.loss_per_token);
        stats.push(s);
    }
    Ok(stats)
}

/// Builds the differentiable-ID input for one example.
fn soft_id_input(
    pb: &mut PromptBuilder<'_>,
    vocab: &Vocabulary,
    template: &Template,
    ex: &Example,
    max_src_len: usize,
) -> Result<SoftIdInput> {
    let (prompt, user) = pb.render(template, &ex.history)?;
    let mut sources = Vec::with_capacity(prompt.spans.len());
    for span in &prompt.spans {
        let (src, id) = match span.role {
            SpanRole::History(i) => {
                let key = &ex.history[i];
                let text = pb.catalog.text(key)?;
                (vocab.encode(text.as_str(), max_src_len), pb.item_id(key)?.clone())
            }
            SpanRole::User => {
                let joined = ex
                    .history
                    .iter()
                    .map(|k| pb.catalog.text(k).map(|t| t.as_str()))
                    .collect::<Result<Vec<_>>>()?
                    .join("; ");
                let id = user.clone().ok_or(Error::MissingUserId { template: template.id })?;
                (vocab.encode(&joined, max_src_len), id)
            }
        };
        sources.push(SpanSource { span: *span, src, id });
    }
    Ok(SoftIdInput {
        target: pb.item_id(&ex.target)?.with_eos(),
        prompt,
        sources,
    })
}

/// Updates the ID generator only, through expected embeddings fed to the
/// frozen recommender. The registry is stale afterwards until reallocated.
pub fn train_idgen_phase(
    bundle: &mut Bundle,
    catalog: &Catalog,
    examples: &[Example],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochStats>> {
    bundle.check_fresh()?;
    let snapshot = bundle.idgen.clone();
    let max_src = bundle.rec.config.max_src_len;
    let gen_src = bundle.idgen.config.max_src_len;
    let mut stats = Vec::new();
    for epoch in 0..config.idgen_epochs_per_iter {
        let mut inputs = Vec::with_capacity(examples.len());
        {
            let mut pb = PromptBuilder::new(&bundle.vocab, &bundle.registry, catalog, &snapshot, &bundle.alloc, max_src);
            for ex in examples {
                let template = sample_template(&bundle.templates, rng, config.use_user_id)?;
                inputs.push(soft_id_input(&mut pb, &bundle.vocab, template, ex, gen_src)?);
            }
        }
        let lengths: Vec<usize> = inputs.iter().map(|i| i.prompt.tokens.len()).collect();
        let (mut total, mut tokens) = (0.0, 0usize);
        for batch in batches(&lengths, config.batch_size, rng) {
            let mut grads = Gradients::zeros_like(&bundle.idgen);
            for &i in &batch {
                let (loss, g) = soft_id_loss_and_grad(&bundle.rec, &bundle.idgen, &inputs[i])?;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
                total += loss;
                tokens += inputs[i].target.len();
            }
            apply_update(&mut bundle.idgen, &grads, &mut bundle.idgen_opt, config.lr_idgen)?;
        }
        let s = EpochStats {
            mean_loss: total / examples.len().max(1) as f64,
            loss_per_token: total / tokens.max(1) as f64,
        };
        log::info!("idgen epoch {}: loss {:.4} ({:.4}/token)", epoch + 1, s.mean_loss, s.loss_per_token);
        stats.push(s);
    }
    Ok(stats)
}

/// Runs the configured alternation. Each iteration trains the generator (then
/// refreshes the registry) and then the recommender, evaluates on the
/// validation split, and writes `iter_<n>/` under `out` when given; the last
/// state is also written to `final/`.
pub fn alternate_train(
    data: &PreparedData,
    templates: TemplateBank,
    model: &ModelConfig,
    alloc: &AllocatorConfig,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<Bundle> {
    config.validate()?;
    alloc.validate()?;
    ModelConfig {
        vocab_size: 1,
        ..model.clone()
    }
    .validate()?;
    let catalog = Catalog::new(&data.items);
    let vocab = build_vocabulary(&data.items, &templates, config.vocab_min_freq, config.vocab_max_size);
    log::info!("vocabulary: {} tokens", vocab.size());
    let mut bundle = Bundle::init(vocab, templates, model, alloc.clone(), &catalog, config.seed, config.use_user_id)?;
    let examples = build_examples(&data.split.train);
    if examples.is_empty() {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    let valid = &data.split.valid;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for it in 1..=config.iterations {
        bundle.iteration = it;
        let idgen_stats = if config.train_idgen {
            let s = train_idgen_phase(&mut bundle, &catalog, &examples, config, &mut rng)?;
            let before = bundle.registry.content_hash();
            bundle.reallocate(&catalog)?;
            log::info!(
                "iteration {it}: registry {}",
                if before == bundle.registry.content_hash() { "unchanged" } else { "changed" }
            );
            s
        } else {
            Vec::new()
        };
        let rec_stats = if config.train_recommender {
            train_recommender_phase(&mut bundle, &catalog, &examples, config, &mut rng)?
        } else {
            Vec::new()
        };
        let report = validate_bundle(&bundle, &catalog, valid, &data.name)?;
        log::info!("iteration {it}: validation HR@10 {:.4}", report.hr10);
        if let Some(out) = out {
            let dir = out.join(format!("iter_{it}"));
            bundle.save(&dir)?;
            let metrics = json!({
                "iteration": it,
                "idgen_epochs": idgen_stats,
                "rec_epochs": rec_stats,
                "allocation": bundle.registry.stats(),
                "validation": report,
            });
            write_json(&dir.join("metrics.json"), &metrics)?;
        }
    }
    if let Some(out) = out {
        bundle.save(&out.join("final"))?;
    }
    Ok(bundle)
}

fn validate_bundle(bundle: &Bundle, catalog: &Catalog, cases: &[HeldOut], name: &str) -> Result<EvalReport> {
    if cases.is_empty() {
        return Ok(report_from_ranks(name, EvalMode::Validation, Vec::new()));
    }
    let opts = EvalOptions {
        use_user_id: bundle.use_user_id,
        ..EvalOptions::default()
    };
    let ranks = rank_heldout(bundle, catalog, &bundle.registry, cases, &opts)?;
    Ok(report_from_ranks(name, EvalMode::Validation, ranks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_cover_every_prefix() {
        let log = InteractionLog {
            user_key: "u".into(),
            item_keys: (0..25).map(|i| format!("i{i}")).collect(),
            timestamps: None,
        };
        let ex = build_examples(&[log]);
        assert_eq!(ex.len(), 24);
        assert_eq!(ex[0].history, vec!["i0"]);
        assert_eq!(ex[0].target, "i1");
        assert_eq!(ex[23].history.len(), HISTORY_CAP);
        assert_eq!(ex[23].history[0], "i4");
        assert_eq!(ex[23].target, "i24");
    }

    #[test]
    fn batches_partition_examples() {
        let lengths: Vec<usize> = (0..37).map(|i| (i * 7) % 11).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = batches(&lengths, 4, &mut rng);
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert!(b.iter().all(|x| x.len() <= 4));
        for batch in &b {
            assert!(batch.windows(2).all(|w| lengths[w[0]] <= lengths[w[1]]));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr_idgen: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
