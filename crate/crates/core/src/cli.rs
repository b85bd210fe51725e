//! Command-line front end. Each subcommand reads and writes plain files so
//! stages can be recombined.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::allocator::allocate_all;
use crate::config::RunConfig;
use crate::corpus::{build_fusion, drop_short_logs, filter_k_core, Dataset, FusionManifest, PreparedData};
use crate::error::{Error, Result};
use crate::eval::{evaluate, zero_shot_evaluate, EvalOptions};
use crate::model::{ModelConfig, ModelParams};
use crate::prompting::TemplateBank;
use crate::recommender::MaskMode;
use crate::synth::{generate, Pattern, SynthSpec};
use crate::tokenizer::Vocabulary;
use crate::training::{alternate_train, build_vocabulary, write_json, Bundle, Catalog};

#[derive(Debug, Parser)]
#[command(name = "textid", version, about = "Generative recommendation with learned textual item IDs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic raw dataset with a planted sequential pattern.
    Synth(SynthArgs),
    /// k-core filter and leave-one-out split a raw dataset.
    Ingest(IngestArgs),
    /// Merge several raw datasets listed in a JSON manifest.
    Fuse(FuseArgs),
    /// Generate textual IDs for every item of a prepared dataset.
    Allocate(AllocateArgs),
    /// Alternate training of the recommender and the ID generator.
    Train(TrainArgs),
    /// Leave-one-out test evaluation of a bundle.
    Eval(EvalArgs),
    /// Evaluate frozen models on an unseen prepared dataset.
    Zeroshot(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PatternArg {
    Cyclic,
    Periodic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cyclic")]
    pub pattern: PatternArg,
    /// Dataset name, also the key prefix.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    /// Personal set size for the periodic pattern.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory with items.jsonl and interactions.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Dataset name; defaults to the input directory name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Manifest JSON; relative source paths resolve against its directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the manifest's sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON or key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `section.field=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(RunConfig, TemplateBank)> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            config.set(o)?;
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        let templates = match &self.templates {
            Some(path) => TemplateBank::load(path)?,
            None => TemplateBank::default(),
        };
        Ok((config, templates))
    }
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this bundle's generator; otherwise a fresh one is initialized.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_user_id: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Rank by constrained beam search of this width instead of scoring the
    /// whole catalog.
    #[arg(long, conflicts_with = "exact")]
    pub beam: Option<usize>,
    /// Score every registered ID (the default).
    #[arg(long)]
    pub exact: bool,
    /// Keep raw model probabilities on valid tokens instead of renormalizing.
    #[arg(long)]
    pub unnormalized_mask: bool,
    #[arg(long)]
    pub no_user_id: bool,
}

impl EvalArgs {
    fn options(&self, bundle: &Bundle) -> EvalOptions {
        EvalOptions {
            use_user_id: bundle.use_user_id && !self.no_user_id,
            mask: if self.unnormalized_mask {
                MaskMode::Raw
            } else {
                MaskMode::Renormalized
            },
            beam: self.beam,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Allocate(a) => cmd_allocate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a, false),
        Command::Zeroshot(a) => cmd_eval(&a, true),
    }
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match a.pattern {
        PatternArg::Cyclic => SynthSpec::cyclic(a.seed),
        PatternArg::Periodic => SynthSpec::periodic("periodic", a.seed),
    };
    if let Some(name) = &a.name {
        spec.name = name.clone();
    }
    spec.users = a.users.unwrap_or(spec.users);
    spec.items = a.items.unwrap_or(spec.items);
    spec.period = a.period.unwrap_or(spec.period);
    spec.min_len = a.min_len.unwrap_or(spec.min_len);
    spec.max_len = a.max_len.unwrap_or(spec.max_len);
    let data = generate(&spec)?;
    data.write_dir(&a.out)?;
    let kind = if spec.pattern == Pattern::Cyclic { "cyclic" } else { "periodic" };
    println!("wrote {kind} dataset: {} users, {} items -> {}", data.logs.len(), data.items.len(), a.out.display());
    Ok(())
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let name = a.name.clone().unwrap_or_else(|| dir_name(&a.data));
    let raw = Dataset::load_dir(&a.data, &name)?;
    let filtered = drop_short_logs(&filter_k_core(&raw, a.k)?);
    let prepared = PreparedData::from_dataset(&filtered)?;
    prepared.write_dir(&a.out)?;
    println!(
        "{name}: {} users, {} items after {}-core filtering -> {}",
        prepared.split.test.len(),
        prepared.items.len(),
        a.k,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    let mut manifest = FusionManifest::load(&a.data)?;
    if let Some(seed) = a.seed {
        manifest.seed = seed;
    }
    let base = a.data.parent().unwrap_or(Path::new("."));
    let spec = manifest.load_sources(base)?;
    let fused = build_fusion(&spec)?;
    fused.write_dir(&a.out)?;
    for src in &spec.sources {
        let prefix = format!("{}/", src.name);
        let users = fused.logs.iter().filter(|l| l.user_key.starts_with(&prefix)).count();
        println!("{}: {users} of {} users", src.name, src.logs.len());
    }
    println!("fused {} users, {} items -> {}", fused.logs.len(), fused.items.len(), a.out.display());
    Ok(())
}

pub fn cmd_allocate(a: &AllocateArgs) -> Result<()> {
    let data = PreparedData::load_dir(&a.data)?;
    let catalog = Catalog::new(&data.items);
    let (registry, vocab) = match &a.bundle {
        Some(dir) => {
            let bundle = Bundle::load(dir)?;
            let registry = allocate_all(&bundle.idgen, &bundle.vocab, &catalog.items, &bundle.alloc)?;
            (registry, bundle.vocab)
        }
        None => {
            let (config, templates) = a.config.resolve()?;
            let vocab = build_vocabulary(&data.items, &templates, config.train.vocab_min_freq, config.train.vocab_max_size);
            let idgen = ModelParams::init(&ModelConfig {
                vocab_size: vocab.size(),
                seed: config.train.seed.wrapping_add(1),
                ..config.model.clone()
            })?;
            let registry = allocate_all(&idgen, &vocab, &catalog.items, &config.allocator)?;
            (registry, vocab)
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    registry.save(&a.out.join("ids.tsv"))?;
    vocab.save(&a.out.join("vocab.tsv"))?;
    let stats = registry.stats();
    write_json(&a.out.join("allocation.json"), &stats)?;
    println!(
        "allocated {} ids ({} escalated, {} fallback) -> {}",
        stats.items,
        stats.lambda_escalated + stats.length_extended,
        stats.fallback_items.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = PreparedData::load_dir(&a.data)?;
    let (mut config, templates) = a.config.resolve()?;
    if a.no_user_id {
        config.train.use_user_id = false;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("config.json"), &config)?;
    let bundle = alternate_train(&data, templates, &config.model, &config.allocator, &config.train, Some(&a.out))?;
    println!(
        "trained {} iterations; final bundle -> {}",
        bundle.iteration,
        a.out.join("final").display()
    );
    Ok(())
}

fn vocab_hash_of(dir: &Path) -> Result<Option<String>> {
    let path = dir.join("vocab.tsv");
    if path.exists() {
        Ok(Some(Vocabulary::load(&path)?.hash()))
    } else {
        Ok(None)
    }
}

pub fn cmd_eval(a: &EvalArgs, zero_shot: bool) -> Result<()> {
    let bundle = Bundle::load(&a.bundle)?;
    let data = PreparedData::load_dir(&a.data)?;
    let opts = a.options(&bundle);
    let report = if zero_shot {
        let hash = vocab_hash_of(&a.data)?;
        zero_shot_evaluate(&bundle, &data, hash.as_deref(), &opts)?
    } else {
        evaluate(&bundle, &data, &opts)?
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    report.save(&a.out.join("metrics.json"))?;
    let summary = json!({
        "users": report.users,
        "hr@5": report.hr5,
        "hr@10": report.hr10,
        "ndcg@5": report.ndcg5,
        "ndcg@10": report.ndcg10,
    });
    println!("{summary}");
    Ok(())
}
