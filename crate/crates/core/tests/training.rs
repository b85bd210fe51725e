use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textid_core::allocator::AllocatorConfig;
use textid_core::corpus::PreparedData;
use textid_core::model::ModelConfig;
use textid_core::prompting::{render_prompt, Template, TemplateBank};
use textid_core::synth::{generate, SynthSpec};
use textid_core::training::{
    alternate_train, build_examples, build_vocabulary, rec_loss_and_grad, train_idgen_phase,
    train_recommender_phase, Bundle, Catalog, Example, TrainConfig,
};
use textid_core::Error;

fn small_model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        layers: 1,
        heads: 2,
        ff_dim: 32,
        max_src_len: 128,
        max_tgt_len: 6,
        ..ModelConfig::default()
    }
}

fn small_alloc() -> AllocatorConfig {
    AllocatorConfig {
        groups: 4,
        beams_per_group: 2,
        lambda_max: 3.0,
        length_ranges: vec![(1, 4), (4, 6)],
        ..AllocatorConfig::default()
    }
}

fn small_data() -> PreparedData {
    let spec = SynthSpec {
        users: 8,
        items: 6,
        min_len: 4,
        max_len: 5,
        ..SynthSpec::cyclic(3)
    };
    PreparedData::from_dataset(&generate(&spec).unwrap()).unwrap()
}

struct Setup {
    bundle: Bundle,
    catalog: Catalog,
    examples: Vec<Example>,
}

fn setup(templates: TemplateBank, use_user_id: bool) -> Setup {
    let data = small_data();
    let catalog = Catalog::new(&data.items);
    let vocab = build_vocabulary(&data.items, &templates, 1, 10_000);
    let bundle = Bundle::init(vocab, templates, &small_model(), small_alloc(), &catalog, 7, use_user_id).unwrap();
    Setup {
        bundle,
        catalog,
        examples: build_examples(&data.split.train),
    }
}

fn single_template() -> TemplateBank {
    TemplateBank::new(vec![Template::parse(1, "history {item_ids} ; next").unwrap()]).unwrap()
}

#[test]
fn single_example_overfits() {
    let mut s = setup(single_template(), false);
    let example = s.examples[0].clone();
    let config = TrainConfig {
        rec_epochs_per_iter: 200,
        lr_rec: 1e-2,
        batch_size: 1,
        use_user_id: false,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stats = train_recommender_phase(&mut s.bundle, &s.catalog, std::slice::from_ref(&example), &config, &mut rng).unwrap();
    assert_eq!(stats.len(), 200);

    let ids: Vec<_> = example.history.iter().map(|k| s.bundle.registry.get(k).unwrap()).collect();
    let template = &s.bundle.templates.templates()[0];
    let prompt = render_prompt(&s.bundle.vocab, template, None, &ids).unwrap();
    let target = s.bundle.registry.get(&example.target).unwrap().with_eos();
    let (loss, _) = rec_loss_and_grad(&s.bundle.rec, &prompt.tokens, &target).unwrap();
    let per_token = loss / target.len() as f64;
    assert!(per_token < 0.01, "loss per token {per_token}");
    assert!(stats[199].loss_per_token < stats[0].loss_per_token);
}

#[test]
fn recommender_phase_freezes_the_generator() {
    let mut s = setup(TemplateBank::default(), true);
    let idgen = s.bundle.idgen.clone();
    let rec = s.bundle.rec.clone();
    let registry = s.bundle.registry.content_hash();
    let config = TrainConfig {
        rec_epochs_per_iter: 1,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    train_recommender_phase(&mut s.bundle, &s.catalog, &s.examples, &config, &mut rng).unwrap();
    assert_eq!(s.bundle.idgen, idgen);
    assert_eq!(s.bundle.registry.content_hash(), registry);
    assert_ne!(s.bundle.rec, rec);
}

#[test]
fn generator_phase_freezes_the_recommender() {
    let mut s = setup(TemplateBank::default(), true);
    let idgen = s.bundle.idgen.clone();
    let rec = s.bundle.rec.clone();
    let before: Vec<String> = s.bundle.registry.entries().iter().map(|e| e.id.text.clone()).collect();
    let hash = s.bundle.registry.content_hash();
    let config = TrainConfig {
        lr_idgen: 1e-2,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    train_idgen_phase(&mut s.bundle, &s.catalog, &s.examples, &config, &mut rng).unwrap();
    assert_eq!(s.bundle.rec, rec);
    assert_ne!(s.bundle.idgen, idgen);
    assert!(matches!(s.bundle.check_fresh(), Err(Error::StaleRegistry { .. })));

    s.bundle.reallocate(&s.catalog).unwrap();
    s.bundle.check_fresh().unwrap();
    let after: Vec<String> = s.bundle.registry.entries().iter().map(|e| e.id.text.clone()).collect();
    assert_eq!(before != after, hash != s.bundle.registry.content_hash());
}

#[test]
fn phases_are_deterministic() {
    let base = setup(TemplateBank::default(), true);
    let config = TrainConfig {
        rec_epochs_per_iter: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut b = base.bundle.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = train_idgen_phase(&mut b, &base.catalog, &base.examples, &config, &mut rng).unwrap();
        b.reallocate(&base.catalog).unwrap();
        let r = train_recommender_phase(&mut b, &base.catalog, &base.examples, &config, &mut rng).unwrap();
        (b.rec, b.idgen, b.registry.content_hash(), g, r)
    };
    assert_eq!(run(), run());
}

#[test]
fn alternate_training_saves_each_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let config = TrainConfig {
        rec_epochs_per_iter: 1,
        seed: 4,
        ..TrainConfig::default()
    };
    let bundle = alternate_train(&data, TemplateBank::default(), &small_model(), &small_alloc(), &config, Some(dir.path())).unwrap();
    assert_eq!(bundle.iteration, 3);
    for sub in ["iter_1", "iter_2", "iter_3", "final"] {
        let d = dir.path().join(sub);
        assert!(d.join("rec.ckpt").exists() && d.join("ids.tsv").exists(), "missing {sub}");
    }
    assert!(!dir.path().join("iter_4").exists());
    let loaded = Bundle::load(&dir.path().join("final")).unwrap();
    assert_eq!(loaded.rec, bundle.rec);
    assert_eq!(loaded.registry.content_hash(), bundle.registry.content_hash());
}

#[test]
fn recommender_only_ablation_keeps_initial_ids() {
    let data = small_data();
    let config = TrainConfig {
        iterations: 2,
        rec_epochs_per_iter: 1,
        train_idgen: false,
        seed: 4,
        ..TrainConfig::default()
    };
    let templates = TemplateBank::default();
    let trained = alternate_train(&data, templates.clone(), &small_model(), &small_alloc(), &config, None).unwrap();
    let catalog = Catalog::new(&data.items);
    let vocab = build_vocabulary(&data.items, &templates, 1, config.vocab_max_size);
    let fresh = Bundle::init(vocab, templates, &small_model(), small_alloc(), &catalog, 4, true).unwrap();
    assert_eq!(trained.idgen, fresh.idgen);
    assert_eq!(trained.registry.content_hash(), fresh.registry.content_hash());
}
