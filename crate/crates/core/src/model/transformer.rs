//! Pre-LN encoder–decoder transformer with learned positional embeddings and
//! an output projection tied to the token embedding table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::autograd::{Adjoints, Graph, Var};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::tokenizer::{EOS, PAD};

/// Token fed to the decoder before the first output position.
pub const DECODER_START: u32 = PAD;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_src_len: usize,
    /// Output positions including the terminating EOS.
    pub max_tgt_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_src_len: 256,
            max_tgt_len: 20,
            vocab_size: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.layers,
            self.heads,
            self.ff_dim,
            self.max_src_len,
            self.max_tgt_len,
            self.vocab_size,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidInput(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AttnIdx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Layer norm (gain offset, bias) indices.
pub(crate) type LnIdx = (usize, usize);

#[derive(Clone, Debug)]
pub(crate) struct EncLayerIdx {
    pub ln1: LnIdx,
    pub attn: AttnIdx,
    pub ln2: LnIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayerIdx {
    pub ln1: LnIdx,
    pub self_attn: AttnIdx,
    pub ln2: LnIdx,
    pub cross: AttnIdx,
    pub ln3: LnIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub pos_src: usize,
    pub pos_tgt: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_ln: LnIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_ln: LnIdx,
    pub specs: Vec<TensorSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Zero-initialized (norm parameters and biases).
    pub zero_init: bool,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    d: usize,
    ff_dim: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, zero_init: bool) -> usize {
        self.specs.push(TensorSpec {
            name,
            rows,
            cols,
            zero_init,
        });
        self.specs.len() - 1
    }

    fn ln(&mut self, p: &str) -> LnIdx {
        (
            self.add(format!("{p}.gain"), 1, self.d, true),
            self.add(format!("{p}.bias"), 1, self.d, true),
        )
    }

    fn attn(&mut self, p: &str) -> AttnIdx {
        let d = self.d;
        AttnIdx {
            q: self.add(format!("{p}.wq"), d, d, false),
            k: self.add(format!("{p}.wk"), d, d, false),
            v: self.add(format!("{p}.wv"), d, d, false),
            o: self.add(format!("{p}.wo"), d, d, false),
        }
    }

    fn ff(&mut self, p: &str) -> FfIdx {
        let (d, f) = (self.d, self.ff_dim);
        FfIdx {
            w1: self.add(format!("{p}.w1"), d, f, false),
            b1: self.add(format!("{p}.b1"), 1, f, true),
            w2: self.add(format!("{p}.w2"), f, d, false),
            b2: self.add(format!("{p}.b2"), 1, d, true),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut b = LayoutBuilder {
            specs: Vec::new(),
            d,
            ff_dim: c.ff_dim,
        };
        let embed = b.add("embed".into(), c.vocab_size, d, false);
        let pos_src = b.add("pos_src".into(), c.max_src_len, d, false);
        let pos_tgt = b.add("pos_tgt".into(), c.max_tgt_len, d, false);
        let enc = (0..c.layers)
            .map(|l| EncLayerIdx {
                ln1: b.ln(&format!("enc.{l}.ln1")),
                attn: b.attn(&format!("enc.{l}.attn")),
                ln2: b.ln(&format!("enc.{l}.ln2")),
                ff: b.ff(&format!("enc.{l}.ff")),
            })
            .collect();
        let enc_ln = b.ln("enc.ln_f");
        let dec = (0..c.layers)
            .map(|l| DecLayerIdx {
                ln1: b.ln(&format!("dec.{l}.ln1")),
                self_attn: b.attn(&format!("dec.{l}.self")),
                ln2: b.ln(&format!("dec.{l}.ln2")),
                cross: b.attn(&format!("dec.{l}.cross")),
                ln3: b.ln(&format!("dec.{l}.ln3")),
                ff: b.ff(&format!("dec.{l}.ff")),
            })
            .collect();
        let dec_ln = b.ln("dec.ln_f");
        Layout {
            embed,
            pos_src,
            pos_tgt,
            enc,
            enc_ln,
            dec,
            dec_ln,
            specs: b.specs,
        }
    }
}

/// All trainable tensors of one model, in layout order.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Mat>,
    pub(crate) layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

/// Gradients congruent with a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            tensors: params
                .tensors
                .iter()
                .map(|t| Mat::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += s * y;
            }
        }
    }
}

impl ModelParams {
    /// Deterministic initialization: weights uniform in ±1/sqrt(d_model),
    /// norm offsets and biases zero.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = if s.zero_init {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                };
                Mat::from_vec(s.rows, s.cols, data)
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tensors,
            layout,
        })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Mat>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if tensors.len() != layout.specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&layout.specs) {
            if t.shape() != (s.rows, s.cols) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: expected {}x{}, got {}x{}",
                    s.name, s.rows, s.cols, t.rows, t.cols
                )));
            }
        }
        Ok(ModelParams {
            config,
            tensors,
            layout,
        })
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn embedding(&self) -> &Mat {
        &self.tensors[self.layout.embed]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Hex SHA-256 over every parameter's bit pattern.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn check_tokens(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::InvalidTokenId {
                id,
                size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_src_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_src_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.config.max_src_len,
            });
        }
        Ok(())
    }

    /// Validates a teacher-forcing target and returns the per-position
    /// targets for the loss. The final output slot always emits EOS, so it
    /// carries no loss.
    pub(crate) fn loss_targets(&self, target: &[u32]) -> Result<Vec<Option<usize>>> {
        let max = self.config.max_tgt_len;
        if target.len() > max {
            return Err(Error::SequenceTooLong {
                len: target.len(),
                max,
            });
        }
        if target.last() != Some(&EOS) {
            return Err(Error::InvalidInput("target must end with EOS".into()));
        }
        self.check_tokens(target)?;
        Ok(target
            .iter()
            .enumerate()
            .map(|(i, &t)| (i + 1 < max).then_some(t as usize))
            .collect())
    }
}

/// A model's parameters bound as leaves of a [`Graph`].
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn bind<'p>(g: &mut Graph<'p>, params: &'p ModelParams) -> Self {
        ParamVars {
            vars: params.tensors.iter().map(|t| g.leaf_ref(t)).collect(),
        }
    }

    /// Binds parameters as constants: usable in a forward pass, never
    /// differentiated.
    pub fn bind_frozen<'p>(g: &mut Graph<'p>, params: &'p ModelParams) -> Self {
        ParamVars {
            vars: params.tensors.iter().map(|t| g.constant_ref(t)).collect(),
        }
    }

    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    /// Collects this model's gradients from a reverse pass.
    pub fn gradients(&self, adj: &Adjoints, params: &ModelParams) -> Gradients {
        Gradients {
            tensors: self
                .vars
                .iter()
                .zip(&params.tensors)
                .map(|(v, t)| {
                    adj.get(*v)
                        .cloned()
                        .unwrap_or_else(|| Mat::zeros(t.rows, t.cols))
                })
                .collect(),
        }
    }
}

/// Differentiable forward pass of one model recorded on a graph.
pub struct Tape<'m> {
    pub params: &'m ModelParams,
    pub vars: ParamVars,
}

impl<'m> Tape<'m> {
    pub fn bind(g: &mut Graph<'m>, params: &'m ModelParams) -> Self {
        Tape {
            params,
            vars: ParamVars::bind(g, params),
        }
    }

    /// Like [`Tape::bind`] but with every parameter held constant.
    pub fn bind_frozen(g: &mut Graph<'m>, params: &'m ModelParams) -> Self {
        Tape {
            params,
            vars: ParamVars::bind_frozen(g, params),
        }
    }

    pub fn embedding(&self) -> Var {
        self.vars.var(self.params.layout.embed)
    }

    pub fn embed_tokens(&self, g: &mut Graph<'m>, ids: &[u32]) -> Result<Var> {
        self.params.check_tokens(ids)?;
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        Ok(g.gather_rows(self.embedding(), &ids))
    }

    /// Encoder over input embedding rows (`n × d_model`); positional
    /// embeddings are added here.
    pub fn encode(&self, g: &mut Graph<'m>, src_emb: Var) -> Result<Var> {
        let n = g.value(src_emb).rows;
        if g.value(src_emb).cols != self.params.config.d_model {
            return Err(Error::ShapeMismatch("input rows must have width d_model".into()));
        }
        self.params.check_src_len(n)?;
        let lay = &self.params.layout;
        let pos = g.slice_rows(self.vars.var(lay.pos_src), 0, n);
        let mut x = g.add(src_emb, pos);
        for layer in &lay.enc {
            let h = self.norm(g, x, layer.ln1);
            let a = self.attention(g, &layer.attn, h, h, false);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln2);
            let f = self.feed_forward(g, &layer.ff, h);
            x = g.add(x, f);
        }
        Ok(self.norm(g, x, lay.enc_ln))
    }

    /// Teacher-forced decoder logits, one row per position of `target`.
    pub fn decode(&self, g: &mut Graph<'m>, memory: Var, target: &[u32]) -> Result<Var> {
        let t = target.len();
        if t > self.params.config.max_tgt_len {
            return Err(Error::SequenceTooLong {
                len: t,
                max: self.params.config.max_tgt_len,
            });
        }
        let mut inputs = Vec::with_capacity(t);
        inputs.push(DECODER_START);
        inputs.extend_from_slice(&target[..t.saturating_sub(1)]);
        let lay = &self.params.layout;
        let emb = self.embed_tokens(g, &inputs)?;
        let pos = g.slice_rows(self.vars.var(lay.pos_tgt), 0, t);
        let mut x = g.add(emb, pos);
        for layer in &lay.dec {
            let h = self.norm(g, x, layer.ln1);
            let a = self.attention(g, &layer.self_attn, h, h, true);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln2);
            let c = self.attention(g, &layer.cross, h, memory, false);
            x = g.add(x, c);
            let h = self.norm(g, x, layer.ln3);
            let f = self.feed_forward(g, &layer.ff, h);
            x = g.add(x, f);
        }
        let x = self.norm(g, x, lay.dec_ln);
        Ok(g.matmul_t(x, self.embedding()))
    }

    /// Teacher-forced negative log-likelihood of `target` (ending in EOS).
    pub fn sequence_nll(&self, g: &mut Graph<'m>, memory: Var, target: &[u32]) -> Result<Var> {
        let targets = self.params.loss_targets(target)?;
        let logits = self.decode(g, memory, target)?;
        Ok(g.nll(logits, &targets))
    }

    fn norm(&self, g: &mut Graph<'m>, x: Var, (gain, bias): (usize, usize)) -> Var {
        g.layer_norm(x, self.vars.var(gain), self.vars.var(bias))
    }

    fn feed_forward(&self, g: &mut Graph<'m>, ff: &FfIdx, x: Var) -> Var {
        let h = g.matmul(x, self.vars.var(ff.w1));
        let h = g.add_row(h, self.vars.var(ff.b1));
        let h = g.gelu(h);
        let o = g.matmul(h, self.vars.var(ff.w2));
        g.add_row(o, self.vars.var(ff.b2))
    }

    fn attention(&self, g: &mut Graph<'m>, idx: &AttnIdx, xq: Var, xkv: Var, causal: bool) -> Var {
        let heads = self.params.config.heads;
        let dh = self.params.config.head_dim();
        let q = g.matmul(xq, self.vars.var(idx.q));
        let k = g.matmul(xkv, self.vars.var(idx.k));
        let v = g.matmul(xkv, self.vars.var(idx.v));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let p = g.softmax(s, causal);
            outs.push(g.matmul(p, vh));
        }
        let o = g.concat_cols(&outs);
        g.matmul(o, self.vars.var(idx.o))
    }
}

/// Probability-weighted average of embedding rows: `softmax(logits) · table`.
pub fn expected_embedding(logits: &[f64], table: &Mat) -> Vec<f64> {
    assert_eq!(logits.len(), table.rows, "logits must cover the vocabulary");
    let mut p = logits.to_vec();
    super::tensor::softmax_in_place(&mut p);
    let mut out = vec![0.0; table.cols];
    for (r, &w) in p.iter().enumerate() {
        super::tensor::axpy(&mut out, w, table.row(r));
    }
    out
}

/// Differentiable [`expected_embedding`] over every row of `logits`.
pub fn expected_embedding_tape(g: &mut Graph<'_>, logits: Var, table: Var) -> Var {
    let p = g.softmax(logits, false);
    g.matmul(p, table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            max_src_len: 16,
            max_tgt_len: 6,
            vocab_size: 7,
            seed,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(&tiny(1)).unwrap();
        let b = ModelParams::init(&tiny(1)).unwrap();
        let c = ModelParams::init(&tiny(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.tensors.iter().flat_map(|t| &t.data).all(|v| v.abs() <= bound));
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(0);
        c.heads = 3;
        assert!(ModelParams::init(&c).is_err());
        c.heads = 2;
        c.d_model = 0;
        assert!(ModelParams::init(&c).is_err());
    }

    #[test]
    fn expected_embedding_limits() {
        let table = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 4.0]]);
        let mean = expected_embedding(&[0.0, 0.0, 0.0], &table);
        assert!((mean[0] - 4.0 / 3.0).abs() < 1e-12 && (mean[1] - 2.0).abs() < 1e-12);
        let peaked = expected_embedding(&[0.0, 30.0, 0.0], &table);
        assert!((peaked[0] - 0.0).abs() < 1e-9 && (peaked[1] - 2.0).abs() < 1e-9);
    }
}
