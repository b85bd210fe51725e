//! Gradient-free forward pass with cached cross-attention projections and
//! incremental decoding. Numerically equivalent to the tape forward pass.

use super::autograd::{gelu, layer_norm_row};
use super::tensor::{axpy, dot, log_softmax, softmax_in_place, Mat};
use super::transformer::{AttnIdx, FfIdx, LnIdx, ModelParams, DECODER_START};
use crate::error::{Error, Result};

/// Encoder output plus per-decoder-layer cross-attention keys and values.
#[derive(Clone, Debug)]
pub struct EncoderState {
    /// `src_len × d_model` context vectors.
    pub context: Mat,
    cross_kv: Vec<(Mat, Mat)>,
}

impl EncoderState {
    pub fn len(&self) -> usize {
        self.context.rows
    }

    pub fn is_empty(&self) -> bool {
        self.context.rows == 0
    }
}

/// Decoder positioned after some prefix, holding the next-token logits.
#[derive(Clone)]
pub struct DecoderState<'a> {
    model: &'a ModelParams,
    enc: &'a EncoderState,
    /// Per layer: self-attention keys and values, one row per position.
    cache: Vec<(Vec<f64>, Vec<f64>)>,
    /// Number of decoder input positions consumed (start token included).
    positions: usize,
    logits: Vec<f64>,
}

impl ModelParams {
    pub fn encode(&self, src: &[u32]) -> Result<EncoderState> {
        self.check_src_len(src.len())?;
        self.check_tokens(src)?;
        let emb = self.embedding();
        let mut rows = Mat::zeros(src.len(), self.config.d_model);
        for (r, &t) in src.iter().enumerate() {
            rows.row_mut(r).copy_from_slice(emb.row(t as usize));
        }
        self.encode_embeddings(&rows)
    }

    /// Encoder over explicit input rows, bypassing the token lookup.
    pub fn encode_embeddings(&self, rows: &Mat) -> Result<EncoderState> {
        self.check_src_len(rows.rows)?;
        if rows.cols != self.config.d_model {
            return Err(Error::ShapeMismatch("input rows must have width d_model".into()));
        }
        let lay = &self.layout;
        let pos = &self.tensors[lay.pos_src];
        let mut x = rows.clone();
        for r in 0..x.rows {
            for (a, b) in x.row_mut(r).iter_mut().zip(pos.row(r)) {
                *a += b;
            }
        }
        for layer in &lay.enc {
            let h = self.norm_mat(&x, layer.ln1);
            let a = self.full_attention(&layer.attn, &h, &h);
            x.add_assign(&a);
            let h = self.norm_mat(&x, layer.ln2);
            let f = self.feed_forward(&layer.ff, &h);
            x.add_assign(&f);
        }
        let context = self.norm_mat(&x, lay.enc_ln);
        let cross_kv = lay
            .dec
            .iter()
            .map(|l| {
                (
                    context.matmul(&self.tensors[l.cross.k]),
                    context.matmul(&self.tensors[l.cross.v]),
                )
            })
            .collect();
        Ok(EncoderState { context, cross_kv })
    }

    /// Decoder positioned at the first output slot.
    pub fn start_decoder<'a>(&'a self, enc: &'a EncoderState) -> DecoderState<'a> {
        let mut st = DecoderState {
            model: self,
            enc,
            cache: vec![(Vec::new(), Vec::new()); self.layout.dec.len()],
            positions: 0,
            logits: Vec::new(),
        };
        st.step(DECODER_START);
        st
    }

    /// Next-token logits after `prefix`.
    pub fn decoder_logits(&self, enc: &EncoderState, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.len() >= self.config.max_tgt_len {
            return Err(Error::SequenceTooLong {
                len: prefix.len() + 1,
                max: self.config.max_tgt_len,
            });
        }
        self.check_tokens(prefix)?;
        let mut st = self.start_decoder(enc);
        for &t in prefix {
            st.step(t);
        }
        Ok(st.logits)
    }

    /// Teacher-forced negative log-likelihood of `target` (ending in EOS).
    pub fn sequence_nll(&self, enc: &EncoderState, target: &[u32]) -> Result<f64> {
        let targets = self.loss_targets(target)?;
        let mut st = self.start_decoder(enc);
        let mut nll = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                nll -= log_softmax(st.logits())[*t];
            }
            if i + 1 < target.len() {
                st.step(target[i]);
            }
        }
        Ok(nll)
    }

    fn norm_row(&self, x: &[f64], (gain, bias): LnIdx, out: &mut [f64]) {
        layer_norm_row(x, out);
        let (g, b) = (&self.tensors[gain].data, &self.tensors[bias].data);
        for c in 0..out.len() {
            out[c] = out[c] * (1.0 + g[c]) + b[c];
        }
    }

    fn norm_mat(&self, x: &Mat, ln: LnIdx) -> Mat {
        let mut out = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            self.norm_row(x.row(r), ln, out.row_mut(r));
        }
        out
    }

    fn feed_forward(&self, ff: &FfIdx, x: &Mat) -> Mat {
        let mut h = x.matmul(&self.tensors[ff.w1]);
        let b1 = &self.tensors[ff.b1].data;
        for r in 0..h.rows {
            for (v, b) in h.row_mut(r).iter_mut().zip(b1) {
                *v = gelu(*v + b);
            }
        }
        let mut o = h.matmul(&self.tensors[ff.w2]);
        let b2 = &self.tensors[ff.b2].data;
        for r in 0..o.rows {
            for (v, b) in o.row_mut(r).iter_mut().zip(b2) {
                *v += b;
            }
        }
        o
    }

    /// Unmasked multi-head attention of `xq` over `xkv`.
    fn full_attention(&self, idx: &AttnIdx, xq: &Mat, xkv: &Mat) -> Mat {
        let q = xq.matmul(&self.tensors[idx.q]);
        let k = xkv.matmul(&self.tensors[idx.k]);
        let v = xkv.matmul(&self.tensors[idx.v]);
        let mut o = Mat::zeros(q.rows, q.cols);
        for r in 0..q.rows {
            self.attend(q.row(r), &k.data, &v.data, k.rows, o.row_mut(r));
        }
        o.matmul(&self.tensors[idx.o])
    }

    /// Multi-head attention of a single query over `n` key/value rows.
    fn attend(&self, q: &[f64], k: &[f64], v: &[f64], n: usize, out: &mut [f64]) {
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut p = vec![0.0; n];
        out.iter_mut().for_each(|x| *x = 0.0);
        for h in 0..self.config.heads {
            let cols = h * dh..(h + 1) * dh;
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = dot(&q[cols.clone()], &k[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
            }
            softmax_in_place(&mut p);
            for (j, &pj) in p.iter().enumerate() {
                axpy(
                    &mut out[cols.clone()],
                    pj,
                    &v[j * d + h * dh..j * d + (h + 1) * dh],
                );
            }
        }
    }
}

impl<'a> DecoderState<'a> {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Output tokens consumed so far.
    pub fn prefix_len(&self) -> usize {
        self.positions - 1
    }

    /// Whether another token may be fed.
    pub fn can_push(&self) -> bool {
        self.positions < self.model.config.max_tgt_len
    }

    /// New state with `token` appended to the prefix.
    pub fn push(&self, token: u32) -> DecoderState<'a> {
        let mut next = self.clone();
        next.step(token);
        next
    }

    fn step(&mut self, token: u32) {
        let m = self.model;
        let d = m.config.d_model;
        let pos = self.positions;
        assert!(pos < m.config.max_tgt_len, "decoder position out of range");
        let lay = &m.layout;
        let mut x: Vec<f64> = m.embedding().row(token as usize).to_vec();
        for (a, b) in x.iter_mut().zip(m.tensors[lay.pos_tgt].row(pos)) {
            *a += b;
        }
        let mut h = vec![0.0; d];
        let mut att = vec![0.0; d];
        for (l, layer) in lay.dec.iter().enumerate() {
            m.norm_row(&x, layer.ln1, &mut h);
            let hm = Mat::from_vec(1, d, h.clone());
            let q = hm.matmul(&m.tensors[layer.self_attn.q]);
            let (kc, vc) = &mut self.cache[l];
            kc.extend(hm.matmul(&m.tensors[layer.self_attn.k]).data);
            vc.extend(hm.matmul(&m.tensors[layer.self_attn.v]).data);
            m.attend(&q.data, kc, vc, pos + 1, &mut att);
            let o = Mat::from_vec(1, d, att.clone()).matmul(&m.tensors[layer.self_attn.o]);
            x.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);

            m.norm_row(&x, layer.ln2, &mut h);
            let q = Mat::from_vec(1, d, h.clone()).matmul(&m.tensors[layer.cross.q]);
            let (ck, cv) = &self.enc.cross_kv[l];
            m.attend(&q.data, &ck.data, &cv.data, ck.rows, &mut att);
            let o = Mat::from_vec(1, d, att.clone()).matmul(&m.tensors[layer.cross.o]);
            x.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);

            m.norm_row(&x, layer.ln3, &mut h);
            let f = m.feed_forward(&layer.ff, &Mat::from_vec(1, d, h.clone()));
            x.iter_mut().zip(&f.data).for_each(|(a, b)| *a += b);
        }
        m.norm_row(&x.clone(), lay.dec_ln, &mut x);
        let emb = m.embedding();
        self.logits = (0..emb.rows).map(|r| dot(emb.row(r), &x)).collect();
        self.positions += 1;
    }
}
