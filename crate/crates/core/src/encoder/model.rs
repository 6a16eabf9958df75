//! A compact pre-norm transformer encoder–decoder with a tied output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::vocab::START_ID;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 128,
            max_len: 128,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.n_layers == 0 {
            return bad("model dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_len < 8 {
            return bad("max_len must be at least 8");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub w2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub ln_attn: NormIdx,
    pub attn: AttnIdx,
    pub ln_ffn: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub ln_self: NormIdx,
    pub self_attn: AttnIdx,
    pub ln_cross: NormIdx,
    pub cross_attn: AttnIdx,
    pub ln_ffn: NormIdx,
    pub ffn: FfnIdx,
}

/// Where each named tensor lives in [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_embedding: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub encoder_norm: NormIdx,
    pub decoder: Vec<DecoderLayerIdx>,
    pub decoder_norm: NormIdx,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{prefix}.gain"), (1, d), Init::Ones),
            bias: self.push(format!("{prefix}.bias"), (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let std = 1.0 / (d as f64).sqrt();
        let mut w = |n: &str| self.push(format!("{prefix}.{n}"), (d, d), Init::Normal(std));
        AttnIdx {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            w1: self.push(format!("{prefix}.w1"), (d, f), Init::Normal(1.0 / (d as f64).sqrt())),
            w2: self.push(format!("{prefix}.w2"), (f, d), Init::Normal(1.0 / (f as f64).sqrt())),
        }
    }
}

fn build_layout(cfg: &EncoderConfig, vocab_size: usize) -> (Layout, Vec<Init>) {
    let d = cfg.d_model;
    let mut b = LayoutBuilder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let token_embedding = b.push("token_embedding".into(), (vocab_size, d), Init::Normal(1.0));
    let encoder = (0..cfg.n_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncoderLayerIdx {
                ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                attn: b.attn(&format!("{p}.attn"), d),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ffn_dim),
            }
        })
        .collect();
    let encoder_norm = b.norm("encoder.ln_final", d);
    let decoder = (0..cfg.n_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            DecoderLayerIdx {
                ln_self: b.norm(&format!("{p}.ln_self"), d),
                self_attn: b.attn(&format!("{p}.self_attn"), d),
                ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ffn_dim),
            }
        })
        .collect();
    let decoder_norm = b.norm("decoder.ln_final", d);
    let layout = Layout {
        token_embedding,
        encoder,
        encoder_norm,
        decoder,
        decoder_norm,
        names: b.names,
        shapes: b.shapes,
    };
    (layout, b.inits)
}

/// Fixed sinusoidal position table, `max_len × d_model`.
fn positional_table(max_len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(max_len, d);
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let freq = (10_000f64).powf(-((2 * i) as f64) / d as f64);
            let angle = pos as f64 * freq;
            t.data[pos * d + 2 * i] = angle.sin();
            t.data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    t
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller; u1 in (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// All model weights plus the derived layout and position table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub layout: Layout,
    pub tensors: Vec<Tensor>,
    positions: Tensor,
}

impl ModelParams {
    /// Random initialization seeded by `config.seed`.
    pub fn init(config: EncoderConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let (layout, inits) = build_layout(&config, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = layout
            .shapes
            .iter()
            .zip(&inits)
            .map(|(&(r, c), init)| match *init {
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Zeros => Tensor::zeros(r, c),
                Init::Normal(std) => {
                    Tensor::from_vec(r, c, (0..r * c).map(|_| std * standard_normal(&mut rng)).collect())
                }
            })
            .collect();
        Ok(Self {
            positions: positional_table(config.max_len, config.d_model),
            config,
            vocab_size,
            layout,
            tensors,
        })
    }

    /// Reassembles parameters from stored tensors, checking every shape.
    pub fn from_tensors(config: EncoderConfig, vocab_size: usize, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, _) = build_layout(&config, vocab_size);
        if tensors.len() != layout.shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                layout.shapes.len(),
                tensors.len()
            )));
        }
        for ((t, &shape), name) in tensors.iter().zip(&layout.shapes).zip(&layout.names) {
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            positions: positional_table(config.max_len, config.d_model),
            config,
            vocab_size,
            layout,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    fn positions(&self, len: usize) -> Tensor {
        Tensor::from_vec(
            len,
            self.config.d_model,
            self.positions.data[..len * self.config.d_model].to_vec(),
        )
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Empty(what.to_string()));
        }
        if len > self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "{what} has {len} tokens, max_len is {}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= self.vocab_size) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "token id {i} outside vocabulary of {}",
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn embed(&self, g: &mut Graph<'_>, ids: &[u32]) -> NodeId {
        let tok = g.gather(self.layout.token_embedding, ids);
        let pos = g.constant(self.positions(ids.len()));
        g.add(tok, pos)
    }

    fn norm(&self, g: &mut Graph<'_>, x: NodeId, idx: NormIdx) -> NodeId {
        let (gain, bias) = (g.param(idx.gain), g.param(idx.bias));
        g.layer_norm(x, gain, bias)
    }

    fn attention(
        &self,
        g: &mut Graph<'_>,
        query: NodeId,
        memory: NodeId,
        idx: AttnIdx,
        causal: bool,
    ) -> NodeId {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (wq, wk, wv, wo) = (g.param(idx.wq), g.param(idx.wk), g.param(idx.wv), g.param(idx.wo));
        let q = g.matmul(query, wq);
        let k = g.matmul(memory, wk);
        let v = g.matmul(memory, wv);
        let (lq, lk) = (g.value(q).rows, g.value(k).rows);
        let heads: Vec<NodeId> = (0..self.config.n_heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let scores = g.matmul_bt(qh, kh);
                let mut scores = g.scale(scores, scale);
                if causal && lk > 1 {
                    let mut mask = Tensor::zeros(lq, lk);
                    for i in 0..lq {
                        for j in i + 1..lk {
                            mask.data[i * lk + j] = f64::NEG_INFINITY;
                        }
                    }
                    scores = g.add_mask(scores, mask);
                }
                let attn = g.softmax(scores);
                g.matmul(attn, vh)
            })
            .collect();
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        g.matmul(cat, wo)
    }

    fn feed_forward(&self, g: &mut Graph<'_>, x: NodeId, idx: FfnIdx) -> NodeId {
        let (w1, w2) = (g.param(idx.w1), g.param(idx.w2));
        let h = g.matmul(x, w1);
        let h = g.gelu(h);
        g.matmul(h, w2)
    }

    /// Encoder output, `len × d_model`.
    pub fn encode_graph(&self, g: &mut Graph<'_>, ids: &[u32]) -> NodeId {
        let mut x = self.embed(g, ids);
        for layer in &self.layout.encoder {
            let h = self.norm(g, x, layer.ln_attn);
            let a = self.attention(g, h, h, layer.attn, false);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln_ffn);
            let f = self.feed_forward(g, h, layer.ffn);
            x = g.add(x, f);
        }
        self.norm(g, x, self.layout.encoder_norm)
    }

    /// Decoder hidden states for `decoder_ids` attending to `memory`.
    pub fn decode_graph(&self, g: &mut Graph<'_>, memory: NodeId, decoder_ids: &[u32]) -> NodeId {
        let mut y = self.embed(g, decoder_ids);
        for layer in &self.layout.decoder {
            let h = self.norm(g, y, layer.ln_self);
            let a = self.attention(g, h, h, layer.self_attn, true);
            y = g.add(y, a);
            let h = self.norm(g, y, layer.ln_cross);
            let c = self.attention(g, h, memory, layer.cross_attn, false);
            y = g.add(y, c);
            let h = self.norm(g, y, layer.ln_ffn);
            let f = self.feed_forward(g, h, layer.ffn);
            y = g.add(y, f);
        }
        self.norm(g, y, self.layout.decoder_norm)
    }

    /// Output logits through the tied embedding, scaled by `1/sqrt(d_model)`.
    pub fn logits_graph(&self, g: &mut Graph<'_>, hidden: NodeId) -> NodeId {
        let emb = g.param(self.layout.token_embedding);
        let logits = g.matmul_bt(hidden, emb);
        g.scale(logits, 1.0 / (self.config.d_model as f64).sqrt())
    }

    /// The `1 × d_model` decoder state at position 0 after feeding the start token.
    pub fn representation_graph(&self, g: &mut Graph<'_>, ids: &[u32]) -> Result<NodeId> {
        self.check_len("input", ids.len())?;
        self.check_ids(ids)?;
        let memory = self.encode_graph(g, ids);
        Ok(self.decode_graph(g, memory, &[START_ID]))
    }

    /// Column of teacher-forced log-probabilities of `target`, one per position.
    pub fn target_logprob_graph(&self, g: &mut Graph<'_>, source: &[u32], target: &[u32]) -> Result<NodeId> {
        let logits = self.teacher_forced_logits(g, source, target)?;
        Ok(g.log_softmax_pick(logits, target))
    }

    fn teacher_forced_logits(&self, g: &mut Graph<'_>, source: &[u32], target: &[u32]) -> Result<NodeId> {
        self.check_len("source", source.len())?;
        self.check_len("target", target.len())?;
        self.check_ids(source)?;
        self.check_ids(target)?;
        let memory = self.encode_graph(g, source);
        let mut dec_in = Vec::with_capacity(target.len());
        dec_in.push(START_ID);
        dec_in.extend_from_slice(&target[..target.len() - 1]);
        let hidden = self.decode_graph(g, memory, &dec_in);
        Ok(self.logits_graph(g, hidden))
    }

    /// Full per-position log-softmax over the vocabulary (`len(target) × V`).
    pub fn teacher_forced_log_softmax(&self, source: &[u32], target: &[u32]) -> Result<Tensor> {
        let mut g = Graph::new(&self.tensors);
        let logits = self.teacher_forced_logits(&mut g, source, target)?;
        let mut out = g.value(logits).clone();
        for r in 0..out.rows {
            let lse = super::tensor::log_sum_exp(out.row(r));
            for v in out.row_mut(r) {
                *v -= lse;
            }
        }
        Ok(out)
    }

    /// Greedy argmax decoding for `steps` positions.
    pub fn greedy_decode(&self, source: &[u32], steps: usize) -> Result<Vec<u32>> {
        self.check_len("source", source.len())?;
        self.check_ids(source)?;
        let steps = steps.min(self.config.max_len);
        let mut g = Graph::new(&self.tensors);
        let memory = self.encode_graph(&mut g, source);
        let memory = g.value(memory).clone();
        let mut dec_in = vec![START_ID];
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut g = Graph::new(&self.tensors);
            let mem = g.constant(memory.clone());
            let hidden = self.decode_graph(&mut g, mem, &dec_in);
            let last = g.slice_rows(hidden, dec_in.len() - 1, 1);
            let logits = self.logits_graph(&mut g, last);
            let row = g.value(logits).row(0);
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0 as u32;
            out.push(best);
            dec_in.push(best);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        let cfg = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            max_len: 16,
            seed: 3,
        };
        ModelParams::init(cfg, 120).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg = EncoderConfig {
            max_len: 4,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(small(), small());
        let mut other = small().config;
        other.seed = 4;
        assert_ne!(ModelParams::init(other, 120).unwrap().tensors, small().tensors);
    }

    #[test]
    fn layout_names_are_unique() {
        let m = ModelParams::init(EncoderConfig::default(), 200).unwrap();
        let mut names = m.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), m.names().len());
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let m = small();
        let lp = m.teacher_forced_log_softmax(&[110, 111, 3], &[4, 105, 5]).unwrap();
        for r in 0..lp.rows {
            let total: f64 = lp.row(r).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = small();
        let mut g = Graph::new(&m.tensors);
        assert!(matches!(m.representation_graph(&mut g, &[]), Err(Error::Empty(_))));
        assert!(m.representation_graph(&mut g, &[500]).is_err());
        assert!(m.representation_graph(&mut g, &[5; 17]).is_err());
        assert!(m.target_logprob_graph(&mut g, &[5], &[]).is_err());
    }
}
