use lvp_tensor::{Float, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DynamicsConfig, TokenSequence};
use crate::nn::{LayerNorm, Linear};
use crate::params::{Bound, ParamId, ParamSet};
use crate::{Error, Result};

const EMBED_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok: ParamId,
    pub frame: ParamId,
    pub spatial: ParamId,
    pub action: Option<Linear>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub head: Linear,
}

/// Decoder-only transformer over code tokens: pre-norm blocks of causal
/// multi-head attention and a 4×-wide GELU MLP.
///
/// Token input = code embedding + frame embedding + spatial embedding
/// (+ the linearly projected action of the token's frame).
#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: DynamicsConfig,
    pub params: ParamSet<f32>,
    pub(crate) layout: Layout,
}

impl Transformer {
    pub fn new(config: DynamicsConfig, seed: u64) -> Result<Transformer> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = config.width;
        let tok = ps.add("tok_emb", Tensor::randn(&[config.vocab, d], EMBED_STD, &mut rng));
        let frame = ps.add("frame_emb", Tensor::randn(&[config.frames, d], EMBED_STD, &mut rng));
        let spatial = ps.add(
            "spatial_emb",
            Tensor::randn(&[config.tokens_per_frame(), d], EMBED_STD, &mut rng),
        );
        let action = (config.action_dim > 0)
            .then(|| Linear::new(&mut ps, "action", config.action_dim, d, EMBED_STD, &mut rng));
        let std_in = 1.0 / (d as f64).sqrt();
        let std_res = std_in / (2.0 * config.layers.max(1) as f64).sqrt();
        let blocks = (0..config.layers)
            .map(|i| {
                let n = |s: &str| format!("block{i}.{s}");
                Block {
                    ln1: LayerNorm::new(&mut ps, &n("ln1"), d),
                    q: Linear::new(&mut ps, &n("q"), d, d, std_in, &mut rng),
                    k: Linear::new(&mut ps, &n("k"), d, d, std_in, &mut rng),
                    v: Linear::new(&mut ps, &n("v"), d, d, std_in, &mut rng),
                    o: Linear::new(&mut ps, &n("o"), d, d, std_res, &mut rng),
                    ln2: LayerNorm::new(&mut ps, &n("ln2"), d),
                    fc1: Linear::new(&mut ps, &n("fc1"), d, 4 * d, std_in, &mut rng),
                    fc2: Linear::new(&mut ps, &n("fc2"), 4 * d, d, std_res / 2.0, &mut rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(&mut ps, "ln_f", d);
        let head = Linear::new(&mut ps, "head", d, config.vocab, std_in, &mut rng);
        let layout = Layout {
            tok,
            frame,
            spatial,
            action,
            blocks,
            ln_f,
            head,
        };
        Ok(Transformer {
            config,
            params: ps,
            layout,
        })
    }

    pub fn from_tensors(config: DynamicsConfig, named: Vec<(String, Tensor<f32>)>) -> Result<Transformer> {
        let mut model = Transformer::new(config, 0)?;
        model.params.load(named)?;
        Ok(model)
    }

    /// Row of the frame-position table used for frame `t`; frames past the
    /// training horizon reuse the last learned row.
    pub fn frame_row(&self, t: usize) -> usize {
        t.min(self.config.frames - 1)
    }

    pub(crate) fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        let c = &self.config;
        if seq.len() > c.context {
            return Err(Error::Capacity(format!(
                "sequence of {} tokens exceeds the context of {}",
                seq.len(),
                c.context
            )));
        }
        if seq.tokens_per_frame != c.tokens_per_frame() {
            return Err(Error::config(format!(
                "sequence has {} tokens per frame, model expects {}",
                seq.tokens_per_frame,
                c.tokens_per_frame()
            )));
        }
        if let Some(&bad) = seq.codes.iter().find(|&&v| v >= c.vocab) {
            return Err(Error::config(format!("code {bad} outside the vocabulary of {}", c.vocab)));
        }
        if c.action_dim > 0 {
            match &seq.actions {
                Some(a) if a.len() >= seq.frames() && a.iter().all(|r| r.len() == c.action_dim) => {}
                _ => {
                    return Err(Error::config(format!(
                        "model is conditioned on {}-wide actions, sequence has none or the wrong width",
                        c.action_dim
                    )))
                }
            }
        }
        Ok(())
    }

    /// Logits `[B·L, K]` for equally long sequences; row `b·L + i` is the
    /// distribution of token `i + 1` of sequence `b`, a function of tokens
    /// `0..=i` only.
    pub fn forward_logits<T: Float>(&self, t: &mut Tape<T>, b: &Bound, seqs: &[TokenSequence]) -> Result<Var> {
        let first = seqs.first().ok_or_else(|| Error::config("empty batch"))?;
        let l = first.len();
        for s in seqs {
            self.check_sequence(s)?;
            if s.len() != l {
                return Err(Error::config("batched sequences must have equal length"));
            }
        }
        let (n, d, heads) = (seqs.len(), self.config.width, self.config.heads);
        let dh = self.config.head_dim();
        let lay = &self.layout;

        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.codes.iter().copied()).collect();
        let fids: Vec<usize> = seqs
            .iter()
            .flat_map(|s| s.frame_index.iter().map(|&f| self.frame_row(f)))
            .collect();
        let sids: Vec<usize> = seqs.iter().flat_map(|s| s.spatial_index.iter().copied()).collect();
        let tok = t.gather_rows(b[lay.tok], &ids)?;
        let fe = t.gather_rows(b[lay.frame], &fids)?;
        let se = t.gather_rows(b[lay.spatial], &sids)?;
        let x = t.add(tok, fe)?;
        let mut x = t.add(x, se)?;
        if let Some(proj) = &lay.action {
            let a = self.config.action_dim;
            let mut rows = Vec::with_capacity(n * l * a);
            for s in seqs {
                let acts = s.actions.as_ref().expect("checked");
                for &f in &s.frame_index {
                    rows.extend(acts[f].iter().map(|&v| T::cast(v as f64)));
                }
            }
            let av = t.constant(Tensor::new(&[n * l, a], rows)?);
            let ae = proj.forward(t, b, av)?;
            x = t.add(x, ae)?;
        }

        let split = |t: &mut Tape<T>, v: Var| -> Result<Var> {
            let v = t.reshape(v, &[n, l, heads, dh])?;
            let v = t.permute(v, &[0, 2, 1, 3])?;
            Ok(t.reshape(v, &[n * heads, l, dh])?)
        };
        let scale = T::cast(1.0 / (dh as f64).sqrt());
        for blk in &lay.blocks {
            let h = blk.ln1.forward(t, b, x)?;
            let q = blk.q.forward(t, b, h)?;
            let k = blk.k.forward(t, b, h)?;
            let v = blk.v.forward(t, b, h)?;
            let (q, k, v) = (split(t, q)?, split(t, k)?, split(t, v)?);
            let s = t.bmm(q, k, false, true)?;
            let p = t.causal_softmax(s, scale)?;
            let o = t.bmm(p, v, false, false)?;
            let o = t.reshape(o, &[n, heads, l, dh])?;
            let o = t.permute(o, &[0, 2, 1, 3])?;
            let o = t.reshape(o, &[n * l, d])?;
            let o = blk.o.forward(t, b, o)?;
            x = t.add(x, o)?;

            let h = blk.ln2.forward(t, b, x)?;
            let h = blk.fc1.forward(t, b, h)?;
            let h = t.gelu(h);
            let h = blk.fc2.forward(t, b, h)?;
            x = t.add(x, h)?;
        }
        let x = lay.ln_f.forward(t, b, x)?;
        lay.head.forward(t, b, x)
    }

    /// Logits for one sequence without recording gradients.
    pub fn logits(&self, seq: &TokenSequence) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let y = self.forward_logits(&mut tape, &b, std::slice::from_ref(seq))?;
        Ok(tape.value(y).clone())
    }
}

/// Logit rows scored for a batch laid out as in [`Transformer::forward_logits`],
/// and the code each row must predict.
pub fn loss_targets(seqs: &[TokenSequence]) -> (Vec<usize>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for s in seqs {
        for i in s.loss_rows() {
            rows.push(offset + i);
            targets.push(s.codes[i + 1]);
        }
        offset += s.len();
    }
    (rows, targets)
}

/// Mean cross-entropy over the future-frame targets of every sequence;
/// predictions of conditioning-frame codes do not enter the mean.
pub fn nll_loss<T: Float>(t: &mut Tape<T>, logits: Var, seqs: &[TokenSequence]) -> Result<Var> {
    let (rows, targets) = loss_targets(seqs);
    if rows.is_empty() {
        return Err(Error::config("sequences have no target positions"));
    }
    let picked = t.gather_rows(logits, &rows)?;
    Ok(t.cross_entropy(picked, &targets)?)
}
