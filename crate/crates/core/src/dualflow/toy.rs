use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    align_project, attention_backward, attention_weights, autoregressive_loss_grad, dual_flow_backward,
    dual_flow_forward, object_prefix, object_prefix_backward, sigmoid, stack_cls, AttentionParams, DualflowError, Mat,
    Projection,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Hidden width of the visual tokens and the text space.
    pub dim: usize,
    pub prefix_len: usize,
    pub vocab: usize,
    pub layers: usize,
    pub visual_tokens: usize,
    pub objects: usize,
    pub object_dim: usize,
    pub seq_len: usize,
    /// Positions before this index are instruction tokens.
    pub response_start: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            prefix_len: 3,
            vocab: 16,
            layers: 2,
            visual_tokens: 4,
            objects: 2,
            object_dim: 6,
            seq_len: 6,
            response_start: 3,
            batch: 4,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), DualflowError> {
        let bad = |m: &str| Err(DualflowError::Config(m.to_owned()));
        if self.dim == 0 || self.dim > 16 {
            return bad("dim must be in 1..=16");
        }
        if self.prefix_len == 0 || self.prefix_len > 4 || self.objects > self.prefix_len {
            return bad("need objects <= prefix_len <= 4");
        }
        if self.vocab < 2 || self.vocab > 32 {
            return bad("vocab must be in 2..=32");
        }
        if self.layers == 0 || self.layers > 2 {
            return bad("layers must be 1 or 2");
        }
        if self.visual_tokens == 0 || self.response_start >= self.seq_len || self.batch == 0 {
            return bad("need visual tokens, a response region and a batch");
        }
        Ok(())
    }
}

/// One synthetic instruction/response pair with its image stand-in.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyExample {
    /// Patch embeddings; row 0 plays the [CLS] token.
    pub visual: Mat,
    /// Frozen object-encoder features.
    pub objects: Mat,
    pub tokens: Vec<usize>,
    pub predicted: Vec<bool>,
}

/// A deterministic memorizable batch.
pub fn toy_batch(cfg: &ToyConfig) -> Vec<ToyExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    (0..cfg.batch)
        .map(|_| ToyExample {
            visual: Mat::random(cfg.visual_tokens, cfg.dim, 1.0, &mut rng),
            objects: Mat::random(cfg.objects, cfg.object_dim, 1.0, &mut rng),
            tokens: (0..cfg.seq_len).map(|_| rng.gen_range(1..cfg.vocab)).collect(),
            predicted: (0..cfg.seq_len).map(|i| i >= cfg.response_start).collect(),
        })
        .collect()
}

/// Frozen backbone plus the learnable prefix machinery.
///
/// Per example: `H_R = X_R W_obj + b`, shared by every layer's prefix; each
/// layer runs dual-flow attention with prefix `X_Pr^i + H_R` and gate
/// `sigmoid(s_i)`. The final [CLS] row and `H_R` go through the alignment
/// projection, giving the visual rows `A`. The frozen language model reads
/// them with one attention step keyed by the previous token:
/// `logits_j = (e_j + Att(e_j, A, A)) W_out` with `e_j = E[tok_{j-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub prefixes: Vec<Mat>,
    pub object_proj: Projection,
    pub align: Projection,
    pub gates: Vec<f64>,
    pub attention: Vec<AttentionParams>,
    pub embed: Mat,
    pub w_out: Mat,
}

/// Gradients for the learnable tensors, mirroring [`ToyModel`].
#[derive(Clone, Debug)]
struct ToyGrads {
    prefixes: Vec<Mat>,
    obj_w: Mat,
    obj_b: Vec<f64>,
    align_w: Mat,
    align_b: Vec<f64>,
    gates: Vec<f64>,
}

impl ToyModel {
    pub fn init(cfg: &ToyConfig) -> Result<Self, DualflowError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let s = 1.0 / (d as f64).sqrt();
        let square = |rng: &mut ChaCha8Rng| Mat::random(d, d, s, rng);
        let attention = (0..cfg.layers)
            .map(|_| AttentionParams::new(square(&mut rng), square(&mut rng), square(&mut rng)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            prefixes: (0..cfg.layers)
                .map(|_| Mat::random(cfg.prefix_len, d, 0.5, &mut rng))
                .collect(),
            object_proj: Projection::new(Mat::random(cfg.object_dim, d, s, &mut rng), vec![0.0; d])?,
            align: Projection::new(Mat::random(d, d, s, &mut rng), vec![0.0; d])?,
            gates: vec![0.0; cfg.layers],
            attention,
            embed: Mat::random(cfg.vocab, d, 1.0, &mut rng),
            w_out: Mat::random(d, cfg.vocab, 1.0, &mut rng),
        })
    }

    fn vocab(&self) -> usize {
        self.w_out.cols()
    }

    /// Learnable tensors flattened in a fixed order.
    pub fn learnable(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for p in &self.prefixes {
            v.extend_from_slice(p.data());
        }
        v.extend_from_slice(self.object_proj.w.data());
        v.extend_from_slice(&self.object_proj.b);
        v.extend_from_slice(self.align.w.data());
        v.extend_from_slice(&self.align.b);
        v.extend_from_slice(&self.gates);
        v
    }

    pub fn set_learnable(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|x| *x = it.next().expect("flat length"));
        for p in &mut self.prefixes {
            fill(p.data_mut());
        }
        fill(self.object_proj.w.data_mut());
        fill(&mut self.object_proj.b);
        fill(self.align.w.data_mut());
        fill(&mut self.align.b);
        fill(&mut self.gates);
    }

    /// SHA-256 over the bit patterns of every frozen tensor.
    pub fn frozen_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut feed = |m: &Mat| m.data().iter().for_each(|x| h.update(x.to_bits().to_le_bytes()));
        for a in &self.attention {
            feed(&a.wq);
            feed(&a.wk);
            feed(&a.wv);
        }
        feed(&self.embed);
        feed(&self.w_out);
        h.finalize().into()
    }

    /// Embedding of the token before each position; token 0 opens the
    /// sequence.
    fn prev_embeddings(&self, ex: &ToyExample) -> Mat {
        Mat::from_fn(ex.tokens.len(), self.embed.cols(), |j, k| {
            let prev = if j == 0 { 0 } else { ex.tokens[j - 1] };
            self.embed.at(prev, k)
        })
    }

    /// Mean loss over the batch.
    pub fn loss(&self, batch: &[ToyExample]) -> Result<f64, DualflowError> {
        self.loss_and_grads(batch, false).map(|(l, _)| l)
    }

    /// Mean loss and gradient in [`ToyModel::learnable`] order.
    pub fn loss_and_gradient(&self, batch: &[ToyExample]) -> Result<(f64, Vec<f64>), DualflowError> {
        let (loss, g) = self.loss_and_grads(batch, true)?;
        let g = g.expect("gradients requested");
        let mut v = Vec::new();
        for p in &g.prefixes {
            v.extend_from_slice(p.data());
        }
        v.extend_from_slice(g.obj_w.data());
        v.extend_from_slice(&g.obj_b);
        v.extend_from_slice(g.align_w.data());
        v.extend_from_slice(&g.align_b);
        v.extend_from_slice(&g.gates);
        Ok((loss, v))
    }

    fn loss_and_grads(&self, batch: &[ToyExample], backward: bool) -> Result<(f64, Option<ToyGrads>), DualflowError> {
        let d = self.embed.cols();
        let layers = self.prefixes.len();
        let mut grads = ToyGrads {
            prefixes: self.prefixes.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect(),
            obj_w: Mat::zeros(self.object_proj.w.rows(), d),
            obj_b: vec![0.0; d],
            align_w: Mat::zeros(d, self.align.out_dim()),
            align_b: vec![0.0; self.align.out_dim()],
            gates: vec![0.0; layers],
        };
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            let h_r = self.object_proj.forward(&ex.objects)?;
            let mut h = ex.visual.clone();
            let mut caches = Vec::with_capacity(layers);
            for i in 0..layers {
                let x_p = object_prefix(&self.prefixes[i], &h_r)?;
                let (out, cache) = dual_flow_forward(&h, &x_p, &self.attention[i], sigmoid(self.gates[i]))?;
                caches.push(cache);
                h = out;
            }
            let stacked = stack_cls(h.row(0), &h_r)?;
            let aligned = align_project(&self.align, h.row(0), &h_r)?;
            let queries = self.prev_embeddings(ex);
            let (read, weights) = attention_weights(&queries, &aligned, &aligned)?;
            let logits = queries.add(&read).matmul(&self.w_out);
            let (loss, d_logits) = autoregressive_loss_grad(&logits, &ex.tokens, &ex.predicted)?;
            total += loss * scale;
            if !backward {
                continue;
            }
            let d_read = d_logits.scale(scale).matmul(&self.w_out.t());
            let (_, d_keys, d_values) = attention_backward(&queries, &aligned, &aligned, &weights, &d_read);
            let d_aligned = d_keys.add(&d_values);
            let (d_stacked, dw, db) = self.align.backward(&stacked, &d_aligned);
            grads.align_w.add_assign(&dw);
            grads.align_b.iter_mut().zip(db).for_each(|(a, b)| *a += b);
            let mut d_hr = Mat::from_fn(h_r.rows(), d, |r, k| d_stacked.at(r + 1, k));
            let mut d_h = Mat::from_fn(h.rows(), d, |r, k| if r == 0 { d_stacked.at(0, k) } else { 0.0 });
            for i in (0..layers).rev() {
                let g = dual_flow_backward(&caches[i], &self.attention[i], &d_h);
                let s = sigmoid(self.gates[i]);
                grads.gates[i] += g.sigma * s * (1.0 - s);
                grads.prefixes[i].add_assign(&g.x_p);
                d_hr.add_assign(&object_prefix_backward(&g.x_p, h_r.rows()));
                d_h = g.h_i;
            }
            let (_, dw, db) = self.object_proj.backward(&ex.objects, &d_hr);
            grads.obj_w.add_assign(&dw);
            grads.obj_b.iter_mut().zip(db).for_each(|(a, b)| *a += b);
        }
        debug_assert_eq!(self.vocab(), self.w_out.cols());
        Ok((total, backward.then_some(grads)))
    }
}

/// Largest gradient norm applied in one step; longer gradients are scaled
/// down to this length.
pub const CLIP_NORM: f64 = 1.0;

/// Gradient descent with global-norm clipping on the learnable tensors.
/// Returns the loss before the first step and after every step
/// (`steps + 1` values).
pub fn toy_train(
    model: &mut ToyModel,
    batch: &[ToyExample],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, DualflowError> {
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, grad) = model.loss_and_gradient(batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(DualflowError::Diverged { step });
        }
        losses.push(loss);
        if step == steps {
            break;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let step_size = learning_rate * if norm > CLIP_NORM { CLIP_NORM / norm } else { 1.0 };
        let mut params = model.learnable();
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step_size * g;
        }
        model.set_learnable(&params);
    }
    Ok(losses)
}
