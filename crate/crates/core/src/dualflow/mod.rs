//! Toy-scale numeric model of object-aware prefix tuning.
//!
//! Prefix prompts are mixed with projected object features, attended to by
//! the visual tokens through a gated two-flow attention, projected into the
//! text space and trained with a masked autoregressive loss. Every forward
//! op has a hand-written backward pass; [`verify_suite`] checks them against
//! central finite differences. None of this feeds the retrieval path.

mod check;
mod mat;
mod toy;

pub use check::{gradient_check, relative_error, verify_suite, CheckRow, VerifyReport, FD_STEP, GRAD_TOLERANCE};
pub use mat::Mat;
pub use toy::{toy_batch, toy_train, ToyConfig, ToyExample, ToyModel};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualflowError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("attention width must be positive")]
    ZeroDim,
    #[error("target token {token} outside vocabulary of {vocab}")]
    BadTarget { token: usize, vocab: usize },
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("invalid toy config: {0}")]
    Config(String),
}

fn shape_err(op: &'static str, detail: String) -> DualflowError {
    DualflowError::Shape { op, detail }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `X_P = X_Pr + H_R`, with `H_R` zero-padded to the prefix length.
pub fn object_prefix(x_pr: &Mat, h_r: &Mat) -> Result<Mat, DualflowError> {
    if h_r.cols() != x_pr.cols() || h_r.rows() > x_pr.rows() {
        return Err(shape_err(
            "object_prefix",
            format!("prefix {:?}, object features {:?}", x_pr.shape(), h_r.shape()),
        ));
    }
    let mut out = x_pr.clone();
    for r in 0..h_r.rows() {
        for c in 0..h_r.cols() {
            *out.at_mut(r, c) += h_r.at(r, c);
        }
    }
    Ok(out)
}

/// Gradient of `object_prefix` with respect to the unpadded `H_R`.
fn object_prefix_backward(d_xp: &Mat, object_rows: usize) -> Mat {
    Mat::from_fn(object_rows, d_xp.cols(), |r, c| d_xp.at(r, c))
}

fn softmax_rows(s: &Mat) -> Mat {
    let mut p = s.clone();
    let cols = s.cols();
    for r in 0..s.rows() {
        let row = &mut p.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    p
}

/// `softmax(Q Kᵀ / √d) V` together with the attention weights.
pub fn attention_weights(q: &Mat, k: &Mat, v: &Mat) -> Result<(Mat, Mat), DualflowError> {
    let d = q.cols();
    if d == 0 {
        return Err(DualflowError::ZeroDim);
    }
    if k.cols() != d || k.rows() != v.rows() || k.rows() == 0 {
        return Err(shape_err(
            "attention",
            format!("Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let p = softmax_rows(&q.matmul(&k.t()).scale(1.0 / (d as f64).sqrt()));
    Ok((p.matmul(v), p))
}

pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat, DualflowError> {
    attention_weights(q, k, v).map(|(o, _)| o)
}

/// Gradients of attention with respect to `(Q, K, V)`.
pub fn attention_backward(q: &Mat, k: &Mat, v: &Mat, p: &Mat, d_out: &Mat) -> (Mat, Mat, Mat) {
    let inv = 1.0 / (q.cols() as f64).sqrt();
    let dv = p.t().matmul(d_out);
    let dp = d_out.matmul(&v.t());
    let mut ds = Mat::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let inner: f64 = p.row(r).iter().zip(dp.row(r)).map(|(a, b)| a * b).sum();
        for c in 0..p.cols() {
            *ds.at_mut(r, c) = p.at(r, c) * (dp.at(r, c) - inner) * inv;
        }
    }
    (ds.matmul(k), ds.t().matmul(q), dv)
}

/// Per-layer query, key and value maps, shared by both attention flows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
}

impl AttentionParams {
    pub fn new(wq: Mat, wk: Mat, wv: Mat) -> Result<Self, DualflowError> {
        let d = wq.rows();
        if [wq.shape(), wk.shape(), wv.shape()].iter().any(|&s| s != (d, d)) {
            return Err(shape_err("attention params", "maps must be square and equal".into()));
        }
        Ok(Self { wq, wk, wv })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }
}

/// Intermediate values of one dual-flow forward pass.
#[derive(Clone, Debug)]
pub struct DualFlowCache {
    h_i: Mat,
    x_p: Mat,
    sigma: f64,
    qh: Mat,
    kp: Mat,
    vp: Mat,
    kh: Mat,
    vh: Mat,
    pp: Mat,
    ph: Mat,
    ap: Mat,
}

#[derive(Clone, Debug)]
pub struct DualFlowGrads {
    pub h_i: Mat,
    pub x_p: Mat,
    pub sigma: f64,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
}

/// `H_O = Att(Q_h, K_p, V_p)·σ + Att(Q_h, K_h, V_h)`: queries come from the
/// visual tokens only, keys and values are computed separately for the
/// prefix and the visual tokens.
pub fn dual_flow_attention(h_i: &Mat, x_p: &Mat, params: &AttentionParams, sigma: f64) -> Result<Mat, DualflowError> {
    dual_flow_forward(h_i, x_p, params, sigma).map(|(o, _)| o)
}

pub fn dual_flow_forward(
    h_i: &Mat,
    x_p: &Mat,
    params: &AttentionParams,
    sigma: f64,
) -> Result<(Mat, DualFlowCache), DualflowError> {
    let d = params.dim();
    if h_i.cols() != d || x_p.cols() != d {
        return Err(shape_err(
            "dual_flow_attention",
            format!("H_I {:?}, X_P {:?}, width {d}", h_i.shape(), x_p.shape()),
        ));
    }
    let qh = h_i.matmul(&params.wq);
    let kp = x_p.matmul(&params.wk);
    let vp = x_p.matmul(&params.wv);
    let kh = h_i.matmul(&params.wk);
    let vh = h_i.matmul(&params.wv);
    let (ap, pp) = attention_weights(&qh, &kp, &vp)?;
    let (ah, ph) = attention_weights(&qh, &kh, &vh)?;
    let out = ap.scale(sigma).add(&ah);
    let cache = DualFlowCache {
        h_i: h_i.clone(),
        x_p: x_p.clone(),
        sigma,
        qh,
        kp,
        vp,
        kh,
        vh,
        pp,
        ph,
        ap,
    };
    Ok((out, cache))
}

pub fn dual_flow_backward(cache: &DualFlowCache, params: &AttentionParams, d_out: &Mat) -> DualFlowGrads {
    let c = cache;
    let sigma_grad = d_out.dot(&c.ap);
    let (dq_p, dkp, dvp) = attention_backward(&c.qh, &c.kp, &c.vp, &c.pp, &d_out.scale(c.sigma));
    let (dq_h, dkh, dvh) = attention_backward(&c.qh, &c.kh, &c.vh, &c.ph, d_out);
    let dqh = dq_p.add(&dq_h);
    let mut dh_i = dqh.matmul(&params.wq.t());
    dh_i.add_assign(&dkh.matmul(&params.wk.t()));
    dh_i.add_assign(&dvh.matmul(&params.wv.t()));
    let dx_p = dkp.matmul(&params.wk.t()).add(&dvp.matmul(&params.wv.t()));
    let h_t = c.h_i.t();
    let p_t = c.x_p.t();
    DualFlowGrads {
        h_i: dh_i,
        x_p: dx_p,
        sigma: sigma_grad,
        wq: h_t.matmul(&dqh),
        wk: p_t.matmul(&dkp).add(&h_t.matmul(&dkh)),
        wv: p_t.matmul(&dvp).add(&h_t.matmul(&dvh)),
    }
}

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Projection {
    pub fn new(w: Mat, b: Vec<f64>) -> Result<Self, DualflowError> {
        if b.len() != w.cols() {
            return Err(shape_err("projection", format!("W {:?}, bias {}", w.shape(), b.len())));
        }
        Ok(Self { w, b })
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat, DualflowError> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "projection",
                format!("input {:?}, W {:?}", x.shape(), self.w.shape()),
            ));
        }
        let mut out = x.matmul(&self.w);
        for r in 0..out.rows() {
            for (c, b) in self.b.iter().enumerate() {
                *out.at_mut(r, c) += b;
            }
        }
        Ok(out)
    }

    /// Gradients with respect to `(x, W, b)`.
    pub fn backward(&self, x: &Mat, d_out: &Mat) -> (Mat, Mat, Vec<f64>) {
        let db = (0..d_out.cols())
            .map(|c| (0..d_out.rows()).map(|r| d_out.at(r, c)).sum())
            .collect();
        (d_out.matmul(&self.w.t()), x.t().matmul(d_out), db)
    }
}

fn stack_cls(h_cls: &[f64], h_r: &Mat) -> Result<Mat, DualflowError> {
    if h_cls.len() != h_r.cols() {
        return Err(shape_err(
            "align_project",
            format!("[CLS] width {}, object width {}", h_cls.len(), h_r.cols()),
        ));
    }
    Ok(Mat::from_fn(h_r.rows() + 1, h_cls.len(), |r, c| {
        if r == 0 {
            h_cls[c]
        } else {
            h_r.at(r - 1, c)
        }
    }))
}

/// One linear map over the stacked `[h_cls; H_R]`, into the text space.
pub fn align_project(proj: &Projection, h_cls: &[f64], h_r: &Mat) -> Result<Mat, DualflowError> {
    proj.forward(&stack_cls(h_cls, h_r)?)
}

/// `-Σ_i log softmax(logits_i)[c_i]` over the positions flagged as
/// predicted; instruction positions contribute nothing.
pub fn autoregressive_loss(logits: &Mat, targets: &[usize], predicted: &[bool]) -> Result<f64, DualflowError> {
    autoregressive_loss_grad(logits, targets, predicted).map(|(l, _)| l)
}

/// Loss and its gradient with respect to the logits.
pub fn autoregressive_loss_grad(
    logits: &Mat,
    targets: &[usize],
    predicted: &[bool],
) -> Result<(f64, Mat), DualflowError> {
    if logits.rows() != targets.len() || predicted.len() != targets.len() {
        return Err(shape_err(
            "autoregressive_loss",
            format!(
                "{} logit rows, {} targets, {} mask entries",
                logits.rows(),
                targets.len(),
                predicted.len()
            ),
        ));
    }
    let vocab = logits.cols();
    if let Some(&token) = targets.iter().find(|&&t| t >= vocab) {
        return Err(DualflowError::BadTarget { token, vocab });
    }
    let probs = softmax_rows(logits);
    let mut grad = Mat::zeros(logits.rows(), vocab);
    let mut loss = 0.0;
    for (i, (&t, &on)) in targets.iter().zip(predicted).enumerate() {
        if !on {
            continue;
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        for c in 0..vocab {
            *grad.at_mut(i, c) = probs.at(i, c) - (c == t) as u8 as f64;
        }
    }
    Ok((loss, grad))
}
