use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    align_project, attention, attention_backward, attention_weights, autoregressive_loss, autoregressive_loss_grad,
    dual_flow_attention, dual_flow_backward, dual_flow_forward, object_prefix, toy_batch, toy_train, AttentionParams,
    DualflowError, Mat, Projection, ToyConfig, ToyModel,
};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn gradient_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    /// Measured quantity: a relative error, a loss ratio or 0/1 for exact
    /// identities (1 meaning violated).
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    pub losses: Vec<f64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<w$}  {:>12}  {:>10}  result\n", "check", "value", "limit");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<w$}  {:>12.3e}  {:>10.1e}  {}\n",
                r.name,
                r.value,
                r.threshold,
                if r.passed { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

fn below(name: &str, value: f64, threshold: f64) -> CheckRow {
    CheckRow {
        name: name.to_owned(),
        value,
        threshold,
        passed: value < threshold,
    }
}

fn exact(name: &str, holds: bool) -> CheckRow {
    CheckRow {
        name: name.to_owned(),
        value: (!holds) as u8 as f64,
        threshold: 0.5,
        passed: holds,
    }
}

fn with_entries(m: &Mat, flat: &[f64]) -> Mat {
    Mat::new(m.rows(), m.cols(), flat.to_vec())
}

fn attention_checks(rng: &mut ChaCha8Rng, rows: &mut Vec<CheckRow>) -> Result<(), DualflowError> {
    let q = Mat::random(3, 4, 1.0, rng);
    let k = Mat::random(5, 4, 1.0, rng);
    let v = Mat::random(5, 3, 1.0, rng);
    let g = Mat::random(3, 3, 1.0, rng);
    let (_, p) = attention_weights(&q, &k, &v)?;
    let (dq, dk, dv) = attention_backward(&q, &k, &v, &p, &g);
    let loss = |q: &Mat, k: &Mat, v: &Mat| attention(q, k, v).map(|o| o.dot(&g)).unwrap_or(f64::NAN);
    let e = gradient_check(|x| loss(&with_entries(&q, x), &k, &v), q.data(), dq.data())
        .max(gradient_check(
            |x| loss(&q, &with_entries(&k, x), &v),
            k.data(),
            dk.data(),
        ))
        .max(gradient_check(
            |x| loss(&q, &k, &with_entries(&v, x)),
            v.data(),
            dv.data(),
        ));
    rows.push(below("grad attention Q/K/V", e, GRAD_TOLERANCE));
    Ok(())
}

fn dual_flow_checks(rng: &mut ChaCha8Rng, rows: &mut Vec<CheckRow>) -> Result<(), DualflowError> {
    let d = 6;
    let params = AttentionParams::new(
        Mat::random(d, d, 0.6, rng),
        Mat::random(d, d, 0.6, rng),
        Mat::random(d, d, 0.6, rng),
    )?;
    let h_i = Mat::random(4, d, 1.0, rng);
    let x_pr = Mat::random(3, d, 1.0, rng);
    let h_r = Mat::random(2, d, 1.0, rng);
    let sigma = 0.37;
    let g = Mat::random(4, d, 1.0, rng);
    let x_p = object_prefix(&x_pr, &h_r)?;
    let (_, cache) = dual_flow_forward(&h_i, &x_p, &params, sigma)?;
    let grads = dual_flow_backward(&cache, &params, &g);
    let loss = |h: &Mat, x_pr: &Mat, p: &AttentionParams, s: f64| {
        object_prefix(x_pr, &h_r)
            .and_then(|x_p| dual_flow_attention(h, &x_p, p, s))
            .map(|o| o.dot(&g))
            .unwrap_or(f64::NAN)
    };
    let e_prefix = gradient_check(
        |x| loss(&h_i, &with_entries(&x_pr, x), &params, sigma),
        x_pr.data(),
        grads.x_p.data(),
    );
    let e_sigma = gradient_check(|x| loss(&h_i, &x_pr, &params, x[0]), &[sigma], &[grads.sigma]);
    let e_hidden = gradient_check(
        |x| loss(&with_entries(&h_i, x), &x_pr, &params, sigma),
        h_i.data(),
        grads.h_i.data(),
    );
    let map = |which: usize| {
        let (w, dw) = match which {
            0 => (&params.wq, &grads.wq),
            1 => (&params.wk, &grads.wk),
            _ => (&params.wv, &grads.wv),
        };
        gradient_check(
            |x| {
                let mut p = params.clone();
                let slot = match which {
                    0 => &mut p.wq,
                    1 => &mut p.wk,
                    _ => &mut p.wv,
                };
                *slot = with_entries(w, x);
                loss(&h_i, &x_pr, &p, sigma)
            },
            w.data(),
            dw.data(),
        )
    };
    let e_maps = map(0).max(map(1)).max(map(2));
    rows.push(below("grad dual-flow X_Pr", e_prefix, GRAD_TOLERANCE));
    rows.push(below("grad dual-flow gate", e_sigma, GRAD_TOLERANCE));
    rows.push(below("grad dual-flow H_I", e_hidden, GRAD_TOLERANCE));
    rows.push(below("grad dual-flow Q/K/V maps", e_maps, GRAD_TOLERANCE));

    let vanilla = attention(
        &h_i.matmul(&params.wq),
        &h_i.matmul(&params.wk),
        &h_i.matmul(&params.wv),
    )?;
    rows.push(exact(
        "zero gate equals self-attention",
        dual_flow_attention(&h_i, &x_p, &params, 0.0)? == vanilla,
    ));
    rows.push(exact(
        "unit gate on own prefix doubles",
        dual_flow_attention(&h_i, &h_i, &params, 1.0)? == vanilla.scale(2.0),
    ));
    Ok(())
}

fn projection_checks(rng: &mut ChaCha8Rng, rows: &mut Vec<CheckRow>) -> Result<(), DualflowError> {
    let proj = Projection::new(Mat::random(5, 3, 1.0, rng), (0..3).map(|i| i as f64 * 0.1).collect())?;
    let h_cls: Vec<f64> = Mat::random(1, 5, 1.0, rng).data().to_vec();
    let h_r = Mat::random(2, 5, 1.0, rng);
    let g = Mat::random(3, 3, 1.0, rng);
    let stacked = Mat::from_fn(3, 5, |r, c| if r == 0 { h_cls[c] } else { h_r.at(r - 1, c) });
    let (dx, dw, db) = proj.backward(&stacked, &g);
    let loss = |p: &Projection, cls: &[f64]| align_project(p, cls, &h_r).map(|o| o.dot(&g)).unwrap_or(f64::NAN);
    let e_w = gradient_check(
        |x| {
            let mut p = proj.clone();
            p.w = with_entries(&proj.w, x);
            loss(&p, &h_cls)
        },
        proj.w.data(),
        dw.data(),
    );
    let e_b = gradient_check(
        |x| {
            let mut p = proj.clone();
            p.b = x.to_vec();
            loss(&p, &h_cls)
        },
        &proj.b,
        &db,
    );
    let e_cls = gradient_check(|x| loss(&proj, x), &h_cls, dx.row(0));
    rows.push(below(
        "grad projection W/b/[CLS]",
        e_w.max(e_b).max(e_cls),
        GRAD_TOLERANCE,
    ));
    Ok(())
}

fn loss_checks(rng: &mut ChaCha8Rng, rows: &mut Vec<CheckRow>) -> Result<(), DualflowError> {
    let logits = Mat::random(5, 7, 2.0, rng);
    let targets = [1, 0, 6, 3, 3];
    let mask = [false, true, false, true, true];
    let (_, grad) = autoregressive_loss_grad(&logits, &targets, &mask)?;
    let e = gradient_check(
        |x| autoregressive_loss(&with_entries(&logits, x), &targets, &mask).unwrap_or(f64::NAN),
        logits.data(),
        grad.data(),
    );
    rows.push(below("grad autoregressive loss", e, GRAD_TOLERANCE));
    let mut bumped = logits.clone();
    for c in 0..7 {
        *bumped.at_mut(0, c) += c as f64;
        *bumped.at_mut(2, c) -= 2.0 * c as f64;
    }
    rows.push(exact(
        "instruction logits do not affect loss",
        autoregressive_loss(&bumped, &targets, &mask)? == autoregressive_loss(&logits, &targets, &mask)?,
    ));
    Ok(())
}

/// Runs every gradient check, the exact identities and a 200-step toy
/// training run.
pub fn verify_suite(seed: u64) -> Result<VerifyReport, DualflowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    attention_checks(&mut rng, &mut rows)?;
    dual_flow_checks(&mut rng, &mut rows)?;
    projection_checks(&mut rng, &mut rows)?;
    loss_checks(&mut rng, &mut rows)?;

    let cfg = ToyConfig {
        seed,
        ..Default::default()
    };
    let batch = toy_batch(&cfg);
    let mut model = ToyModel::init(&cfg)?;
    let (_, grad) = model.loss_and_gradient(&batch)?;
    let start = model.learnable();
    let mut probe = model.clone();
    let e = gradient_check(
        |x| {
            probe.set_learnable(x);
            probe.loss(&batch).unwrap_or(f64::NAN)
        },
        &start,
        &grad,
    );
    rows.push(below("grad toy model (all learnable)", e, GRAD_TOLERANCE));

    let frozen = model.frozen_digest();
    let losses = toy_train(&mut model, &batch, 200, cfg.learning_rate)?;
    rows.push(below("toy loss ratio step 200 / step 0", losses[200] / losses[0], 0.5));
    rows.push(exact("frozen tensors unchanged", model.frozen_digest() == frozen));
    Ok(VerifyReport { rows, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn suite_passes() {
        let report = verify_suite(0).unwrap();
        assert!(report.passed(), "\n{}", report.table());
    }
}
