//! Test-only reference implementations and instance generators.
//!
//! The dense evaluators build every matrix of the attention explicitly and
//! share no code with the library's factored passes.

#![allow(dead_code)]

use std::path::Path;

use erc_fusion::fusion::{AdjustmentMatrix, FusionParameters, PlainAttention, Trainable};
use erc_fusion::schema::{Dialogue, DimensionScores, Utterance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct Dense {
    pub y: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

fn x_matrix(m: &AdjustmentMatrix) -> DMatrix<f64> {
    let (n, t1) = (m.columns[0].len(), m.columns.len());
    DMatrix::from_fn(n, t1, |i, j| m.columns[j][i])
}

fn row_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = s.clone();
    for mut row in w.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    w
}

fn rows(w: &DMatrix<f64>) -> Vec<Vec<f64>> {
    w.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Straight-line evaluation of the receptive-field-aware merge.
pub fn dense_rfa(m: &AdjustmentMatrix, p: &FusionParameters) -> Dense {
    let (n, t) = (p.n, p.t);
    let t1 = t + 1;
    let x = x_matrix(m);
    let l = DVector::from_column_slice(&m.l);
    let p0 = DMatrix::from_row_slice(t1, t, &p.p0);
    let lp = &p0 * &l;
    let col = |v: &[f64]| DVector::from_column_slice(v);

    let w_q = &lp * col(&p.u_q).transpose();
    let b_q = col(&p.v_q) * lp.transpose();
    let q = &x * w_q.transpose() + b_q;

    let w_k = &lp * col(&p.w_k).transpose();
    let b_k = col(&p.u_k) * lp.transpose();
    let k = x.transpose() * w_k.transpose() + b_k;

    let w_v = &lp * col(&p.u_v).transpose();
    let b_v = col(&p.v_v) * lp.transpose();
    let v = &x * w_v.transpose() + b_v;

    let w = row_softmax(&(&q * k.transpose() / (t1 as f64).sqrt()));
    let y = (0..n).map(|i| (0..t1).map(|j| w[(i, j)] * v[(i, j)]).sum()).collect();
    Dense { y, w: rows(&w) }
}

/// Straight-line evaluation of the plain attention baseline.
pub fn dense_attn(m: &AdjustmentMatrix, p: &PlainAttention) -> Dense {
    let (n, t1) = (p.n, p.t + 1);
    let x = x_matrix(m);
    let a = DMatrix::from_row_slice(t1, t1, &p.a);
    let b_a = DMatrix::from_row_slice(n, t1, &p.b_a);
    let b = DMatrix::from_row_slice(t1, n, &p.b);
    let b_b = DMatrix::from_row_slice(t1, t1, &p.b_b);
    let c = DMatrix::from_row_slice(t1, n, &p.c);
    let b_c = DMatrix::from_row_slice(t1, t1, &p.b_c);
    let q = &x * a.transpose() + b_a;
    let k = x.transpose() * b.transpose() + b_b;
    let v = x.transpose() * c.transpose() + b_c;
    let w = row_softmax(&(&q * k.transpose() / (t1 as f64).sqrt()));
    let wv = &w * v;
    let y = (0..n).map(|i| wv.row(i).sum()).collect();
    Dense { y, w: rows(&w) }
}

/// Random instance: `t + 1` probability columns and proportions in (0, 1].
pub fn random_matrix(n: usize, t: usize, rng: &mut impl Rng) -> AdjustmentMatrix {
    let columns = (0..=t)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    AdjustmentMatrix {
        dialogue_id: "d".into(),
        utterance_id: "u".into(),
        columns,
        l: (0..t).map(|_| rng.gen_range(0.05..=1.0)).collect(),
        gold_label: Some(rng.gen_range(0..n)),
    }
}

/// Largest relative error between the analytic gradient and central
/// differences, with relative error `|a - f| / max(|a|, |f|, floor)`.
pub fn gradient_error<M: Trainable>(model: &M, m: &AdjustmentMatrix, gold: usize, h: f64, floor: f64) -> f64 {
    let (_, analytic) = model.loss_grad(m, gold).expect("finite loss");
    let base = model.flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut at = |delta: f64| {
            let mut flat = base.clone();
            flat[k] += delta;
            probe.set_flat(&flat);
            probe.loss_grad(m, gold).expect("finite loss").0
        };
        let f = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(floor));
    }
    worst
}

pub fn dialogue(id: &str, len: usize, n: usize) -> Dialogue {
    Dialogue {
        dialogue_id: id.into(),
        utterances: (0..len)
            .map(|i| Utterance {
                utterance_id: format!("u{i}"),
                speaker: if i % 2 == 0 { "A" } else { "B" }.into(),
                text: format!("line {i}"),
                vanilla_probs: vec![1.0 / n as f64; n],
                dims: DimensionScores::new(3.0, 3.0, 3.0),
                gold_label: Some(i % n),
            })
            .collect(),
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
