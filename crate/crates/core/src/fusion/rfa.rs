//! Receptive-field-aware attention merge.
//!
//! The receptive-field proportions `l` are first projected to a coarse
//! importance `l' = P0 · l ∈ R^{t+1}`. Every projection of the attention is
//! then generated from `l'` by a bias-free rank-1 map instead of being
//! learned directly:
//!
//! ```text
//! W_Q = l' u_Qᵀ   b_Q = v_Q l'ᵀ   Q = x W_Qᵀ + b_Q        (n × (t+1))
//! W_K = l' w_Kᵀ   b_K = u_K l'ᵀ   K = xᵀ W_Kᵀ + b_K       ((t+1) × (t+1))
//! W_V = l' u_Vᵀ   b_V = v_V l'ᵀ   V = x W_Vᵀ + b_V        (n × (t+1))
//! W   = row-softmax(Q Kᵀ / √(t+1))
//! y_i = Σ_j W_ij V_ij
//! ```
//!
//! Because of the rank-1 structure, with `q = x u_Q + v_Q`,
//! `k = xᵀ w_K + u_K` and `a = x u_V + v_V`:
//! `Q_ij = l'_j q_i`, `K_jm = l'_m k_j`, `V_ij = l'_j a_i`, so
//! `(Q Kᵀ)_ij = |l'|² q_i k_j`. The forward and backward passes below work
//! on these factors directly.
//!
//! Parameter count: `t(t+1) + 3(t+1) + 3n = (t+3)(t+1) + 3n`.

use rand::Rng;

use super::{argmax, cross_entropy, softmax_in_place, AdjustmentMatrix, FusionOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParameters {
    pub n: usize,
    pub t: usize,
    /// Row-major `(t+1) × t`.
    pub p0: Vec<f64>,
    pub u_q: Vec<f64>,
    pub v_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub u_k: Vec<f64>,
    pub u_v: Vec<f64>,
    pub v_v: Vec<f64>,
}

impl FusionParameters {
    pub fn zeros(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            p0: vec![0.0; (t + 1) * t],
            u_q: vec![0.0; t + 1],
            v_q: vec![0.0; n],
            w_k: vec![0.0; n],
            u_k: vec![0.0; t + 1],
            u_v: vec![0.0; t + 1],
            v_v: vec![0.0; n],
        }
    }

    /// Every entry drawn from `Uniform(-scale, scale)`.
    pub fn random(n: usize, t: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(n, t);
        let flat: Vec<f64> = (0..p.param_count())
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
            .collect();
        p.set_flat(&flat);
        p
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    fn arrays(&self) -> [&Vec<f64>; 7] {
        [&self.p0, &self.u_q, &self.v_q, &self.w_k, &self.u_k, &self.u_v, &self.v_v]
    }

    fn arrays_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.p0,
            &mut self.u_q,
            &mut self.v_q,
            &mut self.w_k,
            &mut self.u_k,
            &mut self.u_v,
            &mut self.v_v,
        ]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.arrays().into_iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut rest = flat;
        for a in self.arrays_mut() {
            let (head, tail) = rest.split_at(a.len());
            a.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn named_arrays(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let (n, t1) = (self.n, self.t + 1);
        vec![
            ("p0", vec![t1, self.t], &self.p0),
            ("u_q", vec![t1], &self.u_q),
            ("v_q", vec![n], &self.v_q),
            ("w_k", vec![n], &self.w_k),
            ("u_k", vec![t1], &self.u_k),
            ("u_v", vec![t1], &self.u_v),
            ("v_v", vec![n], &self.v_v),
        ]
    }

    pub fn from_named(
        n: usize,
        t: usize,
        get: impl Fn(&str, &[usize]) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let t1 = t + 1;
        Ok(Self {
            n,
            t,
            p0: get("p0", &[t1, t])?,
            u_q: get("u_q", &[t1])?,
            v_q: get("v_q", &[n])?,
            w_k: get("w_k", &[n])?,
            u_k: get("u_k", &[t1])?,
            u_v: get("u_v", &[t1])?,
            v_v: get("v_v", &[n])?,
        })
    }

    fn check_shape(&self, m: &AdjustmentMatrix) -> Result<()> {
        if m.n() != self.n || m.t() != self.t || m.columns.len() != self.t + 1 {
            return Err(Error::Data(format!(
                "sample `{}` has shape (n={}, t={}), parameters expect (n={}, t={})",
                m.utterance_id,
                m.n(),
                m.t(),
                self.n,
                self.t
            )));
        }
        Ok(())
    }
}

/// Intermediate factors of one forward pass.
struct Factors {
    lp: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    a: Vec<f64>,
    scale: f64,
    /// Row-major `n × (t+1)` attention weights.
    w: Vec<Vec<f64>>,
    r: Vec<f64>,
    y: Vec<f64>,
}

fn finite(values: &[f64], stage: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(stage))
    }
}

fn factors(m: &AdjustmentMatrix, p: &FusionParameters) -> Result<Factors> {
    p.check_shape(m)?;
    let (n, t) = (p.n, p.t);
    let t1 = t + 1;
    let lp: Vec<f64> = (0..t1)
        .map(|j| (0..t).map(|c| p.p0[j * t + c] * m.l[c]).sum())
        .collect();
    finite(&lp, "field projection")?;
    let q: Vec<f64> = (0..n)
        .map(|i| (0..t1).map(|c| m.x(i, c) * p.u_q[c]).sum::<f64>() + p.v_q[i])
        .collect();
    let k: Vec<f64> = (0..t1)
        .map(|j| (0..n).map(|i| m.x(i, j) * p.w_k[i]).sum::<f64>() + p.u_k[j])
        .collect();
    let a: Vec<f64> = (0..n)
        .map(|i| (0..t1).map(|c| m.x(i, c) * p.u_v[c]).sum::<f64>() + p.v_v[i])
        .collect();
    let scale = lp.iter().map(|v| v * v).sum::<f64>() / (t1 as f64).sqrt();
    finite(&[scale], "attention scores")?;
    let mut w = Vec::with_capacity(n);
    for &qi in &q {
        let mut row: Vec<f64> = k.iter().map(|kj| scale * qi * kj).collect();
        finite(&row, "attention scores")?;
        softmax_in_place(&mut row);
        w.push(row);
    }
    let r: Vec<f64> = w
        .iter()
        .map(|row| row.iter().zip(&lp).map(|(wij, lj)| wij * lj).sum())
        .collect();
    let y: Vec<f64> = a.iter().zip(&r).map(|(ai, ri)| ai * ri).collect();
    finite(&y, "merged scores")?;
    Ok(Factors {
        lp,
        q,
        k,
        a,
        scale,
        w,
        r,
        y,
    })
}

pub fn rfa_forward(m: &AdjustmentMatrix, p: &FusionParameters) -> Result<FusionOutput> {
    let f = factors(m, p)?;
    Ok(FusionOutput {
        class: argmax(&f.y),
        y: f.y,
        weights: f.w,
    })
}

/// Cross-entropy of `softmax(y)` against `gold` and its gradient with
/// respect to all seven parameter arrays.
#[allow(clippy::needless_range_loop)]
pub fn rfa_backward(
    m: &AdjustmentMatrix,
    p: &FusionParameters,
    gold: usize,
) -> Result<(f64, FusionParameters)> {
    let f = factors(m, p)?;
    let (n, t) = (p.n, p.t);
    let t1 = t + 1;
    let (loss, dy) = cross_entropy(&f.y, gold);

    let mut g = FusionParameters::zeros(n, t);
    let mut dlp = vec![0.0; t1];
    let mut dq = vec![0.0; n];
    let mut dk = vec![0.0; t1];
    let mut dscale = 0.0;
    for i in 0..n {
        let da = dy[i] * f.r[i];
        let dr = dy[i] * f.a[i];
        // y_i = a_i r_i with a_i = x_i·u_V + v_V,i
        g.v_v[i] = da;
        for c in 0..t1 {
            g.u_v[c] += da * m.x(i, c);
        }
        // r_i = Σ_j W_ij l'_j
        let row = &f.w[i];
        let dw: Vec<f64> = f.lp.iter().map(|lj| dr * lj).collect();
        for j in 0..t1 {
            dlp[j] += dr * row[j];
        }
        let inner: f64 = row.iter().zip(&dw).map(|(a, b)| a * b).sum();
        for j in 0..t1 {
            let ds = row[j] * (dw[j] - inner);
            // S_ij = scale q_i k_j
            dq[i] += ds * f.scale * f.k[j];
            dk[j] += ds * f.scale * f.q[i];
            dscale += ds * f.q[i] * f.k[j];
        }
    }
    for i in 0..n {
        g.v_q[i] = dq[i];
        for c in 0..t1 {
            g.u_q[c] += dq[i] * m.x(i, c);
        }
    }
    for j in 0..t1 {
        g.u_k[j] = dk[j];
        for i in 0..n {
            g.w_k[i] += dk[j] * m.x(i, j);
        }
    }
    // scale = |l'|² / √(t+1)
    let root = (t1 as f64).sqrt();
    for j in 0..t1 {
        dlp[j] += dscale * 2.0 * f.lp[j] / root;
        for c in 0..t {
            g.p0[j * t + c] = dlp[j] * m.l[c];
        }
    }
    if !loss.is_finite() || g.flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((loss, g))
}
