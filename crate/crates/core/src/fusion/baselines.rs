//! Merges that ignore receptive-field lengths.

use rand::Rng;

use super::{argmax, cross_entropy, softmax_in_place, AdjustmentMatrix, FusionOutput};
use crate::error::{Error, Result};

/// Class-wise sum of the columns, optionally without the vanilla column.
pub fn merge_naive_add(m: &AdjustmentMatrix, include_vanilla: bool) -> FusionOutput {
    let cols = if include_vanilla {
        &m.columns[..]
    } else {
        &m.columns[..m.columns.len() - 1]
    };
    let y: Vec<f64> = (0..m.n()).map(|i| cols.iter().map(|c| c[i]).sum()).collect();
    FusionOutput {
        class: argmax(&y),
        y,
        weights: Vec::new(),
    }
}

fn check_shape(m: &AdjustmentMatrix, n: usize, t: usize) -> Result<()> {
    if m.n() != n || m.t() != t {
        return Err(Error::Data(format!(
            "sample `{}` has shape (n={}, t={}), merge expects (n={n}, t={t})",
            m.utterance_id,
            m.n(),
            m.t()
        )));
    }
    Ok(())
}

/// Learned element-wise weights `M ∈ R^{n×(t+1)}`: `y_i = Σ_j M_ij x_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveWeights {
    pub n: usize,
    pub t: usize,
    /// Row-major `n × (t+1)`.
    pub m: Vec<f64>,
}

impl NaiveWeights {
    /// All-ones weights reproduce the naive add-up.
    pub fn ones(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            m: vec![1.0; n * (t + 1)],
        }
    }

    pub fn param_count(&self) -> usize {
        self.m.len()
    }

    pub fn forward(&self, x: &AdjustmentMatrix) -> Result<FusionOutput> {
        check_shape(x, self.n, self.t)?;
        let t1 = self.t + 1;
        let y: Vec<f64> = (0..self.n)
            .map(|i| (0..t1).map(|j| self.m[i * t1 + j] * x.x(i, j)).sum())
            .collect();
        Ok(FusionOutput {
            class: argmax(&y),
            y,
            weights: Vec::new(),
        })
    }

    pub fn backward(&self, x: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)> {
        let out = self.forward(x)?;
        let (loss, dy) = cross_entropy(&out.y, gold);
        let t1 = self.t + 1;
        let mut g = vec![0.0; self.m.len()];
        for i in 0..self.n {
            for j in 0..t1 {
                g[i * t1 + j] = dy[i] * x.x(i, j);
            }
        }
        Ok((loss, g))
    }

    pub fn named_arrays(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![("m", vec![self.n, self.t + 1], &self.m)]
    }

    pub fn from_named(n: usize, t: usize, get: impl Fn(&str, &[usize]) -> Result<Vec<f64>>) -> Result<Self> {
        Ok(Self {
            n,
            t,
            m: get("m", &[n, t + 1])?,
        })
    }
}

/// Dot-product attention with static learned projections: `x` feeds the
/// queries and `xᵀ` feeds keys and values.
///
/// ```text
/// Q = x Aᵀ + b_A      (n × (t+1))
/// K = xᵀ Bᵀ + b_B     ((t+1) × (t+1))
/// V = xᵀ Cᵀ + b_C     ((t+1) × (t+1))
/// W = row-softmax(Q Kᵀ / √(t+1));  y_i = Σ_m (W V)_im
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PlainAttention {
    pub n: usize,
    pub t: usize,
    /// `(t+1) × (t+1)`
    pub a: Vec<f64>,
    /// `n × (t+1)`
    pub b_a: Vec<f64>,
    /// `(t+1) × n`
    pub b: Vec<f64>,
    /// `(t+1) × (t+1)`
    pub b_b: Vec<f64>,
    /// `(t+1) × n`
    pub c: Vec<f64>,
    /// `(t+1) × (t+1)`
    pub b_c: Vec<f64>,
}

struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    w: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl PlainAttention {
    pub fn zeros(n: usize, t: usize) -> Self {
        let t1 = t + 1;
        Self {
            n,
            t,
            a: vec![0.0; t1 * t1],
            b_a: vec![0.0; n * t1],
            b: vec![0.0; t1 * n],
            b_b: vec![0.0; t1 * t1],
            c: vec![0.0; t1 * n],
            b_c: vec![0.0; t1 * t1],
        }
    }

    pub fn random(n: usize, t: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(n, t);
        let flat: Vec<f64> = (0..p.param_count())
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
            .collect();
        p.set_flat(&flat);
        p
    }

    fn arrays(&self) -> [&Vec<f64>; 6] {
        [&self.a, &self.b_a, &self.b, &self.b_b, &self.c, &self.b_c]
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.arrays().into_iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut rest = flat;
        for a in [&mut self.a, &mut self.b_a, &mut self.b, &mut self.b_b, &mut self.c, &mut self.b_c] {
            let (head, tail) = rest.split_at(a.len());
            a.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn named_arrays(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let (n, t1) = (self.n, self.t + 1);
        vec![
            ("a", vec![t1, t1], &self.a),
            ("b_a", vec![n, t1], &self.b_a),
            ("b", vec![t1, n], &self.b),
            ("b_b", vec![t1, t1], &self.b_b),
            ("c", vec![t1, n], &self.c),
            ("b_c", vec![t1, t1], &self.b_c),
        ]
    }

    pub fn from_named(n: usize, t: usize, get: impl Fn(&str, &[usize]) -> Result<Vec<f64>>) -> Result<Self> {
        let t1 = t + 1;
        Ok(Self {
            n,
            t,
            a: get("a", &[t1, t1])?,
            b_a: get("b_a", &[n, t1])?,
            b: get("b", &[t1, n])?,
            b_b: get("b_b", &[t1, t1])?,
            c: get("c", &[t1, n])?,
            b_c: get("b_c", &[t1, t1])?,
        })
    }

    fn run(&self, x: &AdjustmentMatrix) -> Result<AttnCache> {
        check_shape(x, self.n, self.t)?;
        let (n, t1) = (self.n, self.t + 1);
        let mut q = vec![0.0; n * t1];
        for i in 0..n {
            for mm in 0..t1 {
                q[i * t1 + mm] = (0..t1).map(|k| x.x(i, k) * self.a[mm * t1 + k]).sum::<f64>() + self.b_a[i * t1 + mm];
            }
        }
        let mut k = vec![0.0; t1 * t1];
        let mut v = vec![0.0; t1 * t1];
        for j in 0..t1 {
            for mm in 0..t1 {
                k[j * t1 + mm] = (0..n).map(|i| x.x(i, j) * self.b[mm * n + i]).sum::<f64>() + self.b_b[j * t1 + mm];
                v[j * t1 + mm] = (0..n).map(|i| x.x(i, j) * self.c[mm * n + i]).sum::<f64>() + self.b_c[j * t1 + mm];
            }
        }
        let root = (t1 as f64).sqrt();
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<f64> = (0..t1)
                .map(|j| (0..t1).map(|mm| q[i * t1 + mm] * k[j * t1 + mm]).sum::<f64>() / root)
                .collect();
            if row.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite("attention scores"));
            }
            softmax_in_place(&mut row);
            w.push(row);
        }
        let vsum: Vec<f64> = (0..t1).map(|j| v[j * t1..(j + 1) * t1].iter().sum()).collect();
        let y: Vec<f64> = w
            .iter()
            .map(|row| row.iter().zip(&vsum).map(|(a, b)| a * b).sum())
            .collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("merged scores"));
        }
        Ok(AttnCache { q, k, v, w, y })
    }

    pub fn forward(&self, x: &AdjustmentMatrix) -> Result<FusionOutput> {
        let c = self.run(x)?;
        Ok(FusionOutput {
            class: argmax(&c.y),
            y: c.y,
            weights: c.w,
        })
    }

    /// Loss and flat gradient in [`PlainAttention::flat`] order.
    pub fn backward(&self, x: &AdjustmentMatrix, gold: usize) -> Result<(f64, Vec<f64>)> {
        let c = self.run(x)?;
        let (n, t1) = (self.n, self.t + 1);
        let root = (t1 as f64).sqrt();
        let (loss, dy) = cross_entropy(&c.y, gold);
        let vsum: Vec<f64> = (0..t1).map(|j| c.v[j * t1..(j + 1) * t1].iter().sum()).collect();
        let mut g = Self::zeros(n, self.t);
        let mut dq = vec![0.0; n * t1];
        let mut dk = vec![0.0; t1 * t1];
        // y_i = Σ_j W_ij vsum_j, so every entry of V row j receives Σ_i W_ij dy_i
        let dv_row: Vec<f64> = (0..t1).map(|j| (0..n).map(|i| c.w[i][j] * dy[i]).sum()).collect();
        for i in 0..n {
            let row = &c.w[i];
            let dw: Vec<f64> = vsum.iter().map(|s| dy[i] * s).collect();
            let inner: f64 = row.iter().zip(&dw).map(|(a, b)| a * b).sum();
            for j in 0..t1 {
                let ds = row[j] * (dw[j] - inner) / root;
                for mm in 0..t1 {
                    dq[i * t1 + mm] += ds * c.k[j * t1 + mm];
                    dk[j * t1 + mm] += ds * c.q[i * t1 + mm];
                }
            }
        }
        for i in 0..n {
            for mm in 0..t1 {
                let d = dq[i * t1 + mm];
                g.b_a[i * t1 + mm] = d;
                for k in 0..t1 {
                    g.a[mm * t1 + k] += d * x.x(i, k);
                }
            }
        }
        for j in 0..t1 {
            for mm in 0..t1 {
                let dkk = dk[j * t1 + mm];
                let dvv = dv_row[j];
                g.b_b[j * t1 + mm] = dkk;
                g.b_c[j * t1 + mm] = dvv;
                for i in 0..n {
                    g.b[mm * n + i] += dkk * x.x(i, j);
                    g.c[mm * n + i] += dvv * x.x(i, j);
                }
            }
        }
        Ok((loss, g.flat()))
    }
}
