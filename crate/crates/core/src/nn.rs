//! Minimal dense layers with hand-written backward passes: linear maps,
//! batch normalization over sequence positions, and an LSTM with
//! backpropagation through time.
//!
//! Matrices are row-major `Vec<f64>`; an `out × in` weight maps an `in`
//! vector to an `out` vector. Sequences are `Vec<Vec<f64>>`, one row per
//! position. Backward functions accumulate into caller-owned gradient buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named trainable tensor (vectors are `rows × 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_owned(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(name: &str, rows: usize, cols: usize, value: f64) -> Self {
        Self {
            data: vec![value; rows * cols],
            ..Self::zeros(name, rows, cols)
        }
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform<R: Rng>(name: &str, rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            data: (0..rows * cols)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
            ..Self::zeros(name, rows, cols)
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `w · x` for an `rows × cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `wᵀ · y` for an `rows × cols` matrix.
pub fn matvec_t(w: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, &yi) in w.chunks_exact(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
    out
}

/// `grad += y ⊗ x`.
pub fn add_outer(grad: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &yi) in grad.chunks_exact_mut(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (g, xj) in row.iter_mut().zip(x) {
            *g += yi * xj;
        }
    }
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the final partial sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

// ---------------------------------------------------------------------------
// Linear

pub fn linear_forward(w: &Param, b: &Param, x: &[f64]) -> Vec<f64> {
    let mut y = matvec(&w.data, w.rows, w.cols, x);
    add_assign(&mut y, &b.data);
    y
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(
    w: &Param,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    add_outer(dw, dy, x);
    add_assign(db, dy);
    matvec_t(&w.data, w.rows, w.cols, dy)
}

// ---------------------------------------------------------------------------
// Batch normalization over positions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// Exponential update from one batch; the variance is only updated when
    /// the batch has at least two rows (unbiased estimate).
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (m, bm) in self.mean.iter_mut().zip(&batch.mean) {
            *m = (1.0 - momentum) * *m + momentum * bm;
        }
        if batch.rows > 1 {
            let correction = batch.rows as f64 / (batch.rows - 1) as f64;
            for (v, bv) in self.var.iter_mut().zip(&batch.var) {
                *v = (1.0 - momentum) * *v + momentum * bv * correction;
            }
        }
    }
}

/// Per-feature batch mean and biased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub rows: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub stats: BatchStats,
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
}

pub fn batchnorm_train(
    gamma: &Param,
    beta: &Param,
    eps: f64,
    xs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, BatchNormCache) {
    let n = xs.len() as f64;
    let width = gamma.len();
    let mut mean = vec![0.0; width];
    for x in xs {
        add_assign(&mut mean, x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for x in xs {
        for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let xhat: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            x.iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((xi, m), s)| (xi - m) * s)
                .collect()
        })
        .collect();
    let ys = xhat
        .iter()
        .map(|xh| {
            xh.iter()
                .zip(&gamma.data)
                .zip(&beta.data)
                .map(|((x, g), b)| g * x + b)
                .collect()
        })
        .collect();
    (
        ys,
        BatchNormCache {
            stats: BatchStats {
                rows: xs.len(),
                mean,
                var,
            },
            xhat,
            inv_std,
        },
    )
}

pub fn batchnorm_infer(
    gamma: &Param,
    beta: &Param,
    eps: f64,
    stats: &RunningStats,
    x: &[f64],
) -> Vec<f64> {
    x.iter()
        .zip(&stats.mean)
        .zip(&stats.var)
        .zip(gamma.data.iter().zip(&beta.data))
        .map(|(((xi, m), v), (g, b))| g * (xi - m) / (v + eps).sqrt() + b)
        .collect()
}

/// Accumulates `dγ`, `dβ` and returns `dx` for every row.
pub fn batchnorm_backward(
    gamma: &Param,
    cache: &BatchNormCache,
    dys: &[Vec<f64>],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<Vec<f64>> {
    let n = dys.len() as f64;
    let width = gamma.len();
    let mut sum_dxhat = vec![0.0; width];
    let mut sum_dxhat_xhat = vec![0.0; width];
    let dxhats: Vec<Vec<f64>> = dys
        .iter()
        .zip(&cache.xhat)
        .map(|(dy, xh)| {
            let dxh: Vec<f64> = dy.iter().zip(&gamma.data).map(|(d, g)| d * g).collect();
            for j in 0..width {
                dgamma[j] += dy[j] * xh[j];
                dbeta[j] += dy[j];
                sum_dxhat[j] += dxh[j];
                sum_dxhat_xhat[j] += dxh[j] * xh[j];
            }
            dxh
        })
        .collect();
    dxhats
        .iter()
        .zip(&cache.xhat)
        .map(|(dxh, xh)| {
            (0..width)
                .map(|j| {
                    cache.inv_std[j] / n * (n * dxh[j] - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j])
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// LSTM

/// Weights of a single-layer LSTM. Gate blocks are ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a Param,
    pub w_hh: &'a Param,
    pub bias: &'a Param,
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hidden = self.hidden();
        let mut z = matvec(&self.w_ih.data, self.w_ih.rows, self.w_ih.cols, x);
        add_assign(
            &mut z,
            &matvec(&self.w_hh.data, self.w_hh.rows, self.w_hh.cols, h_prev),
        );
        add_assign(&mut z, &self.bias.data);
        let i: Vec<f64> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hidden..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hidden)
            .map(|k| f[k] * c_prev[k] + i[k] * g[k])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            c,
        }
    }

    /// Runs the recurrence from `h₀ = c₀ = 0`.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Vec<LstmStep> {
        let hidden = self.hidden();
        let mut steps: Vec<LstmStep> = Vec::with_capacity(xs.len());
        for x in xs {
            let (h, c) = match steps.last() {
                Some(s) => (s.h.clone(), s.c.clone()),
                None => (vec![0.0; hidden], vec![0.0; hidden]),
            };
            steps.push(self.step(x, &h, &c));
        }
        steps
    }

    /// Backpropagation through time. `dhs[t]` is the external gradient on
    /// `h_t`. Accumulates weight gradients and returns `dx_t` per step.
    pub fn backward(
        &self,
        steps: &[LstmStep],
        dhs: &[Vec<f64>],
        dw_ih: &mut [f64],
        dw_hh: &mut [f64],
        dbias: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let hidden = self.hidden();
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dxs = vec![Vec::new(); steps.len()];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let mut dz = vec![0.0; 4 * hidden];
            for k in 0..hidden {
                let dh = dhs[t][k] + dh_next[k];
                let d_o = dh * s.tanh_c[k];
                let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let di = dc * s.g[k];
                let dg = dc * s.i[k];
                let df = dc * s.c_prev[k];
                dc_next[k] = dc * s.f[k];
                dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                dz[hidden + k] = df * s.f[k] * (1.0 - s.f[k]);
                dz[2 * hidden + k] = dg * (1.0 - s.g[k] * s.g[k]);
                dz[3 * hidden + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            add_outer(dw_ih, &dz, &s.x);
            add_outer(dw_hh, &dz, &s.h_prev);
            add_assign(dbias, &dz);
            dxs[t] = matvec_t(&self.w_ih.data, self.w_ih.rows, self.w_ih.cols, &dz);
            dh_next = matvec_t(&self.w_hh.data, self.w_hh.rows, self.w_hh.cols, &dz);
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / scale.max(1e-300)
    }

    fn random_seq<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[0.2, 0.3]);
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lstm_zero_fixed_point() {
        let w_ih = Param::zeros("w_ih", 12, 4);
        let w_hh = Param::zeros("w_hh", 12, 3);
        let bias = Param::zeros("b", 12, 1);
        let lstm = LstmWeights {
            w_ih: &w_ih,
            w_hh: &w_hh,
            bias: &bias,
        };
        let steps = lstm.forward(&vec![vec![0.0; 4]; 5]);
        assert!(steps.iter().all(|s| s.h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn lstm_hidden_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w_ih = Param::uniform("w_ih", 20, 3, 3.0, &mut rng);
        let w_hh = Param::uniform("w_hh", 20, 5, 3.0, &mut rng);
        let bias = Param::uniform("b", 20, 1, 3.0, &mut rng);
        let lstm = LstmWeights {
            w_ih: &w_ih,
            w_hh: &w_hh,
            bias: &bias,
        };
        let steps = lstm.forward(&vec![vec![2.0, -1.0, 0.5]; 500]);
        assert!(steps.iter().all(|s| s.h.iter().all(|v| v.abs() < 1.0)));
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (input, hidden, len) = (4, 3, 3);
        let mut params = [
            Param::uniform("w_ih", 4 * hidden, input, 0.8, &mut rng),
            Param::uniform("w_hh", 4 * hidden, hidden, 0.8, &mut rng),
            Param::uniform("b", 4 * hidden, 1, 0.8, &mut rng),
        ];
        let xs = random_seq(len, input, &mut rng);
        let coeffs = random_seq(len, hidden, &mut rng);
        let objective = |p: &[Param; 3]| {
            let lstm = LstmWeights {
                w_ih: &p[0],
                w_hh: &p[1],
                bias: &p[2],
            };
            lstm.forward(&xs)
                .iter()
                .zip(&coeffs)
                .map(|(s, c)| s.h.iter().zip(c).map(|(h, c)| h * c).sum::<f64>())
                .sum::<f64>()
        };
        let mut grads = [
            vec![0.0; params[0].len()],
            vec![0.0; params[1].len()],
            vec![0.0; params[2].len()],
        ];
        let dxs = {
            let lstm = LstmWeights {
                w_ih: &params[0],
                w_hh: &params[1],
                bias: &params[2],
            };
            let steps = lstm.forward(&xs);
            let [g0, g1, g2] = &mut grads;
            lstm.backward(&steps, &coeffs, g0, g1, g2)
        };
        let h = 1e-6;
        for (pi, grad) in grads.iter().enumerate() {
            let numeric: Vec<f64> = (0..grad.len())
                .map(|k| {
                    let orig = params[pi].data[k];
                    params[pi].data[k] = orig + h;
                    let up = objective(&params);
                    params[pi].data[k] = orig - h;
                    let down = objective(&params);
                    params[pi].data[k] = orig;
                    (up - down) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(grad, &numeric) < 1e-6, "group {pi}");
        }
        // input gradient
        let lstm = LstmWeights {
            w_ih: &params[0],
            w_hh: &params[1],
            bias: &params[2],
        };
        let mut xs_mut = xs.clone();
        let obj_x = |xs: &[Vec<f64>]| {
            lstm.forward(xs)
                .iter()
                .zip(&coeffs)
                .map(|(s, c)| s.h.iter().zip(c).map(|(h, c)| h * c).sum::<f64>())
                .sum::<f64>()
        };
        for t in 0..len {
            for k in 0..input {
                let orig = xs_mut[t][k];
                xs_mut[t][k] = orig + h;
                let up = obj_x(&xs_mut);
                xs_mut[t][k] = orig - h;
                let down = obj_x(&xs_mut);
                xs_mut[t][k] = orig;
                let numeric = (up - down) / (2.0 * h);
                assert!((dxs[t][k] - numeric).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let width = 4;
        let gamma = Param::uniform("g", width, 1, 1.5, &mut rng);
        let beta = Param::uniform("b", width, 1, 1.5, &mut rng);
        let mut xs = random_seq(3, width, &mut rng);
        let coeffs = random_seq(3, width, &mut rng);
        let objective = |xs: &[Vec<f64>], g: &Param, b: &Param| {
            let (ys, _) = batchnorm_train(g, b, 1e-5, xs);
            ys.iter()
                .zip(&coeffs)
                .map(|(y, c)| y.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
        };
        let (_, cache) = batchnorm_train(&gamma, &beta, 1e-5, &xs);
        let mut dg = vec![0.0; width];
        let mut db = vec![0.0; width];
        let dxs = batchnorm_backward(&gamma, &cache, &coeffs, &mut dg, &mut db);
        let h = 1e-6;
        for t in 0..xs.len() {
            for k in 0..width {
                let orig = xs[t][k];
                xs[t][k] = orig + h;
                let up = objective(&xs, &gamma, &beta);
                xs[t][k] = orig - h;
                let down = objective(&xs, &gamma, &beta);
                xs[t][k] = orig;
                assert!((dxs[t][k] - (up - down) / (2.0 * h)).abs() < 1e-6);
            }
        }
        let mut g2 = gamma.clone();
        for k in 0..width {
            g2.data[k] += h;
            let up = objective(&xs, &g2, &beta);
            g2.data[k] -= 2.0 * h;
            let down = objective(&xs, &g2, &beta);
            g2.data[k] += h;
            assert!((dg[k] - (up - down) / (2.0 * h)).abs() < 1e-6);
            assert!((db[k] - coeffs.iter().map(|c| c[k]).sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_batchnorm_is_finite() {
        let gamma = Param::filled("g", 3, 1, 1.0);
        let beta = Param::filled("b", 3, 1, 0.25);
        let (ys, cache) = batchnorm_train(&gamma, &beta, 1e-5, &[vec![4.0, -2.0, 7.0]]);
        assert_eq!(ys[0], vec![0.25; 3]);
        let mut dg = vec![0.0; 3];
        let mut db = vec![0.0; 3];
        let dx = batchnorm_backward(&gamma, &cache, &[vec![1.0; 3]], &mut dg, &mut db);
        assert!(dx[0].iter().all(|v| *v == 0.0));
        let inf = batchnorm_infer(&gamma, &beta, 1e-5, &RunningStats::new(3), &[0.0; 3]);
        assert!(inf.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn linear_backward_shapes() {
        let w = Param {
            name: "w".into(),
            rows: 2,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let b = Param::filled("b", 2, 1, 0.5);
        assert_eq!(linear_forward(&w, &b, &[1.0, 0.0, -1.0]), vec![-1.5, -1.5]);
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        let dx = linear_backward(&w, &[1.0, 0.0, -1.0], &[1.0, 2.0], &mut dw, &mut db);
        assert_eq!(dx, vec![9.0, 12.0, 15.0]);
        assert_eq!(dw, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(db, vec![1.0, 2.0]);
    }
}
