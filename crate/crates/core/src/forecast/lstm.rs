//! Two-layer stacked LSTM with a linear readout, on a flat `f64`
//! parameter vector.
//!
//! Per timestep and layer the standard gate recursion applies (gate order
//! i, f, g, o packed along rows):
//!
//! ```text
//! pre = W x_t + U h_{t-1} + b
//! i = sigmoid(pre_i)   f = sigmoid(pre_f)
//! g = tanh(pre_g)      o = sigmoid(pre_o)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! The scalar prediction is `w_r . h2_T + b_r` on the final hidden state
//! of the second layer. Gradients come from backpropagation through time
//! and are validated against central finite differences in the tests and
//! acceptance suite.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Parameter shape of the two-layer network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmShape {
    pub n_features: usize,
    pub n_steps: usize,
    pub h1: usize,
    pub h2: usize,
}

struct LayerView {
    w: usize, // 4*hid x in_dim, row-major
    u: usize, // 4*hid x hid
    b: usize, // 4*hid
    in_dim: usize,
    hid: usize,
}

impl LstmShape {
    fn layer1(&self) -> LayerView {
        LayerView {
            w: 0,
            u: 4 * self.h1 * self.n_features,
            b: 4 * self.h1 * self.n_features + 4 * self.h1 * self.h1,
            in_dim: self.n_features,
            hid: self.h1,
        }
    }

    fn layer2(&self) -> LayerView {
        let base = 4 * self.h1 * (self.n_features + self.h1 + 1);
        LayerView {
            w: base,
            u: base + 4 * self.h2 * self.h1,
            b: base + 4 * self.h2 * self.h1 + 4 * self.h2 * self.h2,
            in_dim: self.h1,
            hid: self.h2,
        }
    }

    fn readout_w(&self) -> usize {
        4 * self.h1 * (self.n_features + self.h1 + 1) + 4 * self.h2 * (self.h1 + self.h2 + 1)
    }

    fn readout_b(&self) -> usize {
        self.readout_w() + self.h2
    }

    pub fn param_count(&self) -> usize {
        self.readout_b() + 1
    }

    /// Deterministic uniform(-1/sqrt(fan_in), +) init with forget-gate
    /// biases at 1.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count()];
        for layer in [self.layer1(), self.layer2()] {
            let scale = 1.0 / (layer.in_dim as f64).sqrt();
            for p in &mut params[layer.w..layer.w + 4 * layer.hid * layer.in_dim] {
                *p = rng.random_range(-scale..scale);
            }
            let scale = 1.0 / (layer.hid as f64).sqrt();
            for p in &mut params[layer.u..layer.u + 4 * layer.hid * layer.hid] {
                *p = rng.random_range(-scale..scale);
            }
            // Forget gate biases start open.
            for j in 0..layer.hid {
                params[layer.b + layer.hid + j] = 1.0;
            }
        }
        let scale = 1.0 / (self.h2 as f64).sqrt();
        for p in &mut params[self.readout_w()..self.readout_w() + self.h2] {
            *p = rng.random_range(-scale..scale);
        }
        params
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-timestep cache of one layer's cell evaluation.
struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn cell_forward(
    params: &[f64],
    layer: &LayerView,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, CellCache) {
    let hid = layer.hid;
    let mut pre = vec![0.0; 4 * hid];
    for (row, p) in pre.iter_mut().enumerate() {
        let mut v = params[layer.b + row];
        let w_row = layer.w + row * layer.in_dim;
        for (k, xv) in x.iter().enumerate() {
            v += params[w_row + k] * xv;
        }
        let u_row = layer.u + row * hid;
        for (k, hv) in h_prev.iter().enumerate() {
            v += params[u_row + k] * hv;
        }
        *p = v;
    }
    let mut i = vec![0.0; hid];
    let mut f = vec![0.0; hid];
    let mut g = vec![0.0; hid];
    let mut o = vec![0.0; hid];
    for j in 0..hid {
        i[j] = sigmoid(pre[j]);
        f[j] = sigmoid(pre[hid + j]);
        g[j] = pre[2 * hid + j].tanh();
        o[j] = sigmoid(pre[3 * hid + j]);
    }
    let mut c = vec![0.0; hid];
    let mut tanh_c = vec![0.0; hid];
    let mut h = vec![0.0; hid];
    for j in 0..hid {
        c[j] = f[j] * c_prev[j] + i[j] * g[j];
        tanh_c[j] = c[j].tanh();
        h[j] = o[j] * tanh_c[j];
    }
    let cache = CellCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    (h, c, cache)
}

/// Forward pass over one normalized input window
/// (`input[step * n_features + feature]`). Returns the normalized scalar
/// prediction.
pub fn forward(params: &[f64], shape: &LstmShape, input: &[f64]) -> f64 {
    assert_eq!(
        input.len(),
        shape.n_steps * shape.n_features,
        "input window shape mismatch"
    );
    let l1 = shape.layer1();
    let l2 = shape.layer2();
    let mut h1 = vec![0.0; shape.h1];
    let mut c1 = vec![0.0; shape.h1];
    let mut h2 = vec![0.0; shape.h2];
    let mut c2 = vec![0.0; shape.h2];
    for t in 0..shape.n_steps {
        let x = &input[t * shape.n_features..(t + 1) * shape.n_features];
        let (h, c, _) = cell_forward(params, &l1, x, &h1, &c1);
        h1 = h;
        c1 = c;
        let (h, c, _) = cell_forward(params, &l2, &h1, &h2, &c2);
        h2 = h;
        c2 = c;
    }
    let mut y = params[shape.readout_b()];
    let wr = shape.readout_w();
    for j in 0..shape.h2 {
        y += params[wr + j] * h2[j];
    }
    y
}

fn cell_backward(
    params: &[f64],
    layer: &LayerView,
    cache: &CellCache,
    dh: &[f64],
    dc_in: &[f64],
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hid = layer.hid;
    let mut d_pre = vec![0.0; 4 * hid];
    let mut dc_prev = vec![0.0; hid];
    for j in 0..hid {
        let dc = dh[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]) + dc_in[j];
        d_pre[j] = dc * cache.g[j] * cache.i[j] * (1.0 - cache.i[j]);
        d_pre[hid + j] = dc * cache.c_prev[j] * cache.f[j] * (1.0 - cache.f[j]);
        d_pre[2 * hid + j] = dc * cache.i[j] * (1.0 - cache.g[j] * cache.g[j]);
        d_pre[3 * hid + j] = dh[j] * cache.tanh_c[j] * cache.o[j] * (1.0 - cache.o[j]);
        dc_prev[j] = dc * cache.f[j];
    }
    let mut dx = vec![0.0; layer.in_dim];
    let mut dh_prev = vec![0.0; hid];
    for (row, dp) in d_pre.iter().enumerate() {
        grad[layer.b + row] += dp;
        let w_row = layer.w + row * layer.in_dim;
        for k in 0..layer.in_dim {
            grad[w_row + k] += dp * cache.x[k];
            dx[k] += params[w_row + k] * dp;
        }
        let u_row = layer.u + row * hid;
        for k in 0..hid {
            grad[u_row + k] += dp * cache.h_prev[k];
            dh_prev[k] += params[u_row + k] * dp;
        }
    }
    (dx, dh_prev, dc_prev)
}

/// Mean squared error and its gradient over a batch of normalized
/// (input, target) pairs.
pub fn loss_and_grad(
    params: &[f64],
    shape: &LstmShape,
    batch: &[(&[f64], f64)],
) -> (f64, Vec<f64>) {
    let l1 = shape.layer1();
    let l2 = shape.layer2();
    let mut grad = vec![0.0; shape.param_count()];
    let mut loss = 0.0;
    let inv_n = 1.0 / batch.len() as f64;

    for (input, target) in batch {
        // Forward with caches.
        let mut h1 = vec![0.0; shape.h1];
        let mut c1 = vec![0.0; shape.h1];
        let mut h2 = vec![0.0; shape.h2];
        let mut c2 = vec![0.0; shape.h2];
        let mut caches1 = Vec::with_capacity(shape.n_steps);
        let mut caches2 = Vec::with_capacity(shape.n_steps);
        for t in 0..shape.n_steps {
            let x = &input[t * shape.n_features..(t + 1) * shape.n_features];
            let (h, c, cache) = cell_forward(params, &l1, x, &h1, &c1);
            h1 = h;
            c1 = c;
            caches1.push(cache);
            let (h, c, cache) = cell_forward(params, &l2, &h1, &h2, &c2);
            h2 = h;
            c2 = c;
            caches2.push(cache);
        }
        let wr = shape.readout_w();
        let mut y = params[shape.readout_b()];
        for j in 0..shape.h2 {
            y += params[wr + j] * h2[j];
        }
        let err = y - target;
        loss += err * err * inv_n;

        // Backward through the readout into both recurrent layers.
        let dy = 2.0 * err * inv_n;
        grad[shape.readout_b()] += dy;
        let mut dh2 = vec![0.0; shape.h2];
        for j in 0..shape.h2 {
            grad[wr + j] += dy * h2[j];
            dh2[j] = dy * params[wr + j];
        }
        let mut dc2 = vec![0.0; shape.h2];
        let mut dh1 = vec![0.0; shape.h1];
        let mut dc1 = vec![0.0; shape.h1];
        for t in (0..shape.n_steps).rev() {
            let (dx2, dh2_prev, dc2_prev) =
                cell_backward(params, &l2, &caches2[t], &dh2, &dc2, &mut grad);
            for j in 0..shape.h1 {
                dh1[j] += dx2[j];
            }
            let (_, dh1_prev, dc1_prev) =
                cell_backward(params, &l1, &caches1[t], &dh1, &dc1, &mut grad);
            dh2 = dh2_prev;
            dc2 = dc2_prev;
            dh1 = dh1_prev;
            dc1 = dc1_prev;
        }
    }
    (loss, grad)
}

/// Compares analytic BPTT gradients against central finite differences at
/// randomly sampled parameter coordinates of randomly initialized
/// parameter points. Returns (coordinates checked, worst relative error).
/// The finite-difference side only exercises the forward pass, keeping it
/// independent of the backward implementation it validates.
pub fn check_gradients(
    shape: &LstmShape,
    n_points: usize,
    coords_per_point: usize,
    seed: u64,
) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for point in 0..n_points {
        let params = shape.init_params(seed.wrapping_add(point as u64 + 1));
        let data = random_normalized_batch(shape, 5, seed.wrapping_add(1000 + point as u64));
        let batch: Vec<(&[f64], f64)> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let (_, grad) = loss_and_grad(&params, shape, &batch);
        for _ in 0..coords_per_point {
            let idx = rng.random_range(0..params.len());
            let h = 1e-5;
            let mut p = params.clone();
            p[idx] += h;
            let (lp, _) = loss_and_grad(&p, shape, &batch);
            p[idx] = params[idx] - h;
            let (lm, _) = loss_and_grad(&p, shape, &batch);
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-6);
            let rel = (grad[idx] - fd).abs() / denom;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, worst)
}

fn random_normalized_batch(shape: &LstmShape, n: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..shape.n_steps * shape.n_features)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            (x, rng.random_range(-1.5..1.5))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_predict_bias() {
        let shape = LstmShape {
            n_features: 3,
            n_steps: 3,
            h1: 4,
            h2: 3,
        };
        let mut params = vec![0.0; shape.param_count()];
        params[shape.readout_b()] = 0.37;
        let x = vec![0.5; 9];
        assert_eq!(forward(&params, &shape, &x), 0.37);
    }

    #[test]
    fn forward_is_pure() {
        let shape = LstmShape {
            n_features: 4,
            n_steps: 3,
            h1: 6,
            h2: 5,
        };
        let params = shape.init_params(3);
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        assert_eq!(forward(&params, &shape, &x), forward(&params, &shape, &x));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for shape in [
            LstmShape {
                n_features: 3,
                n_steps: 3,
                h1: 8,
                h2: 6,
            },
            LstmShape {
                n_features: 4,
                n_steps: 3,
                h1: 8,
                h2: 6,
            },
        ] {
            let (checked, worst) = check_gradients(&shape, 12, 10, 42);
            assert!(checked >= 100);
            assert!(worst < 1e-4, "worst relative gradient error {worst:.2e}");
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn wrong_input_shape_panics() {
        let shape = LstmShape {
            n_features: 3,
            n_steps: 3,
            h1: 4,
            h2: 3,
        };
        let params = shape.init_params(0);
        forward(&params, &shape, &[0.0; 7]);
    }
}
