//! Fully connected ReLU network with a scalar linear output, trained by plain
//! minibatch SGD on mean squared error.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradients laid out like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-normal weights, zero biases. An empty `hidden` gives a linear model.
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: &[usize], rng: &mut R) -> Mlp {
        let mut widths = vec![n_in];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let sd = (2.0 / n_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, sd).expect("positive sd");
                Layer { n_in, n_out, w: (0..n_in * n_out).map(|_| normal.sample(rng)).collect(), b: vec![0.0; n_out] }
            })
            .collect();
        Mlp { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut a, &mut z);
        }
        a[0]
    }

    /// Mean squared error over the batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        xs.iter().zip(ys).map(|(x, y)| (self.forward(x) - y).powi(2)).sum::<f64>() / xs.len() as f64
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// Backpropagated gradient of [`Mlp::loss`] over the batch.
    pub fn gradients(&self, xs: &[Vec<f64>], ys: &[f64]) -> Grads {
        let mut g = self.zero_grads();
        let scale = 2.0 / xs.len() as f64;
        for (x, y) in xs.iter().zip(ys) {
            self.accumulate(x, *y, scale, &mut g);
        }
        g
    }

    fn accumulate(&self, x: &[f64], y: f64, scale: f64, g: &mut Grads) {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&acts[k], &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let mut delta = vec![scale * (acts[last + 1][0] - y)];
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            for (o, d) in delta.iter().enumerate() {
                g.b[k][o] += d;
                let row = &mut g.w[k][o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.n_in];
                for (d, row) in delta.iter().zip(layer.w.chunks_exact(layer.n_in)) {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative: the stored activation is zero exactly when inactive.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn step(&mut self, g: &Grads, lr: f64) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            layer.w.iter_mut().zip(&g.w[k]).for_each(|(w, d)| *w -= lr * d);
            layer.b.iter_mut().zip(&g.b[k]).for_each(|(b, d)| *b -= lr * d);
        }
    }

    /// `epochs` passes of shuffled minibatch SGD.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        epochs: usize,
        batch: usize,
        lr: f64,
        rng: &mut R,
    ) {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut g = self.zero_grads();
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch.max(1)) {
                self.minibatch(xs, ys, chunk, lr, &mut g);
            }
        }
    }

    /// `steps` SGD steps; every minibatch holds the last `fresh` rows plus
    /// rows replayed uniformly from the older ones.
    #[allow(clippy::too_many_arguments)]
    pub fn replay_steps<R: Rng + ?Sized>(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        fresh: usize,
        steps: usize,
        batch: usize,
        lr: f64,
        rng: &mut R,
    ) {
        let n = xs.len();
        let fresh = fresh.min(n);
        let old = n - fresh;
        let mut g = self.zero_grads();
        let mut idx = Vec::with_capacity(batch.max(fresh));
        for _ in 0..steps {
            idx.clear();
            idx.extend(old..n);
            if old > 0 {
                while idx.len() < batch {
                    idx.push(rng.random_range(0..old));
                }
            }
            self.minibatch(xs, ys, &idx, lr, &mut g);
        }
    }

    fn minibatch(&mut self, xs: &[Vec<f64>], ys: &[f64], rows: &[usize], lr: f64, g: &mut Grads) {
        if rows.is_empty() {
            return;
        }
        g.w.iter_mut().chain(g.b.iter_mut()).for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
        let scale = 2.0 / rows.len() as f64;
        for &i in rows {
            self.accumulate(&xs[i], ys[i], scale, g);
        }
        self.step(g, lr);
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.w.len() {
                return &mut l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return &mut l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Central finite-difference gradient, same layout as [`Mlp::params`].
    pub fn numeric_gradient(&self, xs: &[Vec<f64>], ys: &[f64], h: f64) -> Vec<f64> {
        let mut probe = self.clone();
        (0..self.n_params())
            .map(|i| {
                let orig = *probe.param_mut(i);
                *probe.param_mut(i) = orig + h;
                let up = probe.loss(xs, ys);
                *probe.param_mut(i) = orig - h;
                let down = probe.loss(xs, ys);
                *probe.param_mut(i) = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

impl Grads {
    pub fn flatten(&self) -> Vec<f64> {
        self.w.iter().zip(&self.b).flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_network_bias_gradient() {
        let mut net = Mlp::new(3, &[4], &mut rng::seeded(1));
        for l in &mut net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
        }
        let xs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]];
        let ys = vec![0.0, 0.0];
        let g = net.gradients(&xs, &ys);
        // prediction is 0 everywhere, so the mean of 2·(pred − target) is 0
        assert_eq!(g.b[1][0], 0.0);
        let ys = vec![1.0, 3.0];
        let g = net.gradients(&xs, &ys);
        assert_eq!(g.b[1][0], (2.0 * (0.0 - 1.0) + 2.0 * (0.0 - 3.0)) / 2.0);
    }

    #[test]
    fn linear_layer_matches_least_squares_gradient() {
        let net = Mlp::new(2, &[], &mut rng::seeded(4));
        let xs = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]];
        let ys = vec![1.0, 0.0, -2.0];
        let g = net.gradients(&xs, &ys);
        let (w, b) = (&net.layers[0].w, net.layers[0].b[0]);
        let n = xs.len() as f64;
        let mut gw = [0.0; 2];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let r = w[0] * x[0] + w[1] * x[1] + b - y;
            gw[0] += 2.0 * r * x[0] / n;
            gw[1] += 2.0 * r * x[1] / n;
            gb += 2.0 * r / n;
        }
        assert!((g.w[0][0] - gw[0]).abs() < 1e-12);
        assert!((g.w[0][1] - gw[1]).abs() < 1e-12);
        assert!((g.b[0][0] - gb).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        let net = Mlp {
            layers: vec![
                Layer { n_in: 2, n_out: 2, w: vec![1.0, -1.0, 0.5, 2.0], b: vec![0.0, -1.0] },
                Layer { n_in: 2, n_out: 1, w: vec![3.0, -0.5], b: vec![0.25] },
            ],
        };
        // h = relu([1-2, 0.5+4-1]) = [0, 3.5]; out = 0 - 1.75 + 0.25
        assert_eq!(net.forward(&[1.0, 2.0]), -1.5);
    }
}
