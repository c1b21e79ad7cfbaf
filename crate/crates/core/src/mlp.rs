//! Feed-forward networks with ELU hidden activations, a linear final layer,
//! and hand-derived backpropagation.

use crate::error::{Error, Result};
use crate::linalg::{orthogonal, Matrix};
use crate::rng::Prng;
use serde::{Deserialize, Serialize};

/// ELU with α = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Derivative of [`elu`].
#[inline]
pub fn elu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Multi-layer perceptron. `weights[l]` maps layer input to output as
/// y = W x + b; ELU is applied after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer values saved by the forward pass: the input to each layer and
/// its pre-activation output. Sufficient for an exact backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

/// Gradient (or optimizer-moment) buffers shaped like a net's parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpGrads {
    pub dw: Vec<Matrix>,
    pub db: Vec<Vec<f64>>,
}

/// Reusable buffers for allocation-free evaluation.
#[derive(Debug, Default, Clone)]
pub struct MlpScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl MlpNet {
    /// Net with the given layer sizes, e.g. `[27, 64, 64, 32, 2]`.
    /// Hidden weights are semi-orthogonal scaled by `hidden_gain`; the final
    /// layer is semi-orthogonal scaled by `final_scale`; biases start at zero.
    pub fn new_orthogonal(dims: &[usize], hidden_gain: f64, final_scale: f64, rng: &mut Prng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let n_layers = dims.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let gain = if l + 1 == n_layers { final_scale } else { hidden_gain };
            weights.push(orthogonal(dims[l + 1], dims[l], gain, rng));
            biases.push(vec![0.0; dims[l + 1]]);
        }
        MlpNet { weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.n_layers() - 1].rows
    }

    pub fn max_width(&self) -> usize {
        self.weights.iter().map(|w| w.rows.max(w.cols)).max().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Validate that consecutive layer dimensions chain.
    pub fn check_shapes(&self) -> Result<()> {
        if self.weights.len() != self.biases.len() {
            return Err(Error::Dimension("weight/bias layer counts differ".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            if b.len() != w.rows {
                return Err(Error::Dimension(format!("layer {l}: bias length {} != rows {}", b.len(), w.rows)));
            }
            if l > 0 && w.cols != self.weights[l - 1].rows {
                return Err(Error::Dimension(format!(
                    "layer {l}: input dim {} does not chain with previous output {}",
                    w.cols,
                    self.weights[l - 1].rows
                )));
            }
        }
        Ok(())
    }

    /// Forward pass without a cache. Output written into and borrowed from
    /// `scratch`; no allocation after warm-up.
    pub fn eval_into<'s>(&self, x: &[f64], scratch: &'s mut MlpScratch) -> &'s [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let width = self.max_width();
        scratch.a.resize(width, 0.0);
        scratch.b.resize(width, 0.0);
        scratch.a[..x.len()].copy_from_slice(x);
        let mut cur_len = x.len();
        let n = self.n_layers();
        for l in 0..n {
            let w = &self.weights[l];
            let b = &self.biases[l];
            {
                let (cur, next) = (&scratch.a[..cur_len], &mut scratch.b[..w.rows]);
                w.matvec_into(cur, next);
                for (y, bi) in next.iter_mut().zip(b.iter()) {
                    *y += bi;
                }
                if l + 1 < n {
                    for y in next.iter_mut() {
                        *y = elu(*y);
                    }
                }
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
            cur_len = w.rows;
        }
        &scratch.a[..cur_len]
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut s = MlpScratch::default();
        self.eval_into(x, &mut s).to_vec()
    }

    /// Forward pass returning the output and a cache for [`MlpNet::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "mlp forward: input length {} != first layer input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let n = self.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for l in 0..n {
            let w = &self.weights[l];
            let mut z = w.matvec(&a).expect("shapes checked");
            for (zi, bi) in z.iter_mut().zip(self.biases[l].iter()) {
                *zi += bi;
            }
            inputs.push(a);
            a = if l + 1 < n { z.iter().map(|&v| elu(v)).collect() } else { z.clone() };
            pre.push(z);
        }
        Ok((a, MlpCache { inputs, pre }))
    }

    /// Backward pass for a cache produced by [`MlpNet::forward`] on this net.
    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        let n = self.n_layers();
        if cache.inputs.len() != n || cache.pre.len() != n {
            return Err(Error::Dimension("mlp backward: cache layer count does not match net".into()));
        }
        if dy.len() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "mlp backward: dy length {} != output dim {}",
                dy.len(),
                self.output_dim()
            )));
        }
        for l in 0..n {
            if cache.inputs[l].len() != self.weights[l].cols || cache.pre[l].len() != self.weights[l].rows {
                return Err(Error::Dimension(format!("mlp backward: stale cache at layer {l}")));
            }
        }
        Ok(self.backward_unchecked(cache, dy, grads))
    }

    /// Backward pass without shape validation (hot path; shapes asserted in
    /// debug builds).
    pub fn backward_unchecked(&self, cache: &MlpCache, dy: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let n = self.n_layers();
        let mut delta = dy.to_vec();
        for l in (0..n).rev() {
            let w = &self.weights[l];
            if l + 1 < n {
                // Output of layer l passed through ELU before feeding layer
                // l+1. Its derivative falls out of the cached post-activation
                // (a + 1 on the negative branch), reusing the forward exp.
                let post = &cache.inputs[l + 1];
                for (d, &a) in delta.iter_mut().zip(post.iter()) {
                    *d *= if a > 0.0 { 1.0 } else { a + 1.0 };
                }
            }
            let a_in = &cache.inputs[l];
            let gw = &mut grads.dw[l];
            debug_assert_eq!(gw.rows, w.rows);
            debug_assert_eq!(gw.cols, w.cols);
            for (r, &dr) in delta.iter().enumerate() {
                let grow = &mut gw.data[r * gw.cols..(r + 1) * gw.cols];
                for (g, &ai) in grow.iter_mut().zip(a_in.iter()) {
                    *g += dr * ai;
                }
            }
            for (g, &dr) in grads.db[l].iter_mut().zip(delta.iter()) {
                *g += dr;
            }
            if l > 0 {
                delta = w.matvec_t(&delta);
            } else {
                delta = w.matvec_t(&delta);
            }
        }
        delta
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        MlpGrads {
            dw: net.weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect(),
            db: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for w in self.dw.iter_mut() {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        for b in self.db.iter_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.dw.iter_mut().zip(other.dw.iter()) {
            for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
                *x += y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(other.db.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in self.dw.iter_mut() {
            w.data.iter_mut().for_each(|v| *v *= k);
        }
        for b in self.db.iter_mut() {
            b.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn sum_sq(&self) -> f64 {
        let mut s = 0.0;
        for w in self.dw.iter() {
            s += w.data.iter().map(|v| v * v).sum::<f64>();
        }
        for b in self.db.iter() {
            s += b.iter().map(|v| v * v).sum::<f64>();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn one_layer(w: f64, b: f64) -> MlpNet {
        MlpNet {
            weights: vec![Matrix::from_rows(&[&[w]])],
            biases: vec![vec![b]],
        }
    }

    #[test]
    fn single_affine_layer() {
        let net = one_layer(2.0, 0.0);
        let (y, _) = net.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![6.0]);
    }

    #[test]
    fn zero_net_maps_to_zero() {
        let mut rng = Prng::new(1);
        let mut net = MlpNet::new_orthogonal(&[3, 5, 2], 2.0f64.sqrt(), 0.01, &mut rng);
        for w in net.weights.iter_mut() {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (y, _) = net.forward(&[0.3, -1.0, 4.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn two_layer_elu_value() {
        // W1=[[1]], b1=[-1], W2=[[1]], b2=[0], x=0.5 → ELU(-0.5) = e^{-0.5} − 1.
        let net = MlpNet {
            weights: vec![Matrix::from_rows(&[&[1.0]]), Matrix::from_rows(&[&[1.0]])],
            biases: vec![vec![-1.0], vec![0.0]],
        };
        let (y, _) = net.forward(&[0.5]).unwrap();
        let expect = (-0.5f64).exp() - 1.0;
        assert!((y[0] - expect).abs() < 1e-15, "got {}, want {expect}", y[0]);
        assert!((y[0] - (-0.39347)).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = one_layer(2.0, 0.0);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_backward_exact() {
        let net = one_layer(2.0, 0.0);
        let (_, cache) = net.forward(&[3.0]).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        let dx = net.backward(&cache, &[1.0], &mut grads).unwrap();
        assert_eq!(grads.dw[0].data, vec![3.0]);
        assert_eq!(grads.db[0], vec![1.0]);
        assert_eq!(dx, vec![2.0]);
    }

    #[test]
    fn zero_dy_zero_grads() {
        let mut rng = Prng::new(2);
        let net = MlpNet::new_orthogonal(&[4, 8, 3], 2.0f64.sqrt(), 0.01, &mut rng);
        let (_, cache) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&cache, &[0.0, 0.0, 0.0], &mut grads).unwrap();
        assert_eq!(grads.sum_sq(), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = Prng::new(3);
        let net = MlpNet::new_orthogonal(&[4, 8, 3], 2.0f64.sqrt(), 0.01, &mut rng);
        let other = MlpNet::new_orthogonal(&[4, 6, 3], 2.0f64.sqrt(), 0.01, &mut rng);
        let (_, cache) = other.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        assert!(net.backward(&cache, &[0.0; 3], &mut grads).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Random 3-layer net: dL/dparam for L = Σ c_i y_i checked against
        // central differences, coordinate by coordinate.
        let mut rng = Prng::new(42);
        let net = MlpNet::new_orthogonal(&[5, 7, 6, 3], 2.0f64.sqrt(), 0.5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.normal()).collect();

        let (_, cache) = net.forward(&x).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        let dx = net.backward(&cache, &c, &mut grads).unwrap();

        // Flatten parameters plus the input into one vector for the checker.
        let mut theta: Vec<f64> = Vec::new();
        for w in net.weights.iter() {
            theta.extend_from_slice(&w.data);
        }
        for b in net.biases.iter() {
            theta.extend_from_slice(&b);
        }
        theta.extend_from_slice(&x);

        let mut analytic: Vec<f64> = Vec::new();
        for w in grads.dw.iter() {
            analytic.extend_from_slice(&w.data);
        }
        for b in grads.db.iter() {
            analytic.extend_from_slice(&b);
        }
        analytic.extend_from_slice(&dx);

        let shape = net.clone();
        let f = move |t: &[f64]| {
            let mut net = shape.clone();
            let mut k = 0;
            for w in net.weights.iter_mut() {
                for v in w.data.iter_mut() {
                    *v = t[k];
                    k += 1;
                }
            }
            for b in net.biases.iter_mut() {
                for v in b.iter_mut() {
                    *v = t[k];
                    k += 1;
                }
            }
            let xin = &t[k..];
            let (y, _) = net.forward(xin).unwrap();
            y.iter().zip(c.iter()).map(|(a, b)| a * b).sum()
        };
        let err = grad_check(&f, &analytic, &theta, 1e-5);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn eval_matches_forward() {
        let mut rng = Prng::new(5);
        let net = MlpNet::new_orthogonal(&[6, 9, 4], 2.0f64.sqrt(), 0.3, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (y, _) = net.forward(&x).unwrap();
        let mut s = MlpScratch::default();
        let z = net.eval_into(&x, &mut s);
        assert_eq!(y.as_slice(), z);
    }

    #[test]
    fn elu_is_one_lipschitz() {
        let mut rng = Prng::new(77);
        for _ in 0..1_000_000 {
            let a = rng.uniform_in(-20.0, 20.0);
            let b = rng.uniform_in(-20.0, 20.0);
            assert!((elu(a) - elu(b)).abs() <= (a - b).abs() + 1e-15);
        }
    }
}
