//! Dense feedforward networks with explicit forward/backward passes.
//!
//! Everything here is batched: a batch of B inputs is an Array2 of shape
//! (B, dim), layer weights are (out, in), and the backward pass returns
//! exact reverse-mode gradients for every parameter plus the gradient with
//! respect to the input batch. The encoder head maps the last shared hidden
//! layer to an ambient point (projected onto the manifold by the caller)
//! and to a tanh-bounded diffusion time.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output value.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Array2<f64>, // (out, in)
    pub bias: Array1<f64>,    // (out,)
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform init scaled by 1/sqrt(fan_in), zero bias.
    pub fn init(out: usize, input: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (input as f64).sqrt();
        let weights = Array2::from_shape_fn((out, input), |_| rng.gen_range(-a..a));
        DenseLayer {
            weights,
            bias: Array1::zeros(out),
            activation,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Batched affine + activation.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer input {} != expected {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut y = x.dot(&self.weights.t());
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(y)
    }

    /// Reverse step: given the layer input, its output and dL/d(output),
    /// produce parameter gradients and dL/d(input).
    fn backward(
        &self,
        input: &Array2<f64>,
        output: &Array2<f64>,
        upstream: &Array2<f64>,
    ) -> (LayerGrads, Array2<f64>) {
        let mut dz = upstream.clone();
        for (mut row, orow) in dz.rows_mut().into_iter().zip(output.rows()) {
            for (g, y) in row.iter_mut().zip(orow) {
                *g *= self.activation.derivative_from_output(*y);
            }
        }
        self.backward_given_dz(input, &dz)
    }

    /// Reverse step when dL/d(pre-activation) is already known.
    fn backward_given_dz(&self, input: &Array2<f64>, dz: &Array2<f64>) -> (LayerGrads, Array2<f64>) {
        let d_weights = dz.t().dot(input);
        let d_bias = dz.sum_axis(Axis(0));
        let d_input = dz.dot(&self.weights);
        (LayerGrads { d_weights, d_bias }, d_input)
    }
}

/// Parameter gradients for one dense layer (same shapes as the parameters).
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            d_weights: Array2::zeros(layer.weights.raw_dim()),
            d_bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_weights *= s;
        self.d_bias *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|v| v.is_finite()) && self.d_bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct MlpNetwork {
    pub layers: Vec<DenseLayer>,
}

/// Activations recorded by a forward pass: `activations[0]` is the input
/// batch, `activations[i+1]` the output of layer i.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub activations: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache is never empty")
    }
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(MlpNetwork { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut cur = x.to_owned();
        for layer in &self.layers {
            cur = layer.forward(cur.view())?;
        }
        Ok(cur)
    }

    /// Forward pass that records everything the backward pass needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let y = layer.forward(activations.last().unwrap().view())?;
            activations.push(y);
        }
        Ok(MlpCache { activations })
    }

    /// Exact reverse-mode gradients. `upstream` is dL/d(output), shape
    /// (B, out); returns per-layer parameter gradients (front to back) and
    /// dL/d(input).
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Vec<LayerGrads>, Array2<f64>)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(
                "cache does not match network depth".into(),
            ));
        }
        if upstream.dim() != cache.output().dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} vs output {:?}",
                upstream.dim(),
                cache.output().dim()
            )));
        }
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut up = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, d_in) = layer.backward(&cache.activations[i], &cache.activations[i + 1], &up);
            grads.push(g);
            up = d_in;
        }
        grads.reverse();
        Ok((grads, up))
    }

    /// As [`MlpNetwork::backward`], but `upstream` is dL/d(pre-activation)
    /// of the final layer — the caller has folded the last activation's
    /// derivative into it analytically (e.g. `beta - x` for the Bernoulli
    /// cross-entropy through a sigmoid, which avoids ever dividing by a
    /// saturated sigmoid output).
    pub fn backward_from_pre_activation(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Vec<LayerGrads>, Array2<f64>)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(
                "cache does not match network depth".into(),
            ));
        }
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut up = upstream.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, d_in) = if i == self.layers.len() - 1 {
                layer.backward_given_dz(&cache.activations[i], &up)
            } else {
                layer.backward(&cache.activations[i], &cache.activations[i + 1], &up)
            };
            grads.push(g);
            up = d_in;
        }
        grads.reverse();
        Ok((grads, up))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Encoder output heads: a linear map to ambient coordinates (projected to
/// the manifold downstream) and a linear map whose scalar output s becomes
/// t = t_min + (t_max - t_min) (tanh(s) + 1)/2. The Euclidean baseline
/// reuses `time` as a per-dimension log-variance head instead.
#[derive(Debug, Clone)]
pub struct EncoderHead {
    pub ambient: DenseLayer,
    pub time: DenseLayer,
    pub t_min: f64,
    pub t_max: f64,
}

impl EncoderHead {
    pub fn new(ambient: DenseLayer, time: DenseLayer, t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_min < t_max, got {t_min}, {t_max}"
            )));
        }
        Ok(EncoderHead {
            ambient,
            time,
            t_min,
            t_max,
        })
    }

    /// Map a raw head output s to a diffusion time in [t_min, t_max].
    pub fn time_transform(&self, s: f64) -> f64 {
        self.t_min + (self.t_max - self.t_min) * (s.tanh() + 1.0) / 2.0
    }

    /// dt/ds of [`EncoderHead::time_transform`].
    pub fn time_transform_derivative(&self, s: f64) -> f64 {
        let th = s.tanh();
        (self.t_max - self.t_min) / 2.0 * (1.0 - th * th)
    }
}

/// The quadratic monomials {z_i z_j : i <= j} of a point on S^d.
///
/// Feeding the decoder these features instead of z makes it even by
/// construction: the features of z and -z are identical bit for bit, so
/// decode(z) == decode(-z) exactly as maps on projective space.
pub fn even_feature_map(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(z[i] * z[j]);
        }
    }
    out
}

pub fn even_feature_dim(ambient_dim: usize) -> usize {
    ambient_dim * (ambient_dim + 1) / 2
}

/// Jacobian of [`even_feature_map`], shape (n(n+1)/2, n).
pub fn even_feature_jacobian(z: &[f64]) -> Array2<f64> {
    let n = z.len();
    let mut j = Array2::zeros((n * (n + 1) / 2, n));
    let mut row = 0;
    for i in 0..n {
        for k in i..n {
            j[[row, i]] += z[k];
            j[[row, k]] += z[i];
            row += 1;
        }
    }
    j
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one dense layer.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m_weights: Array2<f64>,
    pub v_weights: Array2<f64>,
    pub m_bias: Array1<f64>,
    pub v_bias: Array1<f64>,
}

impl AdamState {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        AdamState {
            m_weights: Array2::zeros(layer.weights.raw_dim()),
            v_weights: Array2::zeros(layer.weights.raw_dim()),
            m_bias: Array1::zeros(layer.bias.raw_dim()),
            v_bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

/// One Adam update with bias correction; `step` counts from 1.
pub fn adam_step(
    layer: &mut DenseLayer,
    grads: &LayerGrads,
    state: &mut AdamState,
    hyper: &AdamHyper,
    step: u64,
) -> Result<()> {
    if grads.d_weights.raw_dim() != layer.weights.raw_dim()
        || grads.d_bias.raw_dim() != layer.bias.raw_dim()
    {
        return Err(Error::ShapeMismatch("gradient/parameter shapes".into()));
    }
    let t = step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
    };
    for ((p, &g), (m, v)) in layer
        .weights
        .iter_mut()
        .zip(grads.d_weights.iter())
        .zip(state.m_weights.iter_mut().zip(state.v_weights.iter_mut()))
    {
        update(p, g, m, v);
    }
    for ((p, &g), (m, v)) in layer
        .bias
        .iter_mut()
        .zip(grads.d_bias.iter())
        .zip(state.m_bias.iter_mut().zip(state.v_bias.iter_mut()))
    {
        update(p, g, m, v);
    }
    Ok(())
}

/// Build the stock MLP trunk: `depth` hidden layers of width `width`, from
/// `input` features.
pub fn hidden_trunk(
    input: usize,
    width: usize,
    depth: usize,
    activation: Activation,
    rng: &mut impl Rng,
) -> MlpNetwork {
    let mut layers = Vec::with_capacity(depth);
    let mut d = input;
    for _ in 0..depth {
        layers.push(DenseLayer::init(width, d, activation, rng));
        d = width;
    }
    MlpNetwork::new(layers).expect("trunk shapes are consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_through() {
        let layer = DenseLayer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let x = array![[1.0, -2.0, 3.0]];
        let y = layer.forward(x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_layer_clamps() {
        let layer = DenseLayer {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
        };
        let y = layer.forward(array![[-1.0, 2.0]].view()).unwrap();
        assert_eq!(y, array![[0.0, 2.0]]);
    }

    /// Straightforward per-neuron recomputation, written independently of
    /// the batched GEMM path.
    fn naive_forward(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &net.layers {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (i, v) in cur.iter().enumerate() {
                    acc += layer.weights[[o, i]] * v;
                }
                *out = layer.activation.apply(acc);
            }
            cur = next;
        }
        cur
    }

    fn random_net(dims: &[usize], acts: &[Activation], seed: u64) -> MlpNetwork {
        let mut rng = substream(seed, 0);
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(w, &a)| DenseLayer::init(w[1], w[0], a, &mut rng))
            .collect();
        MlpNetwork::new(layers).unwrap()
    }

    #[test]
    fn batched_forward_matches_naive() {
        let net = random_net(
            &[5, 7, 4, 3],
            &[Activation::Relu, Activation::Tanh, Activation::Sigmoid],
            21,
        );
        let mut rng = substream(22, 0);
        let x = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-2.0..2.0));
        let y = net.forward(x.view()).unwrap();
        for (row_x, row_y) in x.rows().into_iter().zip(y.rows()) {
            let naive = naive_forward(&net, row_x.as_slice().unwrap());
            for (a, b) in row_y.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_layer_quadratic_loss_gradient() {
        // loss 0.5 |W x - y|^2 has dW = (W x - y) x^T
        let net = random_net(&[3, 2], &[Activation::Identity], 23);
        let x = array![[0.5, -1.0, 2.0]];
        let target = array![[1.0, 0.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let resid = cache.output() - &target;
        let (grads, _) = net.backward(&cache, resid.view()).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let expect = resid[[0, o]] * x[[0, i]];
                assert!((grads[0].d_weights[[o, i]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = random_net(
            &[4, 6, 5, 3],
            &[Activation::Tanh, Activation::Sigmoid, Activation::Identity],
            24,
        );
        let mut rng = substream(25, 0);
        let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.5..1.5));
        let target = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let loss = |net: &MlpNetwork| -> f64 {
            let out = net.forward(x.view()).unwrap();
            0.5 * (&out - &target).iter().map(|v| v * v).sum::<f64>()
        };
        let cache = net.forward_cached(x.view()).unwrap();
        let upstream = cache.output() - &target;
        let (grads, _) = net.backward(&cache, upstream.view()).unwrap();

        let h = 1e-6;
        for li in 0..net.layers.len() {
            for idx in 0..net.layers[li].weights.len() {
                let orig = net.layers[li].weights.as_slice().unwrap()[idx];
                net.layers[li].weights.as_slice_mut().unwrap()[idx] = orig + h;
                let fp = loss(&net);
                net.layers[li].weights.as_slice_mut().unwrap()[idx] = orig - h;
                let fm = loss(&net);
                net.layers[li].weights.as_slice_mut().unwrap()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads[li].d_weights.as_slice().unwrap()[idx];
                assert!(
                    (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "layer {li} w[{idx}]: {an} vs {fd}"
                );
            }
            for idx in 0..net.layers[li].bias.len() {
                let orig = net.layers[li].bias[idx];
                net.layers[li].bias[idx] = orig + h;
                let fp = loss(&net);
                net.layers[li].bias[idx] = orig - h;
                let fm = loss(&net);
                net.layers[li].bias[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads[li].d_bias[idx];
                assert!(
                    (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "layer {li} b[{idx}]: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = random_net(&[4, 4, 2], &[Activation::Relu, Activation::Tanh], 26);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.1);
        let cache = net.forward_cached(x.view()).unwrap();
        let upstream = Array2::zeros((2, 2));
        let (grads, dx) = net.backward(&cache, upstream.view()).unwrap();
        for g in &grads {
            assert!(g.d_weights.iter().all(|&v| v == 0.0));
            assert!(g.d_bias.iter().all(|&v| v == 0.0));
        }
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_transform_limits() {
        let mut rng = substream(27, 0);
        let head = EncoderHead::new(
            DenseLayer::init(3, 8, Activation::Identity, &mut rng),
            DenseLayer::init(1, 8, Activation::Identity, &mut rng),
            1e-4,
            4e-3,
        )
        .unwrap();
        assert_eq!(head.time_transform(1e3), 4e-3); // tanh saturates exactly
        assert_eq!(head.time_transform(-1e3), 1e-4);
        let mid = head.time_transform(0.0);
        assert!((mid - (1e-4 + 4e-3) / 2.0).abs() < 1e-18);
        // bounds hold for arbitrary inputs
        for _ in 0..1000 {
            let s = rng.gen_range(-50.0..50.0);
            let t = head.time_transform(s);
            assert!((1e-4..=4e-3).contains(&t));
        }
    }

    #[test]
    fn even_features_are_even_bit_exact() {
        let mut rng = substream(28, 0);
        for dim in [2usize, 3] {
            let m = crate::manifold::Manifold::sphere(dim).unwrap();
            for _ in 0..1000 {
                let z = m.uniform_sample(&mut rng);
                let neg: Vec<f64> = z.coords().iter().map(|v| -v).collect();
                assert_eq!(even_feature_map(z.coords()), even_feature_map(&neg));
            }
        }
    }

    #[test]
    fn even_features_basis_point() {
        assert_eq!(
            even_feature_map(&[1.0, 0.0, 0.0]),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(even_feature_dim(3), 6);
        assert_eq!(even_feature_dim(4), 10);
    }

    #[test]
    fn even_feature_jacobian_matches_fd() {
        let z = [0.3, -0.5, 0.81];
        let j = even_feature_jacobian(&z);
        let h = 1e-6;
        for c in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[c] += h;
            zm[c] -= h;
            let fp = even_feature_map(&zp);
            let fm = even_feature_map(&zm);
            for r in 0..6 {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                assert!((j[[r, c]] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = substream(29, 0);
        let mut layer = DenseLayer::init(3, 3, Activation::Identity, &mut rng);
        let before = layer.clone();
        let grads = LayerGrads::zeros_like(&layer);
        let mut state = AdamState::zeros_like(&layer);
        adam_step(&mut layer, &grads, &mut state, &AdamHyper::default(), 1).unwrap();
        assert_eq!(layer.weights, before.weights);
        assert_eq!(layer.bias, before.bias);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // with constant gradient g, the first bias-corrected step is
        // -lr * g / (|g| + eps)
        let mut layer = DenseLayer {
            weights: array![[1.0]],
            bias: array![0.5],
            activation: Activation::Identity,
        };
        let g = 0.3;
        let grads = LayerGrads {
            d_weights: array![[g]],
            d_bias: array![-g],
        };
        let mut state = AdamState::zeros_like(&layer);
        let hyper = AdamHyper::default();
        adam_step(&mut layer, &grads, &mut state, &hyper, 1).unwrap();
        let expected = hyper.lr * g / (g.abs() + hyper.eps);
        assert!((layer.weights[[0, 0]] - (1.0 - expected)).abs() < 1e-12);
        assert!((layer.bias[0] - (0.5 + expected)).abs() < 1e-12);
    }

    #[test]
    fn adam_descends_quadratic() {
        // minimize 0.5 (w - 3)^2 from w = 0
        let mut layer = DenseLayer {
            weights: array![[0.0]],
            bias: array![0.0],
            activation: Activation::Identity,
        };
        let mut state = AdamState::zeros_like(&layer);
        let hyper = AdamHyper {
            lr: 0.02,
            ..AdamHyper::default()
        };
        let loss = |w: f64| 0.5 * (w - 3.0) * (w - 3.0);
        let mut prev = loss(layer.weights[[0, 0]]);
        for step in 1..=100u64 {
            let w = layer.weights[[0, 0]];
            let grads = LayerGrads {
                d_weights: array![[w - 3.0]],
                d_bias: array![0.0],
            };
            adam_step(&mut layer, &grads, &mut state, &hyper, step).unwrap();
            let cur = loss(layer.weights[[0, 0]]);
            if step > 5 {
                assert!(cur < prev, "loss rose at step {step}: {cur} >= {prev}");
            }
            prev = cur;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn init_is_deterministic() {
        let a = random_net(&[4, 8, 2], &[Activation::Relu, Activation::Identity], 31);
        let b = random_net(&[4, 8, 2], &[Activation::Relu, Activation::Identity], 31);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weights, lb.weights);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = random_net(&[4, 4], &[Activation::Relu], 32);
        let x = Array2::<f64>::zeros((1, 5));
        assert!(matches!(
            net.forward(x.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
