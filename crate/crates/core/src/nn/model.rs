use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Layer, ModelSpec, Shape};
use super::NnError;

/// Parameters of one layer. Dense weights are `in x out` row-major;
/// convolution kernels are `K x k x k x C`. Layers without parameters hold
/// empty vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<LayerParams>,
}

impl ModelWeights {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = spec
            .layers()
            .iter()
            .zip(spec.shapes())
            .map(|(layer, &input)| {
                let (w, b) = layer.param_lens(input);
                LayerParams { weight: vec![0.0; w], bias: vec![0.0; b] }
            })
            .collect();
        Self { layers }
    }

    /// He-normal weights and zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Self::zeros(spec);
        for ((layer, &input), params) in spec.layers().iter().zip(spec.shapes()).zip(&mut weights.layers) {
            let fan_in = match *layer {
                Layer::Dense(_) => input.len(),
                Layer::Conv3d { .. } => params.weight.len() / params.bias.len(),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for w in &mut params.weight {
                *w = normal.sample(&mut rng);
            }
        }
        weights
    }

    pub fn check(&self, spec: &ModelSpec) -> Result<(), NnError> {
        if self.layers.len() != spec.layers().len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} parameter groups for {} layers",
                self.layers.len(),
                spec.layers().len()
            )));
        }
        for (i, ((layer, &input), params)) in spec.layers().iter().zip(spec.shapes()).zip(&self.layers).enumerate() {
            let (w, b) = layer.param_lens(input);
            if params.weight.len() != w || params.bias.len() != b {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {} ({layer}) expects {w} weights and {b} biases, found {} and {}",
                    i + 1,
                    params.weight.len(),
                    params.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub(crate) fn fill(&mut self, v: f64) {
        for p in &mut self.layers {
            p.weight.fill(v);
            p.bias.fill(v);
        }
    }
}

/// Runs the network and returns every activation: index 0 is `x`, index
/// `i` the output of layer `i`.
pub fn infer(spec: &ModelSpec, weights: &ModelWeights, x: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
    if x.len() != spec.input().len() {
        return Err(NnError::ShapeMismatch(format!("input has {} values, expected {}", x.len(), spec.input().len())));
    }
    weights.check(spec)?;
    Ok(forward(spec, weights, x, spec.layers().len()))
}

/// Activations `0..=upto`, with shapes already validated.
pub(crate) fn forward(spec: &ModelSpec, weights: &ModelWeights, x: &[f64], upto: usize) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(upto + 1);
    acts.push(x.to_vec());
    for i in 0..upto {
        let out = forward_layer(&spec.layers()[i], spec.shapes()[i], &weights.layers[i], &acts[i]);
        acts.push(out);
    }
    acts
}

fn image(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Image { height, width, channels } => (height, width, channels),
        Shape::Flat(n) => (1, 1, n),
    }
}

fn forward_layer(layer: &Layer, input: Shape, p: &LayerParams, x: &[f64]) -> Vec<f64> {
    match *layer {
        Layer::Dense(n) => {
            let mut out = p.bias.clone();
            for (i, &xi) in x.iter().enumerate() {
                let row = &p.weight[i * n..(i + 1) * n];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
            out
        }
        Layer::Conv3d { out_channels, kernel, stride } => {
            let (h, w, c) = image(input);
            let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
            let mut out = Vec::with_capacity(oh * ow * out_channels);
            for oy in 0..oh {
                for ox in 0..ow {
                    for o in 0..out_channels {
                        let mut acc = p.bias[o];
                        for dy in 0..kernel {
                            for dx in 0..kernel {
                                let xi = ((oy * stride + dy) * w + ox * stride + dx) * c;
                                let wi = ((o * kernel + dy) * kernel + dx) * c;
                                for ch in 0..c {
                                    acc += x[xi + ch] * p.weight[wi + ch];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        Layer::MaxPool { kernel, stride } => {
            let (h, w, c) = image(input);
            let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
            let mut out = Vec::with_capacity(oh * ow * c);
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        out.push(pool_argmax(x, w, c, oy * stride, ox * stride, kernel, ch).1);
                    }
                }
            }
            out
        }
        Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        Layer::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
    }
}

/// First position of the maximum in a pooling window, and the maximum.
fn pool_argmax(x: &[f64], w: usize, c: usize, y0: usize, x0: usize, k: usize, ch: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for dy in 0..k {
        for dx in 0..k {
            let i = ((y0 + dy) * w + x0 + dx) * c + ch;
            if x[i] > best.1 || best.0 == usize::MAX {
                best = (i, x[i]);
            }
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Backpropagates `grad` (the loss gradient at activation `from`) down to
/// the input, accumulating parameter gradients into `grads`.
pub(crate) fn backprop(
    spec: &ModelSpec,
    weights: &ModelWeights,
    acts: &[Vec<f64>],
    from: usize,
    mut grad: Vec<f64>,
    grads: &mut ModelWeights,
) {
    for i in (0..from).rev() {
        let layer = &spec.layers()[i];
        let input = spec.shapes()[i];
        let p = &weights.layers[i];
        let g = &mut grads.layers[i];
        let x = &acts[i];
        grad = match *layer {
            Layer::Dense(n) => {
                let mut gin = vec![0.0; x.len()];
                for (b, &go) in g.bias.iter_mut().zip(&grad) {
                    *b += go;
                }
                for (i, &xi) in x.iter().enumerate() {
                    let row = &p.weight[i * n..(i + 1) * n];
                    let grow = &mut g.weight[i * n..(i + 1) * n];
                    let mut acc = 0.0;
                    for ((gw, &w), &go) in grow.iter_mut().zip(row).zip(&grad) {
                        *gw += xi * go;
                        acc += w * go;
                    }
                    gin[i] = acc;
                }
                gin
            }
            Layer::Conv3d { out_channels, kernel, stride } => {
                let (h, w, c) = image(input);
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                let mut gin = vec![0.0; x.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..out_channels {
                            let go = grad[(oy * ow + ox) * out_channels + o];
                            if go == 0.0 {
                                continue;
                            }
                            g.bias[o] += go;
                            for dy in 0..kernel {
                                for dx in 0..kernel {
                                    let xi = ((oy * stride + dy) * w + ox * stride + dx) * c;
                                    let wi = ((o * kernel + dy) * kernel + dx) * c;
                                    for ch in 0..c {
                                        g.weight[wi + ch] += x[xi + ch] * go;
                                        gin[xi + ch] += p.weight[wi + ch] * go;
                                    }
                                }
                            }
                        }
                    }
                }
                gin
            }
            Layer::MaxPool { kernel, stride } => {
                let (h, w, c) = image(input);
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                let mut gin = vec![0.0; x.len()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let (i, _) = pool_argmax(x, w, c, oy * stride, ox * stride, kernel, ch);
                            gin[i] += grad[(oy * ow + ox) * c + ch];
                        }
                    }
                }
                gin
            }
            Layer::Relu => x.iter().zip(&grad).map(|(&v, &go)| if v > 0.0 { go } else { 0.0 }).collect(),
            Layer::Sigmoid => acts[i + 1].iter().zip(&grad).map(|(&y, &go)| go * y * (1.0 - y)).collect(),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: &str) -> ModelSpec {
        s.parse().unwrap()
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let s = spec("8-FC(6)-ReLU-FC(3)");
        let acts = infer(&s, &ModelWeights::zeros(&s), &[1.5; 8]).unwrap();
        assert!(acts[1..].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_relu_passes_nonnegative_input() {
        let s = spec("4-FC(4)-ReLU-FC(2)");
        let mut w = ModelWeights::zeros(&s);
        for i in 0..4 {
            w.layers[0].weight[i * 4 + i] = 1.0;
        }
        let x = [0.0, 0.5, 2.0, 7.25];
        let acts = infer(&s, &w, &x).unwrap();
        assert_eq!(acts[2], x);
    }

    /// Independent forward pass with explicit loops over named indices.
    #[allow(clippy::needless_range_loop)]
    fn oracle_mlp(x: &[f64], w: &ModelWeights, dims: &[usize]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, win) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let p = &w.layers[2 * l];
            let mut z = vec![0.0; n_out];
            for j in 0..n_out {
                z[j] = p.bias[j];
                for i in 0..n_in {
                    z[j] += a[i] * p.weight[i * n_out + j];
                }
            }
            a = if l + 2 < dims.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        a
    }

    #[test]
    fn seeded_mlp_matches_oracle() {
        let s = spec("10-FC(7)-ReLU-FC(3)");
        let mut w = ModelWeights::init(&s, 5);
        for (k, b) in w.layers[0].bias.iter_mut().enumerate() {
            *b = 0.1 * k as f64 - 0.3;
        }
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = infer(&s, &w, &x).unwrap();
        let want = oracle_mlp(&x, &w, &[10, 7, 3]);
        for (g, e) in got.last().unwrap().iter().zip(&want) {
            assert!((g - e).abs() <= 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn conv_and_pool_shapes() {
        let s = spec("2x6x6-C(3,3,1)-ReLU-MP(2,2)-FC(2)");
        let w = ModelWeights::init(&s, 1);
        let acts = infer(&s, &w, &[0.25; 72]).unwrap();
        assert_eq!(acts.iter().map(Vec::len).collect::<Vec<_>>(), vec![72, 48, 48, 12, 2]);
        assert!(infer(&s, &w, &[0.0; 71]).is_err());
    }

    /// Central differences against backprop for every layer kind.
    #[test]
    fn gradients_match_finite_differences() {
        let s = spec("2x5x5-C(2,3,1)-Sigmoid-MP(2,1)-FC(3)-ReLU-FC(2)");
        let mut w = ModelWeights::init(&s, 9);
        for p in &mut w.layers {
            for (i, b) in p.bias.iter_mut().enumerate() {
                *b = 0.05 * (i as f64 + 1.0);
            }
        }
        let x: Vec<f64> = (0..50).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let loss = |w: &ModelWeights| {
            let out = forward(&s, w, &x, s.layers().len());
            let y = out.last().unwrap();
            y[0] * 0.7 - y[1] * 1.3
        };
        let acts = forward(&s, &w, &x, s.layers().len());
        let mut grads = ModelWeights::zeros(&s);
        backprop(&s, &w, &acts, s.layers().len(), vec![0.7, -1.3], &mut grads);
        let h = 1e-6;
        for l in 0..w.layers.len() {
            for (is_bias, len) in [(false, w.layers[l].weight.len()), (true, w.layers[l].bias.len())] {
                for i in (0..len).step_by(3) {
                    let mut plus = w.clone();
                    let mut minus = w.clone();
                    let (p, m) = if is_bias {
                        (&mut plus.layers[l].bias[i], &mut minus.layers[l].bias[i])
                    } else {
                        (&mut plus.layers[l].weight[i], &mut minus.layers[l].weight[i])
                    };
                    *p += h;
                    *m -= h;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let analytic = if is_bias { grads.layers[l].bias[i] } else { grads.layers[l].weight[i] };
                    assert!((numeric - analytic).abs() < 1e-5, "layer {l} bias {is_bias} index {i}: {numeric} vs {analytic}");
                }
            }
        }
    }
}
