//! Fully connected networks with hand-written backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No nonlinearity; makes the network affine. Used by gradient tests.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`, so a batch forward pass is `x.dot(&weight) + bias`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform in `±1/sqrt(fan_in)` for both weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Stack of affine layers with an activation between consecutive layers and
/// none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Mlp {
    /// Layer widths `sizes[0] → sizes[1] → … → sizes[n]`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    fn activate(&self, a: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Relu => a.mapv(|v| v.max(0.0)),
            Activation::Identity => a.clone(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.weight) + &layer.bias;
            cache.inputs.push(h);
            h = if k + 1 < self.layers.len() {
                self.activate(&a)
            } else {
                a.clone()
            };
            cache.pre.push(a);
        }
        (h, cache)
    }

    /// Given `dL/d output`, returns parameter gradients and `dL/d input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> (Vec<LinearGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            grads.push(LinearGrad {
                weight: cache.inputs[k].t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            let mut g_in = g.dot(&layer.weight.t());
            if k > 0 && self.activation == Activation::Relu {
                ndarray::Zip::from(&mut g_in)
                    .and(&cache.pre[k - 1])
                    .for_each(|gi, &a| {
                        if a <= 0.0 {
                            *gi = 0.0;
                        }
                    });
            }
            g = g_in;
        }
        grads.reverse();
        (grads, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[6, 5, 4, 3], Activation::Relu, &mut rng);
        assert_eq!(mlp.layers.len(), 3);
        assert_eq!((mlp.input_dim(), mlp.output_dim()), (6, 3));
        let out = mlp.forward(&Array2::ones((2, 6)));
        assert_eq!(out.dim(), (2, 3));
    }

    #[test]
    fn last_layer_is_not_rectified() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: array![[-1.0]],
                bias: array![0.0],
            }],
            activation: Activation::Relu,
        };
        assert_eq!(mlp.forward(&array![[2.0]]), array![[-2.0]]);
    }

    #[test]
    fn relu_between_layers() {
        let mlp = Mlp {
            layers: vec![
                Linear {
                    weight: array![[-1.0, 1.0]],
                    bias: array![0.0, 0.0],
                },
                Linear {
                    weight: array![[1.0], [1.0]],
                    bias: array![0.5],
                },
            ],
            activation: Activation::Relu,
        };
        // hidden = relu([-2, 2]) = [0, 2]
        assert_eq!(mlp.forward(&array![[2.0]]), array![[2.5]]);
    }
}
